#include "coma/motion.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "coma/common.hpp"

namespace coma::motion {

namespace {

const std::array<std::string, 22> kJointNames = {
    "pelvis",        "left_hip",      "right_hip",      "spine1",     "left_knee",
    "right_knee",    "spine2",        "left_ankle",     "right_ankle", "spine3",
    "left_foot",     "right_foot",    "neck",           "left_collar", "right_collar",
    "head",          "left_shoulder", "right_shoulder", "left_elbow",  "right_elbow",
    "left_wrist",    "right_wrist"};

}  // namespace

const std::array<std::string, 22>& joint_names() { return kJointNames; }

int joint_id(const std::string& name) {
    for (size_t i = 0; i < kJointNames.size(); ++i)
        if (kJointNames[i] == name) return static_cast<int>(i);
    throw Error("unknown joint: " + name);
}

FeatureLayout standard_layout() { return FeatureLayout{}; }

int FeatureLayout::owner_joint(int f) const {
    if (f < 0 || f >= feature_dim) throw Error("feature index out of range");
    if (f <= root_height) return 0;  // pelvis owns the root block
    if (f < rot_start) return 1 + (f - pos_start) / 3;
    if (f < vel_start) return 1 + (f - rot_start) / 6;
    if (f < foot_start) return (f - vel_start) / 3;
    return (f - foot_start) < 2 ? joint_id("left_ankle") : joint_id("right_ankle");
}

const char* part_name(Part p) {
    switch (p) {
        case Part::LU: return "LU";
        case Part::RU: return "RU";
        case Part::LL: return "LL";
        case Part::RL: return "RL";
    }
    return "?";
}

Part part_from_name(const std::string& name) {
    for (int i = 0; i < kNumParts; ++i)
        if (name == part_name(static_cast<Part>(i))) return static_cast<Part>(i);
    throw Error("unknown part: " + name);
}

PartitionScheme four_part_partition(const FeatureLayout& layout) {
    PartitionScheme s;
    s.joints_per_part[0] = {"left_collar", "left_shoulder", "left_elbow", "left_wrist",
                            "spine3",      "spine2",        "spine1",     "head",
                            "neck"};
    s.joints_per_part[1] = {"right_collar", "right_shoulder", "right_elbow", "right_wrist",
                            "spine3",       "spine2",         "spine1",      "head",
                            "neck"};
    s.joints_per_part[2] = {"left_ankle", "left_foot", "left_hip", "pelvis", "left_knee"};
    s.joints_per_part[3] = {"right_ankle", "right_foot", "right_hip", "pelvis", "right_knee"};

    for (int p = 0; p < kNumParts; ++p) {
        std::set<int> joints;
        for (const auto& jn : s.joints_per_part[static_cast<size_t>(p)]) joints.insert(joint_id(jn));
        std::vector<int>& idx = s.feature_indices[static_cast<size_t>(p)];
        for (int f = 0; f < layout.feature_dim; ++f) {
            if (f >= layout.foot_start) {
                // Contact flags pair with the matching lower part only.
                bool left = (f - layout.foot_start) < 2;
                if ((left && p == static_cast<int>(Part::LL)) || (!left && p == static_cast<int>(Part::RL)))
                    idx.push_back(f);
                continue;
            }
            if (joints.count(layout.owner_joint(f))) idx.push_back(f);
        }
        s.part_dims[static_cast<size_t>(p)] = static_cast<int>(idx.size());
    }
    return s;
}

PartMotion slice_part(const MotionSequence& m, Part part, const PartitionScheme& scheme) {
    int p = static_cast<int>(part);
    if (p < 0 || p >= kNumParts) throw Error("slice_part: unknown part id");
    const std::vector<int>& idx = scheme.feature_indices[static_cast<size_t>(p)];
    PartMotion pm;
    pm.part = part;
    pm.frames = MatF(m.T(), static_cast<int>(idx.size()));
    for (int t = 0; t < m.T(); ++t)
        for (size_t j = 0; j < idx.size(); ++j)
            pm.frames.at(t, static_cast<int>(j)) = m.frames.at(t, idx[j]);
    return pm;
}

double mean_root_speed(const MotionSequence& m) {
    if (m.T() < 1) throw Error("mean_root_speed: empty motion");
    FeatureLayout layout;
    double s = 0.0;
    for (int t = 0; t < m.T(); ++t) {
        double vx = m.frames.at(t, layout.root_lin_vel[0]);
        double vz = m.frames.at(t, layout.root_lin_vel[1]);
        s += std::sqrt(vx * vx + vz * vz);
    }
    return s / m.T();
}

namespace {

constexpr char kMagic[4] = {'C', 'M', 'A', '1'};

void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw FormatError("motion file: truncated header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_motion(const MotionSequence& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(kMagic, 4);
    put_u32(f, 1);
    put_u32(f, static_cast<uint32_t>(m.T()));
    put_u32(f, static_cast<uint32_t>(m.D()));
    float fps = m.fps;
    f.write(reinterpret_cast<const char*>(&fps), 4);
    f.write(reinterpret_cast<const char*>(m.frames.data.data()),
            static_cast<std::streamsize>(m.frames.data.size() * sizeof(float)));
    if (!f) throw IoError("write failed: " + path);
    f.close();
    if (m.text) {
        std::ofstream tf(path + ".txt", std::ios::binary);
        tf << *m.text;
    }
}

MotionSequence read_motion(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("motion file: bad magic");
    uint32_t version = get_u32(f);
    if (version != 1) throw FormatError("motion file: unsupported version");
    uint32_t t = get_u32(f);
    uint32_t d = get_u32(f);
    MotionSequence m;
    f.read(reinterpret_cast<char*>(&m.fps), 4);
    if (!f) throw FormatError("motion file: truncated header");
    m.frames = MatF(static_cast<int>(t), static_cast<int>(d));
    f.read(reinterpret_cast<char*>(m.frames.data.data()),
           static_cast<std::streamsize>(m.frames.data.size() * sizeof(float)));
    if (static_cast<size_t>(f.gcount()) != m.frames.data.size() * sizeof(float))
        throw FormatError("motion file: payload shorter than header T*D");
    std::string sidecar = path + ".txt";
    if (std::filesystem::exists(sidecar)) {
        std::ifstream tf(sidecar, std::ios::binary);
        std::string text((std::istreambuf_iterator<char>(tf)), std::istreambuf_iterator<char>());
        m.text = text;
    }
    return m;
}

MotionSequence synthetic_motion(uint64_t seed, int T, float fps) {
    if (T < 1) throw Error("synthetic_motion: T must be >= 1");
    FeatureLayout layout;
    Rng rng(seed);
    MotionSequence m;
    m.fps = fps;
    m.frames = MatF(T, layout.feature_dim);
    for (int c = 0; c < layout.feature_dim; ++c) {
        double amp[kSynthWaves], freq[kSynthWaves], phase[kSynthWaves];
        for (int w = 0; w < kSynthWaves; ++w) {
            amp[w] = rng.uniform_range(0.1, kSynthAmpMax);
            freq[w] = rng.uniform_range(0.05, kSynthFreqMax);
            phase[w] = rng.uniform_range(0.0, 6.28318530717958647692);
        }
        for (int t = 0; t < T; ++t) {
            double v = 0.0;
            for (int w = 0; w < kSynthWaves; ++w) v += amp[w] * std::sin(freq[w] * t + phase[w]);
            m.frames.at(t, c) = static_cast<float>(v);
        }
    }
    return m;
}

}  // namespace coma::motion
