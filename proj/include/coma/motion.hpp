#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "coma/tensor.hpp"

namespace coma::motion {

// Canonical 263-dimensional frame layout: root rotational velocity (1), root
// planar linear velocity (2), root height (1), then per-joint position,
// rotation and velocity blocks, and four foot-contact flags.
struct FeatureLayout {
    int joint_count = 22;
    int feature_dim = 263;

    int root_rot_vel = 0;
    std::array<int, 2> root_lin_vel{1, 2};
    int root_height = 3;

    int pos_start = 4;    // joints 1..21, 3 values each
    int rot_start = 67;   // joints 1..21, 6 values each
    int vel_start = 193;  // joints 0..21, 3 values each
    int foot_start = 259; // left pair then right pair

    int pos_index(int joint, int c) const { return pos_start + (joint - 1) * 3 + c; }
    int rot_index(int joint, int c) const { return rot_start + (joint - 1) * 6 + c; }
    int vel_index(int joint, int c) const { return vel_start + joint * 3 + c; }

    // Joint that a feature column belongs to (foot contacts map to the ankles).
    int owner_joint(int feature_index) const;
};

FeatureLayout standard_layout();

const std::array<std::string, 22>& joint_names();
int joint_id(const std::string& name);  // throws on unknown name

enum class Part : int { LU = 0, RU = 1, LL = 2, RL = 3 };
constexpr int kNumParts = 4;
const char* part_name(Part p);
Part part_from_name(const std::string& name);  // accepts "LU".."RL"

struct PartitionScheme {
    std::array<std::vector<std::string>, 4> joints_per_part;
    std::array<std::vector<int>, 4> feature_indices;  // sorted
    std::array<int, 4> part_dims{};
};

PartitionScheme four_part_partition(const FeatureLayout& layout);

struct MotionSequence {
    MatF frames;  // T x 263
    float fps = 20.0f;
    std::optional<std::string> text;

    int T() const { return frames.rows; }
    int D() const { return frames.cols; }
};

struct PartMotion {
    Part part = Part::LU;
    MatF frames;  // T x D_i
};

PartMotion slice_part(const MotionSequence& m, Part part, const PartitionScheme& scheme);

// Mean over frames of the Euclidean norm of the root linear velocity columns.
double mean_root_speed(const MotionSequence& m);

void write_motion(const MotionSequence& m, const std::string& path);
MotionSequence read_motion(const std::string& path);

// Band-limited sinusoid mixture, deterministic per seed. Adjacent-frame
// deltas are bounded by kSynthMaxDelta.
MotionSequence synthetic_motion(uint64_t seed, int T, float fps = 20.0f);

constexpr int kSynthWaves = 4;
constexpr double kSynthAmpMax = 0.3;
constexpr double kSynthFreqMax = 0.45;  // rad/frame
constexpr double kSynthMaxDelta = kSynthWaves * kSynthAmpMax * kSynthFreqMax;

}  // namespace coma::motion
