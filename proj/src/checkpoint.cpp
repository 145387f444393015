#include "coma/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "coma/common.hpp"

namespace coma {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'K', '1'};

void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw FormatError("checkpoint: truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void NamedTensors::add(const std::string& name, std::vector<int> shape, std::vector<double> data) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    if (n != static_cast<int64_t>(data.size())) throw Error("NamedTensors: shape/data mismatch for " + name);
    items.push_back({name, std::move(shape), std::move(data)});
}

const NamedTensors::Item& NamedTensors::find(const std::string& name) const {
    for (const auto& it : items)
        if (it.name == name) return it;
    throw Error("checkpoint: missing tensor " + name);
}

bool NamedTensors::contains(const std::string& name) const {
    for (const auto& it : items)
        if (it.name == name) return true;
    return false;
}

void write_cmk1(const std::string& path, const NamedTensors& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(kMagic, 4);
    put_u32(f, 1);
    put_u32(f, static_cast<uint32_t>(tensors.items.size()));
    for (const auto& it : tensors.items) {
        put_u32(f, static_cast<uint32_t>(it.name.size()));
        f.write(it.name.data(), static_cast<std::streamsize>(it.name.size()));
        put_u32(f, static_cast<uint32_t>(it.shape.size()));
        for (int d : it.shape) put_u32(f, static_cast<uint32_t>(d));
    }
    for (const auto& it : tensors.items) {
        std::vector<float> buf(it.data.begin(), it.data.end());
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw IoError("write failed: " + path);
}

NamedTensors read_cmk1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
    uint32_t version = get_u32(f);
    if (version != 1) throw FormatError("checkpoint: unsupported version");
    uint32_t count = get_u32(f);
    NamedTensors out;
    out.items.resize(count);
    for (auto& it : out.items) {
        uint32_t len = get_u32(f);
        it.name.resize(len);
        f.read(it.name.data(), len);
        uint32_t ndim = get_u32(f);
        it.shape.resize(ndim);
        for (auto& d : it.shape) d = static_cast<int>(get_u32(f));
        if (!f) throw FormatError("checkpoint: truncated manifest");
    }
    for (auto& it : out.items) {
        int64_t n = 1;
        for (int d : it.shape) n *= d;
        std::vector<float> buf(static_cast<size_t>(n));
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (static_cast<int64_t>(f.gcount()) != static_cast<int64_t>(n * sizeof(float)))
            throw FormatError("checkpoint: truncated payload for " + it.name);
        it.data.assign(buf.begin(), buf.end());
    }
    return out;
}

NamedTensors pack_params(const nn::ParamStore& store) {
    NamedTensors out;
    for (const auto& e : store.entries) out.add(e.name, e.value.shape, e.value.data);
    return out;
}

void unpack_params(const NamedTensors& tensors, nn::ParamStore& store) {
    for (auto& e : store.entries) {
        const auto& it = tensors.find(e.name);
        if (it.shape != e.value.shape) throw FormatError("checkpoint: shape mismatch for " + e.name);
        e.value.data = it.data;
        e.m = Tensor::zeros(e.value.shape);
        e.v = Tensor::zeros(e.value.shape);
    }
}

}  // namespace coma
