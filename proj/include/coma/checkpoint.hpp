#pragma once

#include <string>
#include <vector>

#include "coma/autodiff.hpp"

namespace coma {

// "CMK1" container: magic, u32 version, u32 entry count, per entry a
// length-prefixed UTF-8 name plus u32 shape dims, then f32 LE payloads in
// manifest order.
struct NamedTensors {
    struct Item {
        std::string name;
        std::vector<int> shape;
        std::vector<double> data;  // stored as f32 on disk
    };
    std::vector<Item> items;

    void add(const std::string& name, std::vector<int> shape, std::vector<double> data);
    const Item& find(const std::string& name) const;  // throws when absent
    bool contains(const std::string& name) const;
};

void write_cmk1(const std::string& path, const NamedTensors& tensors);
NamedTensors read_cmk1(const std::string& path);

// ParamStore round trip through the container (Adam moments are not saved).
NamedTensors pack_params(const nn::ParamStore& store);
void unpack_params(const NamedTensors& tensors, nn::ParamStore& store);

}  // namespace coma
