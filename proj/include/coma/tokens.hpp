#pragma once

#include <vector>

#include "coma/common.hpp"

namespace coma {

// (V+1) quantization layers x 4 body parts x n time tokens. Entries are
// codebook indices in [0, K); mask_value (= K) is the generation sentinel.
struct TokenGrid {
    int layers = 0;
    int n = 0;
    int mask_value = 0;
    std::vector<int> data;

    TokenGrid() = default;
    TokenGrid(int layers_, int n_, int mask_value_)
        : layers(layers_), n(n_), mask_value(mask_value_),
          data(static_cast<size_t>(layers_) * 4 * n_, 0) {}

    int& at(int v, int p, int t) { return data[(static_cast<size_t>(v) * 4 + p) * n + t]; }
    int at(int v, int p, int t) const { return data[(static_cast<size_t>(v) * 4 + p) * n + t]; }

    bool has_mask(int layer) const {
        for (int p = 0; p < 4; ++p)
            for (int t = 0; t < n; ++t)
                if (at(layer, p, t) == mask_value) return true;
        return false;
    }

    bool has_mask() const {
        for (int v = 0; v < layers; ++v)
            if (has_mask(v)) return true;
        return false;
    }

    bool operator==(const TokenGrid& o) const {
        return layers == o.layers && n == o.n && mask_value == o.mask_value && data == o.data;
    }
};

}  // namespace coma
