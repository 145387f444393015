#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "coma/autodiff.hpp"
#include "coma/gen.hpp"
#include "coma/rvq.hpp"

namespace testutil {

inline std::string temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("coma_test_" + tag);
    std::filesystem::create_directories(dir);
    return dir.string();
}

// Desk-scale configs kept tiny so unit tests stay fast.
inline coma::gen::GenConfig tiny_gen_config(int n_max = 16) {
    coma::gen::GenConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.model_dim = 16;
    cfg.ffn_mult = 2;
    cfg.steps = 4;
    cfg.text_dim = 8;
    cfg.n_max = n_max;
    cfg.codes = 12;
    cfg.vq_layers = 3;
    return cfg;
}

inline coma::vq::RvqConfig tiny_rvq_config() {
    coma::vq::RvqConfig cfg;
    cfg.num_layers = 3;
    cfg.codes = 12;
    cfg.code_dim = 4;
    cfg.channels = 8;
    return cfg;
}

inline coma::gen::TextBundle random_bundle(int dim, uint64_t seed) {
    coma::Rng rng(seed);
    coma::gen::TextBundle b;
    b.global.resize(static_cast<size_t>(dim));
    for (double& v : b.global) v = rng.gauss();
    return b;
}

inline coma::TokenGrid random_grid(int layers, int n, int codes, uint64_t seed) {
    coma::Rng rng(seed);
    coma::TokenGrid g(layers, n, codes);
    for (int v = 0; v < layers; ++v)
        for (int p = 0; p < 4; ++p)
            for (int t = 0; t < n; ++t) g.at(v, p, t) = rng.uniform_int(codes);
    return g;
}

// Central-difference check of d(loss)/d(param) for every parameter scalar.
// eval() must recompute the loss from the store's current values.
struct GradCheckResult {
    double max_rel = 0.0;
    double norm_rel = 0.0;
    int checked = 0;
};

inline GradCheckResult finite_diff_check(coma::nn::ParamStore& store,
                                         const std::function<double()>& eval,
                                         const std::function<std::vector<coma::Tensor>()>& analytic,
                                         double h = 1e-5) {
    std::vector<coma::Tensor> grads = analytic();
    GradCheckResult r;
    double num = 0.0, den_a = 0.0, den_f = 0.0;
    for (size_t e = 0; e < store.entries.size(); ++e) {
        coma::Tensor& value = store.entries[e].value;
        for (int64_t i = 0; i < value.numel(); ++i) {
            double orig = value.data[i];
            value.data[i] = orig + h;
            double fp = eval();
            value.data[i] = orig - h;
            double fm = eval();
            value.data[i] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double an = grads[e].numel() > 0 ? grads[e].data[i] : 0.0;
            double diff = std::abs(fd - an);
            double rel = diff / std::max({std::abs(fd), std::abs(an), 1e-6});
            r.max_rel = std::max(r.max_rel, rel);
            num += diff * diff;
            den_a += an * an;
            den_f += fd * fd;
            ++r.checked;
        }
    }
    r.norm_rel = std::sqrt(num) / std::max({std::sqrt(den_a), std::sqrt(den_f), 1e-12});
    return r;
}

inline int64_t param_count(const coma::nn::ParamStore& store) {
    int64_t n = 0;
    for (const auto& e : store.entries) n += e.value.numel();
    return n;
}

}  // namespace testutil
