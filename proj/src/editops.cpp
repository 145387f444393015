#include "coma/editops.hpp"

#include <cmath>

namespace coma::edit {

using gen::TextBundle;
using motion::Part;

namespace {

// Masks the base layer at the given positions, refills it, regenerates
// residual layers at exactly those positions, and leaves the rest alone.
TokenGrid regenerate(const TokenGrid& grid, const std::vector<std::pair<int, int>>& positions,
                     const TextBundle& text, const gen::BaseModel& base, const gen::ResModel& res,
                     uint64_t seed) {
    if (positions.empty()) return grid;
    TokenGrid work = grid;
    TokenGrid base_layer(1, grid.n, grid.mask_value);
    for (int p = 0; p < 4; ++p)
        for (int t = 0; t < grid.n; ++t) base_layer.at(0, p, t) = grid.at(0, p, t);
    for (auto [p, t] : positions) base_layer.at(0, p, t) = grid.mask_value;

    TokenGrid filled = gen::iterative_fill(base_layer, text, base, seed);
    for (int p = 0; p < 4; ++p)
        for (int t = 0; t < grid.n; ++t) work.at(0, p, t) = filled.at(0, p, t);
    if (work.layers > 1) gen::regenerate_residuals(work, positions, text, res);
    return work;
}

}  // namespace

std::vector<std::uint8_t> bodypart_other_mask(int n, const std::set<Part>& edited, double rho,
                                              uint64_t seed) {
    Rng rng(seed);
    std::vector<std::uint8_t> mask(static_cast<size_t>(4 * n), 0);
    for (int p = 0; p < 4; ++p) {
        if (edited.count(static_cast<Part>(p))) continue;
        for (int t = 0; t < n; ++t)
            if (rng.uniform() < rho) mask[static_cast<size_t>(p * n + t)] = 1;
    }
    return mask;
}

TokenGrid edit_inbetween(const TokenGrid& grid, int frame_a, int frame_b, const TextBundle& text,
                         const gen::BaseModel& base, const gen::ResModel& res, int downscale,
                         uint64_t seed) {
    if (frame_a > frame_b) throw Error("edit_inbetween: empty range (alpha > beta)");
    if (frame_a < 0 || frame_b > grid.n * downscale) throw Error("edit_inbetween: range out of bounds");
    if (frame_a == frame_b) return grid;
    int tok_a = frame_a / downscale;
    int tok_b = (frame_b + downscale - 1) / downscale;
    std::vector<std::pair<int, int>> positions;
    for (int p = 0; p < 4; ++p)
        for (int t = tok_a; t < tok_b; ++t) positions.emplace_back(p, t);
    return regenerate(grid, positions, text, base, res, seed);
}

TokenGrid edit_bodypart(const TokenGrid& grid, const std::set<Part>& edited, const TextBundle& text,
                        double rho, const gen::BaseModel& base, const gen::ResModel& res,
                        uint64_t seed) {
    if (edited.empty()) throw Error("edit_bodypart: empty part set");
    if (rho < 0.0 || rho >= 1.0) throw Error("edit_bodypart: rho outside [0,1)");
    std::vector<std::uint8_t> other = bodypart_other_mask(grid.n, edited, rho, seed);
    std::vector<std::pair<int, int>> positions;
    for (int p = 0; p < 4; ++p)
        for (int t = 0; t < grid.n; ++t) {
            bool in_j = edited.count(static_cast<Part>(p)) > 0;
            if (in_j || other[static_cast<size_t>(p * grid.n + t)]) positions.emplace_back(p, t);
        }
    // Generation uses a distinct stream so the mask draw stays oracle-checkable.
    return regenerate(grid, positions, text, base, res, seed ^ 0x9e3779b97f4a7c15ull);
}

TokenGrid blend(const TokenGrid& a, const TokenGrid& b, int n_trans, int n_ctx,
                const TextBundle& text, const gen::BaseModel& base, const gen::ResModel& res,
                uint64_t seed) {
    if (a.layers != b.layers || a.mask_value != b.mask_value) throw Error("blend: grid mismatch");
    if (a.has_mask() || b.has_mask()) throw Error("blend: inputs must be complete");
    if (n_ctx > a.n || n_ctx > b.n) throw Error("blend: context longer than inputs");
    if (n_trans < 0 || n_ctx < 0) throw Error("blend: negative lengths");

    TokenGrid out(a.layers, a.n + n_trans + b.n, a.mask_value);
    for (int v = 0; v < a.layers; ++v)
        for (int p = 0; p < 4; ++p) {
            for (int t = 0; t < a.n; ++t) out.at(v, p, t) = a.at(v, p, t);
            for (int t = 0; t < b.n; ++t) out.at(v, p, a.n + n_trans + t) = b.at(v, p, t);
        }
    if (n_trans == 0) return out;

    // Window: [last n_ctx of a | n_trans MASK | first n_ctx of b].
    int wn = 2 * n_ctx + n_trans;
    TokenGrid window(a.layers, wn, a.mask_value);
    for (int v = 0; v < a.layers; ++v)
        for (int p = 0; p < 4; ++p) {
            for (int t = 0; t < n_ctx; ++t) {
                window.at(v, p, t) = a.at(v, p, a.n - n_ctx + t);
                window.at(v, p, n_ctx + n_trans + t) = b.at(v, p, t);
            }
            for (int t = 0; t < n_trans; ++t) window.at(v, p, n_ctx + t) = a.mask_value;
        }
    std::vector<std::pair<int, int>> positions;
    for (int p = 0; p < 4; ++p)
        for (int t = n_ctx; t < n_ctx + n_trans; ++t) positions.emplace_back(p, t);
    TokenGrid filled = regenerate(window, positions, text, base, res, seed);
    for (int v = 0; v < a.layers; ++v)
        for (int p = 0; p < 4; ++p)
            for (int t = 0; t < n_trans; ++t) out.at(v, p, a.n + t) = filled.at(v, p, n_ctx + t);
    return out;
}

}  // namespace coma::edit
