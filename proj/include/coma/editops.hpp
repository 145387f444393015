#pragma once

#include <set>

#include "coma/gen.hpp"
#include "coma/motion.hpp"

namespace coma::edit {

struct EditConfig {
    double rho = 0.15;  // mask ratio for non-edited parts in body-part edits
    int n_trans = 4;    // blend transition tokens
    int n_ctx = 4;      // blend context tokens per side
};

// Deterministic mask draw for the parts outside J: iterate parts 0..3 and
// times 0..n-1, skipping J, one uniform per position, masked when u < rho.
std::vector<std::uint8_t> bodypart_other_mask(int n, const std::set<motion::Part>& edited, double rho,
                                              uint64_t seed);

// Regenerates the frame span [frame_a, frame_b) across all four parts. Token
// span is floor(frame_a/downscale) .. ceil(frame_b/downscale). Tokens outside
// the span are preserved bitwise; residual layers outside it are kept.
TokenGrid edit_inbetween(const TokenGrid& grid, int frame_a, int frame_b,
                         const gen::TextBundle& text, const gen::BaseModel& base,
                         const gen::ResModel& res, int downscale, uint64_t seed);

// Masks every base token of the parts in `edited`, plus each other-part token
// independently with probability rho, then regenerates. rho = 0 leaves the
// other parts bitwise unchanged.
TokenGrid edit_bodypart(const TokenGrid& grid, const std::set<motion::Part>& edited,
                        const gen::TextBundle& text, double rho, const gen::BaseModel& base,
                        const gen::ResModel& res, uint64_t seed);

// Fills n_trans transition columns between the two grids, conditioning on
// n_ctx context columns from each side. Result is [a | transition | b].
TokenGrid blend(const TokenGrid& a, const TokenGrid& b, int n_trans, int n_ctx,
                const gen::TextBundle& text, const gen::BaseModel& base, const gen::ResModel& res,
                uint64_t seed);

}  // namespace coma::edit
