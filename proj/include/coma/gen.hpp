#pragma once

#include <array>
#include <optional>
#include <vector>

#include "coma/autodiff.hpp"
#include "coma/tokens.hpp"

namespace coma::gen {

struct GenConfig {
    int layers = 2;
    int heads = 2;
    int model_dim = 32;
    int ffn_mult = 4;
    int steps = 10;          // inference time steps
    double cfg_base = 4.0;   // guidance scale, base transformer
    double cfg_res = 5.0;    // guidance scale, residual transformer
    int text_dim = 64;
    int n_max = 49;          // longest token sequence (196-frame cap / downscale)
    int codes = 32;          // K, must match the tokenizer
    int vq_layers = 3;       // total quantization layers (V+1)
    double uncond_prob = 0.1;

    void validate() const;
    int mask_token() const { return codes; }
    int res_count() const { return vq_layers - 1; }  // V
};

// Masking schedule gamma(tau) = cos(pi*tau/2); tau must lie in [0,1].
double gamma_schedule(double tau);

// ceil(total * gamma(tau)) clamped to [0, total].
int mask_count(int total, double tau);

struct TextBundle {
    std::vector<double> global;  // zeros act as the null embedding
    std::array<std::optional<std::vector<double>>, 4> locals;
    bool is_null = false;

    static TextBundle null_bundle(int dim);
    TextBundle unconditional() const;  // nulls the global and every local prompt
    const std::vector<double>& for_part(int p) const;
};

struct Logits {
    Tensor t;  // [4*n, K], part-major rows
    int n = 0;
    int codes = 0;

    double at(int p, int ti, int k) const { return t.at(p * n + ti, k); }
};

// (1+s) * cond - s * uncond, elementwise.
Logits cfg_logits(const Logits& cond, const Logits& uncond, double s);

struct BaseModel {
    GenConfig cfg;
    nn::ParamStore params;
    static BaseModel init(const GenConfig& cfg, uint64_t seed);
    void save(const std::string& path) const;
    static BaseModel load(const std::string& path);
};

struct ResModel {
    GenConfig cfg;
    nn::ParamStore params;
    static ResModel init(const GenConfig& cfg, uint64_t seed);
    void save(const std::string& path) const;
    static ResModel load(const std::string& path);
};

// Forward over the base layer of `grid` (may contain MASK). Factorized
// attention: a spatial pass mixes the four parts within one time step (plus
// each part's text token), a temporal pass mixes time steps within one part.
Logits base_forward(const TokenGrid& grid, const TextBundle& text, const BaseModel& model);

// Predict layer j (1..V) from layers 0..j-1, which must be MASK-free.
Logits residual_forward(const TokenGrid& grid, int j, const TextBundle& text, const ResModel& model);

// Summed per-layer token embeddings feeding the residual transformer at
// target layer j (motion rows only, part-major). Exposed for verification.
Tensor residual_token_embeddings(const TokenGrid& grid, int j, const ResModel& model);

// Iterative confidence decoding: fills every MASK in grid's base layer. Tokens
// decided at one step are frozen; untouched inputs are preserved bitwise.
TokenGrid iterative_fill(const TokenGrid& grid, const TextBundle& text, const BaseModel& model,
                         uint64_t seed);

// Fresh generation = iterative fill of an all-MASK single-layer grid.
TokenGrid generate_base(const TextBundle& text, int n, const BaseModel& model, uint64_t seed);

// Greedy per-layer residual decoding over all positions; argmax, so no seed.
TokenGrid generate_residuals(const TokenGrid& base, const TextBundle& text, const ResModel& model);

// Same, but only the listed (part, time) positions are rewritten.
void regenerate_residuals(TokenGrid& grid, const std::vector<std::pair<int, int>>& positions,
                          const TextBundle& text, const ResModel& model);

struct GenTrainStats {
    double loss = 0.0;
    double masked_accuracy = 0.0;
    int masked_total = 0;
};

class BaseTrainer {
public:
    BaseTrainer(BaseModel& model, nn::AdamConfig adam, uint64_t seed);
    GenTrainStats step(const std::vector<TokenGrid>& grids, const std::vector<TextBundle>& texts);
    int64_t steps_done() const { return step_; }

private:
    BaseModel& model_;
    nn::AdamConfig adam_;
    Rng rng_;
    int64_t step_ = 0;
};

class ResTrainer {
public:
    ResTrainer(ResModel& model, nn::AdamConfig adam, uint64_t seed);
    GenTrainStats step(const std::vector<TokenGrid>& grids, const std::vector<TextBundle>& texts);
    int64_t steps_done() const { return step_; }

private:
    ResModel& model_;
    nn::AdamConfig adam_;
    Rng rng_;
    int64_t step_ = 0;
};

// Graph builders shared by forward, training and the gradient tests. The
// returned node holds [4*n, K] logits.
int base_graph(nn::Tape& tape, const nn::BoundParams& bp, const TokenGrid& grid,
               const TextBundle& text, const GenConfig& cfg);
int residual_graph(nn::Tape& tape, const nn::BoundParams& bp, const TokenGrid& grid, int j,
                   const TextBundle& text, const GenConfig& cfg);

}  // namespace coma::gen
