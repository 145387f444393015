#pragma once

#include <array>
#include <vector>

#include "coma/autodiff.hpp"
#include "coma/motion.hpp"
#include "coma/tokens.hpp"

namespace coma::vq {

struct RvqConfig {
    int num_layers = 3;  // total quantization layers (V+1)
    int codes = 32;      // K per codebook
    int code_dim = 16;   // d
    int downscale = 4;   // temporal reduction of the encoders
    int channels = 32;   // conv width
    double quant_dropout = 0.2;
    double beta = 0.02;  // commitment weight
    double ema_decay = 0.99;
    double reset_threshold = 1.0;

    void validate() const;
};

struct Codebook {
    Tensor vectors;  // K x d
    std::vector<double> ema_counts;
    Tensor ema_sums;  // K x d

    int codes() const { return vectors.dim(0); }
    int dim() const { return vectors.dim(1); }
    static Codebook init(int codes, int dim, Rng& rng);
};

struct LatentSeq {
    Tensor vecs;  // n x d
    motion::Part part = motion::Part::LU;

    int n() const { return vecs.dim(0); }
    int d() const { return vecs.dim(1); }
};

// Argmin of squared Euclidean distance, lowest index on ties.
int nearest_code(const double* v, int d, const Codebook& book);

struct QuantResult {
    std::vector<std::vector<int>> tokens;  // [layer][t]
    std::vector<Tensor> residual_inputs;   // r^v fed to layer v, n x d
    std::vector<Tensor> quantized;         // selected code vectors per layer, n x d
    Tensor quantized_sum;                  // sum over active layers, n x d
    Tensor residual_final;                 // r after the last active layer, n x d
};

// Runs the residual recursion r^{v+1} = r^v - Q_v(r^v) over the first
// active_layers books. The identity r^0 = quantized_sum + residual_final holds
// up to floating rounding (summation order is layer 0..V, fixed).
QuantResult quantize_residual(const LatentSeq& latent, const std::vector<Codebook>& books,
                              int active_layers);

// Exponential moving average of the per-code assignment counts and sums;
// vectors are re-derived as smoothed means.
void ema_update(Codebook& book, const std::vector<double>& counts, const std::vector<double>& sums,
                double decay);

// Codes whose smoothed usage fell under the threshold are reassigned to rows
// drawn from pool. Returns the number of resets.
int reset_low_usage(Codebook& book, const std::vector<const Tensor*>& pool, double threshold,
                    Rng& rng);

// Four part encoders, shared whole-body decoder, 4 x num_layers codebooks.
struct VqModel {
    RvqConfig cfg;
    std::array<int, 4> part_dims{};
    int out_dim = 263;
    nn::ParamStore params;
    std::array<std::vector<Codebook>, 4> books;

    static VqModel init(const RvqConfig& cfg, const std::array<int, 4>& part_dims, int out_dim,
                        uint64_t seed);
    void save(const std::string& path) const;
    static VqModel load(const std::string& path);
};

// Tape graph builders shared by inference, training and the gradient tests.
// Encoder input node holds [D_i, T_padded]; result holds [n, code_dim].
int encoder_graph(nn::Tape& tape, const nn::BoundParams& bp, int part, int x_node,
                  const RvqConfig& cfg);
// latents_cat holds [4*code_dim, n]; result holds [T_padded, out_dim].
int decoder_graph(nn::Tape& tape, const nn::BoundParams& bp, int latents_cat, const RvqConfig& cfg);

LatentSeq encode_part(const motion::PartMotion& pm, const VqModel& model);
motion::MotionSequence decode_whole(const std::array<LatentSeq, 4>& latents, const VqModel& model,
                                    float fps = 20.0f);

// Eq.-style scalar loss: mean-abs reconstruction plus beta * sum of mean-square
// commitment terms over the given (residual input, quantized) pairs.
double rvq_loss(const MatF& m, const MatF& m_hat, const std::vector<Tensor>& residual_inputs,
                const std::vector<Tensor>& quantized, double beta);

TokenGrid tokenize(const motion::MotionSequence& m, const VqModel& model);
// T_out < 0 keeps the decoder's native n * downscale frames.
motion::MotionSequence detokenize(const TokenGrid& grid, const VqModel& model, int T_out = -1,
                                  float fps = 20.0f);

// Right-pads with the last frame so T is a multiple of the downscale factor.
MatF pad_to_downscale(const MatF& frames, int downscale);

struct RvqTrainStats {
    double loss = 0.0;
    double recon_l1 = 0.0;
    int active_layers = 0;
};

// Straight-through training with EMA codebooks and low-usage reset. Single
// writer: step() mutates the model, optimizer state and RNG.
class RvqTrainer {
public:
    RvqTrainer(VqModel& model, nn::AdamConfig adam, uint64_t seed);
    RvqTrainStats step(const std::vector<motion::MotionSequence>& batch);
    int64_t steps_done() const { return step_; }

private:
    VqModel& model_;
    nn::AdamConfig adam_;
    Rng rng_;
    int64_t step_ = 0;
    motion::PartitionScheme scheme_;
};

}  // namespace coma::vq
