#include "coma/rvq.hpp"

#include <cmath>

#include "coma/checkpoint.hpp"
#include "coma/kernels.hpp"

namespace coma::vq {

using motion::MotionSequence;
using motion::Part;
using motion::PartMotion;
using nn::BoundParams;
using nn::Tape;

void RvqConfig::validate() const {
    if (num_layers < 1) throw Error("RvqConfig: num_layers must be >= 1");
    if (codes < 2) throw Error("RvqConfig: codes must be >= 2");
    if (quant_dropout < 0.0 || quant_dropout >= 1.0) throw Error("RvqConfig: quant_dropout in [0,1)");
    if (downscale != 4) throw Error("RvqConfig: encoder stack realizes downscale 4");
}

Codebook Codebook::init(int codes, int dim, Rng& rng) {
    Codebook b;
    b.vectors = Tensor::randn({codes, dim}, rng, 0.02);
    b.ema_counts.assign(static_cast<size_t>(codes), 1.0);
    b.ema_sums = b.vectors;
    return b;
}

int nearest_code(const double* v, int d, const Codebook& book) {
    if (book.codes() == 0) throw Error("nearest_code: empty codebook");
    int idx = 0;
    kernels::nearest_codes(v, 1, book.vectors.data.data(), book.codes(), d, &idx);
    return idx;
}

QuantResult quantize_residual(const LatentSeq& latent, const std::vector<Codebook>& books,
                              int active_layers) {
    if (active_layers < 1 || active_layers > static_cast<int>(books.size()))
        throw Error("quantize_residual: active_layers out of range");
    int n = latent.n(), d = latent.d();
    QuantResult q;
    q.quantized_sum = Tensor::zeros({n, d});
    Tensor r = latent.vecs;
    std::vector<int> idx(static_cast<size_t>(n));
    for (int v = 0; v < active_layers; ++v) {
        const Codebook& book = books[static_cast<size_t>(v)];
        if (book.dim() != d) throw Error("quantize_residual: codebook dim mismatch");
        kernels::nearest_codes(r.data.data(), n, book.vectors.data.data(), book.codes(), d, idx.data());
        Tensor picked({n, d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) picked.at(i, j) = book.vectors.at(idx[i], j);
        q.tokens.push_back(idx);
        q.residual_inputs.push_back(r);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                q.quantized_sum.at(i, j) += picked.at(i, j);
                r.at(i, j) -= picked.at(i, j);
            }
        q.quantized.push_back(std::move(picked));
    }
    q.residual_final = std::move(r);
    return q;
}

namespace {

Tensor conv_init(std::vector<int> shape, Rng& rng) {
    int fan_in = shape[1] * (shape.size() > 2 ? shape[2] : 1);
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::rand_uniform(std::move(shape), rng, -s, s);
}

void add_conv(nn::ParamStore& ps, const std::string& name, int cout, int cin, int k, Rng& rng) {
    ps.add(name + ".w", conv_init({cout, cin, k}, rng));
    ps.add(name + ".b", Tensor::zeros({cout}));
}

int conv_node(Tape& t, const BoundParams& bp, const std::string& name, int x, int stride, int pad) {
    return t.conv1d(x, bp.node(name + ".w"), bp.node(name + ".b"), stride, pad);
}

int res_block(Tape& t, const BoundParams& bp, const std::string& name, int x) {
    int h = t.gelu(x);
    h = conv_node(t, bp, name + ".c3", h, 1, 1);
    h = t.gelu(h);
    h = conv_node(t, bp, name + ".c1", h, 1, 0);
    return t.add(x, h);
}

}  // namespace

VqModel VqModel::init(const RvqConfig& cfg, const std::array<int, 4>& part_dims, int out_dim,
                      uint64_t seed) {
    cfg.validate();
    VqModel m;
    m.cfg = cfg;
    m.part_dims = part_dims;
    m.out_dim = out_dim;
    Rng rng(seed);
    int C = cfg.channels, d = cfg.code_dim;
    for (int p = 0; p < 4; ++p) {
        std::string pre = "enc." + std::string(motion::part_name(static_cast<Part>(p)));
        add_conv(m.params, pre + ".in", C, part_dims[static_cast<size_t>(p)], 3, rng);
        add_conv(m.params, pre + ".down1", C, C, 4, rng);
        add_conv(m.params, pre + ".res1.c3", C, C, 3, rng);
        add_conv(m.params, pre + ".res1.c1", C, C, 1, rng);
        add_conv(m.params, pre + ".down2", C, C, 4, rng);
        add_conv(m.params, pre + ".res2.c3", C, C, 3, rng);
        add_conv(m.params, pre + ".res2.c1", C, C, 1, rng);
        add_conv(m.params, pre + ".out", d, C, 3, rng);
    }
    add_conv(m.params, "dec.in", C, 4 * d, 3, rng);
    add_conv(m.params, "dec.res1.c3", C, C, 3, rng);
    add_conv(m.params, "dec.res1.c1", C, C, 1, rng);
    add_conv(m.params, "dec.up1", C, C, 3, rng);
    add_conv(m.params, "dec.res2.c3", C, C, 3, rng);
    add_conv(m.params, "dec.res2.c1", C, C, 1, rng);
    add_conv(m.params, "dec.up2", C, C, 3, rng);
    add_conv(m.params, "dec.out", out_dim, C, 3, rng);
    for (int p = 0; p < 4; ++p)
        for (int v = 0; v < cfg.num_layers; ++v)
            m.books[static_cast<size_t>(p)].push_back(Codebook::init(cfg.codes, d, rng));
    return m;
}

int encoder_graph(Tape& tape, const BoundParams& bp, int part, int x_node, const RvqConfig& cfg) {
    std::string pre = "enc." + std::string(motion::part_name(static_cast<Part>(part)));
    int h = conv_node(tape, bp, pre + ".in", x_node, 1, 1);
    h = tape.gelu(h);
    h = conv_node(tape, bp, pre + ".down1", h, 2, 1);
    h = res_block(tape, bp, pre + ".res1", h);
    h = conv_node(tape, bp, pre + ".down2", h, 2, 1);
    h = res_block(tape, bp, pre + ".res2", h);
    h = conv_node(tape, bp, pre + ".out", h, 1, 1);
    return tape.transpose(h);  // [n, d]
}

int decoder_graph(Tape& tape, const BoundParams& bp, int latents_cat, const RvqConfig& cfg) {
    int h = conv_node(tape, bp, "dec.in", latents_cat, 1, 1);
    h = res_block(tape, bp, "dec.res1", h);
    h = tape.upsample2(h);
    h = conv_node(tape, bp, "dec.up1", h, 1, 1);
    h = res_block(tape, bp, "dec.res2", h);
    h = tape.upsample2(h);
    h = conv_node(tape, bp, "dec.up2", h, 1, 1);
    h = tape.gelu(h);
    h = conv_node(tape, bp, "dec.out", h, 1, 1);
    return tape.transpose(h);  // [T, out_dim]
}

MatF pad_to_downscale(const MatF& frames, int downscale) {
    int T = frames.rows;
    int Tp = ((T + downscale - 1) / downscale) * downscale;
    if (Tp == T) return frames;
    MatF out(Tp, frames.cols);
    for (int t = 0; t < Tp; ++t) {
        int src = t < T ? t : T - 1;
        for (int c = 0; c < frames.cols; ++c) out.at(t, c) = frames.at(src, c);
    }
    return out;
}

namespace {

Tensor frames_to_channels(const MatF& frames) {
    Tensor x({frames.cols, frames.rows});
    for (int c = 0; c < frames.cols; ++c)
        for (int t = 0; t < frames.rows; ++t) x.at(c, t) = frames.at(t, c);
    return x;
}

}  // namespace

LatentSeq encode_part(const PartMotion& pm, const VqModel& model) {
    int p = static_cast<int>(pm.part);
    if (pm.frames.cols != model.part_dims[static_cast<size_t>(p)])
        throw Error("encode_part: column count does not match model part dims");
    MatF padded = pad_to_downscale(pm.frames, model.cfg.downscale);
    Tape tape;
    BoundParams bp = BoundParams::bind(tape, const_cast<nn::ParamStore&>(model.params), false);
    int x = tape.constant(frames_to_channels(padded));
    int lat = encoder_graph(tape, bp, p, x, model.cfg);
    LatentSeq out;
    out.part = pm.part;
    out.vecs = tape.val(lat);
    return out;
}

MotionSequence decode_whole(const std::array<LatentSeq, 4>& latents, const VqModel& model, float fps) {
    int n = latents[0].n();
    for (const auto& l : latents)
        if (l.n() != n) throw Error("decode_whole: token length mismatch across parts");
    Tape tape;
    BoundParams bp = BoundParams::bind(tape, const_cast<nn::ParamStore&>(model.params), false);
    std::vector<int> cols;
    for (int p = 0; p < 4; ++p) cols.push_back(tape.transpose(tape.constant(latents[static_cast<size_t>(p)].vecs)));
    int z = tape.concat_rows(cols);  // [4d, n], ordered LU,RU,LL,RL
    int out = decoder_graph(tape, bp, z, model.cfg);
    const Tensor& y = tape.val(out);
    MotionSequence m;
    m.fps = fps;
    m.frames = MatF(y.dim(0), y.dim(1));
    for (int t = 0; t < y.dim(0); ++t)
        for (int c = 0; c < y.dim(1); ++c) m.frames.at(t, c) = static_cast<float>(y.at(t, c));
    return m;
}

double rvq_loss(const MatF& m, const MatF& m_hat, const std::vector<Tensor>& residual_inputs,
                const std::vector<Tensor>& quantized, double beta) {
    if (m.rows != m_hat.rows || m.cols != m_hat.cols) throw Error("rvq_loss: shape mismatch");
    if (residual_inputs.size() != quantized.size()) throw Error("rvq_loss: layer list mismatch");
    double l1 = 0.0;
    for (size_t i = 0; i < m.data.size(); ++i) l1 += std::abs(static_cast<double>(m.data[i]) - m_hat.data[i]);
    l1 /= static_cast<double>(m.data.size());
    double commit = 0.0;
    for (size_t v = 0; v < residual_inputs.size(); ++v) {
        const Tensor& r = residual_inputs[v];
        const Tensor& q = quantized[v];
        if (!r.same_shape(q)) throw Error("rvq_loss: residual/quantized shape mismatch");
        double s = 0.0;
        for (int64_t i = 0; i < r.numel(); ++i) {
            double d = r.data[i] - q.data[i];
            s += d * d;
        }
        commit += s / static_cast<double>(r.numel());
    }
    return l1 + beta * commit;
}

TokenGrid tokenize(const MotionSequence& m, const VqModel& model) {
    motion::PartitionScheme scheme = motion::four_part_partition(motion::standard_layout());
    TokenGrid grid;
    for (int p = 0; p < 4; ++p) {
        PartMotion pm = slice_part(m, static_cast<Part>(p), scheme);
        LatentSeq lat = encode_part(pm, model);
        QuantResult q = quantize_residual(lat, model.books[static_cast<size_t>(p)], model.cfg.num_layers);
        if (p == 0) grid = TokenGrid(model.cfg.num_layers, lat.n(), model.cfg.codes);
        for (int v = 0; v < model.cfg.num_layers; ++v)
            for (int t = 0; t < lat.n(); ++t) grid.at(v, p, t) = q.tokens[static_cast<size_t>(v)][static_cast<size_t>(t)];
    }
    return grid;
}

MotionSequence detokenize(const TokenGrid& grid, const VqModel& model, int T_out, float fps) {
    if (grid.has_mask()) throw Error("detokenize: grid contains MASK tokens");
    std::array<LatentSeq, 4> latents;
    for (int p = 0; p < 4; ++p) {
        LatentSeq l;
        l.part = static_cast<Part>(p);
        l.vecs = Tensor::zeros({grid.n, model.cfg.code_dim});
        for (int v = 0; v < grid.layers; ++v) {
            const Codebook& book = model.books[static_cast<size_t>(p)][static_cast<size_t>(v)];
            for (int t = 0; t < grid.n; ++t) {
                int code = grid.at(v, p, t);
                if (code < 0 || code >= book.codes()) throw Error("detokenize: token out of range");
                for (int j = 0; j < model.cfg.code_dim; ++j) l.vecs.at(t, j) += book.vectors.at(code, j);
            }
        }
        latents[static_cast<size_t>(p)] = std::move(l);
    }
    MotionSequence m = decode_whole(latents, model, fps);
    if (T_out >= 0 && T_out < m.T()) {
        MatF cut(T_out, m.D());
        for (int t = 0; t < T_out; ++t)
            for (int c = 0; c < m.D(); ++c) cut.at(t, c) = m.frames.at(t, c);
        m.frames = std::move(cut);
    }
    return m;
}

void ema_update(Codebook& book, const std::vector<double>& counts, const std::vector<double>& sums,
                double decay) {
    for (int k = 0; k < book.codes(); ++k) {
        book.ema_counts[static_cast<size_t>(k)] =
            decay * book.ema_counts[static_cast<size_t>(k)] + (1.0 - decay) * counts[static_cast<size_t>(k)];
        for (int j = 0; j < book.dim(); ++j) {
            double s = sums[static_cast<size_t>(k) * book.dim() + j];
            book.ema_sums.at(k, j) = decay * book.ema_sums.at(k, j) + (1.0 - decay) * s;
            book.vectors.at(k, j) =
                book.ema_sums.at(k, j) / std::max(book.ema_counts[static_cast<size_t>(k)], 1e-8);
        }
    }
}

int reset_low_usage(Codebook& book, const std::vector<const Tensor*>& pool, double threshold,
                    Rng& rng) {
    int resets = 0;
    for (int k = 0; k < book.codes(); ++k) {
        if (book.ema_counts[static_cast<size_t>(k)] >= threshold) continue;
        const Tensor& src = *pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
        int row = rng.uniform_int(src.dim(0));
        for (int j = 0; j < book.dim(); ++j) {
            book.vectors.at(k, j) = src.at(row, j);
            book.ema_sums.at(k, j) = src.at(row, j);
        }
        book.ema_counts[static_cast<size_t>(k)] = 1.0;
        ++resets;
    }
    return resets;
}

RvqTrainer::RvqTrainer(VqModel& model, nn::AdamConfig adam, uint64_t seed)
    : model_(model), adam_(adam), rng_(seed),
      scheme_(motion::four_part_partition(motion::standard_layout())) {}

RvqTrainStats RvqTrainer::step(const std::vector<MotionSequence>& batch) {
    if (batch.empty()) throw Error("train_rvq_step: empty batch");
    int T = batch[0].T();
    for (const auto& m : batch)
        if (m.T() != T) throw Error("train_rvq_step: batch requires uniform T");

    int active = model_.cfg.num_layers;
    if (model_.cfg.quant_dropout > 0.0 && rng_.uniform() < model_.cfg.quant_dropout)
        active = 1 + rng_.uniform_int(model_.cfg.num_layers);

    Tape tape;
    BoundParams bp = BoundParams::bind(tape, model_.params, true);
    double inv_b = 1.0 / static_cast<double>(batch.size());

    // Per (part, layer) EMA statistics collected while building the graph.
    std::array<std::vector<std::vector<double>>, 4> sums;
    std::array<std::vector<std::vector<double>>, 4> counts;
    for (int p = 0; p < 4; ++p) {
        sums[static_cast<size_t>(p)].assign(static_cast<size_t>(active),
                                            std::vector<double>(static_cast<size_t>(model_.cfg.codes * model_.cfg.code_dim), 0.0));
        counts[static_cast<size_t>(p)].assign(static_cast<size_t>(active),
                                              std::vector<double>(static_cast<size_t>(model_.cfg.codes), 0.0));
    }
    std::vector<QuantResult> kept;
    kept.reserve(batch.size() * 4);

    std::vector<int> sample_losses;
    double recon_sum = 0.0;
    for (const auto& m : batch) {
        std::array<int, 4> latent_nodes{};
        std::array<int, 4> dec_cols{};
        std::vector<int> commit_terms;
        for (int p = 0; p < 4; ++p) {
            PartMotion pm = slice_part(m, static_cast<Part>(p), scheme_);
            MatF padded = pad_to_downscale(pm.frames, model_.cfg.downscale);
            int x = tape.constant(frames_to_channels(padded));
            int lat = encoder_graph(tape, bp, p, x, model_.cfg);
            latent_nodes[static_cast<size_t>(p)] = lat;

            LatentSeq ls;
            ls.part = static_cast<Part>(p);
            ls.vecs = tape.val(lat);
            QuantResult q = quantize_residual(ls, model_.books[static_cast<size_t>(p)], active);

            // Straight-through: decoder input = b + const(sum(codes) - b).
            Tensor offset = q.quantized_sum;
            for (int64_t i = 0; i < offset.numel(); ++i) offset.data[i] -= ls.vecs.data[i];
            int dec_in = tape.add(lat, tape.constant(std::move(offset)));
            dec_cols[static_cast<size_t>(p)] = tape.transpose(dec_in);

            // Commitment over residual layers 1..active-1; gradient reaches the
            // encoder only (quantized side is a stop-gradient constant).
            for (int v = 1; v < active; ++v) {
                Tensor prefix = Tensor::zeros(ls.vecs.shape);
                for (int u = 0; u < v; ++u)
                    for (int64_t i = 0; i < prefix.numel(); ++i)
                        prefix.data[i] += q.quantized[static_cast<size_t>(u)].data[i];
                int r_v = tape.sub(lat, tape.constant(std::move(prefix)));
                commit_terms.push_back(tape.mean_sq(r_v, tape.constant(q.quantized[static_cast<size_t>(v)])));
            }

            for (int v = 0; v < active; ++v) {
                for (int t = 0; t < ls.n(); ++t) {
                    int code = q.tokens[static_cast<size_t>(v)][static_cast<size_t>(t)];
                    counts[static_cast<size_t>(p)][static_cast<size_t>(v)][static_cast<size_t>(code)] += 1.0;
                    for (int j = 0; j < model_.cfg.code_dim; ++j)
                        sums[static_cast<size_t>(p)][static_cast<size_t>(v)]
                            [static_cast<size_t>(code * model_.cfg.code_dim + j)] +=
                            q.residual_inputs[static_cast<size_t>(v)].at(t, j);
                }
            }
            kept.push_back(std::move(q));
        }
        int z = tape.concat_rows({dec_cols[0], dec_cols[1], dec_cols[2], dec_cols[3]});
        int decoded = decoder_graph(tape, bp, z, model_.cfg);
        int recon = tape.slice_rows(decoded, 0, T);

        Tensor target({T, m.D()});
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < m.D(); ++c) target.at(t, c) = m.frames.at(t, c);
        int l1 = tape.mean_abs(recon, tape.constant(std::move(target)));
        recon_sum += tape.val(l1).at(0);

        int loss = l1;
        if (!commit_terms.empty())
            loss = tape.add(loss, tape.scale(tape.add_many(commit_terms), model_.cfg.beta));
        sample_losses.push_back(tape.scale(loss, inv_b));
    }
    int total = tape.add_many(sample_losses);
    double loss_val = tape.val(total).at(0);
    if (!std::isfinite(loss_val)) throw Error("train_rvq_step: non-finite loss, step aborted");

    tape.backward(total);
    ++step_;
    adam_step(bp, adam_, step_);

    // EMA update + reset for the layers that participated this step.
    for (int p = 0; p < 4; ++p) {
        for (int v = 0; v < active; ++v) {
            Codebook& book = model_.books[static_cast<size_t>(p)][static_cast<size_t>(v)];
            ema_update(book, counts[static_cast<size_t>(p)][static_cast<size_t>(v)],
                       sums[static_cast<size_t>(p)][static_cast<size_t>(v)], model_.cfg.ema_decay);
            std::vector<const Tensor*> pool;
            for (size_t s = 0; s < batch.size(); ++s)
                pool.push_back(&kept[s * 4 + static_cast<size_t>(p)].residual_inputs[static_cast<size_t>(v)]);
            reset_low_usage(book, pool, model_.cfg.reset_threshold, rng_);
        }
    }

    RvqTrainStats st;
    st.loss = loss_val;
    st.recon_l1 = recon_sum * inv_b;
    st.active_layers = active;
    return st;
}

void VqModel::save(const std::string& path) const {
    NamedTensors nt = pack_params(params);
    nt.add("meta.cfg",
           {8},
           {static_cast<double>(cfg.num_layers), static_cast<double>(cfg.codes),
            static_cast<double>(cfg.code_dim), static_cast<double>(cfg.downscale),
            static_cast<double>(cfg.channels), cfg.quant_dropout, cfg.beta, cfg.ema_decay});
    nt.add("meta.part_dims", {4},
           {static_cast<double>(part_dims[0]), static_cast<double>(part_dims[1]),
            static_cast<double>(part_dims[2]), static_cast<double>(part_dims[3])});
    nt.add("meta.out_dim", {1}, {static_cast<double>(out_dim)});
    for (int p = 0; p < 4; ++p)
        for (int v = 0; v < cfg.num_layers; ++v) {
            const Codebook& b = books[static_cast<size_t>(p)][static_cast<size_t>(v)];
            std::string pre = "book." + std::string(motion::part_name(static_cast<Part>(p))) + "." +
                              std::to_string(v);
            nt.add(pre + ".vectors", b.vectors.shape, b.vectors.data);
            nt.add(pre + ".counts", {b.codes()}, b.ema_counts);
            nt.add(pre + ".sums", b.ema_sums.shape, b.ema_sums.data);
        }
    write_cmk1(path, nt);
}

VqModel VqModel::load(const std::string& path) {
    NamedTensors nt = read_cmk1(path);
    const auto& c = nt.find("meta.cfg").data;
    RvqConfig cfg;
    cfg.num_layers = static_cast<int>(c[0]);
    cfg.codes = static_cast<int>(c[1]);
    cfg.code_dim = static_cast<int>(c[2]);
    cfg.downscale = static_cast<int>(c[3]);
    cfg.channels = static_cast<int>(c[4]);
    cfg.quant_dropout = c[5];
    cfg.beta = c[6];
    cfg.ema_decay = c[7];
    const auto& pd = nt.find("meta.part_dims").data;
    std::array<int, 4> dims{static_cast<int>(pd[0]), static_cast<int>(pd[1]), static_cast<int>(pd[2]),
                            static_cast<int>(pd[3])};
    int out_dim = static_cast<int>(nt.find("meta.out_dim").data[0]);
    VqModel m = VqModel::init(cfg, dims, out_dim, 0);
    unpack_params(nt, m.params);
    for (int p = 0; p < 4; ++p)
        for (int v = 0; v < cfg.num_layers; ++v) {
            Codebook& b = m.books[static_cast<size_t>(p)][static_cast<size_t>(v)];
            std::string pre = "book." + std::string(motion::part_name(static_cast<Part>(p))) + "." +
                              std::to_string(v);
            const auto& vec = nt.find(pre + ".vectors");
            b.vectors = Tensor(vec.shape, vec.data);
            b.ema_counts = nt.find(pre + ".counts").data;
            const auto& sums = nt.find(pre + ".sums");
            b.ema_sums = Tensor(sums.shape, sums.data);
        }
    return m;
}

}  // namespace coma::vq
