#include "coma/gen.hpp"

#include <algorithm>
#include <cmath>

#include "coma/checkpoint.hpp"
#include "coma/kernels.hpp"

namespace coma::gen {

using nn::BoundParams;
using nn::Tape;

void GenConfig::validate() const {
    if (model_dim % heads != 0) throw Error("GenConfig: model_dim must divide into heads");
    if (steps < 1) throw Error("GenConfig: steps must be >= 1");
    if (layers < 1 || codes < 2 || vq_layers < 1) throw Error("GenConfig: bad sizes");
}

double gamma_schedule(double tau) {
    if (tau < 0.0 || tau > 1.0) throw Error("gamma: tau outside [0,1]");
    if (tau == 1.0) return 0.0;  // cos(pi/2) is only ~6e-17 in floating point
    return std::cos(1.57079632679489661923 * tau);
}

int mask_count(int total, double tau) {
    if (total < 0) throw Error("mask_count: negative total");
    int c = static_cast<int>(std::ceil(total * gamma_schedule(tau)));
    return std::min(std::max(c, 0), total);
}

TextBundle TextBundle::null_bundle(int dim) {
    TextBundle b;
    b.global.assign(static_cast<size_t>(dim), 0.0);
    b.is_null = true;
    return b;
}

TextBundle TextBundle::unconditional() const {
    TextBundle b;
    b.global.assign(global.size(), 0.0);
    b.is_null = true;
    return b;
}

const std::vector<double>& TextBundle::for_part(int p) const {
    const auto& l = locals[static_cast<size_t>(p)];
    return l ? *l : global;
}

Logits cfg_logits(const Logits& cond, const Logits& uncond, double s) {
    if (!cond.t.same_shape(uncond.t)) throw Error("cfg_logits: shape mismatch");
    Logits out = cond;
    // (1+s)*c - s*u, written as c + s*(c-u) so s = 0 and c = u stay bitwise.
    for (int64_t i = 0; i < out.t.numel(); ++i)
        out.t.data[i] = cond.t.data[i] + s * (cond.t.data[i] - uncond.t.data[i]);
    return out;
}

namespace {

struct RowMap {
    int n = 0;
    int S = 0;                  // 4 * (n + 1)
    std::vector<int> time_id;   // 0 for the text slot, 1+t for motion
    std::vector<int> part_id;
    std::vector<int> motion_rows;  // part-major (p, t) -> row

    explicit RowMap(int n_) : n(n_), S(4 * (n_ + 1)) {
        time_id.resize(static_cast<size_t>(S));
        part_id.resize(static_cast<size_t>(S));
        for (int p = 0; p < 4; ++p) {
            int base = p * (n + 1);
            time_id[static_cast<size_t>(base)] = 0;
            part_id[static_cast<size_t>(base)] = p;
            for (int t = 0; t < n; ++t) {
                time_id[static_cast<size_t>(base + 1 + t)] = 1 + t;
                part_id[static_cast<size_t>(base + 1 + t)] = p;
                motion_rows.push_back(base + 1 + t);
            }
        }
    }

    int text_row(int p) const { return p * (n + 1); }
    int motion_row(int p, int t) const { return p * (n + 1) + 1 + t; }
};

struct AttnMasks {
    std::shared_ptr<std::vector<std::uint8_t>> spatial;
    std::shared_ptr<std::vector<std::uint8_t>> temporal;
};

// Spatial pass: a motion query attends to the four parts at its own time step
// plus its part's text token; text tokens attend to themselves only. Temporal
// pass: queries attend within their own part row (text prefix included).
AttnMasks build_masks(const RowMap& rm) {
    AttnMasks m;
    m.spatial = std::make_shared<std::vector<std::uint8_t>>(static_cast<size_t>(rm.S) * rm.S, 0);
    m.temporal = std::make_shared<std::vector<std::uint8_t>>(static_cast<size_t>(rm.S) * rm.S, 0);
    auto sp = [&](int q, int k) { (*m.spatial)[static_cast<size_t>(q) * rm.S + k] = 1; };
    auto tp = [&](int q, int k) { (*m.temporal)[static_cast<size_t>(q) * rm.S + k] = 1; };
    for (int p = 0; p < 4; ++p) {
        sp(rm.text_row(p), rm.text_row(p));
        for (int t = 0; t < rm.n; ++t) {
            int q = rm.motion_row(p, t);
            for (int p2 = 0; p2 < 4; ++p2) sp(q, rm.motion_row(p2, t));
            sp(q, rm.text_row(p));
        }
        for (int i = 0; i <= rm.n; ++i)
            for (int j = 0; j <= rm.n; ++j) tp(p * (rm.n + 1) + i, p * (rm.n + 1) + j);
    }
    return m;
}

int attention(Tape& tape, const BoundParams& bp, const std::string& pre, int x,
              std::shared_ptr<const std::vector<std::uint8_t>> mask, const GenConfig& cfg) {
    int q = tape.linear(x, bp.node(pre + ".wq"), bp.node(pre + ".bq"));
    int k = tape.linear(x, bp.node(pre + ".wk"), bp.node(pre + ".bk"));
    int v = tape.linear(x, bp.node(pre + ".wv"), bp.node(pre + ".bv"));
    int dh = cfg.model_dim / cfg.heads;
    std::vector<int> ctx;
    for (int h = 0; h < cfg.heads; ++h) {
        int qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
        int kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
        int vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
        int scores = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        int probs = tape.softmax_masked(scores, mask);
        ctx.push_back(tape.matmul(probs, vh));
    }
    int cat = tape.concat_cols(ctx);
    return tape.linear(cat, bp.node(pre + ".wo"), bp.node(pre + ".bo"));
}

int trunk(Tape& tape, const BoundParams& bp, const std::string& pre, int x, const AttnMasks& masks,
          const GenConfig& cfg) {
    for (int l = 0; l < cfg.layers; ++l) {
        std::string lp = pre + ".l" + std::to_string(l);
        int h = tape.layernorm(x, bp.node(lp + ".ln1.g"), bp.node(lp + ".ln1.b"));
        x = tape.add(x, attention(tape, bp, lp + ".sattn", h, masks.spatial, cfg));
        h = tape.layernorm(x, bp.node(lp + ".ln2.g"), bp.node(lp + ".ln2.b"));
        x = tape.add(x, attention(tape, bp, lp + ".tattn", h, masks.temporal, cfg));
        h = tape.layernorm(x, bp.node(lp + ".ln3.g"), bp.node(lp + ".ln3.b"));
        int f = tape.linear(h, bp.node(lp + ".ffn.w1"), bp.node(lp + ".ffn.b1"));
        f = tape.gelu(f);
        f = tape.linear(f, bp.node(lp + ".ffn.w2"), bp.node(lp + ".ffn.b2"));
        x = tape.add(x, f);
    }
    return tape.layernorm(x, bp.node(pre + ".lnf.g"), bp.node(pre + ".lnf.b"));
}

int text_rows_node(Tape& tape, const BoundParams& bp, const std::string& pre, const TextBundle& text,
                   const RowMap& rm, const GenConfig& cfg) {
    Tensor raw({4, cfg.text_dim});
    for (int p = 0; p < 4; ++p) {
        const auto& e = text.for_part(p);
        if (static_cast<int>(e.size()) != cfg.text_dim) throw Error("text embedding length mismatch");
        if (!text.is_null)
            for (int j = 0; j < cfg.text_dim; ++j) raw.at(p, j) = e[static_cast<size_t>(j)];
    }
    int proj = tape.linear(tape.constant(std::move(raw)), bp.node(pre + ".text.w"), bp.node(pre + ".text.b"));
    std::vector<int> dst;
    for (int p = 0; p < 4; ++p) dst.push_back(rm.text_row(p));
    return tape.scatter_rows(proj, dst, rm.S);
}

int positional_nodes(Tape& tape, const BoundParams& bp, const std::string& pre, const RowMap& rm) {
    int pt = tape.gather_rows(bp.node(pre + ".pos_time"), rm.time_id);
    int pp = tape.gather_rows(bp.node(pre + ".pos_part"), rm.part_id);
    return tape.add(pt, pp);
}

int heads_node(Tape& tape, const BoundParams& bp, const std::string& pre, int x, const RowMap& rm) {
    std::vector<int> parts;
    for (int p = 0; p < 4; ++p) {
        int rows = tape.slice_rows(x, rm.motion_row(p, 0), rm.motion_row(p, rm.n - 1) + 1);
        parts.push_back(tape.linear(rows, bp.node(pre + ".head." + std::to_string(p) + ".w"),
                                    bp.node(pre + ".head." + std::to_string(p) + ".b")));
    }
    return tape.concat_rows(parts);  // [4n, K]
}

void add_linear(nn::ParamStore& ps, const std::string& name, int out, int in, Rng& rng) {
    double s = 1.0 / std::sqrt(static_cast<double>(in));
    ps.add(name + ".w", Tensor::rand_uniform({out, in}, rng, -s, s));
    ps.add(name + ".b", Tensor::zeros({out}));
}

void add_trunk_params(nn::ParamStore& ps, const std::string& pre, const GenConfig& cfg, Rng& rng) {
    int D = cfg.model_dim;
    add_linear(ps, pre + ".text", D, cfg.text_dim, rng);
    ps.add(pre + ".pos_time", Tensor::randn({cfg.n_max + 1, D}, rng, 0.02));
    ps.add(pre + ".pos_part", Tensor::randn({4, D}, rng, 0.02));
    double s = 1.0 / std::sqrt(static_cast<double>(D));
    for (int l = 0; l < cfg.layers; ++l) {
        std::string lp = pre + ".l" + std::to_string(l);
        for (const char* a : {".sattn", ".tattn"}) {
            std::string ap = lp + a;
            for (const char* w : {".wq", ".wk", ".wv", ".wo"})
                ps.add(ap + w, Tensor::rand_uniform({D, D}, rng, -s, s));
            for (const char* b : {".bq", ".bk", ".bv", ".bo"}) ps.add(ap + b, Tensor::zeros({D}));
        }
        for (const char* ln : {".ln1", ".ln2", ".ln3"}) {
            ps.add(lp + ln + ".g", Tensor::full({D}, 1.0));
            ps.add(lp + ln + ".b", Tensor::zeros({D}));
        }
        ps.add(lp + ".ffn.w1", Tensor::rand_uniform({cfg.ffn_mult * D, D}, rng, -s, s));
        ps.add(lp + ".ffn.b1", Tensor::zeros({cfg.ffn_mult * D}));
        double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.ffn_mult * D));
        ps.add(lp + ".ffn.w2", Tensor::rand_uniform({D, cfg.ffn_mult * D}, rng, -s2, s2));
        ps.add(lp + ".ffn.b2", Tensor::zeros({D}));
    }
    ps.add(pre + ".lnf.g", Tensor::full({D}, 1.0));
    ps.add(pre + ".lnf.b", Tensor::zeros({D}));
    for (int p = 0; p < 4; ++p) add_linear(ps, pre + ".head." + std::to_string(p), cfg.codes, D, rng);
}

}  // namespace

BaseModel BaseModel::init(const GenConfig& cfg, uint64_t seed) {
    cfg.validate();
    BaseModel m;
    m.cfg = cfg;
    Rng rng(seed);
    for (int p = 0; p < 4; ++p)
        m.params.add("base.tok." + std::to_string(p), Tensor::randn({cfg.codes + 1, cfg.model_dim}, rng, 0.02));
    add_trunk_params(m.params, "base", cfg, rng);
    return m;
}

ResModel ResModel::init(const GenConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (cfg.vq_layers < 2) throw Error("ResModel: needs at least one residual layer");
    ResModel m;
    m.cfg = cfg;
    Rng rng(seed);
    for (int v = 0; v < cfg.res_count(); ++v)
        for (int p = 0; p < 4; ++p)
            m.params.add("res.tok." + std::to_string(v) + "." + std::to_string(p),
                         Tensor::randn({cfg.codes, cfg.model_dim}, rng, 0.02));
    m.params.add("res.layeremb", Tensor::randn({cfg.res_count(), cfg.model_dim}, rng, 0.02));
    add_trunk_params(m.params, "res", cfg, rng);
    return m;
}

int base_graph(Tape& tape, const BoundParams& bp, const TokenGrid& grid, const TextBundle& text,
               const GenConfig& cfg) {
    if (grid.n > cfg.n_max) throw Error("base_graph: sequence longer than n_max");
    RowMap rm(grid.n);
    std::vector<int> tok_scattered;
    for (int p = 0; p < 4; ++p) {
        std::vector<int> ids(static_cast<size_t>(grid.n));
        std::vector<int> dst(static_cast<size_t>(grid.n));
        for (int t = 0; t < grid.n; ++t) {
            int tok = grid.at(0, p, t);
            if (tok < 0 || tok > cfg.codes) throw Error("base_graph: token out of range");
            ids[static_cast<size_t>(t)] = tok;
            dst[static_cast<size_t>(t)] = rm.motion_row(p, t);
        }
        int emb = tape.gather_rows(bp.node("base.tok." + std::to_string(p)), ids);
        tok_scattered.push_back(tape.scatter_rows(emb, dst, rm.S));
    }
    int x = tape.add_many(tok_scattered);
    x = tape.add(x, text_rows_node(tape, bp, "base", text, rm, cfg));
    x = tape.add(x, positional_nodes(tape, bp, "base", rm));
    AttnMasks masks = build_masks(rm);
    x = trunk(tape, bp, "base", x, masks, cfg);
    return heads_node(tape, bp, "base", x, rm);
}

namespace {

// Sum of the per-layer embeddings of layers 0..j-1, motion rows only,
// part-major [4n, D].
int residual_tok_emb_node(Tape& tape, const BoundParams& bp, const TokenGrid& grid, int j,
                          const GenConfig& cfg) {
    std::vector<int> parts;
    for (int p = 0; p < 4; ++p) {
        std::vector<int> embs;
        for (int v = 0; v < j; ++v) {
            std::vector<int> ids(static_cast<size_t>(grid.n));
            for (int t = 0; t < grid.n; ++t) {
                int tok = grid.at(v, p, t);
                if (tok < 0 || tok >= cfg.codes)
                    throw Error("residual_graph: MASK or out-of-range token in context layers");
                ids[static_cast<size_t>(t)] = tok;
            }
            embs.push_back(tape.gather_rows(bp.node("res.tok." + std::to_string(v) + "." + std::to_string(p)), ids));
        }
        parts.push_back(tape.add_many(embs));
    }
    return tape.concat_rows(parts);
}

}  // namespace

Tensor residual_token_embeddings(const TokenGrid& grid, int j, const ResModel& model) {
    if (j < 1 || j > model.cfg.res_count()) throw Error("residual_token_embeddings: layer out of range");
    Tape tape;
    BoundParams bp = BoundParams::bind(tape, const_cast<nn::ParamStore&>(model.params), false);
    return tape.val(residual_tok_emb_node(tape, bp, grid, j, model.cfg));
}

int residual_graph(Tape& tape, const BoundParams& bp, const TokenGrid& grid, int j,
                   const TextBundle& text, const GenConfig& cfg) {
    if (j < 1 || j > cfg.res_count()) throw Error("residual_graph: layer index out of range");
    if (grid.n > cfg.n_max) throw Error("residual_graph: sequence longer than n_max");
    RowMap rm(grid.n);
    int emb = residual_tok_emb_node(tape, bp, grid, j, cfg);
    int x = tape.scatter_rows(emb, rm.motion_rows, rm.S);
    // Layer-index conditioning on every motion row.
    std::vector<int> lids(rm.motion_rows.size(), j - 1);
    int lemb = tape.gather_rows(bp.node("res.layeremb"), lids);
    x = tape.add(x, tape.scatter_rows(lemb, rm.motion_rows, rm.S));
    x = tape.add(x, text_rows_node(tape, bp, "res", text, rm, cfg));
    x = tape.add(x, positional_nodes(tape, bp, "res", rm));
    AttnMasks masks = build_masks(rm);
    x = trunk(tape, bp, "res", x, masks, cfg);
    return heads_node(tape, bp, "res", x, rm);
}

namespace {

Logits logits_from_node(const Tape& tape, int node, int n, int codes) {
    Logits out;
    out.t = tape.val(node);
    out.n = n;
    out.codes = codes;
    if (!out.t.all_finite()) throw Error("forward produced non-finite logits");
    return out;
}

}  // namespace

Logits base_forward(const TokenGrid& grid, const TextBundle& text, const BaseModel& model) {
    Tape tape;
    BoundParams bp = BoundParams::bind(tape, const_cast<nn::ParamStore&>(model.params), false);
    int node = base_graph(tape, bp, grid, text, model.cfg);
    return logits_from_node(tape, node, grid.n, model.cfg.codes);
}

Logits residual_forward(const TokenGrid& grid, int j, const TextBundle& text, const ResModel& model) {
    Tape tape;
    BoundParams bp = BoundParams::bind(tape, const_cast<nn::ParamStore&>(model.params), false);
    int node = residual_graph(tape, bp, grid, j, text, model.cfg);
    return logits_from_node(tape, node, grid.n, model.cfg.codes);
}

namespace {

int sample_row(const double* logits, int K, double temperature, Rng& rng, double* confidence,
               const double* probs_t1) {
    int chosen;
    if (temperature <= 0.0) {
        chosen = 0;
        for (int k = 1; k < K; ++k)
            if (logits[k] > logits[chosen]) chosen = k;
    } else {
        std::vector<double> scaled(static_cast<size_t>(K));
        for (int k = 0; k < K; ++k) scaled[static_cast<size_t>(k)] = logits[k] / temperature;
        std::vector<double> p(static_cast<size_t>(K));
        kernels::softmax_rows(scaled.data(), p.data(), 1, K);
        double u = rng.uniform();
        double acc = 0.0;
        chosen = K - 1;
        for (int k = 0; k < K; ++k) {
            acc += p[static_cast<size_t>(k)];
            if (u < acc) {
                chosen = k;
                break;
            }
        }
    }
    *confidence = probs_t1[chosen];
    return chosen;
}

}  // namespace

TokenGrid iterative_fill(const TokenGrid& grid, const TextBundle& text, const BaseModel& model,
                         uint64_t seed) {
    const GenConfig& cfg = model.cfg;
    TokenGrid out = grid;
    std::vector<std::pair<int, int>> masked;  // (part, t), part-major order
    for (int p = 0; p < 4; ++p)
        for (int t = 0; t < out.n; ++t)
            if (out.at(0, p, t) == out.mask_value) masked.emplace_back(p, t);
    int m0 = static_cast<int>(masked.size());
    if (m0 == 0) return out;

    Rng rng(seed);
    TextBundle uncond = text.unconditional();
    for (int k = 1; k <= cfg.steps; ++k) {
        double tau = static_cast<double>(k) / cfg.steps;
        int remaining_target = mask_count(m0, tau);
        double temperature = cfg.steps == 1 ? 0.0 : 1.0 - static_cast<double>(k - 1) / (cfg.steps - 1);

        Logits cond = base_forward(out, text, model);
        Logits un = base_forward(out, uncond, model);
        Logits g = cfg_logits(cond, un, cfg.cfg_base);

        std::vector<double> probs_t1(static_cast<size_t>(4 * out.n) * cfg.codes);
        kernels::softmax_rows(g.t.data.data(), probs_t1.data(), 4 * out.n, cfg.codes);

        struct Cand {
            double conf;
            int order;
            int token;
            size_t slot;
        };
        std::vector<Cand> cands;
        cands.reserve(masked.size());
        for (size_t i = 0; i < masked.size(); ++i) {
            auto [p, t] = masked[i];
            int row = p * out.n + t;
            double conf = 0.0;
            int tok = sample_row(g.t.data.data() + static_cast<size_t>(row) * cfg.codes, cfg.codes,
                                 temperature, rng, &conf,
                                 probs_t1.data() + static_cast<size_t>(row) * cfg.codes);
            cands.push_back({conf, row, tok, i});
        }
        int decide = static_cast<int>(masked.size()) - remaining_target;
        if (decide <= 0) continue;
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.conf != b.conf) return a.conf > b.conf;
            return a.order < b.order;
        });
        std::vector<std::uint8_t> decided(masked.size(), 0);
        for (int i = 0; i < decide; ++i) {
            const Cand& c = cands[static_cast<size_t>(i)];
            auto [p, t] = masked[c.slot];
            out.at(0, p, t) = c.token;
            decided[c.slot] = 1;
        }
        std::vector<std::pair<int, int>> still;
        for (size_t i = 0; i < masked.size(); ++i)
            if (!decided[i]) still.push_back(masked[i]);
        masked.swap(still);
    }
    if (!masked.empty()) throw Error("iterative_fill: schedule left masked positions");
    return out;
}

TokenGrid generate_base(const TextBundle& text, int n, const BaseModel& model, uint64_t seed) {
    TokenGrid grid(1, n, model.cfg.mask_token());
    for (int p = 0; p < 4; ++p)
        for (int t = 0; t < n; ++t) grid.at(0, p, t) = grid.mask_value;
    return iterative_fill(grid, text, model, seed);
}

void regenerate_residuals(TokenGrid& grid, const std::vector<std::pair<int, int>>& positions,
                          const TextBundle& text, const ResModel& model) {
    if (grid.has_mask(0)) throw Error("generate_residuals: MASK in base layer");
    if (grid.layers != model.cfg.vq_layers) throw Error("generate_residuals: layer count mismatch");
    for (int j = 1; j <= model.cfg.res_count(); ++j) {
        Logits lg = residual_forward(grid, j, text, model);
        for (auto [p, t] : positions) {
            int best = 0;
            for (int k = 1; k < lg.codes; ++k)
                if (lg.at(p, t, k) > lg.at(p, t, best)) best = k;
            grid.at(j, p, t) = best;
        }
    }
}

TokenGrid generate_residuals(const TokenGrid& base, const TextBundle& text, const ResModel& model) {
    TokenGrid grid(model.cfg.vq_layers, base.n, base.mask_value);
    for (int p = 0; p < 4; ++p)
        for (int t = 0; t < base.n; ++t) grid.at(0, p, t) = base.at(0, p, t);
    if (model.cfg.res_count() == 0) return grid;
    std::vector<std::pair<int, int>> all;
    for (int p = 0; p < 4; ++p)
        for (int t = 0; t < base.n; ++t) all.emplace_back(p, t);
    regenerate_residuals(grid, all, text, model);
    return grid;
}

BaseTrainer::BaseTrainer(BaseModel& model, nn::AdamConfig adam, uint64_t seed)
    : model_(model), adam_(adam), rng_(seed) {}

GenTrainStats BaseTrainer::step(const std::vector<TokenGrid>& grids,
                                const std::vector<TextBundle>& texts) {
    if (grids.empty() || grids.size() != texts.size()) throw Error("train_base_step: bad batch");
    Tape tape;
    BoundParams bp = BoundParams::bind(tape, model_.params, true);
    std::vector<int> losses;
    double inv_b = 1.0 / static_cast<double>(grids.size());
    int correct = 0, total_masked = 0;
    for (size_t e = 0; e < grids.size(); ++e) {
        const TokenGrid& g = grids[e];
        int total = 4 * g.n;
        double tau = rng_.uniform();
        int mcount = mask_count(total, tau);
        std::vector<int> perm(static_cast<size_t>(total));
        for (int i = 0; i < total; ++i) perm[static_cast<size_t>(i)] = i;
        for (int i = total - 1; i > 0; --i) std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng_.uniform_int(i + 1))]);

        TokenGrid masked = g;
        std::vector<int> targets(static_cast<size_t>(total));
        std::vector<std::uint8_t> use(static_cast<size_t>(total), 0);
        for (int p = 0; p < 4; ++p)
            for (int t = 0; t < g.n; ++t) targets[static_cast<size_t>(p * g.n + t)] = g.at(0, p, t);
        for (int i = 0; i < mcount; ++i) {
            int flat = perm[static_cast<size_t>(i)];
            masked.at(0, flat / g.n, flat % g.n) = g.mask_value;
            use[static_cast<size_t>(flat)] = 1;
        }
        bool drop = rng_.uniform() < model_.cfg.uncond_prob;
        const TextBundle& tb = texts[e];
        TextBundle uncond = drop ? tb.unconditional() : tb;
        int logits = base_graph(tape, bp, masked, drop ? uncond : tb, model_.cfg);

        const Tensor& lv = tape.val(logits);
        for (int i = 0; i < total; ++i) {
            if (!use[static_cast<size_t>(i)]) continue;
            ++total_masked;
            int best = 0;
            for (int k = 1; k < model_.cfg.codes; ++k)
                if (lv.at(i, k) > lv.at(i, best)) best = k;
            if (best == targets[static_cast<size_t>(i)]) ++correct;
        }
        losses.push_back(tape.scale(tape.cross_entropy_rows(logits, targets, use), inv_b));
    }
    int loss = tape.add_many(losses);
    double loss_val = tape.val(loss).at(0);
    if (!std::isfinite(loss_val)) throw Error("train_base_step: non-finite loss, step aborted");
    tape.backward(loss);
    ++step_;
    adam_step(bp, adam_, step_);
    GenTrainStats st;
    st.loss = loss_val;
    st.masked_total = total_masked;
    st.masked_accuracy = total_masked > 0 ? static_cast<double>(correct) / total_masked : 0.0;
    return st;
}

ResTrainer::ResTrainer(ResModel& model, nn::AdamConfig adam, uint64_t seed)
    : model_(model), adam_(adam), rng_(seed) {
    if (model.cfg.res_count() < 1) throw Error("train_res_step: model has no residual layers");
}

GenTrainStats ResTrainer::step(const std::vector<TokenGrid>& grids,
                               const std::vector<TextBundle>& texts) {
    if (grids.empty() || grids.size() != texts.size()) throw Error("train_res_step: bad batch");
    Tape tape;
    BoundParams bp = BoundParams::bind(tape, model_.params, true);
    std::vector<int> losses;
    double inv_b = 1.0 / static_cast<double>(grids.size());
    int correct = 0, total_rows = 0;
    for (size_t e = 0; e < grids.size(); ++e) {
        const TokenGrid& g = grids[e];
        if (g.layers != model_.cfg.vq_layers) throw Error("train_res_step: grid layer mismatch");
        int j = 1 + rng_.uniform_int(model_.cfg.res_count());
        bool drop = rng_.uniform() < model_.cfg.uncond_prob;
        const TextBundle& tb = texts[e];
        TextBundle uncond = drop ? tb.unconditional() : tb;
        int logits = residual_graph(tape, bp, g, j, drop ? uncond : tb, model_.cfg);
        int total = 4 * g.n;
        std::vector<int> targets(static_cast<size_t>(total));
        std::vector<std::uint8_t> use(static_cast<size_t>(total), 1);
        for (int p = 0; p < 4; ++p)
            for (int t = 0; t < g.n; ++t) targets[static_cast<size_t>(p * g.n + t)] = g.at(j, p, t);
        const Tensor& lv = tape.val(logits);
        for (int i = 0; i < total; ++i) {
            ++total_rows;
            int best = 0;
            for (int k = 1; k < model_.cfg.codes; ++k)
                if (lv.at(i, k) > lv.at(i, best)) best = k;
            if (best == targets[static_cast<size_t>(i)]) ++correct;
        }
        losses.push_back(tape.scale(tape.cross_entropy_rows(logits, targets, use), inv_b));
    }
    int loss = tape.add_many(losses);
    double loss_val = tape.val(loss).at(0);
    if (!std::isfinite(loss_val)) throw Error("train_res_step: non-finite loss, step aborted");
    tape.backward(loss);
    ++step_;
    adam_step(bp, adam_, step_);
    GenTrainStats st;
    st.loss = loss_val;
    st.masked_total = total_rows;
    st.masked_accuracy = total_rows > 0 ? static_cast<double>(correct) / total_rows : 0.0;
    return st;
}

namespace {

NamedTensors pack_gen(const nn::ParamStore& params, const GenConfig& cfg) {
    NamedTensors nt = pack_params(params);
    nt.add("meta.cfg", {11},
           {static_cast<double>(cfg.layers), static_cast<double>(cfg.heads),
            static_cast<double>(cfg.model_dim), static_cast<double>(cfg.ffn_mult),
            static_cast<double>(cfg.steps), cfg.cfg_base, cfg.cfg_res,
            static_cast<double>(cfg.text_dim), static_cast<double>(cfg.n_max),
            static_cast<double>(cfg.codes), static_cast<double>(cfg.vq_layers)});
    return nt;
}

GenConfig unpack_cfg(const NamedTensors& nt) {
    const auto& c = nt.find("meta.cfg").data;
    GenConfig cfg;
    cfg.layers = static_cast<int>(c[0]);
    cfg.heads = static_cast<int>(c[1]);
    cfg.model_dim = static_cast<int>(c[2]);
    cfg.ffn_mult = static_cast<int>(c[3]);
    cfg.steps = static_cast<int>(c[4]);
    cfg.cfg_base = c[5];
    cfg.cfg_res = c[6];
    cfg.text_dim = static_cast<int>(c[7]);
    cfg.n_max = static_cast<int>(c[8]);
    cfg.codes = static_cast<int>(c[9]);
    cfg.vq_layers = static_cast<int>(c[10]);
    return cfg;
}

}  // namespace

void BaseModel::save(const std::string& path) const { write_cmk1(path, pack_gen(params, cfg)); }

BaseModel BaseModel::load(const std::string& path) {
    NamedTensors nt = read_cmk1(path);
    BaseModel m = BaseModel::init(unpack_cfg(nt), 0);
    unpack_params(nt, m.params);
    return m;
}

void ResModel::save(const std::string& path) const { write_cmk1(path, pack_gen(params, cfg)); }

ResModel ResModel::load(const std::string& path) {
    NamedTensors nt = read_cmk1(path);
    ResModel m = ResModel::init(unpack_cfg(nt), 0);
    unpack_params(nt, m.params);
    return m;
}

}  // namespace coma::gen
