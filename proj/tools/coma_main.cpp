#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "coma/config.hpp"
#include "coma/editops.hpp"
#include "coma/kernels.hpp"
#include "coma/metrics.hpp"
#include "coma/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace coma;

namespace {

struct Common {
    std::string config_path;
    uint64_t seed = 1;

    AppConfig load() const {
        AppConfig cfg = config_path.empty() ? AppConfig{} : AppConfig::from_file(config_path);
        if (cfg.workflow.words_list.empty()) cfg.workflow.words_list = default_words_list();
        cfg.workflow.seed = seed;
        return cfg;
    }
};

std::vector<motion::MotionSequence> load_corpus(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".cma") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error("no .cma motion files in " + dir);
    std::vector<motion::MotionSequence> out;
    for (const auto& f : files) out.push_back(motion::read_motion(f));
    return out;
}

gen::TextBundle bundle_for(agents::EmbeddingProvider& emb, const std::string& text) {
    gen::TextBundle b;
    b.global = emb.embed(text);
    return b;
}

// Desk-scale caption pool for the synthetic corpus.
const char* kSyntheticCaptions[] = {
    "A person walks forward slowly",     "A person raises both arms up",
    "A person runs in place",            "A person kneels down on the floor",
    "A person turns around in a circle", "A person waves with the right arm",
    "A person squats and stands up",     "A person steps to the left side",
};

int cmd_gen_data(const std::string& out, int count, int frames, uint64_t seed) {
    fs::create_directories(out);
    for (int i = 0; i < count; ++i) {
        motion::MotionSequence m = motion::synthetic_motion(seed + static_cast<uint64_t>(i), frames);
        m.text = kSyntheticCaptions[i % (sizeof(kSyntheticCaptions) / sizeof(char*))];
        char name[64];
        std::snprintf(name, sizeof(name), "clip_%03d.cma", i);
        motion::write_motion(m, out + "/" + name);
    }
    std::cout << "wrote " << count << " clips to " << out << "\n";
    return 0;
}

int cmd_train_rvq(const Common& common, const std::string& data, int steps, const std::string& out,
                  double lr) {
    AppConfig cfg = common.load();
    auto corpus = load_corpus(data);
    motion::PartitionScheme scheme = motion::four_part_partition(motion::standard_layout());
    vq::VqModel model = vq::VqModel::init(cfg.rvq, scheme.part_dims, 263, common.seed);
    nn::AdamConfig adam;
    adam.lr = lr;
    adam.warmup = 100;
    vq::RvqTrainer trainer(model, adam, common.seed + 1);
    for (int s = 1; s <= steps; ++s) {
        auto st = trainer.step(corpus);
        if (s == 1 || s % 100 == 0 || s == steps)
            std::cout << "rvq step " << s << " loss " << st.loss << " recon_l1 " << st.recon_l1 << "\n";
    }
    model.save(out);
    std::cout << "saved " << out << "\n";
    return 0;
}

int cmd_train_gen(const Common& common, const std::string& data, const std::string& rvq_path,
                  int steps, const std::string& out_base, const std::string& out_res, double lr) {
    AppConfig cfg = common.load();
    auto corpus = load_corpus(data);
    vq::VqModel rvq = vq::VqModel::load(rvq_path);
    cfg.gen.codes = rvq.cfg.codes;
    cfg.gen.vq_layers = rvq.cfg.num_layers;
    agents::HashEmbedder embedder(cfg.gen.text_dim);
    std::vector<TokenGrid> grids;
    std::vector<gen::TextBundle> texts;
    for (const auto& m : corpus) {
        grids.push_back(vq::tokenize(m, rvq));
        texts.push_back(bundle_for(embedder, m.text.value_or("")));
    }
    gen::BaseModel base = gen::BaseModel::init(cfg.gen, common.seed + 2);
    gen::ResModel res = gen::ResModel::init(cfg.gen, common.seed + 3);
    nn::AdamConfig adam;
    adam.lr = lr;
    adam.warmup = 100;
    gen::BaseTrainer bt(base, adam, common.seed + 4);
    gen::ResTrainer rt(res, adam, common.seed + 5);
    for (int s = 1; s <= steps; ++s) {
        auto bs = bt.step(grids, texts);
        auto rs = rt.step(grids, texts);
        if (s == 1 || s % 100 == 0 || s == steps)
            std::cout << "gen step " << s << " base_loss " << bs.loss << " base_acc "
                      << bs.masked_accuracy << " res_loss " << rs.loss << "\n";
    }
    base.save(out_base);
    res.save(out_res);
    std::cout << "saved " << out_base << " and " << out_res << "\n";
    return 0;
}

struct LoadedModels {
    vq::VqModel rvq;
    gen::BaseModel base;
    gen::ResModel res;
};

LoadedModels load_models(const std::string& rvq_path, const std::string& base_path,
                         const std::string& res_path) {
    return {vq::VqModel::load(rvq_path), gen::BaseModel::load(base_path),
            gen::ResModel::load(res_path)};
}

int cmd_generate(const Common& common, const LoadedModels& m, const std::string& text, int frames,
                 const std::string& out) {
    agents::HashEmbedder embedder(m.base.cfg.text_dim);
    int down = m.rvq.cfg.downscale;
    int n = (frames + down - 1) / down;
    TokenGrid base_layer = gen::generate_base(bundle_for(embedder, text), n, m.base, common.seed);
    TokenGrid grid = gen::generate_residuals(base_layer, bundle_for(embedder, text), m.res);
    motion::MotionSequence out_m = vq::detokenize(grid, m.rvq, frames);
    out_m.text = text;
    motion::write_motion(out_m, out);
    std::cout << "wrote " << out << " (" << out_m.T() << " frames)\n";
    return 0;
}

std::set<motion::Part> parse_parts(const std::string& csv) {
    std::set<motion::Part> parts;
    size_t start = 0;
    while (start <= csv.size()) {
        size_t comma = csv.find(',', start);
        std::string tok =
            csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!tok.empty()) parts.insert(motion::part_from_name(tok));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (parts.empty()) throw Error("no parts given");
    return parts;
}

int cmd_edit(const Common& common, const LoadedModels& m, const std::string& kind,
             const std::string& in, const std::string& text, const std::string& range,
             const std::string& parts_csv, double rho, const std::string& out) {
    agents::HashEmbedder embedder(m.base.cfg.text_dim);
    motion::MotionSequence src = motion::read_motion(in);
    TokenGrid grid = vq::tokenize(src, m.rvq);
    TokenGrid edited;
    if (kind == "inbetween") {
        size_t colon = range.find(':');
        if (colon == std::string::npos) throw Error("--range must be a:b in frames");
        int a = std::stoi(range.substr(0, colon));
        int b = std::stoi(range.substr(colon + 1));
        edited = edit::edit_inbetween(grid, a, b, bundle_for(embedder, text), m.base, m.res,
                                      m.rvq.cfg.downscale, common.seed);
    } else if (kind == "bodypart") {
        std::set<motion::Part> parts = parse_parts(parts_csv);
        gen::TextBundle bundle = bundle_for(embedder, text);
        for (motion::Part p : parts) bundle.locals[static_cast<size_t>(p)] = embedder.embed(text);
        edited = edit::edit_bodypart(grid, parts, bundle, rho, m.base, m.res, common.seed);
    } else {
        throw Error("unknown edit kind: " + kind);
    }
    motion::MotionSequence out_m = vq::detokenize(edited, m.rvq, src.T());
    out_m.text = text;
    motion::write_motion(out_m, out);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_blend(const Common& common, const LoadedModels& m, const std::string& a_path,
              const std::string& b_path, int trans, int ctx, const std::string& text,
              const std::string& out) {
    agents::HashEmbedder embedder(m.base.cfg.text_dim);
    TokenGrid a = vq::tokenize(motion::read_motion(a_path), m.rvq);
    TokenGrid b = vq::tokenize(motion::read_motion(b_path), m.rvq);
    TokenGrid joined =
        edit::blend(a, b, trans, ctx, bundle_for(embedder, text), m.base, m.res, common.seed);
    motion::MotionSequence out_m = vq::detokenize(joined, m.rvq);
    motion::write_motion(out_m, out);
    std::cout << "wrote " << out << " (" << out_m.T() << " frames)\n";
    return 0;
}

int cmd_traj(const std::string& spec_path, const std::string& transcript, const std::string& text,
             int frames, double vbar, const std::string& in, const std::string& out) {
    std::string program;
    if (!spec_path.empty()) {
        std::ifstream f(spec_path);
        if (!f) throw IoError("cannot open spec: " + spec_path);
        program.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    } else if (!transcript.empty()) {
        agents::ScriptedProvider llm = agents::ScriptedProvider::from_file(transcript);
        std::string rendered =
            agents::render_template(agents::get_template("trajectory"), {{"input_prompt", text}});
        std::string reply = llm.chat({{agents::ChatMessage::Role::User, rendered}}, "trajectory");
        program = traj::extract_code_block(reply);
    } else {
        throw Error("traj: need --spec or --from-llm");
    }
    traj::CurveSpec spec = traj::parse_curve_spec(program);
    traj::PolyLine line = traj::sample_curve(spec, 200);
    motion::MotionSequence target;
    if (!in.empty()) {
        target = motion::read_motion(in);
    } else {
        target.frames = MatF(frames, 263);
        target.fps = 20.0f;
    }
    traj::PolyLine uniform = traj::resample_uniform(line, target.T());
    double v = vbar > 0.0 ? vbar : std::max(motion::mean_root_speed(target), 1e-6);
    traj::TrajectoryProfile profile = traj::derive_profile(uniform, v);
    motion::MotionSequence mapped = traj::apply_trajectory(target, profile);
    motion::write_motion(mapped, out);
    std::cout << "wrote " << out << (spec.closed_hint ? " (closed trajectory)" : " (open trajectory)")
              << "\n";
    return 0;
}

int cmd_pipeline(const Common& common, const LoadedModels& m, const std::string& prompt,
                 const std::string& transcript, bool live, int k_rounds, const std::string& out_dir) {
    AppConfig cfg = common.load();
    fs::create_directories(out_dir);
    cfg.workflow.out_dir = out_dir;
    cfg.workflow.seed = common.seed;
    if (k_rounds >= 0) cfg.workflow.max_rounds = k_rounds;

    std::unique_ptr<agents::ChatProvider> llm;
    if (!transcript.empty()) {
        llm = std::make_unique<agents::ScriptedProvider>(
            agents::ScriptedProvider::from_file(transcript));
    } else if (live) {
        if (cfg.provider.endpoint.empty())
            throw Error("pipeline --live requires a provider endpoint in the config");
        cfg.provider.transcript_path.clear();
        llm = agents::make_provider(cfg.provider);
    } else {
        throw Error("pipeline: need --transcript or --live");
    }
    agents::HashEmbedder embedder(m.base.cfg.text_dim);
    flow::Providers providers{llm.get(), nullptr, &embedder};
    flow::Models models{&m.rvq, &m.base, &m.res};
    flow::PipelineResult result = flow::run_pipeline(prompt, providers, models, cfg.workflow);
    result.motion.text = prompt;
    motion::write_motion(result.motion, out_dir + "/motion.cma");
    result.trace.write_jsonl(out_dir + "/trace.jsonl");
    std::cout << "pipeline done: " << result.segments.size() << " segments, " << result.motion.T()
              << " frames, " << result.trace.events.size() << " trace events -> " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& metric, const std::string& a_path, const std::string& b_path,
             int pool, int k, uint64_t seed, int group_size) {
    if (metric == "fid") {
        std::cout << "fid "
                  << metrics::fid(metrics::read_embeddings(a_path), metrics::read_embeddings(b_path))
                  << "\n";
    } else if (metric == "rprec") {
        std::cout << "r_precision@" << k << " "
                  << metrics::r_precision(metrics::read_embeddings(a_path),
                                          metrics::read_embeddings(b_path), pool, k, seed)
                  << "\n";
    } else if (metric == "mmdist") {
        std::cout << "mm_dist "
                  << metrics::mm_dist(metrics::read_embeddings(a_path),
                                      metrics::read_embeddings(b_path))
                  << "\n";
    } else if (metric == "multimodality") {
        metrics::EmbeddingSet all = metrics::read_embeddings(a_path);
        if (group_size < 2 || all.rows % group_size != 0)
            throw Error("multimodality: --group-size must divide the row count");
        std::vector<metrics::EmbeddingSet> groups;
        for (int g = 0; g < all.rows / group_size; ++g) {
            metrics::EmbeddingSet s;
            s.rows = group_size;
            s.dim = all.dim;
            s.data.assign(all.data.begin() + static_cast<long>(g) * group_size * all.dim,
                          all.data.begin() + static_cast<long>(g + 1) * group_size * all.dim);
            groups.push_back(std::move(s));
        }
        std::cout << "multimodality " << metrics::multimodality(groups) << "\n";
    } else if (metric == "mas") {
        metrics::EmbeddingSet a = metrics::read_embeddings(a_path);
        metrics::EmbeddingSet b = metrics::read_embeddings(b_path);
        std::vector<double> va(a.row(0), a.row(0) + a.dim), vb(b.row(0), b.row(0) + b.dim);
        std::cout << "mas " << metrics::mas(va, vb) << "\n";
    } else {
        throw Error("unknown metric: " + metric);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coma: compositional text-to-motion toolkit"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config_path, "configuration file");
    app.add_option("--seed", common.seed, "global random seed");
    app.add_flag_callback(
        "--serial", [] { kernels::set_mode(kernels::Mode::Serial); }, "disable OpenMP kernels");

    auto* gen_data = app.add_subcommand("gen-data", "write a synthetic motion corpus");
    std::string gd_out = "data";
    int gd_count = 8, gd_frames = 64;
    gen_data->add_option("--out", gd_out, "output directory");
    gen_data->add_option("--count", gd_count, "number of clips");
    gen_data->add_option("--frames", gd_frames, "frames per clip");

    auto* train_rvq = app.add_subcommand("train-rvq", "train the part-wise residual VQ-VAE");
    std::string tr_data = "data", tr_out = "rvq.cmk";
    int tr_steps = 2000;
    double tr_lr = 1e-3;
    train_rvq->add_option("--data", tr_data, "corpus directory");
    train_rvq->add_option("--steps", tr_steps, "training steps");
    train_rvq->add_option("--out", tr_out, "checkpoint path");
    train_rvq->add_option("--lr", tr_lr, "learning rate");

    auto* train_gen = app.add_subcommand("train-gen", "train base and residual transformers");
    std::string tg_data = "data", tg_rvq = "rvq.cmk", tg_base = "base.cmk", tg_res = "res.cmk";
    int tg_steps = 2000;
    double tg_lr = 1e-3;
    train_gen->add_option("--data", tg_data, "corpus directory");
    train_gen->add_option("--rvq", tg_rvq, "tokenizer checkpoint");
    train_gen->add_option("--steps", tg_steps, "training steps");
    train_gen->add_option("--out-base", tg_base, "base checkpoint path");
    train_gen->add_option("--out-res", tg_res, "residual checkpoint path");
    train_gen->add_option("--lr", tg_lr, "learning rate");

    auto* generate = app.add_subcommand("generate", "text to motion");
    auto* edit_cmd = app.add_subcommand("edit", "token-space motion editing");
    auto* blend_cmd = app.add_subcommand("blend", "blend two motions with a transition");
    auto* pipeline = app.add_subcommand("pipeline", "full agent workflow");
    std::string m_rvq = "rvq.cmk", m_base = "base.cmk", m_res = "res.cmk";
    for (auto* sc : {generate, edit_cmd, blend_cmd, pipeline}) {
        sc->add_option("--rvq", m_rvq, "tokenizer checkpoint");
        sc->add_option("--base", m_base, "base transformer checkpoint");
        sc->add_option("--res", m_res, "residual transformer checkpoint");
    }

    std::string g_text = "A person walks forward", g_out = "motion.cma";
    int g_frames = 64;
    generate->add_option("--text", g_text, "prompt");
    generate->add_option("--frames", g_frames, "output frames");
    generate->add_option("--out", g_out, "output motion file");

    std::string e_kind = "inbetween", e_in, e_text, e_range = "0:0", e_parts, e_out = "edited.cma";
    double e_rho = 0.15;
    edit_cmd->add_option("--kind", e_kind, "inbetween|bodypart");
    edit_cmd->add_option("--in", e_in, "input motion file")->required();
    edit_cmd->add_option("--text", e_text, "edit prompt");
    edit_cmd->add_option("--range", e_range, "frame range a:b (inbetween)");
    edit_cmd->add_option("--parts", e_parts, "comma list of LU,RU,LL,RL (bodypart)");
    edit_cmd->add_option("--rho", e_rho, "other-part mask ratio");
    edit_cmd->add_option("--out", e_out, "output motion file");

    std::string b_a, b_b, b_text, b_out = "blend.cma";
    int b_trans = 4, b_ctx = 4;
    blend_cmd->add_option("--a", b_a, "first motion")->required();
    blend_cmd->add_option("--b", b_b, "second motion")->required();
    blend_cmd->add_option("--trans", b_trans, "transition tokens");
    blend_cmd->add_option("--ctx", b_ctx, "context tokens");
    blend_cmd->add_option("--text", b_text, "transition prompt");
    blend_cmd->add_option("--out", b_out, "output motion file");

    auto* traj_cmd = app.add_subcommand("traj", "trajectory synthesis and remapping");
    std::string t_spec, t_llm, t_text, t_in, t_out = "traj.cma";
    int t_frames = 196;
    double t_vbar = 1.0;
    traj_cmd->add_option("--spec", t_spec, "curve program file");
    traj_cmd->add_option("--from-llm", t_llm, "scripted transcript for the trajectory agent");
    traj_cmd->add_option("--text", t_text, "trajectory description (with --from-llm)");
    traj_cmd->add_option("--frames", t_frames, "frames when no input motion is given");
    traj_cmd->add_option("--vbar", t_vbar, "target mean speed (0 = take from input motion)");
    traj_cmd->add_option("--in", t_in, "input motion to remap");
    traj_cmd->add_option("--out", t_out, "output motion file");

    std::string p_prompt, p_transcript, p_out = "out";
    bool p_live = false;
    int p_k = -1;
    int p_jobs = 1;
    pipeline->add_option("--prompt", p_prompt, "user prompt")->required();
    pipeline->add_option("--transcript", p_transcript, "scripted provider transcript");
    pipeline->add_flag("--live", p_live, "use the configured HTTP provider");
    pipeline->add_option("--k", p_k, "max self-correction rounds");
    pipeline->add_option("--out", p_out, "output directory");
    pipeline->add_option("--jobs", p_jobs,
                         "segment parallelism (kept at 1 for transcript determinism)");

    auto* eval_cmd = app.add_subcommand("eval", "embedding-space metrics");
    std::string ev_metric = "fid", ev_a, ev_b;
    int ev_pool = 32, ev_k = 1, ev_group = 10;
    eval_cmd->add_option("--metric", ev_metric, "fid|rprec|mmdist|multimodality|mas");
    eval_cmd->add_option("--a", ev_a, "first embedding file")->required();
    eval_cmd->add_option("--b", ev_b, "second embedding file");
    eval_cmd->add_option("--pool", ev_pool, "r-precision pool size");
    eval_cmd->add_option("--k", ev_k, "r-precision top-k");
    eval_cmd->add_option("--group-size", ev_group, "rows per repeat group");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen_data->parsed()) return cmd_gen_data(gd_out, gd_count, gd_frames, common.seed);
        if (train_rvq->parsed()) return cmd_train_rvq(common, tr_data, tr_steps, tr_out, tr_lr);
        if (train_gen->parsed())
            return cmd_train_gen(common, tg_data, tg_rvq, tg_steps, tg_base, tg_res, tg_lr);
        if (generate->parsed())
            return cmd_generate(common, load_models(m_rvq, m_base, m_res), g_text, g_frames, g_out);
        if (edit_cmd->parsed())
            return cmd_edit(common, load_models(m_rvq, m_base, m_res), e_kind, e_in, e_text, e_range,
                            e_parts, e_rho, e_out);
        if (blend_cmd->parsed())
            return cmd_blend(common, load_models(m_rvq, m_base, m_res), b_a, b_b, b_trans, b_ctx,
                             b_text, b_out);
        if (traj_cmd->parsed()) return cmd_traj(t_spec, t_llm, t_text, t_frames, t_vbar, t_in, t_out);
        if (pipeline->parsed())
            return cmd_pipeline(common, load_models(m_rvq, m_base, m_res), p_prompt, p_transcript,
                                p_live, p_k, p_out);
        if (eval_cmd->parsed())
            return cmd_eval(ev_metric, ev_a, ev_b, ev_pool, ev_k, common.seed, ev_group);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
