#include "coma/orchestrator.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

namespace coma::flow {

using agents::ChatMessage;
using agents::get_template;
using agents::render_template;
using nlohmann::json;

uint64_t digest_bytes(const void* data, size_t len, uint64_t h) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t digest_grid(const TokenGrid& grid) {
    uint64_t h = digest_bytes(&grid.layers, sizeof(grid.layers));
    h = digest_bytes(&grid.n, sizeof(grid.n), h);
    return digest_bytes(grid.data.data(), grid.data.size() * sizeof(int), h);
}

uint64_t digest_motion(const motion::MotionSequence& m) {
    uint64_t h = digest_bytes(&m.frames.rows, sizeof(int));
    h = digest_bytes(&m.frames.cols, sizeof(int), h);
    return digest_bytes(m.frames.data.data(), m.frames.data.size() * sizeof(float), h);
}

void WorkflowTrace::write_jsonl(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write trace: " + path);
    char buf[17];
    for (const auto& e : events) {
        json line;
        line["agent"] = e.agent;
        line["op"] = e.op;
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(e.in_digest));
        line["in"] = buf;
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(e.out_digest));
        line["out"] = buf;
        line["segment"] = e.segment;
        line["round"] = e.round;
        f << line.dump() << "\n";
    }
}

WorkflowTrace WorkflowTrace::read_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open trace: " + path);
    WorkflowTrace t;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json doc = json::parse(line);
        TraceEvent e;
        e.agent = doc.at("agent").get<std::string>();
        e.op = doc.at("op").get<std::string>();
        e.in_digest = std::stoull(doc.at("in").get<std::string>(), nullptr, 16);
        e.out_digest = std::stoull(doc.at("out").get<std::string>(), nullptr, 16);
        e.segment = doc.at("segment").get<int>();
        e.round = doc.at("round").get<int>();
        t.events.push_back(std::move(e));
    }
    return t;
}

int duration_to_frames(double seconds, double fps, int cap, int minimum) {
    if (!(seconds > 0.0)) throw Error("duration_to_frames: seconds must be positive");
    long frames = std::lround(seconds * fps);
    if (frames < minimum) frames = minimum;
    if (frames > cap) frames = cap;
    return static_cast<int>(frames);
}

namespace {

std::string trim_copy(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\n\r\f\v");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\n\r\f\v");
    return s.substr(a, b - a + 1);
}

std::string lower_copy(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// One automatic re-ask on parse failure, then abort.
template <typename Parser>
auto ask(agents::ChatProvider& llm, const std::string& template_id,
         const std::map<std::string, std::string>& bindings, Parser parse) {
    std::string rendered = render_template(get_template(template_id), bindings);
    std::string reply = llm.chat({{ChatMessage::Role::User, rendered}}, template_id);
    try {
        return parse(reply);
    } catch (const ParseError&) {
        std::vector<ChatMessage> follow = {{ChatMessage::Role::User, rendered},
                                           {ChatMessage::Role::Assistant, reply},
                                           {ChatMessage::Role::User, "Follow the output format exactly."}};
        std::string retry = llm.chat(follow, template_id);
        return parse(retry);
    }
}

// Last line carrying "<label>: value"; missing label is a parse error.
std::string parse_labeled_line(const std::string& reply, const std::string& label) {
    std::optional<std::string> value;
    size_t start = 0;
    std::string want = lower_copy(label);
    for (size_t i = 0; i <= reply.size(); ++i) {
        if (i != reply.size() && reply[i] != '\n') continue;
        std::string line = trim_copy(reply.substr(start, i - start));
        start = i + 1;
        if (line.size() <= want.size()) continue;
        if (lower_copy(line.substr(0, want.size())) != want || line[want.size()] != ':') continue;
        value = trim_copy(line.substr(want.size() + 1));
    }
    if (!value) throw ParseError("missing '" + label + ":' line");
    return *value;
}

std::optional<std::string> none_normalized(const std::string& v) {
    std::string t = trim_copy(v);
    if (t.empty() || lower_copy(t) == "none" || lower_copy(t) == "\"none\"") return std::nullopt;
    return t;
}

uint64_t sub_seed(uint64_t seed, uint64_t tag) {
    return digest_bytes(&tag, sizeof(tag), seed ^ 0x9e3779b97f4a7c15ull);
}

gen::TextBundle make_bundle(agents::EmbeddingProvider& emb, const std::string& global,
                            const std::array<std::optional<std::string>, 4>& locals) {
    gen::TextBundle b;
    b.global = emb.embed(global);
    for (int p = 0; p < 4; ++p)
        if (locals[static_cast<size_t>(p)]) b.locals[static_cast<size_t>(p)] = emb.embed(*locals[static_cast<size_t>(p)]);
    return b;
}

std::string bodypart_dict(const std::string& motion_text, const agents::BodyPartDesc& d) {
    json doc;
    doc["motion"] = motion_text;
    doc["Right arm"] = d.right_arm;
    doc["Left arm"] = d.left_arm;
    doc["Right leg"] = d.right_leg;
    doc["Left leg"] = d.left_leg;
    return doc.dump();
}

PlanSegment decompose_segment(const agents::StepItem& step, agents::ChatProvider& llm) {
    PlanSegment seg;
    seg.prompt = step.prompt;
    seg.original_prompt = step.original_prompt;
    seg.base = ask(llm, "base_motion", {{"input_prompt", step.prompt}}, [](const std::string& r) {
        std::string t = trim_copy(r);
        if (t.empty()) throw ParseError("empty base motion reply");
        return t;
    });
    seg.local_edits = ask(llm, "local_edits", {{"input_prompt", step.prompt}},
                          [](const std::string& r) { return agents::parse_local_edits(r); });
    seg.traj = ask(llm, "traj_extract", {{"input_prompt", step.prompt}}, [](const std::string& r) {
        return none_normalized(parse_labeled_line(r, "Trajectory"));
    });
    seg.duration_s = ask(llm, "duration", {{"input_prompt", step.prompt}}, [](const std::string& r) {
        std::string v = parse_labeled_line(r, "Duration");
        try {
            size_t used = 0;
            double secs = std::stod(v, &used);
            if (!(secs > 0.0)) throw ParseError("duration must be positive");
            return secs;
        } catch (const std::exception&) {
            throw ParseError("cannot parse duration '" + v + "'");
        }
    });
    return seg;
}

}  // namespace

SegmentState correction_loop(SegmentState state, Providers& providers, const Models& models,
                             const WorkflowConfig& cfg, int segment_index, WorkflowTrace& trace) {
    agents::ChatProvider& llm = *providers.llm;
    agents::ChatProvider& captioner = providers.captioner ? *providers.captioner : llm;
    for (int k = 1; k <= cfg.max_rounds; ++k) {
        state.rounds_run = k;
        motion::MotionSequence current =
            vq::detokenize(state.grid, *models.rvq, -1, static_cast<float>(cfg.fps));
        std::string artifact = cfg.out_dir + "/review_seg" + std::to_string(segment_index) +
                               "_round" + std::to_string(k) + ".json";
        agents::render_for_review(current, artifact);
        trace.append({"MotionReviewer", "Render", digest_motion(current), fnv1a64(artifact),
                      segment_index, k});

        std::string caption = ask(captioner, "caption", {{"input_prompt", artifact}},
                                  [](const std::string& r) {
                                      std::string t = trim_copy(r);
                                      if (t.empty()) throw ParseError("empty caption");
                                      return t;
                                  });
        state.captions.push_back(caption);
        trace.append({"MotionReviewer", "Caption", fnv1a64(artifact), fnv1a64(caption),
                      segment_index, k});

        agents::BodyPartDesc prompt_parts =
            ask(llm, "review_decompose", {{"input_prompt", "Motion Description: " + state.plan.prompt}},
                [](const std::string& r) { return agents::parse_bodypart_lines(r); });
        agents::BodyPartDesc caption_parts =
            ask(llm, "review_decompose", {{"input_prompt", "Motion Description: " + caption}},
                [](const std::string& r) { return agents::parse_bodypart_lines(r); });
        std::string compare_input = "Motion Description1: " + bodypart_dict(state.plan.prompt, prompt_parts) +
                                    "\n\nMotion Description2: " + bodypart_dict(caption, caption_parts);
        agents::CorrectionInstruction inst =
            ask(llm, "review_compare", {{"input_prompt", compare_input}},
                [](const std::string& r) { return agents::parse_correction(r); });
        state.instructions.push_back(inst);
        trace.append({"MotionReviewer", "Instruct", fnv1a64(compare_input),
                      fnv1a64((inst.left_arm ? *inst.left_arm : "None") + "|" +
                              (inst.right_arm ? *inst.right_arm : "None") + "|" +
                              (inst.lower_body ? *inst.lower_body : "None")),
                      segment_index, k});

        if (inst.empty()) break;

        // Instruction fields map onto part edits: left arm -> LU, right arm ->
        // RU, lower body -> both lower parts.
        struct Mapped {
            std::set<motion::Part> parts;
            std::string text;
        };
        std::vector<Mapped> edits;
        if (inst.left_arm) edits.push_back({{motion::Part::LU}, *inst.left_arm});
        if (inst.right_arm) edits.push_back({{motion::Part::RU}, *inst.right_arm});
        if (inst.lower_body) edits.push_back({{motion::Part::LL, motion::Part::RL}, *inst.lower_body});
        int edit_idx = 0;
        for (const auto& e : edits) {
            std::array<std::optional<std::string>, 4> locals;
            for (motion::Part p : e.parts) locals[static_cast<size_t>(p)] = e.text;
            gen::TextBundle bundle = make_bundle(*providers.embedder, state.plan.base, locals);
            uint64_t in = digest_grid(state.grid);
            state.grid = edit::edit_bodypart(state.grid, e.parts, bundle, cfg.rho, *models.base,
                                             *models.res,
                                             sub_seed(cfg.seed, 7000 + static_cast<uint64_t>(segment_index) * 100 +
                                                                     static_cast<uint64_t>(k) * 10 +
                                                                     static_cast<uint64_t>(edit_idx)));
            trace.append({"MotionGenerator", "Edit", in, digest_grid(state.grid), segment_index, k});
            ++edit_idx;
        }
    }
    return state;
}

PipelineResult run_pipeline(const std::string& prompt, Providers& providers, const Models& models,
                            const WorkflowConfig& cfg) {
    if (!providers.llm || !providers.embedder || !models.rvq || !models.base || !models.res)
        throw Error("run_pipeline: missing providers or models");
    std::filesystem::create_directories(cfg.out_dir);
    agents::ChatProvider& llm = *providers.llm;
    WorkflowTrace trace;

    agents::RewriteResult rewritten = agents::rewrite(prompt, llm, cfg.words_list);
    trace.append({"TaskPlanner", "Rewrite", fnv1a64(prompt), fnv1a64(rewritten.text), -1, 0});

    std::vector<agents::StepItem> steps =
        ask(llm, "segment",
            {{"original_action", rewritten.text}, {"input_prompt", rewritten.text}},
            [&](const std::string& r) { return agents::parse_steps(r, rewritten.text); });
    std::string joined;
    for (const auto& s : steps) joined += s.prompt + "\n";
    trace.append({"TaskPlanner", "Segment", fnv1a64(rewritten.text), fnv1a64(joined), -1, 0});

    int downscale = models.rvq->cfg.downscale;
    std::vector<SegmentState> states;
    for (size_t i = 0; i < steps.size(); ++i) {
        int seg_idx = static_cast<int>(i);
        PlanSegment plan = decompose_segment(steps[i], llm);
        trace.append({"TaskPlanner", "Decompose", fnv1a64(plan.prompt),
                      fnv1a64(plan.base + "|" + (plan.traj ? *plan.traj : "")), seg_idx, 0});

        double secs = plan.duration_s ? *plan.duration_s : 4.0;
        int frames = duration_to_frames(secs, cfg.fps, cfg.frame_cap, downscale);
        int n = (frames + downscale - 1) / downscale;

        SegmentState st;
        st.plan = plan;
        gen::TextBundle base_bundle = make_bundle(*providers.embedder, plan.base, {});
        TokenGrid base_layer = gen::generate_base(base_bundle, n, *models.base,
                                                  sub_seed(cfg.seed, 1000 + static_cast<uint64_t>(i)));
        st.grid = gen::generate_residuals(base_layer, base_bundle, *models.res);
        trace.append({"MotionGenerator", "Generate", fnv1a64(plan.base), digest_grid(st.grid),
                      seg_idx, 0});

        std::set<motion::Part> edited;
        std::array<std::optional<std::string>, 4> locals;
        static const std::array<motion::Part, 4> part_of_edit = {
            motion::Part::LU, motion::Part::RU, motion::Part::LL, motion::Part::RL};
        for (int e = 0; e < 4; ++e) {
            const auto& le = plan.local_edits[static_cast<size_t>(e)];
            if (!le.description) continue;
            motion::Part p = part_of_edit[static_cast<size_t>(e)];
            edited.insert(p);
            locals[static_cast<size_t>(p)] = *le.description;
        }
        if (!edited.empty()) {
            gen::TextBundle edit_bundle = make_bundle(*providers.embedder, plan.base, locals);
            uint64_t in = digest_grid(st.grid);
            st.grid = edit::edit_bodypart(st.grid, edited, edit_bundle, cfg.rho, *models.base,
                                          *models.res, sub_seed(cfg.seed, 2000 + static_cast<uint64_t>(i)));
            trace.append({"MotionGenerator", "Edit", in, digest_grid(st.grid), seg_idx, 0});
        }

        st = correction_loop(std::move(st), providers, models, cfg, seg_idx, trace);

        if (plan.traj && cfg.enable_trajectory) {
            std::string program = ask(llm, "trajectory", {{"input_prompt", *plan.traj}},
                                      [](const std::string& r) { return traj::extract_code_block(r); });
            traj::CurveSpec spec = traj::parse_curve_spec(program);
            traj::PolyLine line = traj::sample_curve(spec, 200);
            motion::MotionSequence seg_motion =
                vq::detokenize(st.grid, *models.rvq, -1, static_cast<float>(cfg.fps));
            traj::PolyLine uniform = traj::resample_uniform(line, seg_motion.T());
            double v_bar = std::max(motion::mean_root_speed(seg_motion), 1e-6);
            traj::TrajectoryProfile profile = traj::derive_profile(uniform, v_bar);
            trace.append({"TrajectoryEditor", "TrajGenerate", fnv1a64(*plan.traj),
                          digest_bytes(profile.heading_delta.data(),
                                       profile.heading_delta.size() * sizeof(double)),
                          seg_idx, 0});
            motion::MotionSequence mapped = traj::apply_trajectory(seg_motion, profile);
            st.profile = profile;
            trace.append({"TrajectoryEditor", "TrajMap", digest_motion(seg_motion),
                          digest_motion(mapped), seg_idx, 0});
        }
        states.push_back(std::move(st));
    }

    // Blend all segment grids, then decode once.
    TokenGrid full = states[0].grid;
    std::vector<int> seg_offsets = {0};
    for (size_t i = 1; i < states.size(); ++i) {
        gen::TextBundle bundle = make_bundle(*providers.embedder, states[i].plan.base, {});
        seg_offsets.push_back(full.n + cfg.blend_trans);
        full = edit::blend(full, states[i].grid, cfg.blend_trans, cfg.blend_ctx, bundle,
                           *models.base, *models.res, sub_seed(cfg.seed, 3000 + static_cast<uint64_t>(i)));
    }
    motion::MotionSequence final_motion =
        vq::detokenize(full, *models.rvq, -1, static_cast<float>(cfg.fps));
    uint64_t blend_in = 0;
    for (const auto& st : states) blend_in = digest_bytes(&st.grid.n, sizeof(int), blend_in ^ digest_grid(st.grid));

    // Re-apply per-segment trajectory profiles onto their frame spans of the
    // decoded blend.
    motion::FeatureLayout layout;
    for (size_t i = 0; i < states.size(); ++i) {
        if (!states[i].profile) continue;
        int f0 = seg_offsets[i] * downscale;
        int f1 = f0 + states[i].grid.n * downscale;
        motion::MotionSequence span;
        span.fps = final_motion.fps;
        span.frames = MatF(f1 - f0, final_motion.D());
        for (int t = f0; t < f1; ++t)
            for (int c = 0; c < final_motion.D(); ++c) span.frames.at(t - f0, c) = final_motion.frames.at(t, c);
        motion::MotionSequence mapped = traj::apply_trajectory(span, *states[i].profile);
        for (int t = f0; t < f1; ++t)
            final_motion.frames.at(t, layout.root_rot_vel) = mapped.frames.at(t - f0, layout.root_rot_vel);
    }
    trace.append({"MotionGenerator", "Blend", blend_in, digest_motion(final_motion), -1, 0});

    PipelineResult result;
    result.motion = std::move(final_motion);
    result.trace = std::move(trace);
    result.segments = std::move(states);
    return result;
}

}  // namespace coma::flow
