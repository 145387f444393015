#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coma/agents.hpp"
#include "coma/editops.hpp"
#include "coma/gen.hpp"
#include "coma/rvq.hpp"
#include "coma/traj.hpp"

namespace coma::flow {

struct WorkflowConfig {
    int max_rounds = 2;  // K, self-correction cap
    double fps = 20.0;
    bool enable_trajectory = true;
    int blend_trans = 4;
    int blend_ctx = 4;
    double rho = 0.15;  // other-part mask ratio for correction edits
    uint64_t seed = 1;
    int frame_cap = 196;
    std::string out_dir = ".";
    std::string words_list;  // vocabulary rendered into the recaption prompt
};

struct TraceEvent {
    std::string agent;
    std::string op;
    uint64_t in_digest = 0;
    uint64_t out_digest = 0;
    int segment = -1;  // -1 for whole-pipeline events
    int round = 0;     // correction round, 0 outside the loop
};

struct WorkflowTrace {
    std::vector<TraceEvent> events;

    void append(TraceEvent e) { events.push_back(std::move(e)); }
    void write_jsonl(const std::string& path) const;
    static WorkflowTrace read_jsonl(const std::string& path);
};

// Decomposition of one temporal segment.
struct PlanSegment {
    std::string prompt;
    std::string original_prompt;
    std::string base;
    std::array<agents::LocalEdit, 4> local_edits;
    std::optional<std::string> traj;
    std::optional<double> duration_s;
};

struct SegmentState {
    PlanSegment plan;
    TokenGrid grid;
    int rounds_run = 0;
    std::vector<std::string> captions;
    std::vector<agents::CorrectionInstruction> instructions;
    std::optional<traj::TrajectoryProfile> profile;
};

struct Models {
    const vq::VqModel* rvq = nullptr;
    const gen::BaseModel* base = nullptr;
    const gen::ResModel* res = nullptr;
};

struct Providers {
    agents::ChatProvider* llm = nullptr;
    agents::ChatProvider* captioner = nullptr;  // defaults to llm when null
    agents::EmbeddingProvider* embedder = nullptr;
};

// round(seconds * fps) clamped to [minimum, cap].
int duration_to_frames(double seconds, double fps, int cap = 196, int minimum = 4);

// Render -> caption -> compare rounds, editing the grid until the reviewer
// returns an empty instruction or K rounds have run.
SegmentState correction_loop(SegmentState state, Providers& providers, const Models& models,
                             const WorkflowConfig& cfg, int segment_index, WorkflowTrace& trace);

struct PipelineResult {
    motion::MotionSequence motion;
    WorkflowTrace trace;
    std::vector<SegmentState> segments;
};

// Rewrite -> Segment -> per segment {Decompose -> Generate -> Edit ->
// correction loop -> optional trajectory} -> Blend.
PipelineResult run_pipeline(const std::string& prompt, Providers& providers, const Models& models,
                            const WorkflowConfig& cfg);

uint64_t digest_bytes(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull);
uint64_t digest_grid(const TokenGrid& grid);
uint64_t digest_motion(const motion::MotionSequence& m);

}  // namespace coma::flow
