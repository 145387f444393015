#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coma/orchestrator.hpp"

namespace testutil {

// Checker automaton for the agent-collaboration workflow: Rewrite, Segment,
// then per segment Decompose -> Generate -> initial Edits -> bounded
// review/correct rounds -> optional trajectory pair, and a single trailing
// Blend. Returns an error description or nullopt when the trace is accepted.
inline std::optional<std::string> validate_trace(const std::vector<coma::flow::TraceEvent>& events,
                                                 int max_rounds) {
    using coma::flow::TraceEvent;
    if (events.size() < 3) return "trace too short";
    auto expect = [](const TraceEvent& e, const char* agent, const char* op) -> std::optional<std::string> {
        if (e.op != op) return "expected op " + std::string(op) + ", saw " + e.op;
        if (e.agent != agent) return "op " + e.op + " attributed to " + e.agent;
        return std::nullopt;
    };
    if (auto err = expect(events.front(), "TaskPlanner", "Rewrite")) return err;
    if (events[1].op != "Segment" || events[1].agent != "TaskPlanner") return "second event must be Segment";
    if (events.back().op != "Blend" || events.back().agent != "MotionGenerator")
        return "last event must be Blend";
    for (size_t i = 0; i + 1 < events.size(); ++i)
        if (events[i].op == "Blend") return "Blend before the end of the trace";

    static const std::map<std::string, std::string> kAgentOf = {
        {"Decompose", "TaskPlanner"},    {"Generate", "MotionGenerator"},
        {"Edit", "MotionGenerator"},     {"Render", "MotionReviewer"},
        {"Caption", "MotionReviewer"},   {"Instruct", "MotionReviewer"},
        {"TrajGenerate", "TrajectoryEditor"}, {"TrajMap", "TrajectoryEditor"}};

    std::map<int, std::vector<TraceEvent>> per_segment;
    for (size_t i = 2; i + 1 < events.size(); ++i) {
        const TraceEvent& e = events[i];
        auto it = kAgentOf.find(e.op);
        if (it == kAgentOf.end()) return "unknown op " + e.op;
        if (it->second != e.agent) return "op " + e.op + " attributed to " + e.agent;
        if (e.segment < 0) return "segment op without a segment id: " + e.op;
        per_segment[e.segment].push_back(e);
    }
    if (per_segment.empty()) return "no segment events";
    int next = 0;
    for (const auto& [seg, evs] : per_segment) {
        if (seg != next++) return "segment ids are not contiguous";
        size_t i = 0;
        if (i >= evs.size() || evs[i].op != "Decompose") return "segment must start with Decompose";
        ++i;
        if (i >= evs.size() || evs[i].op != "Generate") return "Decompose must be followed by Generate";
        ++i;
        while (i < evs.size() && evs[i].op == "Edit" && evs[i].round == 0) ++i;
        int round = 0;
        while (i < evs.size() && evs[i].op == "Render") {
            ++round;
            if (round > max_rounds) return "more correction rounds than K";
            if (evs[i].round != round) return "Render carries the wrong round number";
            ++i;
            if (i >= evs.size() || evs[i].op != "Caption" || evs[i].round != round)
                return "Render must be followed by Caption";
            ++i;
            if (i >= evs.size() || evs[i].op != "Instruct" || evs[i].round != round)
                return "Caption must be followed by Instruct";
            ++i;
            int edits = 0;
            while (i < evs.size() && evs[i].op == "Edit" && evs[i].round == round) {
                ++edits;
                if (edits > 3) return "more than three correction edits in one round";
                ++i;
            }
            bool more_rounds = i < evs.size() && evs[i].op == "Render";
            if (more_rounds && edits == 0)
                return "empty instruction must end the correction loop";
        }
        if (i < evs.size() && evs[i].op == "TrajGenerate") {
            ++i;
            if (i >= evs.size() || evs[i].op != "TrajMap") return "TrajGenerate without TrajMap";
            ++i;
        }
        if (i != evs.size()) return "unexpected trailing op " + evs[i].op + " in segment";
    }
    return std::nullopt;
}

}  // namespace testutil
