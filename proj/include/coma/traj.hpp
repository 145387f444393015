#pragma once

#include <array>
#include <string>
#include <vector>

#include "coma/motion.hpp"

namespace coma::traj {

// Arithmetic over t with + - * / ^ (right-assoc), sin/cos/abs/sqrt and pi.
// Stored as a flat arena so CurveSpec stays cheap to copy.
struct Expr {
    enum class Kind { Num, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Abs, Sqrt };
    struct Node {
        Kind kind;
        double num = 0.0;
        int a = -1;
        int b = -1;
    };
    std::vector<Node> nodes;
    int root = -1;

    double eval(double t) const;
};

struct CurveSegment {
    Expr x;
    Expr y;
    double t_start = 0.0;
    double t_end = 0.0;
};

struct CurveSpec {
    std::vector<CurveSegment> segments;  // contiguous, increasing t ranges
    bool closed_hint = false;            // endpoints coincide within 1e-9

    double t_begin() const { return segments.front().t_start; }
    double t_end() const { return segments.back().t_end; }
    std::array<double, 2> eval(double t) const;
};

struct PolyLine {
    std::vector<std::array<double, 2>> pts;
};

// Per-frame heading increments and speeds; length == frame transitions.
struct TrajectoryProfile {
    std::vector<double> heading_delta;  // radians/frame, positive = counter-clockwise
    std::vector<double> speed;          // units/frame
    int length() const { return static_cast<int>(heading_delta.size()); }
};

// Content of the last fenced code block in an LLM reply.
std::string extract_code_block(const std::string& reply);

// Grammar: stmt* at top level (one segment) or "segment { stmt* }"+ where
// stmt is "x = expr;", "y = expr;" or "t in [expr, expr];". Trailing
// semicolons before '}' / end of input may be omitted.
CurveSpec parse_curve_spec(const std::string& text);

// n_samples evenly spaced t values over the full range, both endpoints
// included. Throws with the offending t on non-finite evaluation.
PolyLine sample_curve(const CurveSpec& spec, int n_samples = 200);

// Clamped cubic spline through the points (chord-length parameterized),
// re-emitted as n_out points equally spaced in arc length.
PolyLine resample_uniform(const PolyLine& line, int n_out);

// Headings from consecutive direction vectors (closed polylines wrap the
// first delta); speeds scaled so their mean equals v_bar.
TrajectoryProfile derive_profile(const PolyLine& line, double v_bar);

// Length-preserving resample: cumulative turn and mean speed are kept.
TrajectoryProfile resample_profile(const TrajectoryProfile& p, int new_length);

// Replaces the root rotational-velocity column with the profile (frame 0
// gets 0). Every other column is preserved bitwise unless overwrite_speed is
// set, which also rewrites the two root linear-velocity columns.
motion::MotionSequence apply_trajectory(const motion::MotionSequence& m,
                                        const TrajectoryProfile& profile,
                                        bool overwrite_speed = false);

}  // namespace coma::traj
