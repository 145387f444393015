#include <cmath>

#include "coma/traj.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace coma;
using namespace coma::traj;

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* kHeartDsl =
    "x = 16*sin(t)^3; y = 13*cos(t) - 5*cos(2*t) - 2*cos(3*t) - cos(4*t); t in [0, 2*pi]";

PolyLine circle_nonuniform(int n) {
    PolyLine line;
    for (int i = 0; i < n; ++i) {
        double f = static_cast<double>(i) / (n - 1);
        double theta = 2.0 * kPi * f * f;  // deliberately bunched samples
        line.pts.push_back({std::cos(theta), std::sin(theta)});
    }
    return line;
}

}  // namespace

TEST_CASE("extract_code_block returns the last fenced block") {
    CHECK(extract_code_block("before\n```\nx = t;\n```\nafter") == "x = t;");
    CHECK(extract_code_block("```python\nfirst\n```\ntext\n```\nsecond\n```") == "second");
    CHECK(extract_code_block("```text\nbody line 1\nbody line 2\n```") == "body line 1\nbody line 2");
    CHECK_THROWS_AS(extract_code_block("prose with no fences"), ParseError);
    CHECK_THROWS_AS(extract_code_block("``` only an opener"), ParseError);
}

TEST_CASE("curve DSL parses the heart program") {
    CurveSpec spec = parse_curve_spec(kHeartDsl);
    REQUIRE(spec.segments.size() == 1);
    CHECK(spec.t_begin() == 0.0);
    CHECK(spec.t_end() == doctest::Approx(2.0 * kPi).epsilon(1e-15));
    CHECK(spec.closed_hint);

    auto p0 = spec.eval(0.0);
    CHECK(p0[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(p0[1] == doctest::Approx(5.0).epsilon(1e-12));  // 13 - 5 - 2 - 1
    auto p1 = spec.eval(kPi / 2.0);
    CHECK(p1[0] == doctest::Approx(16.0).epsilon(1e-12));
    CHECK(p1[1] == doctest::Approx(4.0).epsilon(1e-12));  // 0 + 5 - 0 - 1
}

TEST_CASE("curve DSL grammar corners") {
    CurveSpec line = parse_curve_spec("x = t; y = 0; t in [0, 1];");
    CHECK(line.segments.size() == 1);
    CHECK(!line.closed_hint);

    // Two contiguous segments, braced form.
    CurveSpec segs = parse_curve_spec(
        "segment { x = t; y = 0; t in [0, 1]; }\n"
        "segment { x = 1; y = t - 1; t in [1, 2]; }");
    REQUIRE(segs.segments.size() == 2);
    auto mid = segs.eval(1.5);
    CHECK(mid[0] == doctest::Approx(1.0));
    CHECK(mid[1] == doctest::Approx(0.5));

    // Operator precedence and right-associative power.
    CurveSpec prec = parse_curve_spec("x = 2*t^3; y = -t^2; t in [0, 2]");
    CHECK(prec.eval(2.0)[0] == doctest::Approx(16.0));
    CHECK(prec.eval(2.0)[1] == doctest::Approx(-4.0));
    CurveSpec rightassoc = parse_curve_spec("x = 2^t^2; y = 0; t in [0, 2]");
    CHECK(rightassoc.eval(2.0)[0] == doctest::Approx(16.0));  // 2^(2^2)

    CHECK_THROWS_AS(parse_curve_spec("x = foo(t); y = 0; t in [0,1]"), ParseError);
    CHECK_THROWS_AS(parse_curve_spec("x = t; t in [0,1]"), ParseError);          // missing y
    CHECK_THROWS_AS(parse_curve_spec("x = t; y = 0; t in [1, 0]"), ParseError);  // reversed
    CHECK_THROWS_AS(parse_curve_spec("x = t +; y = 0; t in [0,1]"), ParseError);
    CHECK_THROWS_AS(parse_curve_spec(
                        "segment { x = t; y = 0; t in [0, 1]; }"
                        "segment { x = t; y = 0; t in [2, 3]; }"),
                    ParseError);  // gap between ranges
    try {
        parse_curve_spec("x = t;\ny = bar(t);\nt in [0,1]");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 2);  // located error
    }
}

TEST_CASE("sample_curve spans the range and reports non-finite points") {
    CurveSpec heart = parse_curve_spec(kHeartDsl);
    PolyLine pts = sample_curve(heart, 200);
    REQUIRE(pts.pts.size() == 200);
    double gap = std::hypot(pts.pts.front()[0] - pts.pts.back()[0],
                            pts.pts.front()[1] - pts.pts.back()[1]);
    CHECK(gap < 1e-9);  // closed trajectory

    CurveSpec line = parse_curve_spec("x = t; y = 0; t in [0, 1]");
    PolyLine lp = sample_curve(line, 200);
    for (size_t i = 1; i < lp.pts.size(); ++i) {
        CHECK(lp.pts[i][0] > lp.pts[i - 1][0]);
        CHECK(lp.pts[i][1] == 0.0);
    }

    // Pole hit exactly by a sample -> located failure instead of silent NaN.
    CurveSpec pole = parse_curve_spec("x = 1/(t - 7); y = 0; t in [0, 199]");
    CHECK_THROWS_WITH_AS(sample_curve(pole, 200), doctest::Contains("t = 7"), Error);
}

TEST_CASE("uniform resampling equalizes spacing") {
    // Straight line: endpoints exact, spacing exact.
    PolyLine line;
    for (int i = 0; i < 10; ++i) line.pts.push_back({0.3 * i, 0.4 * i});
    PolyLine out = resample_uniform(line, 7);
    REQUIRE(out.pts.size() == 7);
    CHECK(out.pts.front()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.pts.back()[0] == doctest::Approx(2.7).epsilon(1e-12));
    CHECK(out.pts.back()[1] == doctest::Approx(3.6).epsilon(1e-12));
    std::vector<double> gaps;
    for (size_t i = 1; i < out.pts.size(); ++i)
        gaps.push_back(std::hypot(out.pts[i][0] - out.pts[i - 1][0], out.pts[i][1] - out.pts[i - 1][1]));
    for (double g : gaps) CHECK(g == doctest::Approx(gaps[0]).epsilon(1e-9));

    // Bunched circle samples come out evenly spaced within 1%.
    PolyLine circ = resample_uniform(circle_nonuniform(200), 196);
    std::vector<double> d;
    for (size_t i = 1; i < circ.pts.size(); ++i)
        d.push_back(std::hypot(circ.pts[i][0] - circ.pts[i - 1][0], circ.pts[i][1] - circ.pts[i - 1][1]));
    double mean = 0.0;
    for (double g : d) mean += g;
    mean /= static_cast<double>(d.size());
    for (double g : d) CHECK(std::abs(g - mean) / mean < 0.01);

    PolyLine two = resample_uniform(line, 2);
    REQUIRE(two.pts.size() == 2);
    CHECK(two.pts[0][0] == doctest::Approx(0.0));
    CHECK(two.pts[1][0] == doctest::Approx(2.7));

    PolyLine degenerate;
    for (int i = 0; i < 5; ++i) degenerate.pts.push_back({1.0, 1.0});
    CHECK_THROWS_AS(resample_uniform(degenerate, 4), Error);
    PolyLine three;
    three.pts = {{0, 0}, {1, 0}, {2, 0}};
    CHECK_THROWS_AS(resample_uniform(three, 4), Error);
}

TEST_CASE("profiles: headings, speed normalization, k-gon wrap") {
    PolyLine line;
    for (int i = 0; i < 8; ++i) line.pts.push_back({0.5 * i, 0.0});
    TrajectoryProfile p = derive_profile(line, 0.25);
    REQUIRE(p.length() == 7);
    for (double h : p.heading_delta) CHECK(h == 0.0);
    double mean = 0.0;
    for (double s : p.speed) mean += s;
    CHECK(mean / p.length() == doctest::Approx(0.25).epsilon(1e-12));

    // Regular pentagon, closed: every step turns by the exterior angle.
    int k = 5;
    PolyLine gon;
    for (int i = 0; i <= k; ++i) {
        double th = 2.0 * kPi * i / k;
        gon.pts.push_back({std::cos(th), std::sin(th)});
    }
    TrajectoryProfile gp = derive_profile(gon, 1.0);
    REQUIRE(gp.length() == k);
    for (double h : gp.heading_delta) CHECK(h == doctest::Approx(2.0 * kPi / k).epsilon(1e-9));
    for (double h : gp.heading_delta) CHECK(std::abs(h) < kPi);

    PolyLine dup;
    dup.pts = {{0, 0}, {0, 0}, {1, 0}};
    CHECK_THROWS_AS(derive_profile(dup, 1.0), Error);
    CHECK_THROWS_AS(derive_profile(line, 0.0), Error);
}

TEST_CASE("profile resampling preserves total turn and mean speed") {
    TrajectoryProfile p;
    Rng rng(9);
    for (int i = 0; i < 24; ++i) {
        p.heading_delta.push_back(rng.gauss() * 0.1);
        p.speed.push_back(0.5 + rng.uniform());
    }
    double turn = 0.0, speed = 0.0;
    for (double h : p.heading_delta) turn += h;
    for (double s : p.speed) speed += s;
    speed /= p.length();

    for (int len : {11, 24, 63}) {
        TrajectoryProfile r = resample_profile(p, len);
        REQUIRE(r.length() == len);
        double turn2 = 0.0, speed2 = 0.0;
        for (double h : r.heading_delta) turn2 += h;
        for (double s : r.speed) speed2 += s;
        CHECK(turn2 == doctest::Approx(turn).epsilon(1e-9));
        CHECK(speed2 / len == doctest::Approx(speed).epsilon(1e-9));
    }
}

TEST_CASE("apply_trajectory touches exactly the rotational-velocity column") {
    motion::MotionSequence m = motion::synthetic_motion(77, 40);
    TrajectoryProfile zero;
    zero.heading_delta.assign(39, 0.0);
    zero.speed.assign(39, 0.5);
    motion::MotionSequence out = apply_trajectory(m, zero);
    for (int t = 0; t < out.T(); ++t) CHECK(out.frames.at(t, 0) == 0.0f);
    for (int t = 0; t < out.T(); ++t)
        for (int c = 1; c < out.D(); ++c) CHECK(out.frames.at(t, c) == m.frames.at(t, c));

    TrajectoryProfile wavy;
    Rng rng(5);
    for (int i = 0; i < 39; ++i) {
        wavy.heading_delta.push_back(rng.gauss() * 0.2);
        wavy.speed.push_back(1.0);
    }
    motion::MotionSequence mapped = apply_trajectory(m, wavy);
    CHECK(mapped.frames.at(0, 0) == 0.0f);
    // Read-back oracle: the stored column equals the applied profile within
    // the f32 quantization of the frame storage.
    for (int t = 1; t < mapped.T(); ++t)
        CHECK(std::abs(static_cast<double>(mapped.frames.at(t, 0)) -
                       wavy.heading_delta[static_cast<size_t>(t - 1)]) < 1e-6);
    for (int t = 0; t < mapped.T(); ++t)
        for (int c = 1; c < mapped.D(); ++c) CHECK(mapped.frames.at(t, c) == m.frames.at(t, c));

    // Length-mismatched profiles are refit before application.
    TrajectoryProfile shorter;
    shorter.heading_delta.assign(10, 0.1);
    shorter.speed.assign(10, 1.0);
    motion::MotionSequence refit = apply_trajectory(m, shorter);
    double total = 0.0;
    for (int t = 1; t < refit.T(); ++t) total += refit.frames.at(t, 0);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));  // 10 * 0.1 preserved

    // Optional speed overwrite touches the two linear-velocity columns too.
    motion::MotionSequence sped = apply_trajectory(m, wavy, true);
    for (int t = 1; t < sped.T(); ++t) {
        CHECK(sped.frames.at(t, 1) == 0.0f);
        CHECK(sped.frames.at(t, 2) == doctest::Approx(1.0f));
    }
    for (int t = 0; t < sped.T(); ++t)
        for (int c = 3; c < sped.D(); ++c) CHECK(sped.frames.at(t, c) == m.frames.at(t, c));
}
