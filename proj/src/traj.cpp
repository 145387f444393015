#include "coma/traj.hpp"

#include <cmath>
#include <cstring>

#include "coma/common.hpp"

namespace coma::traj {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kClosedTol = 1e-9;
}  // namespace

double Expr::eval(double t) const {
    std::vector<double> v(nodes.size());
    for (size_t i = 0; i < nodes.size(); ++i) {
        const Node& n = nodes[i];
        switch (n.kind) {
            case Kind::Num: v[i] = n.num; break;
            case Kind::Var: v[i] = t; break;
            case Kind::Neg: v[i] = -v[static_cast<size_t>(n.a)]; break;
            case Kind::Add: v[i] = v[static_cast<size_t>(n.a)] + v[static_cast<size_t>(n.b)]; break;
            case Kind::Sub: v[i] = v[static_cast<size_t>(n.a)] - v[static_cast<size_t>(n.b)]; break;
            case Kind::Mul: v[i] = v[static_cast<size_t>(n.a)] * v[static_cast<size_t>(n.b)]; break;
            case Kind::Div: v[i] = v[static_cast<size_t>(n.a)] / v[static_cast<size_t>(n.b)]; break;
            case Kind::Pow: v[i] = std::pow(v[static_cast<size_t>(n.a)], v[static_cast<size_t>(n.b)]); break;
            case Kind::Sin: v[i] = std::sin(v[static_cast<size_t>(n.a)]); break;
            case Kind::Cos: v[i] = std::cos(v[static_cast<size_t>(n.a)]); break;
            case Kind::Abs: v[i] = std::abs(v[static_cast<size_t>(n.a)]); break;
            case Kind::Sqrt: v[i] = std::sqrt(v[static_cast<size_t>(n.a)]); break;
        }
    }
    return v[static_cast<size_t>(root)];
}

std::array<double, 2> CurveSpec::eval(double t) const {
    for (size_t i = 0; i < segments.size(); ++i) {
        const CurveSegment& s = segments[i];
        bool last = i + 1 == segments.size();
        if (t >= s.t_start - 1e-12 && (t < s.t_end || (last && t <= s.t_end + 1e-12)))
            return {s.x.eval(t), s.y.eval(t)};
    }
    throw Error("curve evaluation outside declared t range");
}

std::string extract_code_block(const std::string& reply) {
    // Collect fence offsets, pair them up, return the last complete block.
    std::vector<size_t> fences;
    size_t pos = 0;
    while ((pos = reply.find("```", pos)) != std::string::npos) {
        fences.push_back(pos);
        pos += 3;
    }
    if (fences.size() < 2) throw ParseError("no fenced code block in reply");
    size_t open = fences[fences.size() - 2 - (fences.size() % 2)];
    size_t close = fences[fences.size() - 1 - (fences.size() % 2)];
    size_t body = open + 3;
    // Skip an optional language tag up to the end of the fence line.
    size_t nl = reply.find('\n', body);
    if (nl != std::string::npos && nl < close) body = nl + 1;
    std::string out = reply.substr(body, close - body);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out;
}

namespace {

struct Token {
    enum class Kind { Ident, Number, Op, End } kind = Kind::End;
    std::string text;
    double number = 0.0;
    int line = 1;
    int col = 1;
};

class Lexer {
public:
    explicit Lexer(const std::string& s) : s_(s) { advance(); }
    const Token& peek() const { return tok_; }
    Token next() {
        Token t = tok_;
        advance();
        return t;
    }

private:
    void advance() {
        while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) bump();
        tok_ = Token{};
        tok_.line = line_;
        tok_.col = col_;
        if (i_ >= s_.size()) {
            tok_.kind = Token::Kind::End;
            return;
        }
        char c = s_[i_];
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t start = i_;
            while (i_ < s_.size() &&
                   (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_'))
                bump();
            tok_.kind = Token::Kind::Ident;
            tok_.text = s_.substr(start, i_ - start);
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i_ + 1 < s_.size() &&
                                                            std::isdigit(static_cast<unsigned char>(s_[i_ + 1])))) {
            size_t start = i_;
            while (i_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[i_])) || s_[i_] == '.'))
                bump();
            if (i_ < s_.size() && (s_[i_] == 'e' || s_[i_] == 'E')) {
                bump();
                if (i_ < s_.size() && (s_[i_] == '+' || s_[i_] == '-')) bump();
                while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) bump();
            }
            tok_.kind = Token::Kind::Number;
            tok_.text = s_.substr(start, i_ - start);
            try {
                tok_.number = std::stod(tok_.text);
            } catch (...) {
                throw ParseError("bad number '" + tok_.text + "'", tok_.line, tok_.col);
            }
            return;
        }
        if (std::strchr("+-*/^()[]{},;=", c)) {
            tok_.kind = Token::Kind::Op;
            tok_.text = std::string(1, c);
            bump();
            return;
        }
        throw ParseError(std::string("unexpected character '") + c + "'", line_, col_);
    }

    void bump() {
        if (s_[i_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++i_;
    }

    const std::string& s_;
    size_t i_ = 0;
    int line_ = 1;
    int col_ = 1;
    Token tok_;
};

class Parser {
public:
    explicit Parser(const std::string& s) : lex_(s) {}

    CurveSpec parse() {
        CurveSpec spec;
        if (peek_is_ident("segment")) {
            while (peek_is_ident("segment")) {
                lex_.next();
                expect_op("{");
                spec.segments.push_back(parse_segment_body(true));
            }
        } else {
            spec.segments.push_back(parse_segment_body(false));
        }
        const Token& t = lex_.peek();
        if (t.kind != Token::Kind::End)
            throw ParseError("unexpected trailing input '" + t.text + "'", t.line, t.col);
        validate(spec);
        return spec;
    }

private:
    bool peek_is_ident(const char* name) const {
        return lex_.peek().kind == Token::Kind::Ident && lex_.peek().text == name;
    }

    bool peek_is_op(const char* op) const {
        return lex_.peek().kind == Token::Kind::Op && lex_.peek().text == op;
    }

    void expect_op(const char* op) {
        const Token& t = lex_.peek();
        if (!peek_is_op(op))
            throw ParseError(std::string("expected '") + op + "'", t.line, t.col);
        lex_.next();
    }

    CurveSegment parse_segment_body(bool braced) {
        CurveSegment seg;
        bool has_x = false, has_y = false, has_t = false;
        while (true) {
            const Token& t = lex_.peek();
            if (braced && peek_is_op("}")) {
                lex_.next();
                break;
            }
            if (!braced && (t.kind == Token::Kind::End || peek_is_ident("segment"))) break;
            if (t.kind != Token::Kind::Ident)
                throw ParseError("expected statement", t.line, t.col);
            if (t.text == "x" || t.text == "y") {
                bool is_x = t.text == "x";
                lex_.next();
                expect_op("=");
                Expr e;
                e.root = parse_expr(e);
                (is_x ? seg.x : seg.y) = std::move(e);
                (is_x ? has_x : has_y) = true;
            } else if (t.text == "t") {
                lex_.next();
                const Token& kw = lex_.peek();
                if (!(kw.kind == Token::Kind::Ident && kw.text == "in"))
                    throw ParseError("expected 'in' after 't'", kw.line, kw.col);
                lex_.next();
                expect_op("[");
                Expr lo;
                lo.root = parse_expr(lo);
                expect_op(",");
                Expr hi;
                hi.root = parse_expr(hi);
                expect_op("]");
                seg.t_start = lo.eval(0.0);
                seg.t_end = hi.eval(0.0);
                has_t = true;
            } else {
                throw ParseError("unknown statement '" + t.text + "'", t.line, t.col);
            }
            if (peek_is_op(";"))
                lex_.next();
            else if (!(lex_.peek().kind == Token::Kind::End || (braced && peek_is_op("}"))))
                throw ParseError("expected ';'", lex_.peek().line, lex_.peek().col);
        }
        const Token& t = lex_.peek();
        if (!has_x || !has_y) throw ParseError("segment is missing x or y", t.line, t.col);
        if (!has_t) throw ParseError("segment is missing its t range", t.line, t.col);
        if (!(seg.t_start < seg.t_end)) throw ParseError("empty or reversed t range", t.line, t.col);
        return seg;
    }

    int parse_expr(Expr& e) {
        int lhs = parse_term(e);
        while (peek_is_op("+") || peek_is_op("-")) {
            bool plus = lex_.next().text == "+";
            int rhs = parse_term(e);
            lhs = push(e, plus ? Expr::Kind::Add : Expr::Kind::Sub, lhs, rhs);
        }
        return lhs;
    }

    int parse_term(Expr& e) {
        int lhs = parse_unary(e);
        while (peek_is_op("*") || peek_is_op("/")) {
            bool mul = lex_.next().text == "*";
            int rhs = parse_unary(e);
            lhs = push(e, mul ? Expr::Kind::Mul : Expr::Kind::Div, lhs, rhs);
        }
        return lhs;
    }

    int parse_unary(Expr& e) {
        if (peek_is_op("-")) {
            lex_.next();
            return push(e, Expr::Kind::Neg, parse_unary(e), -1);
        }
        return parse_power(e);
    }

    int parse_power(Expr& e) {
        int base = parse_primary(e);
        if (peek_is_op("^")) {
            lex_.next();
            int exp = parse_unary(e);  // right-associative
            return push(e, Expr::Kind::Pow, base, exp);
        }
        return base;
    }

    int parse_primary(Expr& e) {
        Token t = lex_.next();
        if (t.kind == Token::Kind::Number) return push_num(e, t.number);
        if (t.kind == Token::Kind::Op && t.text == "(") {
            int inner = parse_expr(e);
            expect_op(")");
            return inner;
        }
        if (t.kind == Token::Kind::Ident) {
            if (t.text == "t") return push(e, Expr::Kind::Var, -1, -1);
            if (t.text == "pi") return push_num(e, kPi);
            Expr::Kind fn;
            if (t.text == "sin") fn = Expr::Kind::Sin;
            else if (t.text == "cos") fn = Expr::Kind::Cos;
            else if (t.text == "abs") fn = Expr::Kind::Abs;
            else if (t.text == "sqrt") fn = Expr::Kind::Sqrt;
            else throw ParseError("unknown function or identifier '" + t.text + "'", t.line, t.col);
            expect_op("(");
            int arg = parse_expr(e);
            expect_op(")");
            return push(e, fn, arg, -1);
        }
        throw ParseError("expected expression", t.line, t.col);
    }

    static int push(Expr& e, Expr::Kind k, int a, int b) {
        e.nodes.push_back({k, 0.0, a, b});
        return static_cast<int>(e.nodes.size()) - 1;
    }

    static int push_num(Expr& e, double v) {
        e.nodes.push_back({Expr::Kind::Num, v, -1, -1});
        return static_cast<int>(e.nodes.size()) - 1;
    }

    void validate(CurveSpec& spec) {
        for (size_t i = 1; i < spec.segments.size(); ++i) {
            if (std::abs(spec.segments[i].t_start - spec.segments[i - 1].t_end) > 1e-9)
                throw ParseError("segment t ranges are not contiguous");
            if (spec.segments[i].t_end <= spec.segments[i].t_start)
                throw ParseError("segment t ranges must increase");
        }
        auto p0 = spec.eval(spec.t_begin());
        auto p1 = spec.eval(spec.t_end());
        if (!std::isfinite(p0[0]) || !std::isfinite(p0[1]) || !std::isfinite(p1[0]) ||
            !std::isfinite(p1[1]))
            throw ParseError("curve endpoints do not evaluate to finite values");
        spec.closed_hint = std::hypot(p0[0] - p1[0], p0[1] - p1[1]) < kClosedTol;
    }

    Lexer lex_;
};

}  // namespace

CurveSpec parse_curve_spec(const std::string& text) { return Parser(text).parse(); }

PolyLine sample_curve(const CurveSpec& spec, int n_samples) {
    if (n_samples < 2) throw Error("sample_curve: need at least 2 samples");
    PolyLine line;
    double t0 = spec.t_begin(), t1 = spec.t_end();
    for (int i = 0; i < n_samples; ++i) {
        double t = t0 + (t1 - t0) * static_cast<double>(i) / (n_samples - 1);
        auto p = spec.eval(t);
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
            throw Error("curve evaluates to a non-finite value at t = " + std::to_string(t));
        line.pts.push_back(p);
    }
    return line;
}

namespace {

// Clamped cubic spline: second derivatives from the tridiagonal system, end
// slopes pinned to the boundary chords.
struct CubicSpline {
    std::vector<double> u, y, m;  // knots, values, second derivatives

    static CubicSpline fit(const std::vector<double>& u, const std::vector<double>& y) {
        size_t n = u.size();
        CubicSpline s;
        s.u = u;
        s.y = y;
        s.m.assign(n, 0.0);
        if (n < 3) return s;
        std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
        double h0 = u[1] - u[0];
        double hn = u[n - 1] - u[n - 2];
        double s0 = (y[1] - y[0]) / h0;
        double sn = (y[n - 1] - y[n - 2]) / hn;
        b[0] = 2.0 * h0;
        c[0] = h0;
        d[0] = 6.0 * ((y[1] - y[0]) / h0 - s0);
        for (size_t i = 1; i + 1 < n; ++i) {
            double hl = u[i] - u[i - 1], hr = u[i + 1] - u[i];
            a[i] = hl;
            b[i] = 2.0 * (hl + hr);
            c[i] = hr;
            d[i] = 6.0 * ((y[i + 1] - y[i]) / hr - (y[i] - y[i - 1]) / hl);
        }
        a[n - 1] = hn;
        b[n - 1] = 2.0 * hn;
        d[n - 1] = 6.0 * (sn - (y[n - 1] - y[n - 2]) / hn);
        for (size_t i = 1; i < n; ++i) {
            double w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            d[i] -= w * d[i - 1];
        }
        s.m[n - 1] = d[n - 1] / b[n - 1];
        for (size_t i = n - 1; i-- > 0;) s.m[i] = (d[i] - c[i] * s.m[i + 1]) / b[i];
        return s;
    }

    double eval(double x) const {
        size_t n = u.size();
        size_t i = 0;
        if (x <= u.front()) i = 0;
        else if (x >= u[n - 2]) i = n - 2;
        else {
            size_t lo = 0, hi = n - 1;
            while (hi - lo > 1) {
                size_t mid = (lo + hi) / 2;
                if (u[mid] <= x) lo = mid;
                else hi = mid;
            }
            i = lo;
        }
        double h = u[i + 1] - u[i];
        double A = (u[i + 1] - x) / h, B = (x - u[i]) / h;
        return A * y[i] + B * y[i + 1] +
               ((A * A * A - A) * m[i] + (B * B * B - B) * m[i + 1]) * h * h / 6.0;
    }
};

}  // namespace

PolyLine resample_uniform(const PolyLine& line, int n_out) {
    if (n_out < 2) throw Error("resample_uniform: need n_out >= 2");
    // Drop consecutive duplicates so chord parameterization stays monotone.
    std::vector<std::array<double, 2>> pts;
    for (const auto& p : line.pts)
        if (pts.empty() || std::hypot(p[0] - pts.back()[0], p[1] - pts.back()[1]) > 0.0)
            pts.push_back(p);
    if (pts.size() < 2) throw Error("resample_uniform: degenerate polyline (all points coincide)");
    if (line.pts.size() < 4) throw Error("resample_uniform: need at least 4 input points");

    std::vector<double> u(pts.size(), 0.0), xs(pts.size()), ys(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) {
        xs[i] = pts[i][0];
        ys[i] = pts[i][1];
        if (i > 0)
            u[i] = u[i - 1] + std::hypot(pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1]);
    }
    CubicSpline sx = CubicSpline::fit(u, xs);
    CubicSpline sy = CubicSpline::fit(u, ys);

    // Dense arc-length table, then equal-arc emission.
    int dense = std::max(20000, 100 * n_out);
    std::vector<double> du(static_cast<size_t>(dense) + 1), arc(static_cast<size_t>(dense) + 1, 0.0);
    double prev_x = xs[0], prev_y = ys[0];
    for (int i = 0; i <= dense; ++i) {
        double uu = u.back() * static_cast<double>(i) / dense;
        du[static_cast<size_t>(i)] = uu;
        double px = sx.eval(uu), py = sy.eval(uu);
        if (i > 0)
            arc[static_cast<size_t>(i)] = arc[static_cast<size_t>(i) - 1] + std::hypot(px - prev_x, py - prev_y);
        prev_x = px;
        prev_y = py;
    }
    double total = arc.back();
    PolyLine out;
    size_t cursor = 0;
    for (int k = 0; k < n_out; ++k) {
        double target = total * static_cast<double>(k) / (n_out - 1);
        while (cursor + 1 < arc.size() && arc[cursor + 1] < target) ++cursor;
        double uu;
        if (cursor + 1 >= arc.size()) {
            uu = du.back();
        } else {
            double seg = arc[cursor + 1] - arc[cursor];
            double f = seg > 0.0 ? (target - arc[cursor]) / seg : 0.0;
            uu = du[cursor] + f * (du[cursor + 1] - du[cursor]);
        }
        if (k == 0) uu = 0.0;
        if (k == n_out - 1) uu = u.back();
        out.pts.push_back({sx.eval(uu), sy.eval(uu)});
    }
    return out;
}

namespace {

double signed_angle(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    double cross = a[0] * b[1] - a[1] * b[0];
    double dot = a[0] * b[0] + a[1] * b[1];
    return std::atan2(cross, dot);
}

}  // namespace

TrajectoryProfile derive_profile(const PolyLine& line, double v_bar) {
    if (line.pts.size() < 2) throw Error("derive_profile: need at least 2 points");
    if (!(v_bar > 0.0)) throw Error("derive_profile: v_bar must be positive");
    size_t T = line.pts.size() - 1;
    std::vector<std::array<double, 2>> dir(T);
    std::vector<double> len(T);
    for (size_t i = 0; i < T; ++i) {
        dir[i] = {line.pts[i + 1][0] - line.pts[i][0], line.pts[i + 1][1] - line.pts[i][1]};
        len[i] = std::hypot(dir[i][0], dir[i][1]);
        if (len[i] == 0.0) throw Error("derive_profile: zero-length segment at index " + std::to_string(i));
    }
    TrajectoryProfile p;
    p.heading_delta.resize(T);
    p.speed.resize(T);
    bool closed = std::hypot(line.pts.front()[0] - line.pts.back()[0],
                             line.pts.front()[1] - line.pts.back()[1]) < kClosedTol;
    p.heading_delta[0] = closed && T > 1 ? signed_angle(dir[T - 1], dir[0]) : 0.0;
    for (size_t i = 1; i < T; ++i) p.heading_delta[i] = signed_angle(dir[i - 1], dir[i]);
    double mean_len = 0.0;
    for (double l : len) mean_len += l;
    mean_len /= static_cast<double>(T);
    double scale = v_bar / mean_len;
    for (size_t i = 0; i < T; ++i) p.speed[i] = len[i] * scale;
    return p;
}

TrajectoryProfile resample_profile(const TrajectoryProfile& p, int new_length) {
    if (new_length < 0) throw Error("resample_profile: negative length");
    if (p.length() == new_length) return p;
    TrajectoryProfile out;
    out.heading_delta.assign(static_cast<size_t>(new_length), 0.0);
    out.speed.assign(static_cast<size_t>(new_length), 0.0);
    if (new_length == 0 || p.length() == 0) return out;

    int T = p.length();
    // Interpolate the cumulative turn so total rotation is preserved exactly.
    std::vector<double> cum(static_cast<size_t>(T) + 1, 0.0);
    for (int i = 0; i < T; ++i) cum[static_cast<size_t>(i) + 1] = cum[static_cast<size_t>(i)] + p.heading_delta[static_cast<size_t>(i)];
    auto interp = [&](const std::vector<double>& v, double s) {
        double x = s * T;
        int i = std::min(static_cast<int>(x), T - 1);
        double f = x - i;
        return v[static_cast<size_t>(i)] + f * (v[static_cast<size_t>(i) + 1] - v[static_cast<size_t>(i)]);
    };
    double prev = 0.0;
    for (int k = 0; k < new_length; ++k) {
        double cur = k + 1 == new_length ? cum.back() : interp(cum, static_cast<double>(k + 1) / new_length);
        out.heading_delta[static_cast<size_t>(k)] = cur - prev;
        prev = cur;
    }
    double mean_old = 0.0;
    for (double s : p.speed) mean_old += s;
    mean_old /= T;
    for (int k = 0; k < new_length; ++k) {
        double pos = (static_cast<double>(k) + 0.5) / new_length * T - 0.5;
        int i = std::min(std::max(static_cast<int>(std::floor(pos)), 0), T - 1);
        int j = std::min(i + 1, T - 1);
        double f = std::min(std::max(pos - i, 0.0), 1.0);
        out.speed[static_cast<size_t>(k)] = p.speed[static_cast<size_t>(i)] * (1.0 - f) + p.speed[static_cast<size_t>(j)] * f;
    }
    double mean_new = 0.0;
    for (double s : out.speed) mean_new += s;
    mean_new /= new_length;
    if (mean_new > 0.0)
        for (double& s : out.speed) s *= mean_old / mean_new;
    return out;
}

motion::MotionSequence apply_trajectory(const motion::MotionSequence& m,
                                        const TrajectoryProfile& profile, bool overwrite_speed) {
    motion::FeatureLayout layout;
    if (m.T() < 1) throw Error("apply_trajectory: empty motion");
    TrajectoryProfile fit = profile.length() == m.T() - 1 ? profile : resample_profile(profile, m.T() - 1);
    if (fit.length() != m.T() - 1) throw Error("apply_trajectory: profile length mismatch after resample");
    motion::MotionSequence out = m;
    out.frames.at(0, layout.root_rot_vel) = 0.0f;
    for (int t = 1; t < m.T(); ++t)
        out.frames.at(t, layout.root_rot_vel) = static_cast<float>(fit.heading_delta[static_cast<size_t>(t - 1)]);
    if (overwrite_speed) {
        out.frames.at(0, layout.root_lin_vel[0]) = 0.0f;
        out.frames.at(0, layout.root_lin_vel[1]) = 0.0f;
        for (int t = 1; t < m.T(); ++t) {
            out.frames.at(t, layout.root_lin_vel[0]) = 0.0f;
            out.frames.at(t, layout.root_lin_vel[1]) = static_cast<float>(fit.speed[static_cast<size_t>(t - 1)]);
        }
    }
    return out;
}

}  // namespace coma::traj
