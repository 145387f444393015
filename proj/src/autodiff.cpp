#include "coma/autodiff.hpp"

#include <cmath>

#include "coma/common.hpp"
#include "coma/kernels.hpp"

namespace coma::nn {

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

int Tape::push(Tensor v, bool rg, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(v);
    n.rg = rg;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor v, bool requires_grad) { return push(std::move(v), requires_grad, nullptr); }

int Tape::add(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (!va.same_shape(vb)) throw Error("add: shape mismatch");
    Tensor out = va;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [a, b, id](Tape& t) {
            const Tensor& g = t.grad(id);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_mut(a);
                for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
            }
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad_mut(b);
                for (int64_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i];
            }
        };
    return id;
}

int Tape::sub(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (!va.same_shape(vb)) throw Error("sub: shape mismatch");
    Tensor out = va;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [a, b, id](Tape& t) {
            const Tensor& g = t.grad(id);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_mut(a);
                for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
            }
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad_mut(b);
                for (int64_t i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
            }
        };
    return id;
}

int Tape::mul(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (!va.same_shape(vb)) throw Error("mul: shape mismatch");
    Tensor out = va;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [a, b, id](Tape& t) {
            const Tensor& g = t.grad(id);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_mut(a);
                const Tensor& vb2 = t.val(b);
                for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * vb2.data[i];
            }
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad_mut(b);
                const Tensor& va2 = t.val(a);
                for (int64_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * va2.data[i];
            }
        };
    return id;
}

int Tape::scale(int a, double s) {
    Tensor out = val(a);
    for (double& v : out.data) v *= s;
    bool rg = requires_grad(a);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [a, s, id](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& ga = t.grad_mut(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += s * g.data[i];
        };
    return id;
}

int Tape::add_many(const std::vector<int>& xs) {
    if (xs.empty()) throw Error("add_many: empty");
    int acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

int Tape::matmul(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) throw Error("matmul: shape mismatch");
    int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    Tensor out({m, n});
    kernels::gemm(va.data.data(), vb.data.data(), out.data.data(), m, k, n);
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [a, b, id, m, k, n](Tape& t) {
            const Tensor& g = t.grad(id);
            if (t.requires_grad(a))  // dA = dC * B^T
                kernels::gemm_nt(g.data.data(), t.val(b).data.data(), t.grad_mut(a).data.data(), m, n, k,
                                 true);
            if (t.requires_grad(b))  // dB = A^T * dC
                kernels::gemm_tn(t.val(a).data.data(), g.data.data(), t.grad_mut(b).data.data(), m, k, n,
                                 true);
        };
    return id;
}

int Tape::matmul_nt(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(1)) throw Error("matmul_nt: shape mismatch");
    int m = va.dim(0), k = va.dim(1), n = vb.dim(0);
    Tensor out({m, n});
    kernels::gemm_nt(va.data.data(), vb.data.data(), out.data.data(), m, k, n);
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [a, b, id, m, k, n](Tape& t) {
            const Tensor& g = t.grad(id);  // [m,n]
            if (t.requires_grad(a))        // dA = dC * B
                kernels::gemm(g.data.data(), t.val(b).data.data(), t.grad_mut(a).data.data(), m, n, k, true);
            if (t.requires_grad(b))  // dB = dC^T * A
                kernels::gemm_tn(g.data.data(), t.val(a).data.data(), t.grad_mut(b).data.data(), m, n, k,
                                 true);
        };
    return id;
}

int Tape::linear(int x, int w, int b) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    if (vx.rank() != 2 || vw.rank() != 2 || vx.dim(1) != vw.dim(1)) throw Error("linear: shape mismatch");
    int r = vx.dim(0), in = vx.dim(1), out_dim = vw.dim(0);
    Tensor out({r, out_dim});
    kernels::gemm_nt(vx.data.data(), vw.data.data(), out.data.data(), r, in, out_dim);
    if (b >= 0) {
        const Tensor& vb = val(b);
        if (vb.numel() != out_dim) throw Error("linear: bias mismatch");
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < out_dim; ++j) out.at(i, j) += vb.at(j);
    }
    bool rg = requires_grad(x) || requires_grad(w) || (b >= 0 && requires_grad(b));
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [x, w, b, id, r, in, out_dim](Tape& t) {
            const Tensor& g = t.grad(id);  // [r,out]
            if (t.requires_grad(x))        // dx = g * w
                kernels::gemm(g.data.data(), t.val(w).data.data(), t.grad_mut(x).data.data(), r, out_dim, in,
                              true);
            if (t.requires_grad(w))  // dw = g^T * x
                kernels::gemm_tn(g.data.data(), t.val(x).data.data(), t.grad_mut(w).data.data(), r, out_dim,
                                 in, true);
            if (b >= 0 && t.requires_grad(b)) {
                Tensor& gb = t.grad_mut(b);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < out_dim; ++j) gb.at(j) += g.at(i, j);
            }
        };
    return id;
}

int Tape::conv1d(int x, int w, int b, int stride, int pad) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    if (vx.rank() != 2 || vw.rank() != 3 || vx.dim(0) != vw.dim(1)) throw Error("conv1d: shape mismatch");
    int cin = vx.dim(0), t_len = vx.dim(1);
    int cout = vw.dim(0), ks = vw.dim(2);
    int tout = (t_len + 2 * pad - ks) / stride + 1;
    if (tout <= 0) throw Error("conv1d: empty output");
    Tensor out({cout, tout});
    const double* bias = b >= 0 ? val(b).data.data() : nullptr;
    kernels::conv1d_forward(vx.data.data(), cin, t_len, vw.data.data(), bias, cout, ks, stride, pad,
                            out.data.data(), tout);
    bool rg = requires_grad(x) || requires_grad(w) || (b >= 0 && requires_grad(b));
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [x, w, b, id, cin, t_len, cout, ks, stride, pad, tout](Tape& t) {
            const Tensor& g = t.grad(id);
            if (t.requires_grad(x))
                kernels::conv1d_grad_input(g.data.data(), cout, tout, t.val(w).data.data(), cin, ks, stride,
                                           pad, t.grad_mut(x).data.data(), t_len);
            double* db = (b >= 0 && t.requires_grad(b)) ? t.grad_mut(b).data.data() : nullptr;
            if (t.requires_grad(w) || db)
                kernels::conv1d_grad_weight(t.val(x).data.data(), cin, t_len, g.data.data(), cout, tout, ks,
                                            stride, pad, t.grad_mut(w).data.data(), db);
        };
    return id;
}

int Tape::upsample2(int x) {
    const Tensor& vx = val(x);
    if (vx.rank() != 2) throw Error("upsample2: rank");
    int c = vx.dim(0), t_len = vx.dim(1);
    Tensor out({c, 2 * t_len});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < t_len; ++i) {
            out.at(ci, 2 * i) = vx.at(ci, i);
            out.at(ci, 2 * i + 1) = vx.at(ci, i);
        }
    bool rg = requires_grad(x);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [x, id, c, t_len](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gx = t.grad_mut(x);
            for (int ci = 0; ci < c; ++ci)
                for (int i = 0; i < t_len; ++i) gx.at(ci, i) += g.at(ci, 2 * i) + g.at(ci, 2 * i + 1);
        };
    return id;
}

int Tape::gelu(int a) {
    const Tensor& va = val(a);
    Tensor out = va;
    for (double& v : out.data) {
        double u = kGeluC * (v + kGeluA * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    bool rg = requires_grad(a);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [a, id](Tape& t) {
            const Tensor& g = t.grad(id);
            const Tensor& va2 = t.val(a);
            Tensor& ga = t.grad_mut(a);
            for (int64_t i = 0; i < g.numel(); ++i) {
                double v = va2.data[i];
                double u = kGeluC * (v + kGeluA * v * v * v);
                double th = std::tanh(u);
                double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                ga.data[i] += g.data[i] * d;
            }
        };
    return id;
}

int Tape::layernorm(int x, int gamma, int beta, double eps) {
    const Tensor& vx = val(x);
    if (vx.rank() != 2) throw Error("layernorm: rank");
    int r = vx.dim(0), c = vx.dim(1);
    if (val(gamma).numel() != c || val(beta).numel() != c) throw Error("layernorm: affine mismatch");
    Tensor out({r, c});
    auto xhat = std::make_shared<Tensor>(std::vector<int>{r, c});
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
    const Tensor& vg = val(gamma);
    const Tensor& vb = val(beta);
    for (int i = 0; i < r; ++i) {
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += vx.at(i, j);
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            double d = vx.at(i, j) - mu;
            var += d * d;
        }
        var /= c;
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[static_cast<size_t>(i)] = inv;
        for (int j = 0; j < c; ++j) {
            double xh = (vx.at(i, j) - mu) * inv;
            xhat->at(i, j) = xh;
            out.at(i, j) = xh * vg.at(j) + vb.at(j);
        }
    }
    bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [x, gamma, beta, id, r, c, xhat, inv_sigma](Tape& t) {
            const Tensor& g = t.grad(id);
            const Tensor& vg2 = t.val(gamma);
            for (int i = 0; i < r; ++i) {
                if (t.requires_grad(gamma)) {
                    Tensor& gg = t.grad_mut(gamma);
                    for (int j = 0; j < c; ++j) gg.at(j) += g.at(i, j) * xhat->at(i, j);
                }
                if (t.requires_grad(beta)) {
                    Tensor& gb = t.grad_mut(beta);
                    for (int j = 0; j < c; ++j) gb.at(j) += g.at(i, j);
                }
                if (t.requires_grad(x)) {
                    double mean_h = 0.0, mean_hx = 0.0;
                    for (int j = 0; j < c; ++j) {
                        double h = g.at(i, j) * vg2.at(j);
                        mean_h += h;
                        mean_hx += h * xhat->at(i, j);
                    }
                    mean_h /= c;
                    mean_hx /= c;
                    double inv = (*inv_sigma)[static_cast<size_t>(i)];
                    Tensor& gx = t.grad_mut(x);
                    for (int j = 0; j < c; ++j) {
                        double h = g.at(i, j) * vg2.at(j);
                        gx.at(i, j) += (h - mean_h - xhat->at(i, j) * mean_hx) * inv;
                    }
                }
            }
        };
    return id;
}

int Tape::softmax_masked(int x, std::shared_ptr<const std::vector<std::uint8_t>> mask) {
    const Tensor& vx = val(x);
    if (vx.rank() != 2) throw Error("softmax: rank");
    int r = vx.dim(0), c = vx.dim(1);
    if (mask && static_cast<int64_t>(mask->size()) != vx.numel()) throw Error("softmax: mask mismatch");
    Tensor out({r, c});
    if (mask)
        kernels::softmax_masked_rows(vx.data.data(), mask->data(), out.data.data(), r, c);
    else
        kernels::softmax_rows(vx.data.data(), out.data.data(), r, c);
    auto probs = std::make_shared<Tensor>(out);
    bool rg = requires_grad(x);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [x, id, r, c, probs](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gx = t.grad_mut(x);
            for (int i = 0; i < r; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g.at(i, j) * probs->at(i, j);
                for (int j = 0; j < c; ++j) gx.at(i, j) += probs->at(i, j) * (g.at(i, j) - dot);
            }
        };
    return id;
}

int Tape::gather_rows(int table, std::vector<int> idx) {
    const Tensor& vt = val(table);
    if (vt.rank() != 2) throw Error("gather_rows: rank");
    int c = vt.dim(1);
    Tensor out({static_cast<int>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= vt.dim(0)) throw Error("gather_rows: index out of range");
        for (int j = 0; j < c; ++j) out.at(static_cast<int>(i), j) = vt.at(idx[i], j);
    }
    bool rg = requires_grad(table);
    auto ids = std::make_shared<std::vector<int>>(std::move(idx));
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [table, id, c, ids](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gt = t.grad_mut(table);
            for (size_t i = 0; i < ids->size(); ++i)
                for (int j = 0; j < c; ++j) gt.at((*ids)[i], j) += g.at(static_cast<int>(i), j);
        };
    return id;
}

int Tape::scatter_rows(int rows, std::vector<int> dst, int total_rows) {
    const Tensor& vr = val(rows);
    if (vr.rank() != 2 || vr.dim(0) != static_cast<int>(dst.size())) throw Error("scatter_rows: shape");
    int c = vr.dim(1);
    Tensor out({total_rows, c});
    for (size_t i = 0; i < dst.size(); ++i)
        for (int j = 0; j < c; ++j) out.at(dst[i], j) += vr.at(static_cast<int>(i), j);
    bool rg = requires_grad(rows);
    auto ids = std::make_shared<std::vector<int>>(std::move(dst));
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [rows, id, c, ids](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gr = t.grad_mut(rows);
            for (size_t i = 0; i < ids->size(); ++i)
                for (int j = 0; j < c; ++j) gr.at(static_cast<int>(i), j) += g.at((*ids)[i], j);
        };
    return id;
}

int Tape::slice_rows(int x, int r0, int r1) {
    const Tensor& vx = val(x);
    if (vx.rank() != 2 || r0 < 0 || r1 > vx.dim(0) || r0 >= r1) throw Error("slice_rows: range");
    int c = vx.dim(1);
    Tensor out({r1 - r0, c});
    for (int i = r0; i < r1; ++i)
        for (int j = 0; j < c; ++j) out.at(i - r0, j) = vx.at(i, j);
    bool rg = requires_grad(x);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [x, id, r0, r1, c](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gx = t.grad_mut(x);
            for (int i = r0; i < r1; ++i)
                for (int j = 0; j < c; ++j) gx.at(i, j) += g.at(i - r0, j);
        };
    return id;
}

int Tape::slice_cols(int x, int c0, int c1) {
    const Tensor& vx = val(x);
    if (vx.rank() != 2 || c0 < 0 || c1 > vx.dim(1) || c0 >= c1) throw Error("slice_cols: range");
    int r = vx.dim(0);
    Tensor out({r, c1 - c0});
    for (int i = 0; i < r; ++i)
        for (int j = c0; j < c1; ++j) out.at(i, j - c0) = vx.at(i, j);
    bool rg = requires_grad(x);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [x, id, r, c0, c1](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gx = t.grad_mut(x);
            for (int i = 0; i < r; ++i)
                for (int j = c0; j < c1; ++j) gx.at(i, j) += g.at(i, j - c0);
        };
    return id;
}

int Tape::concat_rows(const std::vector<int>& xs) {
    if (xs.empty()) throw Error("concat_rows: empty");
    int c = val(xs[0]).dim(1);
    int total = 0;
    for (int x : xs) {
        if (val(x).rank() != 2 || val(x).dim(1) != c) throw Error("concat_rows: shape");
        total += val(x).dim(0);
    }
    Tensor out({total, c});
    int off = 0;
    bool rg = false;
    for (int x : xs) {
        const Tensor& vx = val(x);
        for (int i = 0; i < vx.dim(0); ++i)
            for (int j = 0; j < c; ++j) out.at(off + i, j) = vx.at(i, j);
        off += vx.dim(0);
        rg = rg || requires_grad(x);
    }
    auto parts = std::make_shared<std::vector<int>>(xs);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [parts, id, c](Tape& t) {
            const Tensor& g = t.grad(id);
            int off2 = 0;
            for (int x : *parts) {
                int rx = t.val(x).dim(0);
                if (t.requires_grad(x)) {
                    Tensor& gx = t.grad_mut(x);
                    for (int i = 0; i < rx; ++i)
                        for (int j = 0; j < c; ++j) gx.at(i, j) += g.at(off2 + i, j);
                }
                off2 += rx;
            }
        };
    return id;
}

int Tape::concat_cols(const std::vector<int>& xs) {
    if (xs.empty()) throw Error("concat_cols: empty");
    int r = val(xs[0]).dim(0);
    int total = 0;
    for (int x : xs) {
        if (val(x).rank() != 2 || val(x).dim(0) != r) throw Error("concat_cols: shape");
        total += val(x).dim(1);
    }
    Tensor out({r, total});
    int off = 0;
    bool rg = false;
    for (int x : xs) {
        const Tensor& vx = val(x);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < vx.dim(1); ++j) out.at(i, off + j) = vx.at(i, j);
        off += vx.dim(1);
        rg = rg || requires_grad(x);
    }
    auto parts = std::make_shared<std::vector<int>>(xs);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [parts, id, r](Tape& t) {
            const Tensor& g = t.grad(id);
            int off2 = 0;
            for (int x : *parts) {
                int cx = t.val(x).dim(1);
                if (t.requires_grad(x)) {
                    Tensor& gx = t.grad_mut(x);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < cx; ++j) gx.at(i, j) += g.at(i, off2 + j);
                }
                off2 += cx;
            }
        };
    return id;
}

int Tape::transpose(int x) {
    const Tensor& vx = val(x);
    if (vx.rank() != 2) throw Error("transpose: rank");
    int r = vx.dim(0), c = vx.dim(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = vx.at(i, j);
    bool rg = requires_grad(x);
    int id = push(std::move(out), rg, nullptr);
    if (rg)
        nodes_.back().back = [x, id, r, c](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gx = t.grad_mut(x);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gx.at(i, j) += g.at(j, i);
        };
    return id;
}

int Tape::mean_abs(int a, int target) {
    const Tensor& va = val(a);
    const Tensor& vt = val(target);
    if (!va.same_shape(vt)) throw Error("mean_abs: shape mismatch");
    double n = static_cast<double>(va.numel());
    double s = 0.0;
    for (int64_t i = 0; i < va.numel(); ++i) s += std::abs(va.data[i] - vt.data[i]);
    bool rg = requires_grad(a);
    int id = push(Tensor::scalar(s / n), rg, nullptr);
    if (rg)
        nodes_.back().back = [a, target, id, n](Tape& t) {
            double g = t.grad(id).at(0) / n;
            const Tensor& va2 = t.val(a);
            const Tensor& vt2 = t.val(target);
            Tensor& ga = t.grad_mut(a);
            for (int64_t i = 0; i < va2.numel(); ++i) {
                double d = va2.data[i] - vt2.data[i];
                ga.data[i] += g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            }
        };
    return id;
}

int Tape::mean_sq(int a, int target) {
    const Tensor& va = val(a);
    const Tensor& vt = val(target);
    if (!va.same_shape(vt)) throw Error("mean_sq: shape mismatch");
    double n = static_cast<double>(va.numel());
    double s = 0.0;
    for (int64_t i = 0; i < va.numel(); ++i) {
        double d = va.data[i] - vt.data[i];
        s += d * d;
    }
    bool rg = requires_grad(a);
    int id = push(Tensor::scalar(s / n), rg, nullptr);
    if (rg)
        nodes_.back().back = [a, target, id, n](Tape& t) {
            double g = t.grad(id).at(0) * 2.0 / n;
            const Tensor& va2 = t.val(a);
            const Tensor& vt2 = t.val(target);
            Tensor& ga = t.grad_mut(a);
            for (int64_t i = 0; i < va2.numel(); ++i) ga.data[i] += g * (va2.data[i] - vt2.data[i]);
        };
    return id;
}

int Tape::cross_entropy_rows(int logits, std::vector<int> targets, std::vector<std::uint8_t> use) {
    const Tensor& vl = val(logits);
    if (vl.rank() != 2) throw Error("cross_entropy: rank");
    int r = vl.dim(0), c = vl.dim(1);
    if (static_cast<int>(targets.size()) != r || static_cast<int>(use.size()) != r)
        throw Error("cross_entropy: row count mismatch");
    auto probs = std::make_shared<Tensor>(std::vector<int>{r, c});
    kernels::softmax_rows(vl.data.data(), probs->data.data(), r, c);
    int count = 0;
    double s = 0.0;
    for (int i = 0; i < r; ++i) {
        if (!use[static_cast<size_t>(i)]) continue;
        if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= c)
            throw Error("cross_entropy: target out of range");
        ++count;
        s += -std::log(std::max(probs->at(i, targets[static_cast<size_t>(i)]), 1e-300));
    }
    double loss = count > 0 ? s / count : 0.0;
    bool rg = requires_grad(logits);
    auto tgt = std::make_shared<std::vector<int>>(std::move(targets));
    auto msk = std::make_shared<std::vector<std::uint8_t>>(std::move(use));
    int id = push(Tensor::scalar(loss), rg, nullptr);
    if (rg && count > 0)
        nodes_.back().back = [logits, id, r, c, probs, tgt, msk, count](Tape& t) {
            double g = t.grad(id).at(0) / count;
            Tensor& gl = t.grad_mut(logits);
            for (int i = 0; i < r; ++i) {
                if (!(*msk)[static_cast<size_t>(i)]) continue;
                for (int j = 0; j < c; ++j) {
                    double p = probs->at(i, j);
                    gl.at(i, j) += g * (p - (j == (*tgt)[static_cast<size_t>(i)] ? 1.0 : 0.0));
                }
            }
        };
    return id;
}

void Tape::backward(int root) {
    Node& rn = nodes_[static_cast<size_t>(root)];
    if (rn.val.numel() != 1) throw Error("backward: root must be scalar");
    for (Node& n : nodes_)
        if (n.rg) n.grad = Tensor::zeros(n.val.shape);
    rn.grad = Tensor::scalar(1.0);
    for (int i = root; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.rg && n.back) n.back(*this);
    }
}

int ParamStore::add(const std::string& name, Tensor t) {
    Entry e;
    e.name = name;
    e.m = Tensor::zeros(t.shape);
    e.v = Tensor::zeros(t.shape);
    e.value = std::move(t);
    entries.push_back(std::move(e));
    return static_cast<int>(entries.size()) - 1;
}

int ParamStore::index_of(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].name == name) return static_cast<int>(i);
    return -1;
}

BoundParams BoundParams::bind(Tape& tape, ParamStore& store, bool requires_grad) {
    BoundParams b;
    b.tape = &tape;
    b.store = &store;
    b.node_ids.reserve(store.entries.size());
    for (auto& e : store.entries) b.node_ids.push_back(tape.leaf(e.value, requires_grad));
    return b;
}

int BoundParams::node(const std::string& name) const {
    int i = store->index_of(name);
    if (i < 0) throw Error("unknown parameter: " + name);
    return node_ids[static_cast<size_t>(i)];
}

void adam_step(const BoundParams& bound, const AdamConfig& cfg, int64_t step) {
    double lr = cfg.lr;
    if (cfg.warmup > 0 && step < cfg.warmup) lr = cfg.lr * static_cast<double>(step) / cfg.warmup;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (size_t i = 0; i < bound.store->entries.size(); ++i) {
        auto& e = bound.store->entries[i];
        const Tensor& g = bound.tape->grad(bound.node_ids[i]);
        if (g.numel() == 0) continue;
        for (int64_t j = 0; j < e.value.numel(); ++j) {
            double gj = g.data[j];
            e.m.data[j] = cfg.beta1 * e.m.data[j] + (1.0 - cfg.beta1) * gj;
            e.v.data[j] = cfg.beta2 * e.v.data[j] + (1.0 - cfg.beta2) * gj * gj;
            double mh = e.m.data[j] / bc1;
            double vh = e.v.data[j] / bc2;
            e.value.data[j] -= lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

}  // namespace coma::nn
