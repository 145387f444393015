#include "coma/kernels.hpp"

#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace coma::kernels {

namespace {
Mode g_mode = Mode::Parallel;
}

Mode mode() { return g_mode; }
void set_mode(Mode m) { g_mode = m; }

int thread_count() {
#ifdef _OPENMP
    return g_mode == Mode::Parallel ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

namespace {

// Below this many multiply-adds the OpenMP dispatch overhead dominates, so
// small problems take the serial path in either mode.
constexpr int64_t kParallelWorkFloor = 1 << 16;

inline bool parallel(int64_t work) {
#ifdef _OPENMP
    return g_mode == Mode::Parallel && work >= kParallelWorkFloor;
#else
    (void)work;
    return false;
#endif
}

void gemm_rows(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate,
               int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
        double* ci = c + static_cast<int64_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void gemm_nt_rows(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate,
                  int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
        const double* ai = a + static_cast<int64_t>(i) * k;
        double* ci = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<int64_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + s : s;
        }
    }
}

void gemm_tn_rows(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate,
                  int r0, int r1) {
    // c[k,n]; each output row r owned by one thread, inner sum over m is serial.
    for (int r = r0; r < r1; ++r) {
        double* cr = c + static_cast<int64_t>(r) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) cr[j] = 0.0;
        for (int i = 0; i < m; ++i) {
            double av = a[static_cast<int64_t>(i) * k + r];
            if (av == 0.0) continue;
            const double* bi = b + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) cr[j] += av * bi[j];
        }
    }
}

}  // namespace

void gemm(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (parallel(static_cast<int64_t>(m) * k * n)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) gemm_rows(a, b, c, m, k, n, accumulate, i, i + 1);
    } else {
        gemm_rows(a, b, c, m, k, n, accumulate, 0, m);
    }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (parallel(static_cast<int64_t>(m) * k * n)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) gemm_nt_rows(a, b, c, m, k, n, accumulate, i, i + 1);
    } else {
        gemm_nt_rows(a, b, c, m, k, n, accumulate, 0, m);
    }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (parallel(static_cast<int64_t>(m) * k * n)) {
#pragma omp parallel for schedule(static)
        for (int r = 0; r < k; ++r) gemm_tn_rows(a, b, c, m, k, n, accumulate, r, r + 1);
    } else {
        gemm_tn_rows(a, b, c, m, k, n, accumulate, 0, k);
    }
}

namespace {

inline void conv1d_out_channel(const double* x, int cin, int t, const double* w, const double* bias,
                               int ksize, int stride, int pad, double* y, int tout, int co) {
    const double* wc = w + static_cast<int64_t>(co) * cin * ksize;
    double* yc = y + static_cast<int64_t>(co) * tout;
    double b = bias ? bias[co] : 0.0;
    for (int o = 0; o < tout; ++o) {
        double s = b;
        int base = o * stride - pad;
        for (int ci = 0; ci < cin; ++ci) {
            const double* xc = x + static_cast<int64_t>(ci) * t;
            const double* wk = wc + static_cast<int64_t>(ci) * ksize;
            for (int j = 0; j < ksize; ++j) {
                int ti = base + j;
                if (ti >= 0 && ti < t) s += wk[j] * xc[ti];
            }
        }
        yc[o] = s;
    }
}

}  // namespace

void conv1d_forward(const double* x, int cin, int t, const double* w, const double* bias, int cout,
                    int ksize, int stride, int pad, double* y, int tout) {
    if (parallel(static_cast<int64_t>(cout) * tout * cin * ksize)) {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co)
            conv1d_out_channel(x, cin, t, w, bias, ksize, stride, pad, y, tout, co);
    } else {
        for (int co = 0; co < cout; ++co)
            conv1d_out_channel(x, cin, t, w, bias, ksize, stride, pad, y, tout, co);
    }
}

namespace {

inline void conv1d_dx_channel(const double* dy, int cout, int tout, const double* w, int cin,
                              int ksize, int stride, int pad, double* dx, int t, int ci) {
    double* dxc = dx + static_cast<int64_t>(ci) * t;
    for (int co = 0; co < cout; ++co) {
        const double* wk = w + (static_cast<int64_t>(co) * cin + ci) * ksize;
        const double* dyc = dy + static_cast<int64_t>(co) * tout;
        for (int o = 0; o < tout; ++o) {
            double g = dyc[o];
            if (g == 0.0) continue;
            int base = o * stride - pad;
            for (int j = 0; j < ksize; ++j) {
                int ti = base + j;
                if (ti >= 0 && ti < t) dxc[ti] += wk[j] * g;
            }
        }
    }
}

inline void conv1d_dw_channel(const double* x, int cin, int t, const double* dy, int cout, int tout,
                              int ksize, int stride, int pad, double* dw, double* db, int co) {
    const double* dyc = dy + static_cast<int64_t>(co) * tout;
    double* dwc = dw + static_cast<int64_t>(co) * cin * ksize;
    for (int ci = 0; ci < cin; ++ci) {
        const double* xc = x + static_cast<int64_t>(ci) * t;
        double* wk = dwc + static_cast<int64_t>(ci) * ksize;
        for (int j = 0; j < ksize; ++j) {
            double s = 0.0;
            for (int o = 0; o < tout; ++o) {
                int ti = o * stride - pad + j;
                if (ti >= 0 && ti < t) s += dyc[o] * xc[ti];
            }
            wk[j] += s;
        }
    }
    if (db) {
        double s = 0.0;
        for (int o = 0; o < tout; ++o) s += dyc[o];
        db[co] += s;
    }
}

}  // namespace

void conv1d_grad_input(const double* dy, int cout, int tout, const double* w, int cin, int ksize,
                       int stride, int pad, double* dx, int t) {
    if (parallel(static_cast<int64_t>(cout) * tout * cin * ksize)) {
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < cin; ++ci)
            conv1d_dx_channel(dy, cout, tout, w, cin, ksize, stride, pad, dx, t, ci);
    } else {
        for (int ci = 0; ci < cin; ++ci)
            conv1d_dx_channel(dy, cout, tout, w, cin, ksize, stride, pad, dx, t, ci);
    }
}

void conv1d_grad_weight(const double* x, int cin, int t, const double* dy, int cout, int tout,
                        int ksize, int stride, int pad, double* dw, double* db) {
    if (parallel(static_cast<int64_t>(cout) * tout * cin * ksize)) {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co)
            conv1d_dw_channel(x, cin, t, dy, cout, tout, ksize, stride, pad, dw, db, co);
    } else {
        for (int co = 0; co < cout; ++co)
            conv1d_dw_channel(x, cin, t, dy, cout, tout, ksize, stride, pad, dw, db, co);
    }
}

namespace {

inline void softmax_row(const double* x, double* y, int cols, const std::uint8_t* mask) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j)
        if ((!mask || mask[j]) && x[j] > mx) mx = x[j];
    if (mx == -std::numeric_limits<double>::infinity()) {
        for (int j = 0; j < cols; ++j) y[j] = 0.0;
        return;
    }
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
        if (!mask || mask[j]) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        } else {
            y[j] = 0.0;
        }
    }
    double inv = 1.0 / sum;
    for (int j = 0; j < cols; ++j) y[j] *= inv;
}

}  // namespace

void softmax_rows(const double* x, double* y, int rows, int cols) {
    if (parallel(static_cast<int64_t>(rows) * cols)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < rows; ++i)
            softmax_row(x + static_cast<int64_t>(i) * cols, y + static_cast<int64_t>(i) * cols, cols,
                        nullptr);
    } else {
        for (int i = 0; i < rows; ++i)
            softmax_row(x + static_cast<int64_t>(i) * cols, y + static_cast<int64_t>(i) * cols, cols,
                        nullptr);
    }
}

void softmax_masked_rows(const double* x, const std::uint8_t* mask, double* y, int rows, int cols) {
    if (parallel(static_cast<int64_t>(rows) * cols)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < rows; ++i)
            softmax_row(x + static_cast<int64_t>(i) * cols, y + static_cast<int64_t>(i) * cols, cols,
                        mask + static_cast<int64_t>(i) * cols);
    } else {
        for (int i = 0; i < rows; ++i)
            softmax_row(x + static_cast<int64_t>(i) * cols, y + static_cast<int64_t>(i) * cols, cols,
                        mask + static_cast<int64_t>(i) * cols);
    }
}

namespace {

inline int nearest_one(const double* q, const double* codes, int k, int d) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
        const double* cv = codes + static_cast<int64_t>(c) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
            double diff = q[j] - cv[j];
            s += diff * diff;
        }
        if (s < best_d) {
            best_d = s;
            best = c;
        }
    }
    return best;
}

}  // namespace

void nearest_codes(const double* queries, int n, const double* codes, int k, int d, int* out) {
    if (parallel(static_cast<int64_t>(n) * k * d)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) out[i] = nearest_one(queries + static_cast<int64_t>(i) * d, codes, k, d);
    } else {
        for (int i = 0; i < n; ++i) out[i] = nearest_one(queries + static_cast<int64_t>(i) * d, codes, k, d);
    }
}

}  // namespace coma::kernels
