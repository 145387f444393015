#pragma once

#include <cstdint>

namespace coma::kernels {

// Every kernel below has a serial reference implementation and an OpenMP
// variant. Parallel loops split over independent output elements only, so the
// floating-point accumulation order of each output is identical in both modes
// and results are bitwise equal. The serial path is kept as the test oracle;
// tools/coma-bench compares throughput of the two.
enum class Mode { Serial, Parallel };

Mode mode();
void set_mode(Mode m);
int thread_count();

// c[m,n] = a[m,k] * b[k,n]; accumulate adds into c instead of overwriting.
void gemm(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

// c[m,n] = a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

// c[k,n] = a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

// 1-D convolution over channel-major data: x[cin][t], w[cout][cin][ksize],
// y[cout][tout] with tout = (t + 2*pad - ksize)/stride + 1. bias may be null.
void conv1d_forward(const double* x, int cin, int t, const double* w, const double* bias, int cout,
                    int ksize, int stride, int pad, double* y, int tout);

// dx[cin][t] += accumulated gradient from dy[cout][tout].
void conv1d_grad_input(const double* dy, int cout, int tout, const double* w, int cin, int ksize,
                       int stride, int pad, double* dx, int t);

// dw[cout][cin][ksize] += x (x) dy; db[cout] += row sums of dy (db may be null).
void conv1d_grad_weight(const double* x, int cin, int t, const double* dy, int cout, int tout,
                        int ksize, int stride, int pad, double* dw, double* db);

// Row-wise softmax; mask rows share x's layout, zero entries are excluded.
// A fully masked row yields all zeros.
void softmax_rows(const double* x, double* y, int rows, int cols);
void softmax_masked_rows(const double* x, const std::uint8_t* mask, double* y, int rows, int cols);

// For each query row, index of the code row with minimal squared Euclidean
// distance; ties resolve to the lowest index.
void nearest_codes(const double* queries, int n, const double* codes, int k, int d, int* out);

}  // namespace coma::kernels
