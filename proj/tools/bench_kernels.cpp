// Throughput comparison between the serial reference kernels and the OpenMP
// variants, with an equality check on every case.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "coma/common.hpp"
#include "coma/kernels.hpp"

using namespace coma;
namespace k = coma::kernels;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::vector<double> random_vec(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.gauss();
    return v;
}

template <typename F>
double time_kernel(F&& fn, int reps) {
    fn();  // warm-up
    double t0 = now_ms();
    for (int i = 0; i < reps; ++i) fn();
    return (now_ms() - t0) / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, bool equal) {
    std::printf("%-22s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   %s\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms, equal ? "outputs equal" : "OUTPUTS DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
    bool quick = argc > 1 && std::string(argv[1]) == "--quick";
    int scale = quick ? 1 : 4;
    Rng rng(42);

    {
        int m = 128 * scale, kk = 128 * scale, n = 128 * scale;
        auto a = random_vec(static_cast<size_t>(m) * kk, rng);
        auto b = random_vec(static_cast<size_t>(kk) * n, rng);
        std::vector<double> c1(static_cast<size_t>(m) * n), c2 = c1;
        k::set_mode(k::Mode::Serial);
        double ts = time_kernel([&] { k::gemm(a.data(), b.data(), c1.data(), m, kk, n); }, 3);
        k::set_mode(k::Mode::Parallel);
        double tp = time_kernel([&] { k::gemm(a.data(), b.data(), c2.data(), m, kk, n); }, 3);
        report("gemm", ts, tp, std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);
    }
    {
        int cin = 64 * scale, t = 256, cout = 64 * scale, ks = 3;
        auto x = random_vec(static_cast<size_t>(cin) * t, rng);
        auto w = random_vec(static_cast<size_t>(cout) * cin * ks, rng);
        auto bias = random_vec(static_cast<size_t>(cout), rng);
        int tout = t;
        std::vector<double> y1(static_cast<size_t>(cout) * tout), y2 = y1;
        k::set_mode(k::Mode::Serial);
        double ts = time_kernel(
            [&] { k::conv1d_forward(x.data(), cin, t, w.data(), bias.data(), cout, ks, 1, 1, y1.data(), tout); },
            3);
        k::set_mode(k::Mode::Parallel);
        double tp = time_kernel(
            [&] { k::conv1d_forward(x.data(), cin, t, w.data(), bias.data(), cout, ks, 1, 1, y2.data(), tout); },
            3);
        report("conv1d_forward", ts, tp, std::memcmp(y1.data(), y2.data(), y1.size() * 8) == 0);
    }
    {
        int rows = 2048 * scale, cols = 512;
        auto x = random_vec(static_cast<size_t>(rows) * cols, rng);
        std::vector<double> y1(x.size()), y2(x.size());
        k::set_mode(k::Mode::Serial);
        double ts = time_kernel([&] { k::softmax_rows(x.data(), y1.data(), rows, cols); }, 5);
        k::set_mode(k::Mode::Parallel);
        double tp = time_kernel([&] { k::softmax_rows(x.data(), y2.data(), rows, cols); }, 5);
        report("softmax_rows", ts, tp, std::memcmp(y1.data(), y2.data(), y1.size() * 8) == 0);
    }
    {
        int n = 4096 * scale, kk = 512, d = 64;
        auto q = random_vec(static_cast<size_t>(n) * d, rng);
        auto c = random_vec(static_cast<size_t>(kk) * d, rng);
        std::vector<int> i1(static_cast<size_t>(n)), i2(static_cast<size_t>(n));
        k::set_mode(k::Mode::Serial);
        double ts = time_kernel([&] { k::nearest_codes(q.data(), n, c.data(), kk, d, i1.data()); }, 3);
        k::set_mode(k::Mode::Parallel);
        double tp = time_kernel([&] { k::nearest_codes(q.data(), n, c.data(), kk, d, i2.data()); }, 3);
        report("nearest_codes", ts, tp, i1 == i2);
    }
    std::printf("threads available: %d\n", k::thread_count());
    return 0;
}
