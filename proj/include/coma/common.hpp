#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace coma {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or truncated binary/text artifacts.
struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Located parser failure (1-based line/column; 0 when not applicable).
struct ParseError : Error {
    int line = 0;
    int col = 0;
    ParseError(const std::string& msg, int line_ = 0, int col_ = 0)
        : Error(line_ > 0 ? msg + " (line " + std::to_string(line_) + ", col " + std::to_string(col_) + ")" : msg),
          line(line_),
          col(col_) {}
};

struct ProviderError : Error {
    using Error::Error;
};

// Deterministic RNG wrapper. All sampling helpers are written out so results
// do not depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    int uniform_int(int n) { return static_cast<int>(uniform() * static_cast<double>(n)); }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; caches the second deviate.
    double gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.28318530717958647692 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used for trace digests and the offline text embedder.
inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace coma
