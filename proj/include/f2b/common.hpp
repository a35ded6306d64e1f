// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace f2b {

// Process exit codes used by the CLI; library errors carry the matching code
// so commands stay thin.
enum class exit_code : int {
    ok = 0,
    usage = 2,
    data = 3,
    numeric = 4,
    io = 5,
};

struct error : std::runtime_error {
    error(exit_code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
    exit_code code;
};

struct dim_error : error {
    explicit dim_error(const std::string& m) : error(exit_code::usage, "dimension error: " + m) {}
};
struct contract_error : error {
    explicit contract_error(const std::string& m) : error(exit_code::usage, "contract error: " + m) {}
};
struct usage_error : error {
    explicit usage_error(const std::string& m) : error(exit_code::usage, "usage error: " + m) {}
};
struct data_error : error {
    explicit data_error(const std::string& m) : error(exit_code::data, "data error: " + m) {}
};
struct vocab_error : error {
    explicit vocab_error(const std::string& m) : error(exit_code::data, "vocabulary error: " + m) {}
};
struct lookup_error : error {
    explicit lookup_error(const std::string& m) : error(exit_code::data, "lookup error: " + m) {}
};
struct numeric_error : error {
    explicit numeric_error(const std::string& m) : error(exit_code::numeric, "numeric error: " + m) {}
};
struct io_error : error {
    explicit io_error(const std::string& m) : error(exit_code::io, "I/O error: " + m) {}
};
struct corruption_error : error {
    explicit corruption_error(const std::string& m) : error(exit_code::io, "corruption error: " + m) {}
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// All randomness in the project flows through seeded mt19937_64 streams.
// Distinct subsystems derive their own stream from (seed, tag) so adding a
// consumer never shifts another one's sequence.
inline std::mt19937_64 seeded_rng(uint64_t seed, uint64_t stream_tag = 0) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(stream_tag + 1)));
}

inline double uniform01(std::mt19937_64& rng) {
    // 53-bit mantissa resolution, platform-stable (no distribution objects).
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double normal01(std::mt19937_64& rng) {
    // Box-Muller on explicit uniforms; std::normal_distribution is not
    // guaranteed to produce identical streams across standard libraries.
    double u1 = uniform01(rng);
    double u2 = uniform01(rng);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717958647692 * u2);
}

// Uniform integer in [0, n) without modulo bias.
inline uint64_t uniform_index(std::mt19937_64& rng, uint64_t n) {
    if (n == 0) throw contract_error("uniform_index: empty range");
    uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
    uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

}  // namespace f2b
