#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace gssplat {

// Process exit codes used by the CLI and surfaced by library errors.
enum class ErrorKind { Usage = 2, DataFormat = 3, Numerical = 4 };

class GsError : public std::runtime_error {
public:
    GsError(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }
    int exit_code() const { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

inline GsError usage_error(const std::string& msg) { return GsError(ErrorKind::Usage, msg); }
inline GsError data_error(const std::string& msg) { return GsError(ErrorKind::DataFormat, msg); }
inline GsError numeric_error(const std::string& msg) { return GsError(ErrorKind::Numerical, msg); }

// Broken API contract (caller bug), distinct from recoverable data errors.
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// PCG32. Deterministic across platforms, unlike the std distributions.
class Rng {
public:
    explicit Rng(uint64_t seed = 0x853c49e6748fea9bULL, uint64_t stream = 0xda3e39cb94b95bdbULL) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((~rot + 1u) & 31u));
    }

    // Uniform in [0, 1).
    double uniform() { return next_u32() * (1.0 / 4294967296.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint32_t uniform_int(uint32_t n) { return n == 0 ? 0 : next_u32() % n; }

    // Standard normal via Box-Muller (no caching, deterministic call count).
    double normal() {
        double u1 = 0.0;
        while (u1 <= 1e-12) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    Rng fork(uint64_t salt) { return Rng(static_cast<uint64_t>(next_u32()) ^ (salt * 0x9e3779b97f4a7c15ULL), salt); }

private:
    uint64_t state_;
    uint64_t inc_;
};

// Worker-thread control. 0 = auto (hardware concurrency, capped by
// GSSPLAT_THREADS when set).
void set_worker_threads(int n);
int worker_threads();

// Static-chunked fork/join loop. Chunks are a pure function of (n, threads),
// so any per-chunk output placement is reproducible. The caller's fn must
// write disjoint state per index.
void parallel_for(int64_t n, const std::function<void(int64_t begin, int64_t end)>& fn);

}  // namespace gssplat
