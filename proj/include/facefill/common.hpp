#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace facefill {

using real = double;

// Error taxonomy. Every failure mode in the public API maps onto one of
// these so callers (and tests) can distinguish bad configuration from
// bad runtime state.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};
struct CapacityError : std::runtime_error {
    explicit CapacityError(const std::string& msg) : std::runtime_error("capacity error: " + msg) {}
};
struct IngestionError : std::runtime_error {
    explicit IngestionError(const std::string& msg) : std::runtime_error("ingestion error: " + msg) {}
};
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error("checkpoint error: " + msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

// Small deterministic PRNG (splitmix64). Hand-rolled so that streams are
// bit-identical across platforms and standard library versions; every
// random decision in the project flows through this.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(mix(seed ^ 0x8a5cd789635d2dffULL)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0,1).
    real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller; both draws consumed every call, no cached spare.
    real normal() {
        real u1 = uniform();
        real u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    real normal(real mean, real stddev) { return mean + stddev * normal(); }

    // Stateless stream derivation: a new independent seed from (seed, stream).
    // Used so that per-step / per-sample randomness is a pure function of
    // indices, which is what makes checkpoint resume bit-exact.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        return mix(seed + 0x9e3779b97f4a7c15ULL * (stream + 1));
    }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    uint64_t state_;
};

// Deterministic-mode toggle. When FACEFILL_DETERMINISTIC is unset or "1",
// thread counts are pinned at startup so repeated runs on the same machine
// reproduce results bit-exactly. "0" lifts the pin.
bool deterministic_mode();

// Number of worker threads used by heavy kernels (GEMM). Honors
// FACEFILL_THREADS when set, otherwise hardware concurrency.
int worker_threads();

// Applies the policy above to the OpenMP runtime; called by every training
// and evaluation entry point, harmless to call repeatedly.
void configure_threading();

}  // namespace facefill
