#pragma once

#include <cstdint>

namespace s3net {

// Deterministic splitmix64 generator. All randomness in the project goes
// through this so sequences are reproducible across platforms and standard
// library implementations, and so generator state serializes as one word.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Uniform integer in [0, n). Modulo bias is below 2^-50 for the tiny n
    // used here.
    int uniform_int(int n);

    // Box-Muller; draws exactly two words per call so state stays a pure
    // function of the call count.
    double normal(double mean = 0.0, double stddev = 1.0);

private:
    std::uint64_t state_;
};

} // namespace s3net
