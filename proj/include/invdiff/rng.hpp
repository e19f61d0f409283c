#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string_view>

namespace invdiff {

// Deterministic RNG. All randomness in the pipeline flows from a config
// seed through named substreams (stage name -> independent generator), so
// reruns with the same config are bit-identical. Normal draws use
// Box-Muller on top of splitmix64 output; no libstdc++ distributions are
// involved, keeping the stream stable across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // warm up so that small seeds decorrelate quickly
        next();
        next();
    }

    // Substream for a pipeline stage: mixes the stage name into the seed.
    static Rng stream(std::uint64_t seed, std::string_view stage);

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1) with 53 bits
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // uniform integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi);

    double normal();

    Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used for stage names and config hashing.
std::uint64_t fnv1a(std::string_view s);

} // namespace invdiff
