#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "io.hpp"

namespace noisegen {

// Deterministic random stream: a named substream of a master seed.
//
// All stochastic behaviour in the library flows through RngStream so that a
// run is reproducible bit-for-bit from (seed, config) within one build.
// Normal draws use the Box-Muller transform with a fixed consumption
// discipline (exactly two engine draws per normal, no cached spare), which
// keeps stream state trivially serializable.
class RngStream {
public:
    RngStream() : eng_(0) {}
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t u64() { return eng_(); }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform in (0,1]; safe as a log() argument.
    double uniform_pos() { return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53; }

    // Standard normal via Box-Muller (cosine branch).
    double normal() {
        double u1 = uniform_pos();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n). Modulo reduction: bias < n/2^64, negligible
    // and deterministic.
    std::int64_t below(std::int64_t n) {
        if (n <= 0) throw std::invalid_argument("RngStream::below: n must be positive");
        return static_cast<std::int64_t>(eng_() % static_cast<std::uint64_t>(n));
    }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (is.fail()) throw IoError("corrupt RNG state string");
    }

    bool operator==(const RngStream& o) const { return eng_ == o.eng_; }

private:
    std::mt19937_64 eng_;
};

// Named substream derivation: independent streams for data sampling, noise
// synthesis, parameter init, etc., all pinned by the master seed.
inline RngStream derive_stream(std::uint64_t master_seed, std::string_view purpose) {
    return RngStream(splitmix64(master_seed ^ fnv1a64(purpose)));
}

}  // namespace noisegen
