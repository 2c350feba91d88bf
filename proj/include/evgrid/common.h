// evgrid: event-camera intrinsic calibration from circle-grid targets
// SPDX-License-Identifier: BSD-3-Clause

#ifndef EVGRID_COMMON_H
#define EVGRID_COMMON_H

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ns_evgrid {

/**
 * all recoverable failures of the library are reported through this exception type; "none"
 * outcomes that are part of normal operation (no grid found, degenerate fit) use std::optional
 */
class Error : public std::runtime_error {
public:
    explicit Error(const std::string &msg)
        : std::runtime_error(msg) {}
};

/**
 * SplitMix64 generator. Small state, so it can be instantiated per event / per trial and
 * still produce identical streams on every platform (std distributions are not portable).
 */
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed)
        : _state(seed) {}

    std::uint64_t Next() {
        std::uint64_t z = (_state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double Uniform() { return static_cast<double>(Next() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::uint64_t Below(std::uint64_t n) { return n == 0 ? 0 : Next() % n; }

    // standard normal via Box-Muller, one value per call
    double Gaussian();

    static std::uint64_t Mix(std::uint64_t a, std::uint64_t b) {
        SplitMix64 g(a ^ (b * 0xD1B54A32D192ED03ULL));
        return g.Next();
    }

private:
    std::uint64_t _state;
};

}  // namespace ns_evgrid

#endif
