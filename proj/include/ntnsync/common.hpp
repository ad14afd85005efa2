#pragma once

#include <complex>
#include <cmath>
#include <cstdint>
#include <vector>

namespace ntnsync {

using cdouble = std::complex<double>;

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

// Wrap an angle in radians to [-pi, pi).
inline double wrap_to_pi(double x) {
    double w = std::remainder(x, kTwoPi);
    if (w >= kPi) w -= kTwoPi;
    return w;
}

// Wrap a value in cycles to (-0.5, 0.5].
inline double wrap_half_cycle(double c) {
    double w = c - std::floor(c + 0.5);
    if (w <= -0.5) w += 1.0;
    return w;
}

// Complex baseband sample run with an absolute sample-index origin. All
// signals in the pipeline share one 1.92 Msps timeline; base_index anchors
// a buffer on it so delayed/trimmed copies stay aligned.
struct IqBuffer {
    std::vector<cdouble> samples;
    std::int64_t base_index = 0;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    std::int64_t end_index() const { return base_index + static_cast<std::int64_t>(samples.size()); }
};

}  // namespace ntnsync
