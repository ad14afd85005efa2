#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ntnsync/common.hpp"

namespace ntnsync {

// Gaussian mean-change hypothesis pair for CUSUM: theta0 before the change,
// theta1 after, common std sigma. levels is the SWT depth used upstream.
struct CusumConfig {
    double theta0 = 0.0;
    double theta1 = 1.0;
    double sigma = 1.0;
    int levels = 8;
};

// Differential-correlation delay search: for each hypothesis d in
// [search_lo, search_hi] computes
//   C(d) = sum_n [rx(n+d) conj(rep(n))] conj[rx(n+d+lag) conj(rep(n+lag))]
// and returns the argmax of |C|. The differential product cancels a constant
// CFO, which is the point of the method. Offsets are relative to the
// replica's own placement. Throws on an empty search range.
std::int64_t diff_corr_toa(const IqBuffer& rx, const IqBuffer& replica, int lag,
                           std::int64_t search_lo, std::int64_t search_hi);

// Undecimated (a-trous) Haar transform with zero extension; every level has
// full input length, so shifting the input shifts every coefficient
// sequence by the same amount.
struct SdwtResult {
    std::vector<std::vector<double>> details;  // details[j], j = 0 .. levels-1
    std::vector<double> approx;                // coarsest smooth
};
SdwtResult sdwt(const std::vector<double>& x, int levels);

// Location of a single mean change: maximizes the log-likelihood ratio of
// "change starts at k" over k, i.e. argmax_k sum_{i>=k} (theta1-theta0)/sigma^2
// * (x_i - (theta0+theta1)/2). Returns (tau, peak LLR); a non-positive peak
// means no confident change.
std::pair<std::int64_t, double> cusum_detect(const std::vector<double>& x, const CusumConfig& cfg);

// S-DWT + CUSUM ToA baseline: dechirps, takes the magnitude envelope,
// decomposes, runs the mean-change CUSUM on the coarsest smooth (corrected
// for the causal filter delay). With a null cfg, theta0/theta1/sigma are
// estimated from the leading and trailing 10% of the coefficients. Returns
// the delay estimate in samples relative to the replica placement.
double dwt_cusum_toa(const IqBuffer& rx, const IqBuffer& replica, int levels = 8,
                     const CusumConfig* cfg = nullptr);

}  // namespace ntnsync
