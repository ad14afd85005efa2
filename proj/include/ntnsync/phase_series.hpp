#pragma once

#include <cstdint>
#include <vector>

#include "ntnsync/common.hpp"
#include "ntnsync/preamble.hpp"

namespace ntnsync {

// Wrapped phase of the dechirped signal. For a preamble with residual CFO
// the series is a sawtooth: slope 2*pi*f_off, period f_s/cfo samples, and a
// per-SG intercept set by the SG subcarrier and the delay.
struct PhaseSeries {
    std::vector<double> phase;   // radians in [-pi, pi)
    std::int64_t base_index = 0;
    int sg_len = 0;

    std::size_t size() const { return phase.size(); }
    std::int64_t end_index() const { return base_index + static_cast<std::int64_t>(phase.size()); }
};

// r(n) = rx(n) * conj(replica(n)) over the overlap of the two buffers.
// Throws when the overlap is empty.
IqBuffer dechirp(const IqBuffer& rx, const IqBuffer& replica);

// Complex moving average over an odd window, then the per-sample argument.
// Averaging is done on I/Q, not on angles, so wrap points survive smoothing;
// for a pure tone the filter has real gain and leaves the phase untouched.
// base_index advances by (window-1)/2.
PhaseSeries extract_phase(const IqBuffer& r, int smooth_window);

// One segment per symbol group, trimmed by `guard` samples at both ends to
// keep delay-displaced neighbours out. `replica_shift` moves the nominal SG
// boundaries (used after coarse delay compensation).
std::vector<PhaseSeries> segment_by_sg(const PhaseSeries& ps, const PreambleConfig& cfg,
                                       int guard, std::int64_t replica_shift = 0);

}  // namespace ntnsync
