#include "ntnsync/phase_series.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ntnsync {

IqBuffer dechirp(const IqBuffer& rx, const IqBuffer& replica) {
    const std::int64_t lo = std::max(rx.base_index, replica.base_index);
    const std::int64_t hi = std::min(rx.end_index(), replica.end_index());
    if (hi <= lo) throw std::invalid_argument("dechirp: buffers do not overlap");

    IqBuffer out;
    out.base_index = lo;
    out.samples.resize(static_cast<std::size_t>(hi - lo));
    const cdouble* a = rx.samples.data() + (lo - rx.base_index);
    const cdouble* b = replica.samples.data() + (lo - replica.base_index);
    for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] = a[i] * std::conj(b[i]);
    return out;
}

PhaseSeries extract_phase(const IqBuffer& r, int smooth_window) {
    if (smooth_window < 1 || smooth_window % 2 == 0)
        throw std::invalid_argument("extract_phase: smooth_window must be odd and >= 1");
    if (r.size() < static_cast<std::size_t>(smooth_window))
        throw std::invalid_argument("extract_phase: buffer shorter than smoothing window");

    const std::size_t out_len = r.size() - static_cast<std::size_t>(smooth_window) + 1;
    PhaseSeries ps;
    ps.base_index = r.base_index + (smooth_window - 1) / 2;
    ps.phase.resize(out_len);

    if (smooth_window == 1) {
        for (std::size_t i = 0; i < out_len; ++i) {
            double a = std::arg(r.samples[i]);
            if (a >= kPi) a -= kTwoPi;
            ps.phase[i] = a;
        }
        return ps;
    }

    // Running sum with periodic exact refresh to keep rounding drift far
    // below the wrap detection scale on long records.
    cdouble acc{0.0, 0.0};
    for (int i = 0; i < smooth_window; ++i) acc += r.samples[static_cast<std::size_t>(i)];
    constexpr std::size_t kRefresh = 8192;
    for (std::size_t i = 0;; ++i) {
        double a = std::arg(acc);
        if (a >= kPi) a -= kTwoPi;
        ps.phase[i] = a;
        if (i + 1 == out_len) break;
        if ((i + 1) % kRefresh == 0) {
            acc = {0.0, 0.0};
            for (int j = 0; j < smooth_window; ++j)
                acc += r.samples[i + 1 + static_cast<std::size_t>(j)];
        } else {
            acc += r.samples[i + static_cast<std::size_t>(smooth_window)] - r.samples[i];
        }
    }
    return ps;
}

std::vector<PhaseSeries> segment_by_sg(const PhaseSeries& ps, const PreambleConfig& cfg,
                                       int guard, std::int64_t replica_shift) {
    if (guard < 0) throw std::invalid_argument("segment_by_sg: guard must be >= 0");
    const int sg_len = cfg.sg_len();
    std::vector<PhaseSeries> segments;
    segments.reserve(static_cast<std::size_t>(cfg.num_sg()));
    for (int m = 0; m < cfg.num_sg(); ++m) {
        const std::int64_t sg_start = cfg.n_start + replica_shift + static_cast<std::int64_t>(m) * sg_len;
        const std::int64_t lo = std::max(ps.base_index, sg_start + guard);
        const std::int64_t hi = std::min(ps.end_index(), sg_start + sg_len - guard);
        if (hi <= lo) continue;
        PhaseSeries seg;
        seg.base_index = lo;
        seg.sg_len = sg_len;
        seg.phase.assign(ps.phase.begin() + (lo - ps.base_index), ps.phase.begin() + (hi - ps.base_index));
        segments.push_back(std::move(seg));
    }
    return segments;
}

}  // namespace ntnsync
