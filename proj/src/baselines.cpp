#include "ntnsync/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ntnsync/phase_series.hpp"

namespace ntnsync {

std::int64_t diff_corr_toa(const IqBuffer& rx, const IqBuffer& replica, int lag,
                           std::int64_t search_lo, std::int64_t search_hi) {
    if (lag < 1) throw std::invalid_argument("diff_corr_toa: lag must be >= 1");
    if (search_hi < search_lo) throw std::invalid_argument("diff_corr_toa: empty search range");
    const std::int64_t n_rep = static_cast<std::int64_t>(replica.size());
    if (n_rep <= lag) throw std::invalid_argument("diff_corr_toa: replica shorter than lag");

    // C(d) = sum_n u(n+d) v(n) with u built once from rx and v from the
    // replica, which keeps the search at one complex multiply per term.
    const std::int64_t n_rx = static_cast<std::int64_t>(rx.size());
    std::vector<cdouble> u(static_cast<std::size_t>(std::max<std::int64_t>(0, n_rx - lag)));
    for (std::int64_t n = 0; n + lag < n_rx; ++n)
        u[static_cast<std::size_t>(n)] =
            rx.samples[static_cast<std::size_t>(n)] * std::conj(rx.samples[static_cast<std::size_t>(n + lag)]);
    std::vector<cdouble> v(static_cast<std::size_t>(n_rep - lag));
    for (std::int64_t n = 0; n + lag < n_rep; ++n)
        v[static_cast<std::size_t>(n)] =
            std::conj(replica.samples[static_cast<std::size_t>(n)]) * replica.samples[static_cast<std::size_t>(n + lag)];

    // rx index of replica sample 0 under hypothesis d.
    const std::int64_t align0 = replica.base_index - rx.base_index;
    double best_mag = -1.0;
    std::int64_t best_d = search_lo;
    for (std::int64_t d = search_lo; d <= search_hi; ++d) {
        const std::int64_t off = align0 + d;
        const std::int64_t n_lo = std::max<std::int64_t>(0, -off);
        const std::int64_t n_hi = std::min<std::int64_t>(static_cast<std::int64_t>(v.size()),
                                                         static_cast<std::int64_t>(u.size()) - off);
        cdouble acc{0.0, 0.0};
        const cdouble* up = u.data() + off + n_lo;
        const cdouble* vp = v.data() + n_lo;
        for (std::int64_t n = n_lo; n < n_hi; ++n, ++up, ++vp)
            acc += (*up) * (*vp);
        const double mag = std::norm(acc);
        if (mag > best_mag) {
            best_mag = mag;
            best_d = d;
        }
    }
    return best_d;
}

SdwtResult sdwt(const std::vector<double>& x, int levels) {
    if (levels < 1) throw std::invalid_argument("sdwt: levels must be >= 1");
    const std::size_t n = x.size();
    if (n < (static_cast<std::size_t>(1) << levels))
        throw std::invalid_argument("sdwt: series shorter than 2^levels");

    constexpr double kInvSqrt2 = 0.7071067811865475244;
    SdwtResult out;
    out.details.resize(static_cast<std::size_t>(levels));
    std::vector<double> approx(x);
    std::vector<double> next(n);
    for (int j = 0; j < levels; ++j) {
        const std::size_t step = static_cast<std::size_t>(1) << j;
        auto& detail = out.details[static_cast<std::size_t>(j)];
        detail.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double prev = i >= step ? approx[i - step] : 0.0;
            next[i] = kInvSqrt2 * (approx[i] + prev);
            detail[i] = kInvSqrt2 * (approx[i] - prev);
        }
        approx.swap(next);
    }
    out.approx = std::move(approx);
    return out;
}

std::pair<std::int64_t, double> cusum_detect(const std::vector<double>& x, const CusumConfig& cfg) {
    if (cfg.theta0 == cfg.theta1) throw std::invalid_argument("cusum_detect: theta0 must differ from theta1");
    if (cfg.sigma <= 0.0) throw std::invalid_argument("cusum_detect: sigma must be positive");
    const double gain = (cfg.theta1 - cfg.theta0) / (cfg.sigma * cfg.sigma);
    const double mid = 0.5 * (cfg.theta0 + cfg.theta1);

    // LLR of a change starting at k is the tail sum of z; scan from the end.
    double tail = 0.0;
    double best = -std::numeric_limits<double>::infinity();
    std::int64_t tau = static_cast<std::int64_t>(x.size()) - 1;
    for (std::int64_t k = static_cast<std::int64_t>(x.size()) - 1; k >= 0; --k) {
        tail += gain * (x[static_cast<std::size_t>(k)] - mid);
        if (tail >= best) {  // >= so ties resolve to the smallest k
            best = tail;
            tau = k;
        }
    }
    return {tau, best};
}

double dwt_cusum_toa(const IqBuffer& rx, const IqBuffer& replica, int levels, const CusumConfig* cfg) {
    const IqBuffer r = dechirp(rx, replica);
    std::vector<double> env(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) env[i] = std::abs(r.samples[i]);

    const SdwtResult bands = sdwt(env, levels);
    const std::vector<double>& smooth = bands.approx;

    CusumConfig used;
    if (cfg) {
        used = *cfg;
    } else {
        // Noise floor and signal level from quantiles of the smooth; the
        // pre-onset stretch can be a tiny fraction of the record, so the
        // floor comes from the extreme low tail and the level from the
        // median. Plain leading-segment averages fail when the onset falls
        // inside the leading segment.
        std::vector<double> sorted(smooth);
        std::sort(sorted.begin(), sorted.end());
        const double m0 = sorted[sorted.size() / 200];
        const double m1 = sorted[sorted.size() / 2];
        double var = 0.0;
        const std::size_t head = std::max<std::size_t>(8, smooth.size() / 10);
        double head_mean = 0.0;
        for (std::size_t i = 0; i < head; ++i) head_mean += smooth[i];
        head_mean /= static_cast<double>(head);
        for (std::size_t i = 0; i < head; ++i) var += (smooth[i] - head_mean) * (smooth[i] - head_mean);
        var /= static_cast<double>(head > 1 ? head - 1 : 1);
        used.theta0 = m0;
        used.theta1 = m1 == m0 ? m0 + 1.0 : m1;
        used.sigma = std::max(1e-3, std::sqrt(var));
        used.levels = levels;
    }

    const auto [tau, peak] = cusum_detect(smooth, used);
    (void)peak;
    // The causal level-L smooth averages the preceding 2^L samples, so the
    // detected mean change lags the envelope step by half the filter span.
    const double group_delay = 0.5 * (static_cast<double>(1 << levels) - 1.0);
    return static_cast<double>(tau) - group_delay +
           static_cast<double>(r.base_index - replica.base_index);
}

}  // namespace ntnsync
