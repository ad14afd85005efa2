#include "ntnsync/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ntnsync/rng.hpp"

namespace ntnsync {

void TdlcProfile::validate() const {
    if (taps.empty()) throw std::invalid_argument("TdlcProfile needs at least one tap");
    double total = 0.0;
    for (const auto& tap : taps) {
        if (tap.delay_samples < 0) throw std::invalid_argument("tap delay must be >= 0");
        if (tap.avg_power < 0.0) throw std::invalid_argument("tap power must be >= 0");
        total += tap.avg_power;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("tap powers must sum to 1");
}

int TdlcProfile::max_delay() const {
    int d = 0;
    for (const auto& tap : taps) d = std::max(d, tap.delay_samples);
    return d;
}

TdlcProfile TdlcProfile::default_profile() {
    return TdlcProfile{{{0, 0.95, true}, {2, 0.035, false}, {5, 0.015, false}}};
}

IqBuffer apply_impairments(const IqBuffer& x, const ImpairmentConfig& imp,
                           const TdlcProfile* profile, const ChannelOptions& opts) {
    if (x.empty()) throw std::invalid_argument("apply_impairments: empty input");
    if (imp.toa_samples < 0.0 || imp.toa_samples > opts.max_toa_samples)
        throw std::invalid_argument("toa_samples outside the configured observation window");
    const bool tdlc = imp.channel == ChannelType::TdlC;
    if (tdlc != (profile != nullptr))
        throw std::invalid_argument("TdlC profile must be present exactly when channel is TdlC");
    if (tdlc) profile->validate();

    static const TdlcProfile kAwgnProfile{{{0, 1.0, true}}};
    const TdlcProfile& prof = tdlc ? *profile : kAwgnProfile;

    const double delay = imp.toa_samples;
    const std::int64_t delay_int = static_cast<std::int64_t>(std::floor(delay));
    const std::int64_t len_x = static_cast<std::int64_t>(x.size());
    const std::int64_t out_len =
        len_x + static_cast<std::int64_t>(std::ceil(opts.max_toa_samples)) + prof.max_delay() + opts.pad_tail;

    IqBuffer out;
    out.base_index = x.base_index;
    out.samples.assign(static_cast<std::size_t>(out_len), cdouble{0.0, 0.0});

    // Per-(tap, SG) complex gains, pregenerated in a fixed order so output is
    // independent of traversal details.
    const int sg_len = opts.sg_len > 0 ? opts.sg_len : static_cast<int>(len_x);
    const int num_sg = static_cast<int>((len_x + sg_len - 1) / sg_len);
    Rng fading_rng = Rng::derive(imp.seed, 0xFADEULL);
    std::vector<std::vector<cdouble>> gains(prof.taps.size());
    for (std::size_t t = 0; t < prof.taps.size(); ++t) {
        const auto& tap = prof.taps[t];
        gains[t].resize(static_cast<std::size_t>(num_sg));
        for (int m = 0; m < num_sg; ++m) {
            gains[t][static_cast<std::size_t>(m)] =
                tap.los ? cdouble{std::sqrt(tap.avg_power), 0.0} : fading_rng.cgaussian(tap.avg_power);
        }
    }

    // Phase advances are computed in cycles with n in samples, so the Hz
    // fields normalize by fs (CFO) and fs^2 (Doppler rate).
    const double f_cyc = imp.cfo_hz / opts.sample_rate;
    const double alpha_cyc = imp.doppler_rate_hz_per_s / (opts.sample_rate * opts.sample_rate);

    for (std::size_t t = 0; t < prof.taps.size(); ++t) {
        const int tap_delay = prof.taps[t].delay_samples;
        for (std::int64_t j = 0; j < len_x; ++j) {
            const std::int64_t n = j + delay_int + tap_delay;  // output position
            const double u = static_cast<double>(n) - delay - tap_delay;  // exact signal time
            double cycles = f_cyc * u + 0.5 * alpha_cyc * u * u;
            cycles -= std::floor(cycles);
            const int m = std::min<int>(num_sg - 1, static_cast<int>(j / sg_len));
            out.samples[static_cast<std::size_t>(n)] +=
                gains[t][static_cast<std::size_t>(m)] * std::polar(1.0, kTwoPi * cycles) *
                x.samples[static_cast<std::size_t>(j)];
        }
    }

    if (std::isfinite(imp.snr_db)) {
        const double sigma2 = std::pow(10.0, -imp.snr_db / 10.0);
        Rng noise_rng = Rng::derive(imp.seed, 0x0153ULL);
        for (auto& s : out.samples) s += noise_rng.cgaussian(sigma2);
    }
    return out;
}

double measure_snr(const IqBuffer& clean, const IqBuffer& noisy) {
    if (clean.base_index != noisy.base_index || clean.size() != noisy.size())
        throw std::invalid_argument("measure_snr: buffers must share base and length");
    double p_sig = 0.0;
    double p_noise = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        p_sig += std::norm(clean.samples[i]);
        p_noise += std::norm(noisy.samples[i] - clean.samples[i]);
    }
    if (p_noise == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(p_sig / p_noise);
}

}  // namespace ntnsync
