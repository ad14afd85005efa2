#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "ntnsync/common.hpp"

namespace ntnsync {

enum class ChannelType { Awgn, TdlC };

struct TdlcTap {
    int delay_samples = 0;
    double avg_power = 1.0;
    bool los = false;  // LoS taps keep a unit phasor; others fade Rayleigh per SG
};

struct TdlcProfile {
    std::vector<TdlcTap> taps;

    // Throws unless tap powers sum to 1 within 1e-9 and delays are >= 0.
    void validate() const;
    int max_delay() const;
    // Small-delay-spread NTN profile with a dominant specular path. The
    // diffuse fraction is kept low so per-SG phase wander stays a micro
    // fluctuation next to the phase-series slope the estimator reads.
    static TdlcProfile default_profile();
};

// Ground truth for one trial.
struct ImpairmentConfig {
    double toa_samples = 0.0;             // D, may be fractional
    double cfo_hz = 0.0;                  // residual CFO before offset injection
    double doppler_rate_hz_per_s = 0.0;   // alpha
    double snr_db = std::numeric_limits<double>::infinity();  // per complex sample, signal power 1
    ChannelType channel = ChannelType::Awgn;
    std::uint64_t seed = 0;
};

struct ChannelOptions {
    double max_toa_samples = 1408.0;  // 700 us + margin at 1.92 Msps
    int pad_tail = 64;
    int sg_len = 0;  // block-fading granularity; 0 = single block
    double sample_rate = 1.92e6;
};

// Applies delay, CFO, Doppler rate, fading and noise to a transmitted
// preamble. The envelope is shifted by floor(D) samples while the rotation
// exponent carries the exact real D, so the phase model downstream sees the
// true delay; fading is block-constant per SG.
IqBuffer apply_impairments(const IqBuffer& x, const ImpairmentConfig& imp,
                           const TdlcProfile* profile = nullptr,
                           const ChannelOptions& opts = {});

// Empirical SNR of `noisy` against the reference `clean` (dB). Returns
// +infinity when the difference signal is exactly zero.
double measure_snr(const IqBuffer& clean, const IqBuffer& noisy);

}  // namespace ntnsync
