#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "ntnsync/channel.hpp"
#include "ntnsync/phase_series.hpp"
#include "ntnsync/preamble.hpp"
#include "ntnsync/tire.hpp"

namespace ntnsync {

// ToA -> Doppler-rate map for candidate disambiguation. The rate at a given
// delay is interpolated linearly between anchors and extrapolated linearly
// outside them.
struct DopplerMap {
    std::vector<std::pair<double, double>> anchors;  // (toa_us, rate_hz_per_s), toa ascending

    void validate() const;
    double rate_at(double toa_us) const;
    static DopplerMap default_map();
};

enum class SignHypothesis { Pos, Neg };

struct SyncCandidate {
    double toa_us = 0.0;
    double implied_rate = 0.0;
};

struct SyncDiagnostics {
    double onset_toa_us = 0.0;        // power-step gate location
    double coarse_t_ph = 0.0;         // first-pair spacing, samples
    double pooled_distance_var = 0.0; // within-segment spacing variance after rejection
    int n_distances = 0;
    int n_consensus_points = 0;
    double consensus_rms_cycles = 0.0;
    int validated_points = 0;
};

struct SyncEstimate {
    double coarse_toa_us = 0.0;
    double fine_toa_us = 0.0;
    double cfo_hz = 0.0;              // injected offset removed
    double t_ph_samples = 0.0;        // phase-series period at the preamble start
    double first_wrap_index = 0.0;    // n_l, absolute sample index
    std::vector<SyncCandidate> candidates;
    int chosen = 0;                   // candidates[chosen].toa_us == fine_toa_us
    SignHypothesis sign_hypothesis = SignHypothesis::Pos;
    SyncDiagnostics diagnostics;
};

struct EstimatorOptions {
    double injected_offset_hz = 1000.0;  // moves residual CFO to (1000,1600) / (-1600,-1000) Hz
    int smooth_window = 15;              // complex moving average before the fine stage
    int coarse_smooth_window = 15;       // ditto for the full-series coarse pass
    int guard_samples = 192;             // per-SG segment trim (max residual ToA)
    double residual_bound_us = 100.0;    // residual ToA range after compensation
    double toa_max_us = 700.0;           // search prior
    double onset_window_us = 90.0;       // coarse candidates must sit near the power onset
    double cfo_prior_hz = 600.0;         // residual-CFO uncertainty after downlink compensation
    TireConfig tire;
    // When set, detection reuses these weights instead of training per trial.
    std::shared_ptr<const TireModel> pretrained;
};

// Multiplies rx by exp(j*2*pi*(df/fs)*i) over the buffer, df = +offset for
// Pos and -offset for Neg, so the wrapped phase series always cycles fast
// enough for change points to exist across the whole residual-CFO prior.
IqBuffer inject_offset(const IqBuffer& rx, SignHypothesis hyp, double offset_hz = 1000.0,
                       double sample_rate = 1.92e6);

// Re-anchors a replica so that dechirping aligns `shift = round(toa*fs)`
// samples later; the residual delay is then bounded by the coarse accuracy.
IqBuffer compensate_delay(const IqBuffer& replica, double coarse_toa_us, double sample_rate = 1.92e6);

// Delay hypotheses consistent with one observed wrap. A wrap at n_l (samples
// after the replica start, fractional allowed) of the injected series obeys
//   f_eff*n_l - (f_eff - f_inj + n_sc0/N)*D = 1/2 + k,  k integer,
// so candidates come spaced by 1/(f_eff - f_inj + n_sc0/N) samples.
// Frequencies are cycles/sample; results in microseconds, ascending, within
// [0, d_max_us]. Throws std::domain_error when the denominator is ~0.
std::vector<double> solve_toa_candidates(double n_l, double f_eff_norm, double injected_norm,
                                         int n_sc0, const PreambleConfig& cfg, double d_max_us);

// Iterated mean +- 3*std rejection; stops when stable (idempotent on its own
// output) or when fewer than 3 values remain.
std::vector<double> three_sigma_reject(std::vector<double> values);

// Doppler-rate disambiguation: the candidate whose map-implied rate is
// nearest the measured rate. Ties resolve to the earlier candidate.
std::size_t pick_candidate_by_rate(const std::vector<double>& toa_us, const DopplerMap& map,
                                   double measured_rate);

struct CoarseEstimate {
    double toa_us = 0.0;
    double t_ph = 0.0;
    double n_l = 0.0;   // absolute index of the first change point used
    int n_sc0 = 0;
};

// Coarse stage: T_ph and n_l from the first two change points, candidate
// solve, then the candidate whose map-implied Doppler rate is nearest the
// measured rate. Candidates are additionally required to sit inside
// onset_us +- opts.onset_window_us (the timing window the preceding preamble
// detection stage provides); if none do, the onset itself is returned.
// Throws std::runtime_error with "preamble not found" when fewer than two
// points are supplied.
CoarseEstimate coarse_estimate(const ChangePointSet& cps, const PreambleConfig& cfg,
                               const SubcarrierSchedule& sched, const DopplerMap& map,
                               double measured_rate, SignHypothesis hyp, double onset_us,
                               const EstimatorOptions& opts = {});

// Pooled within-segment change-point spacings -> CFO. Each spacing is first
// re-referenced to the preamble start using the measured Doppler rate (the
// local wrap rate drifts by rate*t across the record), then outliers are
// discarded by iterated three-sigma rejection and cfo = sign*fs/mean.
// rate_hz_per_s = 0 reproduces the plain pooled mean. Returns std::nullopt
// when fewer than 3 usable spacings survive.
struct FineCfo {
    double f_eff_hz = 0.0;     // signed effective (injected) CFO at the preamble start
    double t_ph_mean = 0.0;    // mean spacing after rejection, samples
    double variance = 0.0;     // sample variance of the spacings kept
    int count = 0;
};
std::optional<FineCfo> fine_cfo(const std::vector<std::vector<double>>& segment_points,
                                SignHypothesis hyp, double sample_rate,
                                double rate_hz_per_s = 0.0, double ref_index = 0.0);

// Full two-stage pipeline over both sign hypotheses; picks the hypothesis
// with the lower pooled spacing variance. Returns std::nullopt when neither
// hypothesis produces a periodic change-point train ("preamble not found").
std::optional<SyncEstimate> estimate(const IqBuffer& rx, const PreambleConfig& cfg,
                                     const DopplerMap& map, double measured_rate,
                                     const TireConfig& tire, const EstimatorOptions& opts = {});

// Single-hypothesis variant (used by the transparency tests).
std::optional<SyncEstimate> estimate_with_hypothesis(const IqBuffer& rx, const PreambleConfig& cfg,
                                                     const DopplerMap& map, double measured_rate,
                                                     const TireConfig& tire, SignHypothesis hyp,
                                                     const EstimatorOptions& opts = {});

}  // namespace ntnsync
