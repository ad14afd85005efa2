#include "ntnsync/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ntnsync {

void DopplerMap::validate() const {
    if (anchors.size() < 2) throw std::invalid_argument("DopplerMap needs at least 2 anchors");
    for (std::size_t i = 1; i < anchors.size(); ++i)
        if (anchors[i].first <= anchors[i - 1].first)
            throw std::invalid_argument("DopplerMap anchors must be strictly ascending in toa");
}

double DopplerMap::rate_at(double toa_us) const {
    validate();
    std::size_t hi = 1;
    while (hi + 1 < anchors.size() && anchors[hi].first < toa_us) ++hi;
    const auto& a = anchors[hi - 1];
    const auto& b = anchors[hi];
    const double t = (toa_us - a.first) / (b.first - a.first);
    return a.second + t * (b.second - a.second);
}

DopplerMap DopplerMap::default_map() {
    return DopplerMap{{{104.7, -297.0}, {371.3, -252.0}, {638.0, -215.0}}};
}

IqBuffer inject_offset(const IqBuffer& rx, SignHypothesis hyp, double offset_hz, double sample_rate) {
    const double df = (hyp == SignHypothesis::Pos ? offset_hz : -offset_hz) / sample_rate;
    IqBuffer out;
    out.base_index = rx.base_index;
    out.samples.resize(rx.size());
    for (std::size_t i = 0; i < rx.size(); ++i) {
        // Phase referenced to the absolute timeline origin so downstream
        // wrap equations can treat the injected tone as exp(j*2pi*df*n).
        double cycles = df * static_cast<double>(rx.base_index + static_cast<std::int64_t>(i));
        cycles -= std::floor(cycles);
        out.samples[i] = rx.samples[i] * std::polar(1.0, kTwoPi * cycles);
    }
    return out;
}

IqBuffer compensate_delay(const IqBuffer& replica, double coarse_toa_us, double sample_rate) {
    IqBuffer out = replica;
    out.base_index += std::llround(coarse_toa_us * 1e-6 * sample_rate);
    return out;
}

std::vector<double> solve_toa_candidates(double n_l, double f_eff_norm, double injected_norm,
                                         int n_sc0, const PreambleConfig& cfg, double d_max_us) {
    const double beta = static_cast<double>(n_sc0) / cfg.fft_len;
    const double denom = f_eff_norm - injected_norm + beta;
    if (std::abs(denom) < 1e-7)
        throw std::domain_error("solve_toa_candidates: degenerate configuration (denominator ~ 0)");
    const double sigma = f_eff_norm >= 0.0 ? 1.0 : -1.0;
    const double d_max = d_max_us * 1e-6 * cfg.sample_rate;

    // k at the window edges; enumerate every integer between them.
    const double k0 = f_eff_norm * n_l - 0.5 * sigma;                 // D = 0
    const double k1 = f_eff_norm * n_l - 0.5 * sigma - denom * d_max; // D = d_max
    const long k_lo = static_cast<long>(std::floor(std::min(k0, k1))) - 1;
    const long k_hi = static_cast<long>(std::ceil(std::max(k0, k1))) + 1;

    std::vector<double> out;
    for (long k = k_lo; k <= k_hi; ++k) {
        const double d = (f_eff_norm * n_l - 0.5 * sigma - static_cast<double>(k)) / denom;
        if (d < -1e-9 || d > d_max + 1e-9) continue;
        out.push_back(std::max(0.0, d) / cfg.sample_rate * 1e6);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<double> three_sigma_reject(std::vector<double> values) {
    while (values.size() > 2) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(values.size() - 1);
        const double limit = 3.0 * std::sqrt(var);
        std::vector<double> kept;
        kept.reserve(values.size());
        for (double v : values)
            if (std::abs(v - mean) <= limit) kept.push_back(v);
        if (kept.size() == values.size() || kept.empty()) break;
        values = std::move(kept);
    }
    return values;
}

std::optional<FineCfo> fine_cfo(const std::vector<std::vector<double>>& segment_points,
                                SignHypothesis hyp, double sample_rate, double rate_hz_per_s,
                                double ref_index) {
    const double sigma = hyp == SignHypothesis::Pos ? 1.0 : -1.0;
    const double alpha = rate_hz_per_s / (sample_rate * sample_rate);

    // Wrap spacing measures the local slope f_eff + alpha*t; re-reference
    // each spacing to t = 0 before pooling so the Doppler drift over long
    // records does not masquerade as spread.
    std::vector<double> spacings;
    for (const auto& pts : segment_points) {
        for (std::size_t i = 1; i < pts.size(); ++i) {
            const double t = pts[i] - pts[i - 1];
            if (t <= 0.0) continue;
            const double t_mid = 0.5 * (pts[i] + pts[i - 1]) - ref_index;
            const double f0 = sigma / t - alpha * t_mid;
            if (sigma * f0 <= 0.0) continue;
            spacings.push_back(sigma / f0);
        }
    }
    if (spacings.empty()) return std::nullopt;

    // A missed wrap doubles or triples a spacing; fold small multiples of
    // the median period back before the sigma rejection, which cannot deal
    // with a secondary cluster on its own.
    {
        std::vector<double> tmp = spacings;
        std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2), tmp.end());
        const double med = tmp[tmp.size() / 2];
        for (auto& s : spacings) {
            const double k = std::round(s / med);
            if (k >= 2.0 && k <= 3.0 && std::abs(s / k - med) < 0.25 * med) s /= k;
        }
    }

    spacings = three_sigma_reject(std::move(spacings));
    double mean = 0.0;
    for (double v : spacings) mean += v;
    mean /= static_cast<double>(spacings.size());
    double var = 0.0;
    if (spacings.size() > 1) {
        for (double v : spacings) var += (v - mean) * (v - mean);
        var /= static_cast<double>(spacings.size() - 1);
    }
    FineCfo result;
    result.f_eff_hz = sigma * sample_rate / mean;
    result.t_ph_mean = mean;
    result.variance = var;
    result.count = static_cast<int>(spacings.size());
    return result;
}

namespace {

// Least-squares two-mean split of the dechirped power, used as the timing
// gate the preceding preamble-detection stage would provide. The analysis
// window stays within roughly one symbol group past the search range so
// block-fading level changes between later SGs cannot pose as the onset.
// Returns the split sample relative to the start of `r`.
double estimate_onset(const IqBuffer& r, double max_toa_samples) {
    const std::size_t d_max = static_cast<std::size_t>(max_toa_samples);
    const std::size_t len = std::min<std::size_t>(r.size(), d_max + 2048);
    if (len < 512) return 0.0;
    std::vector<double> prefix(len + 1, 0.0);
    for (std::size_t i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + std::norm(r.samples[i]);
    const std::size_t d_hi = std::min<std::size_t>(d_max + 256, len - 256);
    double best = -1.0;
    std::size_t best_d = 8;
    for (std::size_t d = 8; d <= d_hi; ++d) {
        const double sl = prefix[d];
        const double sr = prefix[len] - prefix[d];
        const double j = sl * sl / static_cast<double>(d) + sr * sr / static_cast<double>(len - d);
        if (j > best) {
            best = j;
            best_d = d;
        }
    }
    return static_cast<double>(best_d);
}

struct ValidatedTrain {
    std::size_t first = 0;  // index of the accepted pair's first point
    int count = 0;
};

// The detector also fires on the noise-only head, on SG-boundary intercept
// jumps, and on the different-slope wraps inside the contamination zone
// (replica already hopped, delayed signal not yet). A trustworthy coarse
// pair is two wraps in the clean zone of the *same* SG: spacing within the
// injected-CFO period range, both points past the onset by a margin, and
// consistent with the following spacing when one is available.
std::optional<ValidatedTrain> validate_train(const std::vector<ChangePoint>& pts,
                                             const PreambleConfig& cfg, const EstimatorOptions& opts,
                                             double onset_samples) {
    if (pts.size() < 2) return std::nullopt;
    const double fs = cfg.sample_rate;
    const double t_min = 0.80 * fs / (opts.injected_offset_hz + opts.cfo_prior_hz);
    const double t_max = 1.18 * fs / opts.injected_offset_hz;
    const int sg_len = cfg.sg_len();
    const double clean_lo =
        std::clamp(onset_samples + 96.0, 96.0, opts.toa_max_us * 1e-6 * fs + 64.0);

    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double p0 = pts[i].index - static_cast<double>(cfg.n_start);
        const double p1 = pts[i + 1].index - static_cast<double>(cfg.n_start);
        const double d1 = p1 - p0;
        if (d1 < t_min || d1 > t_max) continue;
        const double seg0 = std::floor(p0 / sg_len);
        if (seg0 != std::floor(p1 / sg_len)) continue;
        if (p0 - seg0 * sg_len < clean_lo) continue;
        if (p1 - seg0 * sg_len < clean_lo) continue;
        if (i + 2 < pts.size()) {
            const double d2 = pts[i + 2].index - pts[i + 1].index;
            if (d2 >= t_min && d2 <= t_max && std::abs(d2 - d1) > 0.22 * std::max(d1, d2)) continue;
        }
        return ValidatedTrain{i, static_cast<int>(pts.size() - i)};
    }
    return std::nullopt;
}

struct ConsensusPoint {
    double q = 0.0;  // sample index relative to n_start
    int seg = 0;
};

struct ConsensusResult {
    double d_hat = 0.0;  // samples
    std::vector<double> candidates;  // local minima, samples
    std::size_t chosen = 0;
    double rms_cycles = 0.0;
    int used = 0;
};

// Joint delay fit across all segments. Every detected wrap in segment m pins
// (f_eff - f_inj + beta_m)*D modulo one cycle; intersecting those combs over
// the many hopped subcarriers localizes D far more tightly than any single
// wrap and averages out per-SG fading phase. Solved by a coarse grid scan for
// the basin plus Gauss-Newton polish with iterative outlier pruning.
class ConsensusSolver {
public:
    ConsensusSolver(std::vector<ConsensusPoint> pts, const std::vector<int>& schedule, int fft_len,
                    double f_eff, double f_inj, double alpha, double shift, double inj_const)
        : pts_(std::move(pts)), fft_len_(fft_len), f_eff_(f_eff), f_inj_(f_inj), alpha_(alpha),
          shift_(shift), inj_const_(inj_const) {
        beta_.reserve(schedule.size());
        for (int sc : schedule) beta_.push_back(static_cast<double>(sc) / fft_len_);
    }

    double f_eff() const { return f_eff_; }

    double residual(const ConsensusPoint& p, double d, double f_eff) const {
        const double beta = beta_[static_cast<std::size_t>(p.seg)];
        const double u = p.q - d;
        const double phase = f_eff * p.q - (f_eff - f_inj_ + beta) * d + beta * shift_ + inj_const_ +
                             0.5 * alpha_ * u * u - 0.5;
        return wrap_half_cycle(phase);
    }

    double score(double d) const {
        constexpr double kDelta = 0.1;
        double acc = 0.0;
        for (const auto& p : pts_) {
            const double r = std::abs(residual(p, d, f_eff_));
            acc += r <= kDelta ? r * r : kDelta * (2.0 * r - kDelta);
        }
        return acc;
    }

    ConsensusResult solve(double d_lo, double d_hi) const {
        ConsensusResult out;
        if (pts_.empty() || d_hi <= d_lo) return out;

        constexpr double kStep = 2.0;
        std::vector<double> grid;
        for (double d = d_lo; d <= d_hi; d += kStep) grid.push_back(score(d));
        std::size_t best = 0;
        for (std::size_t i = 1; i < grid.size(); ++i)
            if (grid[i] < grid[best]) best = i;

        // Local minima of the scan are the reportable delay hypotheses.
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const bool left_ok = i == 0 || grid[i] <= grid[i - 1];
            const bool right_ok = i + 1 == grid.size() || grid[i] < grid[i + 1];
            if (left_ok && right_ok && grid[i] <= 2.0 * grid[best] + 1e-12)
                out.candidates.push_back(d_lo + kStep * static_cast<double>(i));
        }
        if (out.candidates.empty()) out.candidates.push_back(d_lo + kStep * static_cast<double>(best));
        out.d_hat = d_lo + kStep * static_cast<double>(best);
        return out;
    }

    // Joint Gauss-Newton over (delay, effective slope) with pruning. The
    // pooled-period slope estimate carries hertz-level noise, and through
    // the long record a slope error masquerades as a delay shift; fitting
    // both decouples them. Updates d and the internal slope; reports the
    // residual rms and the points kept.
    void polish(double& d, double& rms, int& used) {
        std::vector<char> keep(pts_.size(), 1);
        for (int iter = 0; iter < 6; ++iter) {
            double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
            for (std::size_t i = 0; i < pts_.size(); ++i) {
                if (!keep[i]) continue;
                const auto& p = pts_[i];
                const double r = residual(p, d, f_eff_);
                const double jd = -(f_eff_ - f_inj_ + beta_[static_cast<std::size_t>(p.seg)]) -
                                  alpha_ * (p.q - d);
                const double jf = p.q - d;
                a11 += jd * jd;
                a12 += jd * jf;
                a22 += jf * jf;
                b1 += jd * r;
                b2 += jf * r;
            }
            const double det = a11 * a22 - a12 * a12;
            if (std::abs(det) < 1e-12) break;
            d -= (a22 * b1 - a12 * b2) / det;
            f_eff_ -= (a11 * b2 - a12 * b1) / det;

            std::vector<double> absr;
            for (std::size_t i = 0; i < pts_.size(); ++i)
                if (keep[i]) absr.push_back(std::abs(residual(pts_[i], d, f_eff_)));
            if (absr.size() < 6) break;
            double ms = 0.0;
            for (double v : absr) ms += v * v;
            ms /= static_cast<double>(absr.size());
            const double limit = std::max(0.02, 3.0 * std::sqrt(ms));
            for (std::size_t i = 0; i < pts_.size(); ++i)
                if (keep[i] && std::abs(residual(pts_[i], d, f_eff_)) > limit) keep[i] = 0;
        }
        double ms = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < pts_.size(); ++i) {
            if (!keep[i]) continue;
            const double r = residual(pts_[i], d, f_eff_);
            ms += r * r;
            ++n;
        }
        rms = n > 0 ? std::sqrt(ms / n) : 0.0;
        used = n;
    }

private:
    std::vector<ConsensusPoint> pts_;
    std::vector<double> beta_;
    int fft_len_;
    double f_eff_;
    double f_inj_;
    double alpha_;
    double shift_;
    double inj_const_;
};

}  // namespace

CoarseEstimate coarse_estimate(const ChangePointSet& cps, const PreambleConfig& cfg,
                               const SubcarrierSchedule& sched, const DopplerMap& map,
                               double measured_rate, SignHypothesis hyp, double onset_us,
                               const EstimatorOptions& opts) {
    if (cps.points.size() < 2) throw std::runtime_error("preamble not found: fewer than two change points");
    const double fs = cfg.sample_rate;
    const double t_ph = cps.points[1].index - cps.points[0].index;
    if (t_ph < 4.0) throw std::runtime_error("preamble not found: degenerate change-point spacing");
    const double sigma = hyp == SignHypothesis::Pos ? 1.0 : -1.0;
    const double injected = sigma * opts.injected_offset_hz / fs;

    CoarseEstimate result;
    result.t_ph = t_ph;
    result.n_l = cps.points[0].index;
    const double n_l_rel = cps.points[0].index - static_cast<double>(cfg.n_start);
    int seg = static_cast<int>(std::floor(n_l_rel / cfg.sg_len()));
    seg = std::clamp(seg, 0, cfg.num_sg() - 1);
    result.n_sc0 = sched.indices[static_cast<std::size_t>(seg)];

    // The pair measures the local wrap rate; re-reference it and the wrap
    // position to the preamble start with the measured Doppler rate, since
    // the validated pair may sit several SGs into the record.
    const double alpha = measured_rate / (fs * fs);
    const double onset_smp = onset_us * 1e-6 * fs;
    const double t_mid = 0.5 * (cps.points[0].index + cps.points[1].index) -
                         static_cast<double>(cfg.n_start) - onset_smp;
    const double f_eff = sigma / t_ph - alpha * t_mid;
    const double u_l = n_l_rel - onset_smp;
    const double n_l_eff = n_l_rel + 0.5 * alpha * u_l * u_l / f_eff;

    std::vector<double> cands =
        solve_toa_candidates(n_l_eff, f_eff, injected, result.n_sc0, cfg, opts.toa_max_us);

    const double w_lo = onset_us - opts.onset_window_us;
    const double w_hi = onset_us + opts.onset_window_us;
    std::vector<double> windowed;
    for (double c : cands)
        if (c >= w_lo && c <= w_hi) windowed.push_back(c);

    if (windowed.empty()) {
        result.toa_us = std::clamp(onset_us, 0.0, opts.toa_max_us);
        return result;
    }
    result.toa_us = windowed[pick_candidate_by_rate(windowed, map, measured_rate)];
    return result;
}

std::size_t pick_candidate_by_rate(const std::vector<double>& toa_us, const DopplerMap& map,
                                   double measured_rate) {
    if (toa_us.empty()) throw std::invalid_argument("pick_candidate_by_rate: no candidates");
    std::size_t best = 0;
    double best_err = std::abs(map.rate_at(toa_us[0]) - measured_rate);
    for (std::size_t i = 1; i < toa_us.size(); ++i) {
        const double err = std::abs(map.rate_at(toa_us[i]) - measured_rate);
        if (err < best_err) {
            best = i;
            best_err = err;
        }
    }
    return best;
}

namespace {

struct HypothesisResult {
    SyncEstimate estimate;
    double spacing_variance = 0.0;
    int n_distances = 0;
};

std::optional<HypothesisResult> run_hypothesis(const IqBuffer& rx, const PreambleConfig& cfg,
                                               const SubcarrierSchedule& sched, const IqBuffer& replica,
                                               const DopplerMap& map, double measured_rate,
                                               const TireConfig& tire, SignHypothesis hyp,
                                               double onset_us, const EstimatorOptions& opts) {
    const double fs = cfg.sample_rate;
    const double sigma = hyp == SignHypothesis::Pos ? 1.0 : -1.0;
    const double injected_norm = sigma * opts.injected_offset_hz / fs;

    const IqBuffer rxh = inject_offset(rx, hyp, opts.injected_offset_hz, fs);
    const IqBuffer r = dechirp(rxh, replica);
    if (r.size() < static_cast<std::size_t>(4 * tire.window_len + opts.coarse_smooth_window)) return std::nullopt;

    PhaseSeries ps = extract_phase(r, opts.coarse_smooth_window);
    ps.sg_len = cfg.sg_len();

    // One model per hypothesis, trained on the first preamble unit; the
    // sawtooth is self-similar so it transfers to the rest of the record.
    const std::size_t train_len =
        std::min<std::size_t>(ps.size(), static_cast<std::size_t>(4) * static_cast<std::size_t>(cfg.sg_len()));
    if (train_len < static_cast<std::size_t>(4 * tire.window_len)) return std::nullopt;
    TireModel coarse_model;
    if (opts.pretrained) {
        coarse_model = *opts.pretrained;
    } else {
        PhaseSeries train_slice;
        train_slice.base_index = ps.base_index;
        train_slice.sg_len = ps.sg_len;
        train_slice.phase.assign(ps.phase.begin(), ps.phase.begin() + static_cast<std::ptrdiff_t>(train_len));
        coarse_model = train_tire(train_slice, tire);
    }

    const ChangePointSet cps_full = detect_with_model(coarse_model, ps, tire);
    const double onset_smp = onset_us * 1e-6 * cfg.sample_rate;
    const auto train = validate_train(cps_full.points, cfg, opts, onset_smp);

    // With a large delay and a slow effective period a clean zone can hold
    // at most one wrap, leaving no usable pair; the power-onset gate then
    // supplies the coarse delay on its own and the fine stage still runs.
    CoarseEstimate coarse;
    coarse.toa_us = std::clamp(onset_us, 0.0, opts.toa_max_us);
    if (train) {
        ChangePointSet validated;
        validated.threshold = cps_full.threshold;
        validated.points.assign(cps_full.points.begin() + static_cast<std::ptrdiff_t>(train->first),
                                cps_full.points.end());
        try {
            coarse = coarse_estimate(validated, cfg, sched, map, measured_rate, hyp, onset_us, opts);
        } catch (const std::domain_error&) {
            coarse.toa_us = std::clamp(onset_us, 0.0, opts.toa_max_us);
        }
    }

    // Fine stage on the delay-compensated dechirp.
    const IqBuffer replica2 = compensate_delay(replica, coarse.toa_us, fs);
    const double shift = static_cast<double>(replica2.base_index - replica.base_index);
    const IqBuffer r2 = dechirp(rxh, replica2);
    if (r2.size() < static_cast<std::size_t>(4 * tire.window_len + opts.smooth_window)) return std::nullopt;
    PhaseSeries ps2 = extract_phase(r2, opts.smooth_window);
    ps2.sg_len = cfg.sg_len();

    const std::size_t train2_len =
        std::min<std::size_t>(ps2.size(), static_cast<std::size_t>(4) * static_cast<std::size_t>(cfg.sg_len()));
    if (train2_len < static_cast<std::size_t>(4 * tire.window_len)) return std::nullopt;
    TireModel fine_model;
    if (opts.pretrained) {
        fine_model = *opts.pretrained;
    } else {
        PhaseSeries train2;
        train2.base_index = ps2.base_index;
        train2.sg_len = ps2.sg_len;
        train2.phase.assign(ps2.phase.begin(), ps2.phase.begin() + static_cast<std::ptrdiff_t>(train2_len));
        fine_model = train_tire(train2, tire);
    }

    // One detection pass over the whole compensated series, grouped into the
    // guard-trimmed SGs afterwards. Detecting per segment truncates the
    // dissimilarity bump of edge wraps and their prominence collapses.
    const ChangePointSet fine_set = detect_with_model(fine_model, ps2, tire);
    std::vector<std::vector<double>> seg_points(static_cast<std::size_t>(cfg.num_sg()));
    std::vector<ConsensusPoint> cons_points;
    const int sg_len = cfg.sg_len();
    for (const auto& cp : fine_set.points) {
        const double rel = cp.index - static_cast<double>(cfg.n_start) - shift;
        const int m = static_cast<int>(std::floor(rel / sg_len));
        if (m < 0 || m >= cfg.num_sg()) continue;
        const double in_sg = rel - static_cast<double>(m) * sg_len;
        if (in_sg < opts.guard_samples || in_sg >= sg_len - opts.guard_samples) continue;
        seg_points[static_cast<std::size_t>(m)].push_back(cp.index);
        cons_points.push_back({cp.index - static_cast<double>(cfg.n_start), m});
    }

    const double ref_index = static_cast<double>(cfg.n_start) + shift;
    const auto fine = fine_cfo(seg_points, hyp, fs, measured_rate, ref_index);
    if (!fine || fine->count < 3) return std::nullopt;

    const double f_eff = fine->f_eff_hz / fs;
    const double alpha = measured_rate / (fs * fs);
    const double inj_const = injected_norm * static_cast<double>(cfg.n_start);

    const double res_bound = opts.residual_bound_us * 1e-6 * fs;
    const double d_lo = std::max(0.0, shift - res_bound);
    const double d_hi = std::min(opts.toa_max_us * 1e-6 * fs + 64.0, shift + res_bound);

    ConsensusSolver solver(cons_points, sched.indices, cfg.fft_len, f_eff, injected_norm, alpha,
                           shift, inj_const);
    ConsensusResult cons = solver.solve(d_lo, d_hi);
    if (cons.candidates.empty()) return std::nullopt;

    // Doppler-rate disambiguation between near-tied consensus minima, then a
    // local polish of the winner.
    std::size_t pick = 0;
    if (cons.candidates.size() > 1) {
        double best_rate_err = std::numeric_limits<double>::infinity();
        const double best_score = solver.score(cons.d_hat);
        for (std::size_t i = 0; i < cons.candidates.size(); ++i) {
            if (solver.score(cons.candidates[i]) > 1.3 * best_score + 1e-12) continue;
            const double rate_err =
                std::abs(map.rate_at(cons.candidates[i] / fs * 1e6) - measured_rate);
            if (rate_err < best_rate_err) {
                best_rate_err = rate_err;
                pick = i;
            }
        }
    }
    double d_hat = cons.candidates[pick];
    double rms = 0.0;
    int used = 0;
    solver.polish(d_hat, rms, used);
    cons.candidates[pick] = d_hat;

    // The polished slope is the all-wraps refinement of the pooled-period
    // estimate; keep it only while it stays within the plausible band.
    double f_eff_fit = solver.f_eff();
    if (std::abs(f_eff_fit - f_eff) > 40.0 / fs) f_eff_fit = f_eff;

    // Back out n_l (first wrap of the first SG after the compensated start)
    // from the fitted delay, so the reported candidate set is exactly the
    // solve_toa_candidates family anchored at that wrap.
    const double beta0 = static_cast<double>(sched.indices[0]) / cfg.fft_len;
    const double f_hat = f_eff_fit - injected_norm;
    const double x_bar = (f_hat + beta0) * d_hat - beta0 * shift - inj_const + 0.5;
    const double q_min = shift + 1.0;
    double q_l;
    if (f_eff_fit > 0.0) {
        const double j_star = std::ceil(f_eff_fit * q_min - x_bar);
        q_l = (x_bar + j_star) / f_eff_fit;
    } else {
        const double j_star = std::floor(f_eff_fit * q_min - x_bar);
        q_l = (x_bar + j_star) / f_eff_fit;
    }

    HypothesisResult out;
    out.spacing_variance = fine->variance;
    out.n_distances = fine->count;

    SyncEstimate& est = out.estimate;
    est.coarse_toa_us = coarse.toa_us;
    est.fine_toa_us = d_hat / fs * 1e6;
    double cfo = f_eff_fit * fs - sigma * opts.injected_offset_hz;
    est.cfo_hz = std::clamp(cfo, -opts.cfo_prior_hz, opts.cfo_prior_hz);
    est.t_ph_samples = 1.0 / std::abs(f_eff_fit);
    est.first_wrap_index = q_l + static_cast<double>(cfg.n_start);
    est.sign_hypothesis = hyp;
    est.candidates.reserve(cons.candidates.size());
    for (double c : cons.candidates) {
        const double toa_us = c / fs * 1e6;
        est.candidates.push_back({toa_us, map.rate_at(toa_us)});
    }
    est.chosen = static_cast<int>(pick);
    est.diagnostics.onset_toa_us = onset_us;
    est.diagnostics.coarse_t_ph = coarse.t_ph;
    est.diagnostics.pooled_distance_var = fine->variance;
    est.diagnostics.n_distances = fine->count;
    est.diagnostics.n_consensus_points = used;
    est.diagnostics.consensus_rms_cycles = rms;
    est.diagnostics.validated_points = train ? train->count : 0;
    return out;
}

}  // namespace

std::optional<SyncEstimate> estimate_with_hypothesis(const IqBuffer& rx, const PreambleConfig& cfg,
                                                     const DopplerMap& map, double measured_rate,
                                                     const TireConfig& tire, SignHypothesis hyp,
                                                     const EstimatorOptions& opts) {
    cfg.validate();
    const SubcarrierSchedule sched = build_schedule(cfg);
    const IqBuffer replica = gen_preamble(cfg, sched);
    const IqBuffer r0 = dechirp(rx, replica);
    const double onset_rel = estimate_onset(r0, opts.toa_max_us * 1e-6 * cfg.sample_rate) +
                             static_cast<double>(r0.base_index - cfg.n_start);
    const double onset_us = onset_rel / cfg.sample_rate * 1e6;
    const auto res = run_hypothesis(rx, cfg, sched, replica, map, measured_rate, tire, hyp, onset_us, opts);
    if (!res) return std::nullopt;
    return res->estimate;
}

std::optional<SyncEstimate> estimate(const IqBuffer& rx, const PreambleConfig& cfg,
                                     const DopplerMap& map, double measured_rate,
                                     const TireConfig& tire, const EstimatorOptions& opts) {
    cfg.validate();
    map.validate();
    const SubcarrierSchedule sched = build_schedule(cfg);
    const IqBuffer replica = gen_preamble(cfg, sched);
    const IqBuffer r0 = dechirp(rx, replica);
    const double onset_rel = estimate_onset(r0, opts.toa_max_us * 1e-6 * cfg.sample_rate) +
                             static_cast<double>(r0.base_index - cfg.n_start);
    const double onset_us = onset_rel / cfg.sample_rate * 1e6;

    std::optional<HypothesisResult> best;
    for (SignHypothesis hyp : {SignHypothesis::Pos, SignHypothesis::Neg}) {
        auto res = run_hypothesis(rx, cfg, sched, replica, map, measured_rate, tire, hyp, onset_us, opts);
        if (!res) continue;
        if (!best || res->spacing_variance < best->spacing_variance) best = std::move(res);
    }
    if (!best) return std::nullopt;
    return best->estimate;
}

}  // namespace ntnsync
