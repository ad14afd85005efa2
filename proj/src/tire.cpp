#include "ntnsync/tire.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "ntnsync/rng.hpp"

namespace ntnsync {

namespace {

constexpr std::size_t kMaxTrainWindows = 1536;
constexpr std::size_t kBatch = 32;

void mean_remove(const double* src, double* dst, int n) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += src[i];
    mean /= n;
    for (int i = 0; i < n; ++i) dst[i] = src[i] - mean;
}

}  // namespace

void TireConfig::validate() const {
    if (window_len < 8) throw std::invalid_argument("window_len must be >= 8");
    if (n_invariant < 1) throw std::invalid_argument("n_invariant must be >= 1");
    if (n_instant < 0) throw std::invalid_argument("n_instant must be >= 0");
    if (stride < 1 || stride > window_len) throw std::invalid_argument("stride must be in [1, window_len]");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
    if (consistency_weight < 0.0) throw std::invalid_argument("consistency_weight must be >= 0");
}

void TireModel::encode(const double* window, double* hidden_out) const {
    const int n = window_len;
    const int h = hidden();
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += window[i];
    mean /= n;
    const double inv_scale = 1.0 / input_scale;
    for (int k = 0; k < h; ++k) {
        const double* row = w1.data() + static_cast<std::size_t>(k) * n;
        double acc = b1[static_cast<std::size_t>(k)];
        for (int i = 0; i < n; ++i) acc += row[i] * (window[i] - mean) * inv_scale;
        hidden_out[k] = std::tanh(acc);
    }
}

TireModel train_tire(const PhaseSeries& ps, const TireConfig& cfg) {
    cfg.validate();
    const int n = cfg.window_len;
    const int h = cfg.n_invariant + cfg.n_instant;
    if (ps.size() < static_cast<std::size_t>(4 * n))
        throw std::invalid_argument("train_tire: series shorter than 4 windows");

    // Training windows: stride-spaced, evenly subsampled to a cap so the
    // per-trial cost stays flat for long records.
    std::vector<std::size_t> starts;
    for (std::size_t p = 0; p + static_cast<std::size_t>(n) <= ps.size();
         p += static_cast<std::size_t>(cfg.stride))
        starts.push_back(p);
    if (starts.size() > kMaxTrainWindows) {
        std::vector<std::size_t> picked;
        picked.reserve(kMaxTrainWindows);
        const double step = static_cast<double>(starts.size()) / kMaxTrainWindows;
        for (std::size_t i = 0; i < kMaxTrainWindows; ++i)
            picked.push_back(starts[static_cast<std::size_t>(i * step)]);
        starts = std::move(picked);
    }
    const std::size_t m = starts.size();

    std::vector<double> windows(m * static_cast<std::size_t>(n));
    std::vector<double> magnitudes;
    magnitudes.reserve(m * static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < m; ++i) {
        mean_remove(ps.phase.data() + starts[i], windows.data() + i * n, n);
        for (int j = 0; j < n; ++j) magnitudes.push_back(std::abs(windows[i * n + j]));
    }
    // Normalize by a high quantile of the deviation magnitudes so that even
    // the largest windows stay inside tanh's graded range; a saturated
    // feature turns the dissimilarity into a flat plateau and localization
    // degenerates to the plateau width.
    std::nth_element(magnitudes.begin(), magnitudes.begin() + static_cast<std::ptrdiff_t>(magnitudes.size() * 99 / 100),
                     magnitudes.end());
    const double q99 = magnitudes[magnitudes.size() * 99 / 100];

    TireModel model;
    model.window_len = n;
    model.n_invariant = cfg.n_invariant;
    model.n_instant = cfg.n_instant;
    model.input_scale = q99 > 1e-12 ? q99 : 1.0;
    model.w1.resize(static_cast<std::size_t>(h) * n);
    model.b1.assign(static_cast<std::size_t>(h), 0.0);
    model.w2.resize(static_cast<std::size_t>(n) * h);
    model.b2.assign(static_cast<std::size_t>(n), 0.0);

    Rng rng(cfg.seed);
    const double r1 = 1.0 / std::sqrt(static_cast<double>(n));
    const double r2 = 1.0 / std::sqrt(static_cast<double>(h));
    for (auto& w : model.w1) w = rng.uniform(-r1, r1);
    for (auto& w : model.w2) w = rng.uniform(-r2, r2);

    // Normalized copies of the windows used for gradient passes.
    const double inv_scale = 1.0 / model.input_scale;
    for (auto& v : windows) v *= inv_scale;

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> gw1(model.w1.size()), gb1(model.b1.size());
    std::vector<double> gw2(model.w2.size()), gb2(model.b2.size());
    std::vector<double> act(static_cast<std::size_t>(h)), act2(static_cast<std::size_t>(h));
    std::vector<double> xhat(static_cast<std::size_t>(n)), err(static_cast<std::size_t>(n));
    std::vector<double> dh(static_cast<std::size_t>(h));

    auto forward = [&](const double* x, double* hidden) {
        for (int k = 0; k < h; ++k) {
            const double* row = model.w1.data() + static_cast<std::size_t>(k) * n;
            double acc = model.b1[static_cast<std::size_t>(k)];
            for (int j = 0; j < n; ++j) acc += row[j] * x[j];
            hidden[k] = std::tanh(acc);
        }
    };
    auto backprop_hidden = [&](const double* x, const double* hidden, const double* dhid) {
        for (int k = 0; k < h; ++k) {
            const double da = dhid[k] * (1.0 - hidden[k] * hidden[k]);
            if (da == 0.0) continue;
            double* grow = gw1.data() + static_cast<std::size_t>(k) * n;
            for (int j = 0; j < n; ++j) grow[j] += da * x[j];
            gb1[static_cast<std::size_t>(k)] += da;
        }
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the model RNG keeps runs reproducible.
        for (std::size_t i = m; i > 1; --i) {
            const std::size_t j = rng.uniform_u32(static_cast<std::uint32_t>(i));
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t b0 = 0; b0 < m; b0 += kBatch) {
            const std::size_t bend = std::min(m, b0 + kBatch);
            std::fill(gw1.begin(), gw1.end(), 0.0);
            std::fill(gb1.begin(), gb1.end(), 0.0);
            std::fill(gw2.begin(), gw2.end(), 0.0);
            std::fill(gb2.begin(), gb2.end(), 0.0);
            for (std::size_t bi = b0; bi < bend; ++bi) {
                const std::size_t idx = order[bi];
                const double* x = windows.data() + idx * n;
                forward(x, act.data());
                for (int j = 0; j < n; ++j) {
                    double acc = model.b2[static_cast<std::size_t>(j)];
                    const double* row = model.w2.data() + static_cast<std::size_t>(j) * h;
                    for (int k = 0; k < h; ++k) acc += row[k] * act[static_cast<std::size_t>(k)];
                    xhat[static_cast<std::size_t>(j)] = acc;
                    err[static_cast<std::size_t>(j)] = (2.0 / n) * (acc - x[j]);
                }
                std::fill(dh.begin(), dh.end(), 0.0);
                for (int j = 0; j < n; ++j) {
                    const double e = err[static_cast<std::size_t>(j)];
                    double* grow = gw2.data() + static_cast<std::size_t>(j) * h;
                    const double* row = model.w2.data() + static_cast<std::size_t>(j) * h;
                    for (int k = 0; k < h; ++k) {
                        grow[k] += e * act[static_cast<std::size_t>(k)];
                        dh[static_cast<std::size_t>(k)] += e * row[k];
                    }
                    gb2[static_cast<std::size_t>(j)] += e;
                }
                backprop_hidden(x, act.data(), dh.data());

                // Time-invariance penalty against the next window in series
                // order: lambda * ||s_i - s_{i+1}||^2.
                if (cfg.consistency_weight > 0.0 && idx + 1 < m) {
                    const double* xn = windows.data() + (idx + 1) * n;
                    forward(xn, act2.data());
                    std::fill(dh.begin(), dh.end(), 0.0);
                    for (int k = 0; k < cfg.n_invariant; ++k) {
                        const double d = act[static_cast<std::size_t>(k)] - act2[static_cast<std::size_t>(k)];
                        dh[static_cast<std::size_t>(k)] = 2.0 * cfg.consistency_weight * d;
                    }
                    backprop_hidden(x, act.data(), dh.data());
                    for (auto& v : dh) v = -v;
                    backprop_hidden(xn, act2.data(), dh.data());
                }
            }
            const double step = cfg.lr / static_cast<double>(bend - b0);
            for (std::size_t i = 0; i < model.w1.size(); ++i) model.w1[i] -= step * gw1[i];
            for (std::size_t i = 0; i < model.b1.size(); ++i) model.b1[i] -= step * gb1[i];
            for (std::size_t i = 0; i < model.w2.size(); ++i) model.w2[i] -= step * gw2[i];
            for (std::size_t i = 0; i < model.b2.size(); ++i) model.b2[i] -= step * gb2[i];
        }
    }
    return model;
}

std::vector<std::pair<double, double>> dissimilarity(const TireModel& model, const PhaseSeries& ps,
                                                     const TireConfig& cfg) {
    cfg.validate();
    const int n = model.window_len;
    const int stride = cfg.stride;
    std::vector<std::pair<double, double>> out;
    if (ps.size() < static_cast<std::size_t>(2 * n)) return out;

    const std::size_t grid = (ps.size() - static_cast<std::size_t>(2 * n)) / stride + 1;
    const int h = model.hidden();
    const int k_inv = model.n_invariant;

    // Invariant features on the window-start grid; the paired window start
    // p + window_len reuses the grid when stride divides window_len.
    const bool aligned = (n % stride) == 0;
    const std::size_t s_grid = (ps.size() - static_cast<std::size_t>(n)) / stride + 1;
    std::vector<double> s_first(s_grid * static_cast<std::size_t>(k_inv));
    std::vector<double> hid(static_cast<std::size_t>(h));
    for (std::size_t g = 0; g < s_grid; ++g) {
        model.encode(ps.phase.data() + g * stride, hid.data());
        for (int k = 0; k < k_inv; ++k) s_first[g * k_inv + k] = hid[static_cast<std::size_t>(k)];
    }
    std::vector<double> s_second;
    if (!aligned) {
        s_second.resize(grid * static_cast<std::size_t>(k_inv));
        for (std::size_t g = 0; g < grid; ++g) {
            model.encode(ps.phase.data() + g * stride + static_cast<std::size_t>(n), hid.data());
            for (int k = 0; k < k_inv; ++k) s_second[g * k_inv + k] = hid[static_cast<std::size_t>(k)];
        }
    }

    out.reserve(grid);
    const std::size_t off = static_cast<std::size_t>(n / stride);
    for (std::size_t g = 0; g < grid; ++g) {
        const double* sa = s_first.data() + g * k_inv;
        const double* sb = aligned ? s_first.data() + (g + off) * k_inv : s_second.data() + g * k_inv;
        double acc = 0.0;
        for (int k = 0; k < k_inv; ++k) acc += (sa[k] - sb[k]) * (sa[k] - sb[k]);
        const double idx = static_cast<double>(ps.base_index) + static_cast<double>(g * stride + n);
        out.emplace_back(idx, std::sqrt(acc));
    }
    return out;
}

namespace {

// Sub-sample localization of a proposed change point. The dissimilarity peak
// marks the neighbourhood but its maximum rides a wide feature-response
// plateau, so under noise the argmax wanders tens of samples. The series
// itself pins the change much harder; two fitters below share the job.
struct TwoPieceFit {
    double tau;
    double jump;
    double sse_gain;  // two-piece SSE / single-line SSE
    bool valid;
};

// Two independent lines split at tau, least squares over every split via
// prefix sums. Scale-equivariant; covers level jumps and slope changes.
// sse_gain is the SSE ratio against a single-line fit (small = real
// structure at tau).
struct LineSums {
    double n = 0, st = 0, stt = 0, sy = 0, sty = 0, syy = 0;
    double sse() const {
        const double det = n * stt - st * st;
        if (det <= 1e-12 || n < 2.0) return 0.0;
        const double slope = (n * sty - st * sy) / det;
        const double icept = (sy - slope * st) / n;
        return std::max(0.0, syy - icept * sy - slope * sty);
    }
    double value_at(double t) const {
        const double det = n * stt - st * st;
        if (det <= 1e-12 || n < 2.0) return n > 0 ? sy / n : 0.0;
        const double slope = (n * sty - st * sy) / det;
        const double icept = (sy - slope * st) / n;
        return icept + slope * t;
    }
};

TwoPieceFit refine_two_piece(const PhaseSeries& ps, double center, double radius) {
    const std::int64_t c = static_cast<std::int64_t>(std::llround(center - static_cast<double>(ps.base_index)));
    const std::int64_t lo = std::max<std::int64_t>(0, c - static_cast<std::int64_t>(radius));
    const std::int64_t hi = std::min<std::int64_t>(static_cast<std::int64_t>(ps.size()), c + static_cast<std::int64_t>(radius));
    const std::int64_t len = hi - lo;
    if (len < 24) return {center, 0.0, 1.0, false};

    std::vector<LineSums> prefix(static_cast<std::size_t>(len + 1));
    for (std::int64_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i);
        const double y = ps.phase[static_cast<std::size_t>(lo + i)];
        LineSums s = prefix[static_cast<std::size_t>(i)];
        s.n += 1.0;
        s.st += t;
        s.stt += t * t;
        s.sy += y;
        s.sty += t * y;
        s.syy += y * y;
        prefix[static_cast<std::size_t>(i + 1)] = s;
    }
    const LineSums& all = prefix[static_cast<std::size_t>(len)];
    const double sse_single = all.sse();

    double best_sse = std::numeric_limits<double>::infinity();
    std::int64_t best_tau = -1;
    for (std::int64_t tau = 8; tau <= len - 8; ++tau) {
        const LineSums& left = prefix[static_cast<std::size_t>(tau)];
        LineSums right;
        right.n = all.n - left.n;
        right.st = all.st - left.st;
        right.stt = all.stt - left.stt;
        right.sy = all.sy - left.sy;
        right.sty = all.sty - left.sty;
        right.syy = all.syy - left.syy;
        const double sse = left.sse() + right.sse();
        if (sse < best_sse) {
            best_sse = sse;
            best_tau = tau;
        }
    }
    if (best_tau < 0) return {center, 0.0, 1.0, false};

    const LineSums& left = prefix[static_cast<std::size_t>(best_tau)];
    LineSums right;
    right.n = all.n - left.n;
    right.st = all.st - left.st;
    right.stt = all.stt - left.stt;
    right.sy = all.sy - left.sy;
    right.sty = all.sty - left.sty;
    right.syy = all.syy - left.syy;
    const double t_split = static_cast<double>(best_tau);
    const double jump = left.value_at(t_split) - right.value_at(t_split);
    const double tau_abs = static_cast<double>(ps.base_index + lo + best_tau);
    const double gain = sse_single > 1e-12 ? best_sse / sse_single : 1.0;
    if (std::abs(tau_abs - center) > radius) return {center, 0.0, 1.0, false};
    return {tau_abs, jump, gain, true};
}

// For a genuine phase wrap the jump is 2*pi by construction and the wrap
// sits where the underlying line crosses +-pi. Fitting the line with
// wrap-robust residuals sidesteps the sign-flip outliers that pollute a
// plain least-squares fit near the wrap, then the crossing gives tau.
// split_delta is the circular mean residual difference across the crossing:
// ~0 for a true wrap, ~wrap(J) for a level jump of size J.
struct WrapLineFit {
    double tau;
    double split_delta;
    bool ok;
};

WrapLineFit refine_wrapped_line(const PhaseSeries& ps, double center, double radius) {
    const std::int64_t ci = static_cast<std::int64_t>(std::llround(center - static_cast<double>(ps.base_index)));
    const std::int64_t lo = std::max<std::int64_t>(0, ci - static_cast<std::int64_t>(radius));
    const std::int64_t hi = std::min<std::int64_t>(static_cast<std::int64_t>(ps.size()), ci + static_cast<std::int64_t>(radius));
    const std::int64_t len = hi - lo;
    if (len < 24) return {center, 0.0, false};

    // Slope init from lagged phasor differences: noise-robust and immune to
    // the 2*pi jump (which contributes a full turn).
    const std::int64_t lag = std::min<std::int64_t>(16, len / 4);
    cdouble rot{0.0, 0.0};
    for (std::int64_t i = lo; i + lag < hi; ++i)
        rot += std::polar(1.0, ps.phase[static_cast<std::size_t>(i + lag)] - ps.phase[static_cast<std::size_t>(i)]);
    double b = std::arg(rot) / static_cast<double>(lag);
    if (std::abs(b) < 1e-6) return {center, 0.0, false};

    // Intercept init: circular mean of the de-sloped values.
    const double t0 = center - static_cast<double>(ps.base_index);
    cdouble acc{0.0, 0.0};
    for (std::int64_t i = lo; i < hi; ++i)
        acc += std::polar(1.0, ps.phase[static_cast<std::size_t>(i)] - b * (static_cast<double>(i) - t0));
    double a = std::arg(acc);

    // Trimmed Gauss-Newton on wrapped residuals. Every pass drops samples
    // whose residual against the current fit exceeds several median absolute
    // residuals; pre-onset junk or a crossing SG boundary inside the window
    // would otherwise tilt the line long before a final trim could act.
    std::vector<double> absr(static_cast<std::size_t>(len));
    std::vector<char> keep(static_cast<std::size_t>(len), 1);
    for (int iter = 0; iter < 5; ++iter) {
        for (std::int64_t i = lo; i < hi; ++i) {
            const double t = static_cast<double>(i) - t0;
            absr[static_cast<std::size_t>(i - lo)] =
                std::abs(wrap_to_pi(ps.phase[static_cast<std::size_t>(i)] - a - b * t));
        }
        std::vector<double> tmp = absr;
        std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2), tmp.end());
        const double limit = std::max(0.35, 6.0 * tmp[tmp.size() / 2]);
        for (std::size_t i = 0; i < absr.size(); ++i) keep[i] = absr[i] <= limit ? 1 : 0;

        double se = 0.0, set = 0.0, st = 0.0, stt = 0.0, n = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) {
            if (!keep[static_cast<std::size_t>(i - lo)]) continue;
            const double t = static_cast<double>(i) - t0;
            const double e = wrap_to_pi(ps.phase[static_cast<std::size_t>(i)] - a - b * t);
            se += e;
            set += e * t;
            st += t;
            stt += t * t;
            n += 1.0;
        }
        const double det = n * stt - st * st;
        if (std::abs(det) < 1e-9 || n < 16.0) break;
        const double db = (n * set - st * se) / det;
        const double da = (se - db * st) / n;
        a += da;
        b += db;
    }
    const double target = b > 0.0 ? kPi : -kPi;
    const double delta = wrap_to_pi(target - a) / b;
    if (std::abs(delta) > radius) return {center, 0.0, false};
    const double tau = center + delta;

    const std::int64_t split = static_cast<std::int64_t>(std::llround(tau - static_cast<double>(ps.base_index)));
    cdouble left{0.0, 0.0}, right{0.0, 0.0};
    for (std::int64_t i = lo; i < hi; ++i) {
        if (!keep[static_cast<std::size_t>(i - lo)]) continue;
        const double t = static_cast<double>(i) - t0;
        const cdouble ph = std::polar(1.0, ps.phase[static_cast<std::size_t>(i)] - a - b * t);
        (i < split ? left : right) += ph;
    }
    double split_delta = 0.0;
    if (std::abs(left) > 0.0 && std::abs(right) > 0.0)
        split_delta = wrap_to_pi(std::arg(left) - std::arg(right));
    return {tau, split_delta, true};
}

// Topographic prominence of local maxima (scipy-style bases).
struct Peak {
    std::size_t pos;
    double height;
    double prominence;
};

std::vector<Peak> find_peaks(const std::vector<double>& d) {
    std::vector<Peak> peaks;
    for (std::size_t i = 1; i + 1 < d.size(); ++i) {
        if (!(d[i] > d[i - 1] && d[i] > d[i + 1])) continue;
        double left_base = d[i];
        for (std::size_t j = i; j-- > 0;) {
            if (d[j] > d[i]) break;
            left_base = std::min(left_base, d[j]);
        }
        double right_base = d[i];
        for (std::size_t j = i + 1; j < d.size(); ++j) {
            if (d[j] > d[i]) break;
            right_base = std::min(right_base, d[j]);
        }
        peaks.push_back({i, d[i], d[i] - std::max(left_base, right_base)});
    }
    return peaks;
}

}  // namespace

ChangePointSet detect_with_model(const TireModel& model, const PhaseSeries& ps, const TireConfig& cfg) {
    ChangePointSet result;
    const auto raw = dissimilarity(model, ps, cfg);
    if (raw.size() < 8) return result;

    // The adjacent-window dissimilarity of a localized change is a symmetric
    // double hump with a notch at the change itself; a centered average one
    // window long turns it into a single peak centered on the change.
    const std::size_t g_count = raw.size();
    const int hw = std::max(1, cfg.window_len / cfg.stride / 2);
    std::vector<double> smooth(g_count, 0.0);
    {
        std::vector<double> prefix(g_count + 1, 0.0);
        for (std::size_t i = 0; i < g_count; ++i) prefix[i + 1] = prefix[i] + raw[i].second;
        for (std::size_t i = 0; i < g_count; ++i) {
            const std::size_t lo = i >= static_cast<std::size_t>(hw) ? i - hw : 0;
            const std::size_t hi = std::min(g_count - 1, i + static_cast<std::size_t>(hw));
            smooth[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
        }
    }

    double mean = 0.0;
    for (double v : smooth) mean += v;
    mean /= static_cast<double>(g_count);
    double var = 0.0;
    for (double v : smooth) var += (v - mean) * (v - mean);
    var /= static_cast<double>(g_count > 1 ? g_count - 1 : 1);
    const double threshold = mean + cfg.prominence_k * std::sqrt(var);
    result.threshold = threshold;

    result.dissimilarity.reserve(g_count);
    for (std::size_t i = 0; i < g_count; ++i) result.dissimilarity.emplace_back(raw[i].first, smooth[i]);

    for (const Peak& pk : find_peaks(smooth)) {
        if (pk.prominence < threshold) continue;
        const double ym = smooth[pk.pos - 1];
        const double y0 = smooth[pk.pos];
        const double yp = smooth[pk.pos + 1];
        const double denom = ym - 2.0 * y0 + yp;
        double delta = 0.0;
        if (denom < -1e-18) delta = 0.5 * (ym - yp) / denom;
        delta = std::clamp(delta, -0.5, 0.5);
        result.points.push_back({raw[pk.pos].first + delta * cfg.stride, pk.prominence});
    }
    std::sort(result.points.begin(), result.points.end(),
              [](const ChangePoint& a, const ChangePoint& b) { return a.index < b.index; });

    // Final localization against the series itself, bounded by neighbouring
    // detections so adjacent changes cannot capture each other's fit window.
    // True 2*pi wraps get the wrapped-line crossing; other jump sizes keep
    // the scale-equivariant two-piece estimate.
    for (std::size_t i = 0; i < result.points.size(); ++i) {
        double radius = 3.5 * cfg.window_len;
        if (i > 0) radius = std::min(radius, 0.5 * (result.points[i].index - result.points[i - 1].index));
        if (i + 1 < result.points.size())
            radius = std::min(radius, 0.5 * (result.points[i + 1].index - result.points[i].index));
        if (radius < 16.0) continue;
        const WrapLineFit wl = refine_wrapped_line(ps, result.points[i].index, radius);
        const bool wrap_like = wl.ok && std::abs(wl.split_delta) < 0.6 &&
                               std::abs(wl.tau - result.points[i].index) <= 64.0;
        if (wrap_like) {
            result.points[i].index = wl.tau;
        } else {
            // The split position only replaces the peak when the two-piece
            // model genuinely beats a single line; on a featureless stretch
            // the dissimilarity peak stays where it was.
            const TwoPieceFit fit = refine_two_piece(ps, result.points[i].index, radius);
            if (fit.valid && fit.sse_gain < 0.5) result.points[i].index = fit.tau;
        }
    }
    std::sort(result.points.begin(), result.points.end(),
              [](const ChangePoint& a, const ChangePoint& b) { return a.index < b.index; });
    std::vector<ChangePoint> dedup;
    for (const auto& p : result.points) {
        if (!dedup.empty() && p.index - dedup.back().index < 8.0) {
            if (p.prominence > dedup.back().prominence) dedup.back() = p;
            continue;
        }
        dedup.push_back(p);
    }
    result.points = std::move(dedup);
    return result;
}

ChangePointSet detect(const PhaseSeries& ps, const TireConfig& cfg) {
    const TireModel model = train_tire(ps, cfg);
    return detect_with_model(model, ps, cfg);
}

void TireModel::save(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        std::fwrite(b, 1, 4, f);
    };
    auto put_f32 = [&](float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        put_u32(u);
    };
    std::fwrite("NTIR", 1, 4, f);
    put_u32(1);
    put_u32(static_cast<std::uint32_t>(window_len));
    put_u32(static_cast<std::uint32_t>(n_invariant));
    put_u32(static_cast<std::uint32_t>(n_instant));
    put_f32(static_cast<float>(input_scale));
    for (const auto* vec : {&w1, &b1, &w2, &b2})
        for (double v : *vec) put_f32(static_cast<float>(v));
    std::fclose(f);
}

TireModel TireModel::load(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    auto get_u32 = [&]() {
        unsigned char b[4];
        if (std::fread(b, 1, 4, f) != 4) {
            std::fclose(f);
            throw std::runtime_error("truncated TIRE model file");
        }
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    auto get_f32 = [&]() {
        const std::uint32_t u = get_u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    };
    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "NTIR", 4) != 0) {
        std::fclose(f);
        throw std::runtime_error("not a TIRE model file: " + path);
    }
    const std::uint32_t version = get_u32();
    if (version != 1) {
        std::fclose(f);
        throw std::runtime_error("unsupported TIRE model version");
    }
    TireModel model;
    model.window_len = static_cast<int>(get_u32());
    model.n_invariant = static_cast<int>(get_u32());
    model.n_instant = static_cast<int>(get_u32());
    model.input_scale = get_f32();
    const std::size_t h = static_cast<std::size_t>(model.hidden());
    const std::size_t n = static_cast<std::size_t>(model.window_len);
    model.w1.resize(h * n);
    model.b1.resize(h);
    model.w2.resize(n * h);
    model.b2.resize(n);
    for (auto* vec : {&model.w1, &model.b1, &model.w2, &model.b2})
        for (double& v : *vec) v = get_f32();
    std::fclose(f);
    return model;
}

}  // namespace ntnsync
