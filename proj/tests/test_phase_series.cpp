#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ntnsync/channel.hpp"
#include "ntnsync/phase_series.hpp"
#include "ntnsync/preamble.hpp"
#include "ntnsync/rng.hpp"

using namespace ntnsync;

namespace {

std::vector<double> unwrap(const std::vector<double>& phase) {
    std::vector<double> u(phase.size());
    if (phase.empty()) return u;
    u[0] = phase[0];
    for (std::size_t i = 1; i < phase.size(); ++i)
        u[i] = u[i - 1] + wrap_to_pi(phase[i] - phase[i - 1]);
    return u;
}

// Wrap positions as the sample index right after a jump.
std::vector<std::int64_t> wrap_positions(const PhaseSeries& ps) {
    std::vector<std::int64_t> out;
    for (std::size_t i = 1; i < ps.size(); ++i)
        if (std::abs(ps.phase[i] - ps.phase[i - 1]) > kPi)
            out.push_back(ps.base_index + static_cast<std::int64_t>(i));
    return out;
}

IqBuffer impaired_preamble(const PreambleConfig& cfg, double toa_samples, double cfo_hz,
                           double snr_db = std::numeric_limits<double>::infinity(),
                           std::uint64_t seed = 1) {
    const auto x = gen_preamble(cfg, build_schedule(cfg));
    ImpairmentConfig imp;
    imp.toa_samples = toa_samples;
    imp.cfo_hz = cfo_hz;
    imp.snr_db = snr_db;
    imp.seed = seed;
    ChannelOptions opts;
    opts.sg_len = cfg.sg_len();
    opts.sample_rate = cfg.sample_rate;
    return apply_impairments(x, imp, nullptr, opts);
}

}  // namespace

TEST_CASE("dechirp of the clean preamble is identically one") {
    PreambleConfig cfg;
    cfg.n_rep = 1;
    const auto x = gen_preamble(cfg, build_schedule(cfg));
    const auto r = dechirp(x, x);
    for (std::size_t i = 0; i < r.size(); i += 13)
        CHECK(std::abs(r.samples[i] - cdouble{1.0, 0.0}) < 1e-12);
}

TEST_CASE("dechirp exposes a pure residual tone under CFO") {
    PreambleConfig cfg;
    cfg.n_rep = 1;
    const auto x = gen_preamble(cfg, build_schedule(cfg));
    const auto rx = impaired_preamble(cfg, 0.0, 1500.0);
    const auto r = dechirp(rx, x);
    const double f = 1500.0 / cfg.sample_rate;
    for (std::size_t i = 0; i < x.size(); i += 101) {
        const double expect = wrap_to_pi(kTwoPi * f * static_cast<double>(i));
        CHECK(wrap_to_pi(std::arg(r.samples[i]) - expect) == doctest::Approx(0.0).epsilon(0.0).scale(1.0).epsilon(1e-9));
    }
}

TEST_CASE("dechirp requires overlap") {
    IqBuffer a;
    a.samples.assign(16, cdouble{1.0, 0.0});
    IqBuffer b = a;
    b.base_index = 100;
    CHECK_THROWS_AS(dechirp(a, b), std::invalid_argument);
}

TEST_CASE("noise-only dechirp has uniform-looking angles") {
    PreambleConfig cfg;
    cfg.n_rep = 1;
    const auto x = gen_preamble(cfg, build_schedule(cfg));
    IqBuffer noise;
    noise.samples.resize(x.size());
    Rng rng(99);
    for (auto& s : noise.samples) s = rng.cgaussian(1.0);
    const auto ps = extract_phase(dechirp(noise, x), 1);

    // Kolmogorov-Smirnov against the uniform law on [-pi, pi).
    std::vector<double> u(ps.phase.begin(), ps.phase.end());
    std::sort(u.begin(), u.end());
    double ks = 0.0;
    const double n = static_cast<double>(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double cdf = (u[i] + kPi) / kTwoPi;
        ks = std::max(ks, std::abs(cdf - static_cast<double>(i + 1) / n));
        ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
    }
    CHECK(ks * std::sqrt(n) < 1.95);  // ~0.1% level
}

TEST_CASE("constant phasor survives any smoothing window") {
    IqBuffer r;
    r.samples.assign(512, std::polar(1.0, 0.7));
    for (int w : {1, 5, 33}) {
        const auto ps = extract_phase(r, w);
        CHECK(ps.base_index == (w - 1) / 2);
        for (double v : ps.phase) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
    }
}

TEST_CASE("extract_phase validates the window") {
    IqBuffer r;
    r.samples.assign(16, cdouble{1.0, 0.0});
    CHECK_THROWS_AS(extract_phase(r, 2), std::invalid_argument);
    CHECK_THROWS_AS(extract_phase(r, 0), std::invalid_argument);
    CHECK_THROWS_AS(extract_phase(r, 17), std::invalid_argument);
}

TEST_CASE("wrap spacing is exactly fs/cfo in the Fig.3 scenario") {
    PreambleConfig cfg;
    cfg.n_rep = 2;
    cfg.n_off = 0;
    const auto x = gen_preamble(cfg, build_schedule(cfg));
    const auto rx = impaired_preamble(cfg, 200.0, 1500.0);
    const auto ps = extract_phase(dechirp(rx, x), 1);
    const auto wraps = wrap_positions(ps);
    REQUIRE(wraps.size() >= 4);
    // Consecutive wraps inside one SG sit exactly one period (1280 samples)
    // apart; jumps at SG boundaries and at the onset break the comb, so only
    // within-SG pairs count.
    int clean_spacings = 0;
    for (std::size_t i = 1; i < wraps.size(); ++i) {
        if (wraps[i] / cfg.sg_len() != wraps[i - 1] / cfg.sg_len()) continue;
        if (wraps[i] % cfg.sg_len() < 210) continue;  // onset / boundary zone
        if (wraps[i] - wraps[i - 1] == 1280) ++clean_spacings;
    }
    CHECK(clean_spacings >= 8);

    // phi(n) = wrap(2*pi*f*(n - 200)) during the first symbol group.
    const double f = 1500.0 / cfg.sample_rate;
    for (std::int64_t n = 260; n < 3000; n += 173) {
        const double expect = wrap_to_pi(kTwoPi * f * static_cast<double>(n - 200));
        const double got = ps.phase[static_cast<std::size_t>(n - ps.base_index)];
        CHECK(wrap_to_pi(got - expect) == doctest::Approx(0.0).epsilon(0.0).scale(1.0).epsilon(1e-9));
    }
}

TEST_CASE("per-SG unwrapped phase matches the linear model to 1e-9 rad") {
    PreambleConfig cfg;
    cfg.n_rep = 2;
    for (int n_off : {0, 6}) {
        for (double cfo : {321.0, -512.0, 1500.0}) {
            cfg.n_off = n_off;
            const auto sched = build_schedule(cfg);
            const auto x = gen_preamble(cfg, sched);
            const double d_samples = 200.0;  // integer delays keep the envelope shift exact
            const auto rx = impaired_preamble(cfg, d_samples, cfo);
            const auto ps = extract_phase(dechirp(rx, x), 1);
            const double f = cfo / cfg.sample_rate;

            for (int m = 0; m < cfg.num_sg(); m += 3) {
                // Clean region only: the first D samples of each SG still
                // carry the previous SG's subcarrier (the guard trim zone).
                const std::int64_t lo = m * static_cast<std::int64_t>(cfg.sg_len()) +
                                        static_cast<std::int64_t>(d_samples) + 1;
                const std::int64_t hi = (m + 1) * static_cast<std::int64_t>(cfg.sg_len());
                std::vector<double> seg(ps.phase.begin() + (lo - ps.base_index), ps.phase.begin() + (hi - ps.base_index));
                const auto u = unwrap(seg);
                const double beta = static_cast<double>(sched.indices[static_cast<std::size_t>(m)]) / cfg.fft_len;
                double k_cycles = 0.0;
                double worst = 0.0;
                for (std::size_t i = 0; i < u.size(); i += 29) {
                    const double n = static_cast<double>(lo + static_cast<std::int64_t>(i));
                    const double model = kTwoPi * (f * (n - d_samples) - beta * d_samples);
                    if (i == 0) k_cycles = std::round((u[0] - model) / kTwoPi);
                    worst = std::max(worst, std::abs(u[i] - model - kTwoPi * k_cycles));
                }
                CHECK(worst < 1e-9);
            }
        }
    }
}

TEST_CASE("intercept shifts with the first subcarrier as the model predicts") {
    // With n_sc(0)=6 and D=200, the first-SG intercept moves by
    // -2*pi*(6/512)*200 ~ -14.726 rad relative to the n_sc(0)=0 case.
    PreambleConfig cfg;
    cfg.n_rep = 1;
    const double d_samples = 200.0;
    const double cfo = 1500.0;
    const double f = cfo / cfg.sample_rate;

    cfg.n_off = 0;
    const auto rx0 = impaired_preamble(cfg, d_samples, cfo);
    const auto x0 = gen_preamble(cfg, build_schedule(cfg));
    const auto ps0 = extract_phase(dechirp(rx0, x0), 1);

    cfg.n_off = 6;
    const auto rx6 = impaired_preamble(cfg, d_samples, cfo);
    const auto x6 = gen_preamble(cfg, build_schedule(cfg));
    const auto ps6 = extract_phase(dechirp(rx6, x6), 1);

    const double shift = -kTwoPi * (6.0 / 512.0) * d_samples;
    CHECK(shift == doctest::Approx(-14.726).epsilon(1e-3));
    for (std::int64_t n = 300; n < 3000; n += 217) {
        const double p0 = ps0.phase[static_cast<std::size_t>(n - ps0.base_index)];
        const double p6 = ps6.phase[static_cast<std::size_t>(n - ps6.base_index)];
        CHECK(wrap_to_pi(p6 - p0 - shift) == doctest::Approx(0.0).epsilon(0.0).scale(1.0).epsilon(1e-9));
    }
    (void)f;
}

TEST_CASE("wrap count over a window tracks |f_off| * length") {
    PreambleConfig cfg;
    cfg.n_rep = 4;
    for (double cfo : {1000.0, 1273.0, -1600.0}) {
        const auto x = gen_preamble(cfg, build_schedule(cfg));
        const auto rx = impaired_preamble(cfg, 0.0, cfo);
        const auto ps = extract_phase(dechirp(rx, x), 1);
        const auto wraps = wrap_positions(ps);
        const double expected = std::abs(cfo) / cfg.sample_rate * static_cast<double>(ps.size());
        CHECK(std::abs(static_cast<double>(wraps.size()) - expected) <= 1.0);
    }
}

TEST_CASE("slope sign between wraps equals the CFO sign") {
    PreambleConfig cfg;
    cfg.n_rep = 1;
    for (double cfo : {1200.0, -1200.0}) {
        const auto x = gen_preamble(cfg, build_schedule(cfg));
        const auto rx = impaired_preamble(cfg, 0.0, cfo);
        const auto ps = extract_phase(dechirp(rx, x), 1);
        int agree = 0;
        int total = 0;
        for (std::size_t i = 1; i < ps.size(); ++i) {
            const double d = ps.phase[i] - ps.phase[i - 1];
            if (std::abs(d) > kPi) continue;  // wrap itself
            ++total;
            if ((d > 0) == (cfo > 0)) ++agree;
        }
        CHECK(agree == total);
    }
}

TEST_CASE("smoothing leaves noiseless wrap positions in place") {
    PreambleConfig cfg;
    cfg.n_rep = 1;
    const auto x = gen_preamble(cfg, build_schedule(cfg));
    const auto rx = impaired_preamble(cfg, 200.0, 1500.0);
    const auto r = dechirp(rx, x);
    const auto ref = wrap_positions(extract_phase(r, 1));
    REQUIRE(!ref.empty());
    for (int w : {5, 15, 33, 65}) {
        const auto ps = extract_phase(r, w);
        const auto wraps = wrap_positions(ps);
        for (std::int64_t pos : wraps) {
            if (pos - ps.base_index < w || ps.end_index() - pos < w) continue;
            if (pos < 300) continue;  // pre-onset region is empty of signal
            double nearest = 1e9;
            for (std::int64_t r0 : ref) nearest = std::min(nearest, std::abs(static_cast<double>(r0 - pos)));
            CHECK(nearest < w / 2.0);
        }
    }
}

TEST_CASE("segmentation counts and guard arithmetic") {
    PreambleConfig cfg;
    cfg.n_rep = 1;
    const auto x = gen_preamble(cfg, build_schedule(cfg));
    auto ps = extract_phase(dechirp(x, x), 1);
    ps.sg_len = cfg.sg_len();

    auto segs = segment_by_sg(ps, cfg, 0);
    REQUIRE(segs.size() == 4);
    for (const auto& s : segs) CHECK(s.size() == 3072);

    segs = segment_by_sg(ps, cfg, 192);
    REQUIRE(segs.size() == 4);
    for (const auto& s : segs) CHECK(s.size() == 3072 - 384);

    PreambleConfig cfg8 = cfg;
    cfg8.n_rep = 8;
    const auto x8 = gen_preamble(cfg8, build_schedule(cfg8));
    auto ps8 = extract_phase(dechirp(x8, x8), 1);
    ps8.sg_len = cfg8.sg_len();
    CHECK(segment_by_sg(ps8, cfg8, 0).size() == 32);
}
