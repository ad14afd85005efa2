#include <doctest.h>

#include <cmath>
#include <vector>

#include "ntnsync/channel.hpp"
#include "ntnsync/estimator.hpp"
#include "ntnsync/preamble.hpp"
#include "ntnsync/rng.hpp"

using namespace ntnsync;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

IqBuffer make_rx(const PreambleConfig& cfg, double toa_us, double cfo_hz, double snr_db,
                 double rate_hz_per_s, std::uint64_t seed, const TdlcProfile* profile = nullptr,
                 ChannelType channel = ChannelType::Awgn) {
    const auto x = gen_preamble(cfg, build_schedule(cfg));
    ImpairmentConfig imp;
    imp.toa_samples = toa_us * 1e-6 * cfg.sample_rate;
    imp.cfo_hz = cfo_hz;
    imp.doppler_rate_hz_per_s = rate_hz_per_s;
    imp.snr_db = snr_db;
    imp.seed = seed;
    imp.channel = channel;
    ChannelOptions opts;
    opts.sg_len = cfg.sg_len();
    opts.sample_rate = cfg.sample_rate;
    return apply_impairments(x, imp, profile, opts);
}

int count_wraps(const IqBuffer& rx) {
    double prev = std::arg(rx.samples[0]);
    int wraps = 0;
    for (std::size_t i = 1; i < rx.size(); ++i) {
        const double a = std::arg(rx.samples[i]);
        if (std::abs(a - prev) > kPi) ++wraps;
        prev = a;
    }
    return wraps;
}

}  // namespace

TEST_CASE("offset injection moves the residual CFO into the wrapping band") {
    IqBuffer tone;
    tone.samples.assign(19200, cdouble{1.0, 0.0});  // 10 ms at 1.92 Msps

    SUBCASE("zero residual, positive hypothesis -> 1000 Hz, period 1920") {
        const auto y = inject_offset(tone, SignHypothesis::Pos);
        CHECK(count_wraps(y) == 10);  // 19200 / 1920
    }
    SUBCASE("+600 residual, positive hypothesis -> 1600 Hz, period 1200") {
        ImpairmentConfig imp;
        imp.cfo_hz = 600.0;
        ChannelOptions copts;
        copts.max_toa_samples = 0.0;
        copts.pad_tail = 0;
        const auto pre = apply_impairments(tone, imp, nullptr, copts);
        const auto y = inject_offset(pre, SignHypothesis::Pos);
        CHECK(count_wraps(y) == 16);  // 19200 / 1200
    }
    SUBCASE("-600 residual, negative hypothesis -> -1600 Hz, period 1200") {
        ImpairmentConfig imp;
        imp.cfo_hz = -600.0;
        ChannelOptions copts;
        copts.max_toa_samples = 0.0;
        copts.pad_tail = 0;
        const auto pre = apply_impairments(tone, imp, nullptr, copts);
        const auto y = inject_offset(pre, SignHypothesis::Neg);
        CHECK(count_wraps(y) == 16);
        // slope must be negative between wraps
        const double d = std::arg(y.samples[100] * std::conj(y.samples[99]));
        CHECK(d < 0.0);
    }
}

TEST_CASE("doppler map interpolates and extrapolates linearly") {
    const DopplerMap map = DopplerMap::default_map();
    CHECK(map.rate_at(104.7) == doctest::Approx(-297.0));
    CHECK(map.rate_at(371.3) == doctest::Approx(-252.0));
    CHECK(map.rate_at(638.0) == doctest::Approx(-215.0));
    CHECK(map.rate_at(238.0) == doctest::Approx(0.5 * (-297.0 - 252.0)).epsilon(1e-3));
    // linear extrapolation beyond the anchors
    CHECK(map.rate_at(0.0) == doctest::Approx(-297.0 - 104.7 * 45.0 / 266.6).epsilon(1e-3));
    DopplerMap bad;
    bad.anchors = {{1.0, -100.0}};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("the worked disambiguation example selects 371.3 us") {
    const std::vector<double> candidates{104.7, 371.3, 638.0};
    const DopplerMap map = DopplerMap::default_map();  // rates -297, -252, -215 at those delays
    const std::size_t pick = pick_candidate_by_rate(candidates, map, -240.0);
    CHECK(candidates[pick] == doctest::Approx(371.3));
}

TEST_CASE("solve_toa_candidates covers the zero-delay case") {
    PreambleConfig cfg;
    const double f = 1500.0 / 1.92e6;
    const double n_l = 0.5 / f;  // first wrap of a D=0, no-injection series
    const auto cands = solve_toa_candidates(n_l, f, 0.0, 0, cfg, 700.0);
    REQUIRE(!cands.empty());
    double best = 1e9;
    for (double c : cands) best = std::min(best, std::abs(c));
    CHECK(best < 1e-6);
}

TEST_CASE("solve_toa_candidates inverts the wrap equation on a (D, cfo) grid") {
    PreambleConfig cfg;
    const double fs = cfg.sample_rate;
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 10; ++j) {
            const double d_us = 3.0 + 694.0 * i / 9.0;
            const double cfo = -600.0 + 1200.0 * j / 9.0;
            const double inj = cfo >= 0.0 ? 1000.0 : -1000.0;
            const double f_eff = (cfo + inj) / fs;
            const double f_hat = cfo / fs;
            const double d = d_us * 1e-6 * fs;
            // first wrap after the delay: f_eff*n - f_hat*d = 1/2 + k
            const double sigma = f_eff >= 0 ? 1.0 : -1.0;
            double k = sigma >= 0 ? std::ceil(f_eff * d - f_hat * d - 0.5)
                                  : std::floor(f_eff * d - f_hat * d - 0.5);
            const double n_l = (0.5 + k + f_hat * d) / f_eff;
            REQUIRE(n_l >= d - 1e-6);
            const auto cands = solve_toa_candidates(n_l, f_eff, inj / fs, 0, cfg, 700.0);
            double best = 1e9;
            for (double c : cands) best = std::min(best, std::abs(c - d_us));
            CHECK(best < 0.6);
        }
    }
}

TEST_CASE("solve_toa_candidates flags the degenerate denominator") {
    PreambleConfig cfg;
    const double inj = 1000.0 / cfg.sample_rate;
    // residual cfo ~ 0 with n_sc0 = 0 makes the denominator vanish
    CHECK_THROWS_AS(solve_toa_candidates(1000.0, inj, inj, 0, cfg, 700.0), std::domain_error);
}

TEST_CASE("compensate_delay advances the replica by round(toa * fs)") {
    IqBuffer replica;
    replica.samples.assign(64, cdouble{1.0, 0.0});
    replica.base_index = 5;
    CHECK(compensate_delay(replica, 0.0).base_index == 5);
    CHECK(compensate_delay(replica, 100.0).base_index == 5 + 192);
    CHECK(compensate_delay(replica, -100.0).base_index == 5 - 192);
}

TEST_CASE("three-sigma rejection drops the planted outlier and is idempotent") {
    std::vector<double> values(20, 1280.0);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += (i % 2 ? 0.5 : -0.5);
    values.push_back(10000.0);
    const auto kept = three_sigma_reject(values);
    CHECK(kept.size() == 20);
    for (double v : kept) CHECK(std::abs(v - 1280.0) <= 0.5);
    const auto again = three_sigma_reject(kept);
    CHECK(again == kept);
}

TEST_CASE("fine_cfo reproduces exact spacings and rejects outliers") {
    SUBCASE("all spacings 1280 -> 1500 Hz exactly") {
        std::vector<std::vector<double>> segments(1);
        for (int i = 0; i < 21; ++i) segments[0].push_back(1280.0 * i);
        const auto fine = fine_cfo(segments, SignHypothesis::Pos, 1.92e6);
        REQUIRE(fine.has_value());
        CHECK(fine->f_eff_hz == doctest::Approx(1500.0).epsilon(1e-12));
        CHECK(fine->count == 20);
    }
    SUBCASE("a wild spacing is rejected by the three-sigma pass") {
        std::vector<std::vector<double>> segments(2);
        for (int i = 0; i < 21; ++i) segments[0].push_back(1280.0 * i);
        segments[1] = {50000.0, 60000.0};  // one 10000-sample spacing
        const auto fine = fine_cfo(segments, SignHypothesis::Pos, 1.92e6);
        REQUIRE(fine.has_value());
        CHECK(fine->f_eff_hz == doctest::Approx(1500.0).epsilon(1e-12));
        CHECK(fine->count == 20);
    }
    SUBCASE("negative hypothesis carries the sign") {
        std::vector<std::vector<double>> segments(1);
        for (int i = 0; i < 5; ++i) segments[0].push_back(1200.0 * i);
        const auto fine = fine_cfo(segments, SignHypothesis::Neg, 1.92e6);
        REQUIRE(fine.has_value());
        CHECK(fine->f_eff_hz == doctest::Approx(-1600.0).epsilon(1e-12));
    }
    SUBCASE("no usable spacings") {
        std::vector<std::vector<double>> segments(3);
        segments[0] = {100.0};
        CHECK(!fine_cfo(segments, SignHypothesis::Pos, 1.92e6).has_value());
    }
}

TEST_CASE("fine_cfo removes the doppler drift using the measured rate") {
    const double fs = 1.92e6;
    const double f0 = 1500.0 / fs;
    const double rate = -300.0;
    const double alpha = rate / (fs * fs);
    // spacings consistent with a slope f0 + alpha*t, over several segments
    std::vector<std::vector<double>> segments;
    double p = 2000.0;
    for (int seg = 0; seg < 16; ++seg) {
        std::vector<double> pts{p};
        for (int i = 0; i < 2; ++i) {
            double t = 1.0 / f0;
            for (int it = 0; it < 8; ++it) t = 1.0 / (f0 + alpha * (p + 0.5 * t));
            p += t;
            pts.push_back(p);
        }
        segments.push_back(pts);
        p += 1000.0;
    }
    const auto biased = fine_cfo(segments, SignHypothesis::Pos, fs, 0.0, 0.0);
    const auto corrected = fine_cfo(segments, SignHypothesis::Pos, fs, rate, 0.0);
    REQUIRE(biased.has_value());
    REQUIRE(corrected.has_value());
    CHECK(std::abs(corrected->f_eff_hz - 1500.0) < 0.05);
    CHECK(std::abs(biased->f_eff_hz - 1500.0) > 1.0);  // the drift is visible uncorrected
}

TEST_CASE("noiseless end-to-end estimate is sub-microsecond and sub-hertz") {
    PreambleConfig cfg;
    cfg.n_rep = 8;
    const DopplerMap map = DopplerMap::default_map();
    const double toa = 104.7;
    const double cfo = 300.0;
    const double rate = map.rate_at(toa);
    const auto rx = make_rx(cfg, toa, cfo, kInf, rate, 1);
    TireConfig tire;
    const auto est = estimate(rx, cfg, map, rate, tire);
    REQUIRE(est.has_value());
    CHECK(std::abs(est->fine_toa_us - toa) < 1.0);
    CHECK(std::abs(est->cfo_hz - cfo) < 0.5);
    CHECK(est->candidates[static_cast<std::size_t>(est->chosen)].toa_us == est->fine_toa_us);
    CHECK(std::abs(est->coarse_toa_us - toa) < 30.0);
}

TEST_CASE("noiseless coarse stage lands within 2 us on average") {
    PreambleConfig cfg;
    cfg.n_rep = 8;
    const DopplerMap map = DopplerMap::default_map();
    TireConfig tire;
    Rng rng(31337);
    double acc = 0.0;
    int n_ok = 0;
    const int trials = 16;
    for (int t = 0; t < trials; ++t) {
        const double toa = rng.uniform(0.0, 700.0);
        const double cfo = rng.uniform(-600.0, 600.0);
        const double rate = map.rate_at(toa);
        const auto rx = make_rx(cfg, toa, cfo, kInf, rate, 100 + static_cast<std::uint64_t>(t));
        const auto est = estimate(rx, cfg, map, rate, tire);
        REQUIRE(est.has_value());
        acc += std::abs(est->coarse_toa_us - toa);
        ++n_ok;
    }
    CHECK(acc / n_ok < 2.0);
}

TEST_CASE("reported cfo is independent of the hypothesis branch") {
    PreambleConfig cfg;
    cfg.n_rep = 8;
    const DopplerMap map = DopplerMap::default_map();
    TireConfig tire;
    const double toa = 222.0;
    const double cfo = -20.0;  // both branches stay in their wrapping bands
    const double rate = map.rate_at(toa);
    const auto rx = make_rx(cfg, toa, cfo, kInf, rate, 3);
    const auto pos = estimate_with_hypothesis(rx, cfg, map, rate, tire, SignHypothesis::Pos);
    const auto neg = estimate_with_hypothesis(rx, cfg, map, rate, tire, SignHypothesis::Neg);
    REQUIRE(pos.has_value());
    REQUIRE(neg.has_value());
    CHECK(std::abs(pos->cfo_hz - neg->cfo_hz) < 0.1);
    CHECK(std::abs(pos->cfo_hz - cfo) < 0.5);
}

TEST_CASE("noise-only input reports preamble not found") {
    PreambleConfig cfg;
    cfg.n_rep = 2;
    IqBuffer rx;
    rx.samples.resize(static_cast<std::size_t>(cfg.total_len()) + 2048);
    Rng rng(17);
    for (auto& s : rx.samples) s = rng.cgaussian(1.0);
    TireConfig tire;
    const auto est = estimate(rx, cfg, DopplerMap::default_map(), -250.0, tire);
    CHECK(!est.has_value());
}

TEST_CASE("estimate is deterministic") {
    PreambleConfig cfg;
    cfg.n_rep = 2;
    const DopplerMap map = DopplerMap::default_map();
    TireConfig tire;
    const auto rx = make_rx(cfg, 150.0, 400.0, 3.0, map.rate_at(150.0), 11);
    const auto a = estimate(rx, cfg, map, map.rate_at(150.0), tire);
    const auto b = estimate(rx, cfg, map, map.rate_at(150.0), tire);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(a->fine_toa_us == b->fine_toa_us);
    CHECK(a->cfo_hz == b->cfo_hz);
    CHECK(a->coarse_toa_us == b->coarse_toa_us);
}
