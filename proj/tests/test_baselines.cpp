#include <doctest.h>

#include <cmath>
#include <vector>

#include "ntnsync/baselines.hpp"
#include "ntnsync/channel.hpp"
#include "ntnsync/preamble.hpp"
#include "ntnsync/rng.hpp"

using namespace ntnsync;

namespace {

IqBuffer impaired(const PreambleConfig& cfg, double toa, double cfo, double snr_db, std::uint64_t seed) {
    const auto x = gen_preamble(cfg, build_schedule(cfg));
    ImpairmentConfig imp;
    imp.toa_samples = toa;
    imp.cfo_hz = cfo;
    imp.snr_db = snr_db;
    imp.seed = seed;
    ChannelOptions opts;
    opts.sg_len = cfg.sg_len();
    return apply_impairments(x, imp, nullptr, opts);
}

}  // namespace

TEST_CASE("differential correlation finds the true delay noiselessly") {
    PreambleConfig cfg;
    cfg.n_rep = 2;
    const auto replica = gen_preamble(cfg, build_schedule(cfg));
    const double inf = std::numeric_limits<double>::infinity();

    SUBCASE("zero delay, zero cfo") {
        const auto rx = impaired(cfg, 0.0, 0.0, inf, 1);
        CHECK(diff_corr_toa(rx, replica, cfg.fft_len, 0, 400) == 0);
    }
    SUBCASE("200-sample delay with 1500 Hz CFO cancelled by the differential") {
        const auto rx = impaired(cfg, 200.0, 1500.0, inf, 1);
        CHECK(diff_corr_toa(rx, replica, cfg.fft_len, 0, 1408) == 200);
    }
    SUBCASE("empty search range throws") {
        const auto rx = impaired(cfg, 0.0, 0.0, inf, 1);
        CHECK_THROWS_AS(diff_corr_toa(rx, replica, cfg.fft_len, 10, 9), std::invalid_argument);
    }
}

TEST_CASE("sdwt of a constant is zero detail everywhere") {
    std::vector<double> x(4096, 3.0);
    const auto bands = sdwt(x, 8);
    REQUIRE(bands.details.size() == 8);
    for (const auto& level : bands.details) {
        REQUIRE(level.size() == x.size());
        // skip the zero-extension warm-up region
        for (std::size_t i = 256; i < level.size(); ++i) CHECK(std::abs(level[i]) < 1e-12);
    }
}

TEST_CASE("sdwt level-1 detail of a unit step is local to the step") {
    std::vector<double> x(2048, 0.0);
    const std::size_t c = 1000;
    for (std::size_t i = c; i < x.size(); ++i) x[i] = 1.0;
    const auto bands = sdwt(x, 3);
    const auto& d1 = bands.details[0];
    for (std::size_t i = 2; i < d1.size(); ++i) {
        if (i >= c - 1 && i <= c + 1) continue;
        CHECK(std::abs(d1[i]) < 1e-12);
    }
    CHECK(std::abs(d1[c]) > 0.5);
}

TEST_CASE("sdwt white-noise variance matches the orthonormal filter gain") {
    Rng rng(12);
    std::vector<double> x(100000);
    for (auto& v : x) v = rng.gaussian();
    const auto bands = sdwt(x, 8);
    for (int j : {0, 3, 7}) {
        const auto& d = bands.details[static_cast<std::size_t>(j)];
        double var = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 512; i < d.size(); ++i) {
            var += d[i] * d[i];
            ++count;
        }
        var /= static_cast<double>(count);
        CHECK(var == doctest::Approx(1.0).epsilon(0.05));
    }
}

TEST_CASE("sdwt shifts commute with input shifts exactly") {
    Rng rng(3);
    std::vector<double> x(4096);
    for (auto& v : x) v = rng.gaussian();
    const std::size_t k = 37;
    std::vector<double> shifted(x.size() + k, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) shifted[i + k] = x[i];
    const auto a = sdwt(x, 6);
    const auto b = sdwt(shifted, 6);
    for (int j : {0, 2, 5}) {
        const auto& da = a.details[static_cast<std::size_t>(j)];
        const auto& db = b.details[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < da.size(); i += 13)
            CHECK(db[i + k] == doctest::Approx(da[i]).epsilon(1e-12));
    }
}

TEST_CASE("cusum locates a clean mean step exactly") {
    std::vector<double> x(1000, 0.0);
    for (std::size_t i = 500; i < x.size(); ++i) x[i] = 1.0;
    CusumConfig cfg;
    const auto [tau, peak] = cusum_detect(x, cfg);
    CHECK(tau == 500);
    CHECK(peak == doctest::Approx(250.0));
}

TEST_CASE("cusum on a null series reports no confident change") {
    std::vector<double> x(1000, 0.0);
    CusumConfig cfg;
    const auto [tau, peak] = cusum_detect(x, cfg);
    CHECK(peak <= 0.0);
    (void)tau;
}

TEST_CASE("cusum against gaussian noise stays within 10 samples in 95+ of 100 trials") {
    int within = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(40 + trial);
        std::vector<double> x(1000);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i >= 500 ? 1.0 : 0.0) + rng.gaussian();
        CusumConfig cfg;
        const auto [tau, peak] = cusum_detect(x, cfg);
        if (std::llabs(tau - 500) <= 10) ++within;
        (void)peak;
    }
    CHECK(within >= 95);
}

TEST_CASE("cusum is invariant to affine rescaling when the hypothesis scales too") {
    Rng rng(9);
    std::vector<double> x(800);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i >= 321 ? 1.0 : 0.0) + 0.7 * rng.gaussian();
    CusumConfig base{0.0, 1.0, 0.7, 8};
    const auto [tau_a, peak_a] = cusum_detect(x, base);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 2.0 * x[i] + 5.0;
    CusumConfig scaled{5.0, 7.0, 1.4, 8};
    const auto [tau_b, peak_b] = cusum_detect(y, scaled);
    CHECK(tau_a == tau_b);
    CHECK(peak_a == doctest::Approx(peak_b).epsilon(1e-9));
}

TEST_CASE("cusum rejects degenerate hypotheses") {
    std::vector<double> x(100, 0.0);
    CusumConfig cfg;
    cfg.theta1 = cfg.theta0;
    CHECK_THROWS_AS(cusum_detect(x, cfg), std::invalid_argument);
}

TEST_CASE("sdwt+cusum finds a noiseless onset at 384 within 8 samples") {
    PreambleConfig cfg;
    cfg.n_rep = 2;
    const auto replica = gen_preamble(cfg, build_schedule(cfg));
    const auto rx = impaired(cfg, 384.0, 800.0, std::numeric_limits<double>::infinity(), 1);
    const double toa = dwt_cusum_toa(rx, replica, 8);
    CHECK(std::abs(toa - 384.0) <= 8.0);
}

TEST_CASE("sdwt rejects series shorter than 2^levels") {
    std::vector<double> x(100, 0.0);
    CHECK_THROWS_AS(sdwt(x, 8), std::invalid_argument);
}
