#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ntnsync/phase_series.hpp"

namespace ntnsync {

struct TireConfig {
    int window_len = 64;   // time-domain window fed to the autoencoder
    int stride = 4;        // window grid spacing
    int n_invariant = 1;   // time-invariant features (the slope)
    int n_instant = 3;     // instantaneous features
    double consistency_weight = 0.01;  // weight of the cross-window invariance penalty
    int epochs = 50;
    double lr = 1e-3;
    double prominence_k = 2.0;  // threshold = mean(D) + k*std(D)
    std::uint64_t seed = 0x5eedULL;

    void validate() const;
};

// Single-hidden-layer autoencoder: h = tanh(W1*x + b1), xhat = W2*h + b2.
// Windows are mean-removed and divided by input_scale (the RMS of the
// training windows) before encoding, so the invariant feature tracks slope
// rather than level and detection is invariant to rescaling the series.
struct TireModel {
    int window_len = 0;
    int n_invariant = 0;
    int n_instant = 0;
    double input_scale = 1.0;
    std::vector<double> w1;  // (n_invariant+n_instant) x window_len, row-major
    std::vector<double> b1;
    std::vector<double> w2;  // window_len x (n_invariant+n_instant), row-major
    std::vector<double> b2;

    int hidden() const { return n_invariant + n_instant; }

    // Encodes one raw window (mean-removal and scaling applied here).
    void encode(const double* window, double* hidden_out) const;

    // Little-endian blob: magic "NTIR", u32 version, u32 dims, f32 scale,
    // f32 weights. Used by the pre-trained-weights path.
    void save(const std::string& path) const;
    static TireModel load(const std::string& path);
};

struct ChangePoint {
    double index = 0.0;  // absolute sample index, sub-sample refined
    double prominence = 0.0;
};

struct ChangePointSet {
    std::vector<ChangePoint> points;  // ascending by index
    // Post-processed dissimilarity (absolute index, value) used for peak
    // picking, kept for diagnostics and plotting.
    std::vector<std::pair<double, double>> dissimilarity;
    double threshold = 0.0;
};

// Self-supervised training on the series itself by mini-batch gradient
// descent on reconstruction error + consistency penalty between the
// invariant features of consecutive windows. Deterministic given cfg.seed.
TireModel train_tire(const PhaseSeries& ps, const TireConfig& cfg);

// Raw dissimilarity D_n = ||s_n - s_{n+window_len}||_2 between the invariant
// features of adjacent windows, reported at the shared window boundary.
std::vector<std::pair<double, double>> dissimilarity(const TireModel& model, const PhaseSeries& ps,
                                                     const TireConfig& cfg);

// Full detection with an already trained model: dissimilarity, a centered
// moving average one window long (the raw measure is double-humped around a
// change; averaging recenters it), prominence thresholding at
// mean + k*std, and parabolic sub-grid refinement of kept peaks.
ChangePointSet detect_with_model(const TireModel& model, const PhaseSeries& ps, const TireConfig& cfg);

// Trains on ps, then detects. An empty result is legal (no change present).
ChangePointSet detect(const PhaseSeries& ps, const TireConfig& cfg);

}  // namespace ntnsync
