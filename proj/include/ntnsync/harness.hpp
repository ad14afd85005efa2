#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ntnsync/channel.hpp"
#include "ntnsync/estimator.hpp"
#include "ntnsync/preamble.hpp"

namespace ntnsync {

enum class Method { Proposed, DiffCorr, DwtCusum };

const char* to_string(Method m);
const char* to_string(ChannelType c);
Method method_from_string(const std::string& s);
ChannelType channel_from_string(const std::string& s);

// One Monte Carlo campaign: the grid is the cross product of snr_db_list,
// n_rep_list and channels, with trials_per_point trials per grid point.
// Per-trial draws derive from (master_seed, trial-in-point), so different
// grid points and methods see paired impairments.
struct ExperimentConfig {
    std::vector<double> snr_db_list{3.0};
    std::vector<int> n_rep_list{8};
    std::vector<ChannelType> channels{ChannelType::Awgn};
    int trials_per_point = 200;
    double toa_prior_lo_us = 0.0;
    double toa_prior_hi_us = 700.0;
    double cfo_prior_lo_hz = -600.0;
    double cfo_prior_hi_hz = 600.0;
    Method method = Method::Proposed;
    std::uint64_t master_seed = 1;
    std::string output_dir;

    double rate_noise_hz_per_s = 10.0;  // std of the measured-Doppler-rate error
    PreambleConfig preamble;            // n_rep comes from the grid
    TdlcProfile tdlc = TdlcProfile::default_profile();
    DopplerMap doppler_map = DopplerMap::default_map();
    TireConfig tire;
    EstimatorOptions estimator;
    std::shared_ptr<TireModel> pretrained;  // optional: skip per-trial training

    void validate() const;
    static ExperimentConfig from_json_text(const std::string& text);
};

struct TrialRecord {
    std::int64_t trial_id = 0;
    Method method = Method::Proposed;
    double snr_db = 0.0;
    int n_rep = 0;
    ChannelType channel = ChannelType::Awgn;
    double true_toa_us = 0.0;
    double true_cfo_hz = 0.0;
    double coarse_toa_us = 0.0;
    double est_toa_us = 0.0;
    double est_cfo_hz = 0.0;
    std::string status;  // ok | not_found | failed
    double wall_ms = 0.0;
};

struct CampaignResult {
    std::vector<TrialRecord> records;       // sorted by trial_id
    std::string estimates_jsonl;            // one SyncEstimate JSON object per ok trial
};

// Runs every trial of the grid (worker count from NTNSYNC_THREADS, default
// hardware concurrency); the result set is deterministic for a given
// master_seed regardless of worker count or execution order.
CampaignResult run_campaign(const ExperimentConfig& cfg);

struct GroupSummary {
    Method method = Method::Proposed;
    double snr_db = 0.0;
    int n_rep = 0;
    ChannelType channel = ChannelType::Awgn;
    int n_trials = 0;
    int n_ok = 0;
    int n_not_found = 0;
    int n_failed = 0;
    double toa_err_mean_us = 0.0;
    double toa_err_max_us = 0.0;
    // |CFO error| percentiles in Hz, keyed by percent (50, 90, 95, 99, 100).
    std::map<int, double> cfo_err_percentiles_hz;
    std::vector<double> toa_err_cdf_x_us;  // sorted |ToA error|
    std::vector<double> toa_err_cdf_p;     // rank/(n+1)
};

// Per (method, snr, n_rep, channel) aggregation. Groups with no usable
// records still appear, flagged by n_ok == 0.
std::vector<GroupSummary> summarize(const std::vector<TrialRecord>& records);

// records.csv holds the deterministic trial fields; wall-clock timings go to
// a separate timings.csv so campaign outputs are byte-identical across runs.
void write_records_csv(const std::vector<TrialRecord>& records, const std::string& path);
void write_timings_csv(const std::vector<TrialRecord>& records, const std::string& path);
std::vector<TrialRecord> read_records_csv(const std::string& path);
std::string summary_to_json_text(const std::vector<GroupSummary>& groups);

}  // namespace ntnsync
