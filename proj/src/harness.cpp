#include "ntnsync/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "ntnsync/baselines.hpp"
#include "ntnsync/rng.hpp"

namespace ntnsync {

using nlohmann::json;

const char* to_string(Method m) {
    switch (m) {
        case Method::Proposed: return "proposed";
        case Method::DiffCorr: return "diffcorr";
        case Method::DwtCusum: return "dwtcusum";
    }
    return "?";
}

const char* to_string(ChannelType c) { return c == ChannelType::Awgn ? "awgn" : "tdlc"; }

Method method_from_string(const std::string& s) {
    if (s == "proposed") return Method::Proposed;
    if (s == "diffcorr") return Method::DiffCorr;
    if (s == "dwtcusum") return Method::DwtCusum;
    throw std::invalid_argument("unknown method: " + s);
}

ChannelType channel_from_string(const std::string& s) {
    if (s == "awgn") return ChannelType::Awgn;
    if (s == "tdlc") return ChannelType::TdlC;
    throw std::invalid_argument("unknown channel: " + s);
}

void ExperimentConfig::validate() const {
    if (trials_per_point < 1) throw std::invalid_argument("trials_per_point must be >= 1");
    if (snr_db_list.empty() || n_rep_list.empty() || channels.empty())
        throw std::invalid_argument("snr_db_list, n_rep_list and channels must be non-empty");
    if (toa_prior_lo_us < 0.0 || toa_prior_hi_us < toa_prior_lo_us)
        throw std::invalid_argument("bad toa prior");
    if (toa_prior_hi_us > estimator.toa_max_us + 1e-9)
        throw std::invalid_argument("toa prior exceeds the estimator search range");
    if (cfo_prior_hi_hz < cfo_prior_lo_hz) throw std::invalid_argument("bad cfo prior");
    if (std::max(std::abs(cfo_prior_lo_hz), std::abs(cfo_prior_hi_hz)) >
        estimator.cfo_prior_hz + 1e-9)
        throw std::invalid_argument("cfo prior exceeds the estimator frequency uncertainty");
    preamble.validate();
    tdlc.validate();
    doppler_map.validate();
    tire.validate();
}

namespace {

double snr_from_json(const json& v) {
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "inf" || s == "noiseless") return std::numeric_limits<double>::infinity();
        throw std::invalid_argument("bad snr value: " + s);
    }
    return v.get<double>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig cfg;
    if (j.contains("snr_db_list")) {
        cfg.snr_db_list.clear();
        for (const auto& v : j["snr_db_list"]) cfg.snr_db_list.push_back(snr_from_json(v));
    }
    if (j.contains("n_rep_list")) cfg.n_rep_list = j["n_rep_list"].get<std::vector<int>>();
    if (j.contains("channels")) {
        cfg.channels.clear();
        for (const auto& v : j["channels"]) cfg.channels.push_back(channel_from_string(v.get<std::string>()));
    }
    if (j.contains("trials_per_point")) cfg.trials_per_point = j["trials_per_point"].get<int>();
    if (j.contains("toa_prior_us")) {
        cfg.toa_prior_lo_us = j["toa_prior_us"][0].get<double>();
        cfg.toa_prior_hi_us = j["toa_prior_us"][1].get<double>();
    }
    if (j.contains("cfo_prior_hz")) {
        cfg.cfo_prior_lo_hz = j["cfo_prior_hz"][0].get<double>();
        cfg.cfo_prior_hi_hz = j["cfo_prior_hz"][1].get<double>();
    }
    if (j.contains("method")) cfg.method = method_from_string(j["method"].get<std::string>());
    if (j.contains("master_seed")) cfg.master_seed = j["master_seed"].get<std::uint64_t>();
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("rate_noise_hz_per_s")) cfg.rate_noise_hz_per_s = j["rate_noise_hz_per_s"].get<double>();

    if (j.contains("preamble")) {
        const json& p = j["preamble"];
        if (p.contains("format"))
            cfg.preamble.format = p["format"].get<int>() == 0 ? PreambleFormat::Format0 : PreambleFormat::Format1;
        if (p.contains("n_off")) cfg.preamble.n_off = p["n_off"].get<int>();
        if (p.contains("n_sc_total")) cfg.preamble.n_sc_total = p["n_sc_total"].get<int>();
        if (p.contains("fft_len")) cfg.preamble.fft_len = p["fft_len"].get<int>();
        if (p.contains("symbols_per_sg")) cfg.preamble.symbols_per_sg = p["symbols_per_sg"].get<int>();
        if (p.contains("sample_rate")) cfg.preamble.sample_rate = p["sample_rate"].get<double>();
        if (p.contains("n_start")) cfg.preamble.n_start = p["n_start"].get<std::int64_t>();
    }
    if (j.contains("tdlc_profile")) {
        cfg.tdlc.taps.clear();
        for (const auto& t : j["tdlc_profile"]["taps"]) {
            TdlcTap tap;
            tap.delay_samples = t["delay"].get<int>();
            tap.avg_power = t["power"].get<double>();
            tap.los = t.value("fading", std::string("rayleigh")) == "los";
            cfg.tdlc.taps.push_back(tap);
        }
    }
    if (j.contains("doppler_map")) {
        cfg.doppler_map.anchors.clear();
        for (const auto& a : j["doppler_map"]["anchors"])
            cfg.doppler_map.anchors.emplace_back(a[0].get<double>(), a[1].get<double>());
    }
    if (j.contains("tire")) {
        const json& t = j["tire"];
        if (t.contains("window_len")) cfg.tire.window_len = t["window_len"].get<int>();
        if (t.contains("stride")) cfg.tire.stride = t["stride"].get<int>();
        if (t.contains("n_invariant")) cfg.tire.n_invariant = t["n_invariant"].get<int>();
        if (t.contains("n_instant")) cfg.tire.n_instant = t["n_instant"].get<int>();
        if (t.contains("consistency_weight")) cfg.tire.consistency_weight = t["consistency_weight"].get<double>();
        if (t.contains("epochs")) cfg.tire.epochs = t["epochs"].get<int>();
        if (t.contains("lr")) cfg.tire.lr = t["lr"].get<double>();
        if (t.contains("prominence_k")) cfg.tire.prominence_k = t["prominence_k"].get<double>();
        if (t.contains("seed")) cfg.tire.seed = t["seed"].get<std::uint64_t>();
    }
    if (j.contains("estimator")) {
        const json& e = j["estimator"];
        if (e.contains("injected_offset_hz")) cfg.estimator.injected_offset_hz = e["injected_offset_hz"].get<double>();
        if (e.contains("smooth_window")) cfg.estimator.smooth_window = e["smooth_window"].get<int>();
        if (e.contains("coarse_smooth_window"))
            cfg.estimator.coarse_smooth_window = e["coarse_smooth_window"].get<int>();
        if (e.contains("guard_samples")) cfg.estimator.guard_samples = e["guard_samples"].get<int>();
        if (e.contains("residual_bound_us")) cfg.estimator.residual_bound_us = e["residual_bound_us"].get<double>();
        if (e.contains("toa_max_us")) cfg.estimator.toa_max_us = e["toa_max_us"].get<double>();
        if (e.contains("onset_window_us")) cfg.estimator.onset_window_us = e["onset_window_us"].get<double>();
    }
    cfg.estimator.tire = cfg.tire;
    cfg.validate();
    return cfg;
}

namespace {

struct TrialTask {
    std::size_t slot;
    double snr_db;
    int n_rep;
    ChannelType channel;
    int trial_in_point;
};

int worker_count(std::size_t n_tasks) {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("NTNSYNC_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = cap;
    }
    if (n < 1) n = 1;
    return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), std::max<std::size_t>(1, n_tasks)));
}

json estimate_to_json(std::int64_t trial_id, const SyncEstimate& est) {
    json cands = json::array();
    for (const auto& c : est.candidates) cands.push_back({{"toa_us", c.toa_us}, {"implied_rate", c.implied_rate}});
    return json{{"trial_id", trial_id},
                {"coarse_toa_us", est.coarse_toa_us},
                {"fine_toa_us", est.fine_toa_us},
                {"cfo_hz", est.cfo_hz},
                {"t_ph_samples", est.t_ph_samples},
                {"first_wrap_index", est.first_wrap_index},
                {"candidates", cands},
                {"chosen", est.chosen},
                {"sign_hypothesis", est.sign_hypothesis == SignHypothesis::Pos ? "pos" : "neg"},
                {"diagnostics",
                 json{{"onset_toa_us", est.diagnostics.onset_toa_us},
                      {"coarse_t_ph", est.diagnostics.coarse_t_ph},
                      {"pooled_distance_var", est.diagnostics.pooled_distance_var},
                      {"n_distances", est.diagnostics.n_distances},
                      {"n_consensus_points", est.diagnostics.n_consensus_points},
                      {"consensus_rms_cycles", est.diagnostics.consensus_rms_cycles},
                      {"validated_points", est.diagnostics.validated_points}}}};
}

}  // namespace

CampaignResult run_campaign(const ExperimentConfig& cfg) {
    cfg.validate();

    std::vector<TrialTask> tasks;
    std::size_t slot = 0;
    for (double snr : cfg.snr_db_list)
        for (int n_rep : cfg.n_rep_list)
            for (ChannelType ch : cfg.channels)
                for (int t = 0; t < cfg.trials_per_point; ++t)
                    tasks.push_back({slot++, snr, n_rep, ch, t});

    CampaignResult result;
    result.records.resize(tasks.size());
    std::vector<std::optional<std::pair<std::int64_t, SyncEstimate>>> estimates(tasks.size());

    std::atomic<std::size_t> next{0};
    auto run_one = [&](const TrialTask& task) {
        const auto t0 = std::chrono::steady_clock::now();
        TrialRecord rec;
        rec.trial_id = static_cast<std::int64_t>(task.slot);
        rec.method = cfg.method;
        rec.snr_db = task.snr_db;
        rec.n_rep = task.n_rep;
        rec.channel = task.channel;

        // Draws depend only on (master_seed, trial-in-point): paired across
        // grid points and methods.
        Rng rng = Rng::derive(cfg.master_seed, static_cast<std::uint64_t>(task.trial_in_point));
        const double toa_us = rng.uniform(cfg.toa_prior_lo_us, cfg.toa_prior_hi_us);
        const double cfo_hz = rng.uniform(cfg.cfo_prior_lo_hz, cfg.cfo_prior_hi_hz);
        const std::uint64_t channel_seed = rng.next_u64();
        const double rate_noise = rng.gaussian() * cfg.rate_noise_hz_per_s;
        rec.true_toa_us = toa_us;
        rec.true_cfo_hz = cfo_hz;

        PreambleConfig pcfg = cfg.preamble;
        pcfg.n_rep = task.n_rep;

        try {
            const SubcarrierSchedule sched = build_schedule(pcfg);
            const IqBuffer clean = gen_preamble(pcfg, sched);

            ImpairmentConfig imp;
            imp.toa_samples = toa_us * 1e-6 * pcfg.sample_rate;
            imp.cfo_hz = cfo_hz;
            imp.doppler_rate_hz_per_s = cfg.doppler_map.rate_at(toa_us);
            imp.snr_db = task.snr_db;
            imp.channel = task.channel;
            imp.seed = channel_seed;

            ChannelOptions chopts;
            chopts.max_toa_samples = cfg.estimator.toa_max_us * 1e-6 * pcfg.sample_rate + 2.0;
            chopts.sg_len = pcfg.sg_len();
            chopts.sample_rate = pcfg.sample_rate;
            const IqBuffer rx = apply_impairments(clean, imp, task.channel == ChannelType::TdlC ? &cfg.tdlc : nullptr,
                                                  chopts);

            const double measured_rate = imp.doppler_rate_hz_per_s + rate_noise;

            if (cfg.method == Method::Proposed) {
                EstimatorOptions eopts = cfg.estimator;
                eopts.tire = cfg.tire;
                eopts.pretrained = cfg.pretrained;
                const auto est = estimate(rx, pcfg, cfg.doppler_map, measured_rate, eopts.tire, eopts);
                if (est) {
                    rec.status = "ok";
                    rec.coarse_toa_us = est->coarse_toa_us;
                    rec.est_toa_us = est->fine_toa_us;
                    rec.est_cfo_hz = est->cfo_hz;
                    estimates[task.slot] = std::make_pair(rec.trial_id, *est);
                } else {
                    rec.status = "not_found";
                }
            } else if (cfg.method == Method::DiffCorr) {
                const std::int64_t d_max =
                    static_cast<std::int64_t>(std::ceil(cfg.estimator.toa_max_us * 1e-6 * pcfg.sample_rate));
                const std::int64_t d = diff_corr_toa(rx, clean, pcfg.fft_len, 0, d_max);
                rec.status = "ok";
                rec.est_toa_us = static_cast<double>(d) / pcfg.sample_rate * 1e6;
            } else {
                const double d = dwt_cusum_toa(rx, clean, 8);
                rec.status = "ok";
                rec.est_toa_us = d / pcfg.sample_rate * 1e6;
            }
        } catch (const std::exception&) {
            rec.status = "failed";
        }
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.records[task.slot] = std::move(rec);
    };

    const int workers = worker_count(tasks.size());
    if (workers <= 1) {
        for (const auto& task : tasks) run_one(task);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= tasks.size()) return;
                    run_one(tasks[i]);
                }
            });
        for (auto& th : pool) th.join();
    }

    std::string jsonl;
    for (const auto& e : estimates)
        if (e) jsonl += estimate_to_json(e->first, e->second).dump() + "\n";
    result.estimates_jsonl = std::move(jsonl);
    return result;
}

namespace {

double percentile(std::vector<double> sorted, double pct) {
    if (sorted.empty()) return 0.0;
    const double idx = pct / 100.0 * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
    const std::size_t hi = std::min(sorted.size() - 1, lo + 1);
    const double t = idx - static_cast<double>(lo);
    return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

std::string format_snr(double snr) {
    if (std::isinf(snr)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", snr);
    return buf;
}

}  // namespace

std::vector<GroupSummary> summarize(const std::vector<TrialRecord>& records) {
    // Key order fixes the output ordering: method, snr, n_rep, channel.
    std::map<std::tuple<int, double, int, int>, GroupSummary> groups;
    for (const auto& rec : records) {
        const auto key = std::make_tuple(static_cast<int>(rec.method), rec.snr_db, rec.n_rep,
                                         static_cast<int>(rec.channel));
        auto& g = groups[key];
        g.method = rec.method;
        g.snr_db = rec.snr_db;
        g.n_rep = rec.n_rep;
        g.channel = rec.channel;
        ++g.n_trials;
        if (rec.status == "ok") ++g.n_ok;
        else if (rec.status == "not_found") ++g.n_not_found;
        else ++g.n_failed;
    }

    std::vector<GroupSummary> out;
    for (auto& [key, g] : groups) {
        std::vector<double> toa_err;
        std::vector<double> cfo_err;
        for (const auto& rec : records) {
            if (rec.status != "ok") continue;
            if (static_cast<int>(rec.method) != std::get<0>(key) || rec.snr_db != std::get<1>(key) ||
                rec.n_rep != std::get<2>(key) || static_cast<int>(rec.channel) != std::get<3>(key))
                continue;
            toa_err.push_back(std::abs(rec.est_toa_us - rec.true_toa_us));
            if (rec.method == Method::Proposed) cfo_err.push_back(std::abs(rec.est_cfo_hz - rec.true_cfo_hz));
        }
        std::sort(toa_err.begin(), toa_err.end());
        std::sort(cfo_err.begin(), cfo_err.end());
        if (!toa_err.empty()) {
            double sum = 0.0;
            for (double v : toa_err) sum += v;
            g.toa_err_mean_us = sum / static_cast<double>(toa_err.size());
            g.toa_err_max_us = toa_err.back();
            g.toa_err_cdf_x_us = toa_err;
            g.toa_err_cdf_p.resize(toa_err.size());
            for (std::size_t i = 0; i < toa_err.size(); ++i)
                g.toa_err_cdf_p[i] = static_cast<double>(i + 1) / static_cast<double>(toa_err.size() + 1);
        }
        for (int pct : {50, 90, 95, 99, 100})
            if (!cfo_err.empty()) g.cfo_err_percentiles_hz[pct] = percentile(cfo_err, pct);
        out.push_back(std::move(g));
    }
    return out;
}

void write_records_csv(const std::vector<TrialRecord>& records, const std::string& path) {
    std::vector<const TrialRecord*> sorted;
    sorted.reserve(records.size());
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const TrialRecord* a, const TrialRecord* b) { return a->trial_id < b->trial_id; });

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    std::fputs("trial_id,method,snr_db,n_rep,channel,true_toa_us,true_cfo_hz,coarse_toa_us,est_toa_us,est_cfo_hz,status\n", f);
    for (const TrialRecord* r : sorted) {
        std::fprintf(f, "%lld,%s,%s,%d,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%s\n",
                     static_cast<long long>(r->trial_id), to_string(r->method), format_snr(r->snr_db).c_str(),
                     r->n_rep, to_string(r->channel), r->true_toa_us, r->true_cfo_hz, r->coarse_toa_us,
                     r->est_toa_us, r->est_cfo_hz, r->status.c_str());
    }
    std::fclose(f);
}

void write_timings_csv(const std::vector<TrialRecord>& records, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    std::fputs("trial_id,wall_ms\n", f);
    for (const auto& r : records)
        std::fprintf(f, "%lld,%.3f\n", static_cast<long long>(r.trial_id), r.wall_ms);
    std::fclose(f);
}

std::vector<TrialRecord> read_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
    std::vector<TrialRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        TrialRecord r;
        auto next = [&]() {
            if (!std::getline(ss, field, ',')) throw std::runtime_error("short csv row: " + line);
            return field;
        };
        r.trial_id = std::stoll(next());
        r.method = method_from_string(next());
        {
            const std::string s = next();
            r.snr_db = (s == "inf") ? std::numeric_limits<double>::infinity() : std::stod(s);
        }
        r.n_rep = std::stoi(next());
        r.channel = channel_from_string(next());
        r.true_toa_us = std::stod(next());
        r.true_cfo_hz = std::stod(next());
        r.coarse_toa_us = std::stod(next());
        r.est_toa_us = std::stod(next());
        r.est_cfo_hz = std::stod(next());
        r.status = next();
        out.push_back(std::move(r));
    }
    return out;
}

std::string summary_to_json_text(const std::vector<GroupSummary>& groups) {
    json arr = json::array();
    for (const auto& g : groups) {
        json jg{{"method", to_string(g.method)},
                {"snr_db", std::isinf(g.snr_db) ? json("inf") : json(g.snr_db)},
                {"n_rep", g.n_rep},
                {"channel", to_string(g.channel)},
                {"n_trials", g.n_trials},
                {"n_ok", g.n_ok},
                {"n_not_found", g.n_not_found},
                {"n_failed", g.n_failed}};
        if (g.n_ok > 0) {
            jg["toa_err_mean_us"] = g.toa_err_mean_us;
            jg["toa_err_max_us"] = g.toa_err_max_us;
            json pct;
            for (const auto& [k, v] : g.cfo_err_percentiles_hz) pct[std::to_string(k)] = v;
            if (!g.cfo_err_percentiles_hz.empty()) jg["cfo_err_percentiles_hz"] = pct;
            jg["toa_err_cdf_us"] = g.toa_err_cdf_x_us;
            jg["toa_err_cdf_p"] = g.toa_err_cdf_p;
        }
        arr.push_back(std::move(jg));
    }
    return json{{"groups", arr}}.dump(2) + "\n";
}

}  // namespace ntnsync
