// ntnsync - NB-IoT NPRACH uplink synchronization simulator and estimator.
//
// Subcommands:
//   run        run a Monte Carlo campaign from a JSON config
//   summarize  aggregate a records.csv into a JSON summary
//   gen        generate a preamble and dump raw IQ (f32 interleaved)
//   demo-phase emit a phase-series CSV trace for a canned scenario

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "ntnsync/baselines.hpp"
#include "ntnsync/harness.hpp"
#include "ntnsync/io_util.hpp"

using namespace ntnsync;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
}

// Self-supervised weights for the pre-training path: train on the phase
// series of a nominal injected preamble at the first grid point.
TireModel pretrain_model(const ExperimentConfig& cfg) {
    PreambleConfig pcfg = cfg.preamble;
    pcfg.n_rep = cfg.n_rep_list.front();
    const auto sched = build_schedule(pcfg);
    const IqBuffer clean = gen_preamble(pcfg, sched);
    ImpairmentConfig imp;
    imp.cfo_hz = 0.5 * (cfg.cfo_prior_lo_hz + cfg.cfo_prior_hi_hz);
    imp.snr_db = cfg.snr_db_list.front();
    imp.seed = cfg.master_seed ^ 0x7e57;
    ChannelOptions chopts;
    chopts.sg_len = pcfg.sg_len();
    chopts.sample_rate = pcfg.sample_rate;
    const IqBuffer rx = apply_impairments(clean, imp, nullptr, chopts);
    const IqBuffer rxh = inject_offset(rx, SignHypothesis::Pos, cfg.estimator.injected_offset_hz, pcfg.sample_rate);
    PhaseSeries ps = extract_phase(dechirp(rxh, clean), cfg.estimator.smooth_window);
    return train_tire(ps, cfg.tire);
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::string& tire_weights, const std::string& save_tire_weights) {
    ExperimentConfig cfg;
    try {
        cfg = ExperimentConfig::from_json_text(read_file(config_path));
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (cfg.output_dir.empty()) {
        std::cerr << "config error: no output directory (use --out or output_dir)\n";
        return 1;
    }
    try {
        std::filesystem::create_directories(cfg.output_dir);
        if (!save_tire_weights.empty()) pretrain_model(cfg).save(save_tire_weights);
        if (!tire_weights.empty())
            cfg.pretrained = std::make_shared<TireModel>(TireModel::load(tire_weights));
        cfg.estimator.pretrained = cfg.pretrained;

        const CampaignResult result = run_campaign(cfg);
        const auto dir = std::filesystem::path(cfg.output_dir);
        write_records_csv(result.records, (dir / "records.csv").string());
        write_timings_csv(result.records, (dir / "timings.csv").string());
        write_file((dir / "summary.json").string(), summary_to_json_text(summarize(result.records)));
        if (!result.estimates_jsonl.empty())
            write_file((dir / "estimates.jsonl").string(), result.estimates_jsonl);
        std::cout << "wrote " << result.records.size() << " trials to " << cfg.output_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
}

int cmd_summarize(const std::string& csv_path) {
    try {
        const auto records = read_records_csv(csv_path);
        std::cout << summary_to_json_text(summarize(records));
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
}

int cmd_gen(const std::string& preamble_json, const std::string& iq_path) {
    try {
        PreambleConfig cfg;
        if (!preamble_json.empty()) {
            const nlohmann::json p = nlohmann::json::parse(read_file(preamble_json));
            if (p.contains("format"))
                cfg.format = p["format"].get<int>() == 0 ? PreambleFormat::Format0 : PreambleFormat::Format1;
            if (p.contains("n_rep")) cfg.n_rep = p["n_rep"].get<int>();
            if (p.contains("n_start")) cfg.n_start = p["n_start"].get<std::int64_t>();
            if (p.contains("n_off")) cfg.n_off = p["n_off"].get<int>();
            if (p.contains("n_sc_total")) cfg.n_sc_total = p["n_sc_total"].get<int>();
            if (p.contains("fft_len")) cfg.fft_len = p["fft_len"].get<int>();
            if (p.contains("symbols_per_sg")) cfg.symbols_per_sg = p["symbols_per_sg"].get<int>();
            if (p.contains("sample_rate")) cfg.sample_rate = p["sample_rate"].get<double>();
        }
        cfg.validate();
        const auto sched = build_schedule(cfg);
        write_iq_f32(gen_preamble(cfg, sched), iq_path);
        std::cout << "wrote " << cfg.total_len() << " samples to " << iq_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_demo_phase(const std::string& scenario, const std::string& csv_path) {
    try {
        if (scenario != "fig3") {
            std::cerr << "config error: unknown scenario '" << scenario << "' (have: fig3)\n";
            return 1;
        }
        // Delay of 200 samples with a 1500 Hz CFO: the wrapped phase series
        // is a sawtooth with a 1280-sample period.
        PreambleConfig cfg;
        cfg.n_rep = 1;
        const auto sched = build_schedule(cfg);
        const IqBuffer clean = gen_preamble(cfg, sched);
        ImpairmentConfig imp;
        imp.toa_samples = 200.0;
        imp.cfo_hz = 1500.0;
        ChannelOptions chopts;
        chopts.sg_len = cfg.sg_len();
        const IqBuffer rx = apply_impairments(clean, imp, nullptr, chopts);
        PhaseSeries ps = extract_phase(dechirp(rx, clean), 1);
        ps.sg_len = cfg.sg_len();
        write_phase_csv(ps, csv_path);
        std::cout << "wrote " << ps.size() << " phase samples to " << csv_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NB-IoT NPRACH uplink synchronization over LEO channels"};
    app.require_subcommand(1);

    std::string config_path, out_dir, tire_weights, save_tire_weights;
    auto* run = app.add_subcommand("run", "run a Monte Carlo campaign");
    run->add_option("--config", config_path, "campaign JSON config")->required();
    run->add_option("--out", out_dir, "output directory (overrides config)");
    run->add_option("--tire-weights", tire_weights, "pre-trained TIRE weights blob");
    run->add_option("--save-tire-weights", save_tire_weights, "train once and save weights here");

    std::string csv_path;
    auto* summ = app.add_subcommand("summarize", "aggregate a records.csv");
    summ->add_option("csv", csv_path, "records.csv path")->required();

    std::string preamble_json, iq_path;
    auto* gen = app.add_subcommand("gen", "generate a preamble IQ dump");
    gen->add_option("--preamble", preamble_json, "preamble JSON config");
    gen->add_option("--iq", iq_path, "output IQ file (f32 interleaved)")->required();

    std::string scenario{"fig3"}, phase_csv;
    auto* demo = app.add_subcommand("demo-phase", "emit a phase-series trace");
    demo->add_option("--scenario", scenario, "scenario name (fig3)");
    demo->add_option("--csv", phase_csv, "output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (run->parsed()) return cmd_run(config_path, out_dir, tire_weights, save_tire_weights);
    if (summ->parsed()) return cmd_summarize(csv_path);
    if (gen->parsed()) return cmd_gen(preamble_json, iq_path);
    if (demo->parsed()) return cmd_demo_phase(scenario, phase_csv);
    return 1;
}
