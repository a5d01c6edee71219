// Command-line front end: generate datasets, run the benchmark sweep, score
// prediction files, and re-emit reports from stored per-run rows.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "upbench/data.hpp"
#include "upbench/dgp.hpp"
#include "upbench/harness.hpp"
#include "upbench/metrics.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitTraining = 3;

int cmd_generate(const std::string& setting, double knob, std::uint64_t seed,
                 const std::string& out, std::size_t n, const std::string& csv,
                 const std::string& mapping) {
    upbench::ExperimentConfig cfg;
    cfg.master_seed = seed;
    cfg.settings = {setting};
    if (!csv.empty()) {
        cfg.data.source = upbench::DataSourceConfig::Source::Csv;
        cfg.data.csv_path = csv;
        cfg.data.mapping_path = mapping;
    } else {
        cfg.data.n = n;
    }

    std::size_t knob_index = knob_count(cfg, setting);
    for (std::size_t ki = 0; ki < knob_count(cfg, setting); ++ki) {
        if (upbench::knob_label(cfg, setting, ki) == knob) knob_index = ki;
    }
    if (knob_index == knob_count(cfg, setting))
        throw std::invalid_argument("knob value not in setting " + setting + "'s grid");

    const upbench::DGPConfig dgp_cfg = upbench::dgp_config_for(cfg, setting, knob_index);
    upbench::CovariateMatrix cov;
    if (!csv.empty()) {
        cov = upbench::load_covariates(csv, upbench::load_column_mapping(mapping));
    } else {
        cov = upbench::synthesize_covariates(n, cfg.data.d, cfg.data.n_discrete,
                                             upbench::derive_seed(seed, "covariates"));
    }
    const auto ds = upbench::generate(cov, dgp_cfg);
    upbench::write_dataset_csv(ds, out);
    std::cout << "wrote " << ds.n() << " units (" << ds.x_true.d() << " true / " << ds.d_obs()
              << " observed features) to " << out << std::endl;
    return kExitOk;
}

int cmd_bench(const std::string& config_path, const std::string& out_dir,
              std::optional<std::size_t> subsample_n, std::optional<int> runs,
              const std::string& format, bool quiet) {
    upbench::ExperimentConfig cfg = upbench::load_experiment_config(config_path);
    if (subsample_n) cfg.subsample_n = *subsample_n;
    if (runs) cfg.n_runs = *runs;

    const upbench::ResultsTable results = upbench::bench(cfg, quiet ? nullptr : &std::cerr);
    upbench::emit_report(results, format, out_dir);
    std::ofstream cfg_out(out_dir + "/config_used.json");
    cfg_out << upbench::experiment_config_to_json(cfg).dump(2) << '\n';
    std::cout << "wrote results for " << results.rows.size() << " rows to " << out_dir
              << std::endl;
    return kExitOk;
}

int cmd_evaluate(const std::string& dataset_path, const std::string& predictions_path, double k,
                 int qini_permutations) {
    const upbench::DatasetColumns cols = upbench::read_dataset_columns(dataset_path);

    std::ifstream in(predictions_path);
    if (!in) throw upbench::IoError("cannot open predictions: " + predictions_path);
    std::vector<double> tau_hat;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            tau_hat.push_back(std::stod(line));
        } catch (const std::exception&) {
            throw upbench::ParseError("predictions line " + std::to_string(lineno) +
                                      ": unparseable value");
        }
    }
    if (tau_hat.size() != cols.n)
        throw upbench::ParseError("predictions count (" + std::to_string(tau_hat.size()) +
                                  ") does not match dataset rows (" + std::to_string(cols.n) +
                                  ")");

    upbench::QiniOptions opts;
    opts.random_baseline_permutations = qini_permutations;
    const auto rp = upbench::rank_population(tau_hat, cols.tau, cols.t, cols.y, k);
    const auto report = upbench::evaluate_metrics(rp, opts);
    char buf[64];
    auto print = [&buf](const char* name, double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        std::cout << name << ',' << buf << '\n';
    };
    std::cout << "metric,value\n";
    print("PEHE", *report.pehe_k);
    print("ATE", *report.ate_k);
    print("Uplift", report.uplift_k);
    print("AUUC", report.auuc_k);
    print("Qini", report.qini_k);
    return kExitOk;
}

int cmd_report(const std::string& results_dir, const std::string& format) {
    const auto results = upbench::ResultsTable::load(results_dir + "/runs.csv");
    upbench::emit_report(results, format, results_dir);
    std::cout << "report emitted to " << results_dir << std::endl;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-synthetic uplift benchmark"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "Generate one semi-synthetic dataset");
    std::string gen_setting = "A";
    double gen_knob = 0.8;
    std::uint64_t gen_seed = 42;
    std::string gen_out = "dataset.csv";
    std::size_t gen_n = 8000;
    std::string gen_csv, gen_mapping;
    gen->add_option("--setting", gen_setting, "Bias setting: A, B, C, or D")->required();
    gen->add_option("--knob", gen_knob, "Knob value within the setting's grid")->required();
    gen->add_option("--seed", gen_seed, "Master seed");
    gen->add_option("--out", gen_out, "Output CSV path")->required();
    gen->add_option("--n", gen_n, "Unit count for synthetic covariates");
    gen->add_option("--csv", gen_csv, "Real covariate file (comma separated, header row)");
    gen->add_option("--mapping", gen_mapping, "Column mapping JSON for --csv");

    auto* bench_cmd = app.add_subcommand("bench", "Run the full benchmark sweep");
    std::string bench_config, bench_out = "results";
    std::size_t bench_subsample = 0;
    int bench_runs = 0;
    std::string bench_format = "csv";
    bool bench_quiet = false;
    bench_cmd->add_option("--config", bench_config, "Experiment config JSON")->required();
    bench_cmd->add_option("--out", bench_out, "Output directory")->required();
    bench_cmd->add_option("--subsample-n", bench_subsample, "Override subsample size");
    bench_cmd->add_option("--runs", bench_runs, "Override run count");
    bench_cmd->add_option("--format", bench_format, "Report format: csv or json");
    bench_cmd->add_flag("--quiet", bench_quiet, "Suppress progress output");

    auto* eval = app.add_subcommand("evaluate", "Score a prediction file against a dataset");
    std::string eval_dataset, eval_predictions;
    double eval_k = 0.3;
    int eval_qini_perms = 0;
    eval->add_option("--dataset", eval_dataset, "Dataset CSV from `generate`")->required();
    eval->add_option("--predictions", eval_predictions, "One tau-hat per line")->required();
    eval->add_option("--k", eval_k, "Targeting fraction in (0,1]");
    eval->add_option("--qini-permutations", eval_qini_perms,
                     "Random-ordering Qini baseline (0 = analytic diagonal)");

    auto* rep = app.add_subcommand("report", "Re-emit aggregate tables from stored runs");
    std::string rep_results, rep_format = "csv";
    rep->add_option("--results", rep_results, "Directory containing runs.csv")->required();
    rep->add_option("--format", rep_format, "Report format: csv or json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed())
            return cmd_generate(gen_setting, gen_knob, gen_seed, gen_out, gen_n, gen_csv,
                                gen_mapping);
        if (bench_cmd->parsed())
            return cmd_bench(bench_config, bench_out,
                             bench_subsample > 0 ? std::optional<std::size_t>(bench_subsample)
                                                 : std::nullopt,
                             bench_runs > 0 ? std::optional<int>(bench_runs) : std::nullopt,
                             bench_format, bench_quiet);
        if (eval->parsed())
            return cmd_evaluate(eval_dataset, eval_predictions, eval_k, eval_qini_perms);
        if (rep->parsed()) return cmd_report(rep_results, rep_format);
    } catch (const upbench::TrainingError& e) {
        std::cerr << "training error: " << e.what() << std::endl;
        return kExitTraining;
    } catch (const upbench::IoError& e) {
        std::cerr << "i/o error: " << e.what() << std::endl;
        return kExitData;
    } catch (const upbench::ParseError& e) {
        std::cerr << "parse error: " << e.what() << std::endl;
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitData;
    }
    return kExitUsage;
}
