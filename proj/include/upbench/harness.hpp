#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upbench/data.hpp"
#include "upbench/dgp.hpp"
#include "upbench/metrics.hpp"
#include "upbench/uplift_learners.hpp"

namespace upbench {

// Canonical model keys, in reporting order.
const std::vector<std::string>& all_model_keys();
std::string model_display_name(const std::string& key);

/// Knob grids per bias setting. Setting B varies (theta0, theta1) jointly;
/// its knob label is theta0.
struct SettingGrid {
    std::vector<double> a_xi{0.8, 1.6, 2.4};
    std::vector<std::pair<double, double>> b_theta{{0.4, 0.8}, {0.5, 0.95}, {0.6, 1.1}};
    std::vector<double> c_omega{1.2, 2.4, 3.6};
    std::vector<double> d_m{0.1, 0.3, 0.5};
};

struct DataSourceConfig {
    enum class Source { Synthetic, Csv };
    Source source = Source::Synthetic;
    std::size_t n = 8000;
    std::size_t d = 8;
    std::size_t n_discrete = 7;
    std::string csv_path;
    std::string mapping_path;
};

struct ExperimentConfig {
    std::uint64_t master_seed = 42;
    std::vector<std::string> settings{"A", "B", "C", "D"};
    SettingGrid grid;
    int n_runs = 10;
    std::vector<double> k_list{0.10, 0.30, 0.50, 0.70};
    std::vector<std::string> models = all_model_keys();
    std::string base_family = "gbdt";  // outcome/effect regressions: gbdt | ridge
    int tuning_budget = 3;
    bool oracle_tuning = false;   // tune on validation PEHE instead of Uplift@30%
    bool resplit_per_run = true;  // new split per run; model seeds vary either way
    std::optional<std::size_t> subsample_n;
    int threads = 0;  // 0 = hardware concurrency
    int net_max_epochs = 300;
    int net_patience = 10;
    int qini_random_permutations = 0;

    // fixed non-varied knob levels
    double default_theta0 = 0.4, default_theta1 = 0.8;
    double default_omega = 1.2, default_m = 0.1;
    double radius = 0.1;
    double outcome_noise_var = 0.1;

    SplitRatios ratios;
    DataSourceConfig data;

    void validate() const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::string& path);

/// Number of knob values of one setting.
std::size_t knob_count(const ExperimentConfig& cfg, const std::string& setting);
/// The reported knob label (xi, theta0, omega or m value).
double knob_label(const ExperimentConfig& cfg, const std::string& setting, std::size_t knob_index);
/// The full generator configuration of one (setting, knob) cell, including
/// derived per-purpose seeds.
DGPConfig dgp_config_for(const ExperimentConfig& cfg, const std::string& setting,
                         std::size_t knob_index);

struct RunRow {
    std::string setting;
    double knob = 0.0;
    std::string model;
    int run = 0;
    double k = 0.0;
    double pehe = 0.0, ate = 0.0, uplift = 0.0, auuc = 0.0, qini = 0.0;
};

enum class Metric { Pehe, Ate, Uplift, Auuc, Qini };
const std::vector<Metric>& all_metrics();
std::string metric_name(Metric m);
double metric_value(const RunRow& row, Metric m);
/// True for metrics where larger is better (all but PEHE).
bool metric_higher_is_better(Metric m);

struct ResultsTable {
    std::vector<RunRow> rows;

    /// Long-format rows keyed (setting, knob, model, run, k, metric, value).
    void save(const std::string& path) const;
    static ResultsTable load(const std::string& path);
};

// ---------------------------------------------------------------------------
// Hyperparameter search (Appendix-C surface)
// ---------------------------------------------------------------------------

struct ParamSpec {
    enum class Type { Continuous, Integer, Choice };
    std::string name;
    Type type = Type::Continuous;
    double lo = 0.0, hi = 0.0;     // Continuous / Integer bounds (inclusive)
    std::vector<double> choices;   // Choice values
};

struct SearchSpace {
    std::vector<ParamSpec> params;

    bool finite() const;                           // all Choice
    std::vector<nlohmann::json> enumerate() const;  // cross product (finite only)
    nlohmann::json sample(Rng& rng) const;
    /// Throws if a trial point falls outside its declared ranges.
    void check_in_range(const nlohmann::json& trial) const;
};

SearchSpace search_space_for(const std::string& model_key, const std::string& base_family);

struct TuneData {
    const Matrix& x_train;
    const std::vector<int>& t_train;
    const std::vector<double>& y_train;
    const Matrix& x_val;
    const std::vector<int>& t_val;
    const std::vector<double>& y_val;
    const std::vector<double>& tau_val;  // used only under oracle tuning
};

struct TuneResult {
    nlohmann::json best_trial;
    double best_score = 0.0;  // higher is better (PEHE negated)
    std::unique_ptr<UpliftModel> model;
    int n_trials = 0;
    int n_failures = 0;
};

/// Fits one estimator from a sampled trial point. Model seeds are fixed per
/// (cell, run), so refitting the winning trial reproduces it bit-for-bit.
std::unique_ptr<UpliftModel> fit_named_model(const std::string& model_key,
                                             const nlohmann::json& trial, const Matrix& x,
                                             const std::vector<int>& t,
                                             const std::vector<double>& y,
                                             const NetValData& val, std::uint64_t model_seed,
                                             const ExperimentConfig& cfg);

/// Random search over continuous ranges, exhaustive enumeration over finite
/// grids (seeded subset when the budget is smaller than the grid).
TuneResult tune(const std::string& model_key, const SearchSpace& space, const TuneData& data,
                int budget, std::uint64_t tune_seed, std::uint64_t model_seed,
                const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Protocol execution
// ---------------------------------------------------------------------------

/// Covariates + cached datasets shared by all cells of one bench invocation.
struct BenchContext {
    ExperimentConfig cfg;
    CovariateMatrix covariates;
    std::map<std::string, std::shared_ptr<const SemiSyntheticDataset>> datasets;

    static BenchContext prepare(const ExperimentConfig& cfg);
    const SemiSyntheticDataset& dataset_for(const std::string& setting, std::size_t knob_index);
};

/// One (setting, knob, run) cell: generates/loads the dataset, splits, tunes
/// and fits every configured model, and scores all five metrics at every k.
std::vector<RunRow> run_cell(BenchContext& ctx, const std::string& setting,
                             std::size_t knob_index, int run);

/// Convenience wrapper building a fresh context.
std::vector<RunRow> run_cell(const ExperimentConfig& cfg, const std::string& setting,
                             std::size_t knob_index, int run);

/// Full sweep: settings x knobs x runs, cells executed by a worker pool,
/// results in deterministic cell order.
ResultsTable bench(const ExperimentConfig& cfg, std::ostream* progress = nullptr);

// ---------------------------------------------------------------------------
// Aggregation and reporting
// ---------------------------------------------------------------------------

struct CellRef {
    std::string setting;
    double knob = 0.0;
    bool operator==(const CellRef&) const = default;
};

struct AggRow {
    CellRef cell;
    std::string model;
    double k = 0.0;
    double mean[5] = {0, 0, 0, 0, 0};  // indexed by Metric
    double stdev[5] = {0, 0, 0, 0, 0};
    int n_runs = 0;
};

struct RankRow {
    CellRef cell;
    double k = 0.0;
    Metric metric = Metric::Pehe;
    std::vector<std::pair<std::string, int>> ranks;  // model -> rank (1 = best)
};

struct Aggregates {
    std::vector<CellRef> cells;        // first-appearance order
    std::vector<std::string> models;   // first-appearance order
    std::vector<double> ks;
    int n_runs = 0;
    std::vector<AggRow> rows;
    std::vector<RankRow> ranks;

    const AggRow* find(const CellRef& cell, const std::string& model, double k) const;
    const RankRow* find_ranks(const CellRef& cell, double k, Metric m) const;
};

/// Means/stds over runs plus per-(cell, k, metric) model ranks. Throws if any
/// (cell, model, k) group is missing runs.
Aggregates aggregate(const ResultsTable& results);

struct RankCorrRow {
    CellRef cell;
    double k = 0.0;
    Metric metric = Metric::Uplift;  // Uplift / Auuc / Qini vs oracle ATE
    double rho = 0.0;
    int runs_used = 0;
    int runs_excluded = 0;  // degenerate (constant) metric vectors
};

/// Per run, Spearman between the per-model practical-metric vector and the
/// per-model ATE vector, averaged over runs.
std::vector<RankCorrRow> rank_correlation_table(const ResultsTable& results);

/// Writes runs + Table-1/2-shaped mean matrices per metric, std matrices,
/// radar rank matrices, and the Table-3-shaped rank-correlation matrix.
/// Byte-stable for identical inputs. `format` is "csv" or "json".
void emit_report(const ResultsTable& results, const std::string& format,
                 const std::string& out_dir);

}  // namespace upbench
