#include "upbench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

#include "upbench/rng.hpp"

namespace upbench {

namespace {

std::string fmt_double(double v, const char* spec = "%.17g") {
    char buf[40];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

std::string fmt_fixed(double v) {
    if (std::isnan(v)) return "nan";
    return fmt_double(v, "%.6f");
}

}  // namespace

const std::vector<std::string>& all_model_keys() {
    static const std::vector<std::string> keys{"s",  "t",  "x",      "r",        "u",
                                               "dr", "ra", "tarnet", "dragonnet"};
    return keys;
}

std::string model_display_name(const std::string& key) {
    if (key == "s") return "S-learner";
    if (key == "t") return "T-learner";
    if (key == "x") return "X-learner";
    if (key == "r") return "R-learner";
    if (key == "u") return "U-learner";
    if (key == "dr") return "DR-learner";
    if (key == "ra") return "RA-learner";
    if (key == "tarnet") return "TARNet";
    if (key == "dragonnet") return "Dragonnet";
    if (key == "oracle") return "Oracle";
    return key;
}

const std::vector<Metric>& all_metrics() {
    static const std::vector<Metric> m{Metric::Pehe, Metric::Ate, Metric::Uplift, Metric::Auuc,
                                       Metric::Qini};
    return m;
}

std::string metric_name(Metric m) {
    switch (m) {
        case Metric::Pehe: return "PEHE";
        case Metric::Ate: return "ATE";
        case Metric::Uplift: return "Uplift";
        case Metric::Auuc: return "AUUC";
        case Metric::Qini: return "Qini";
    }
    return "?";
}

double metric_value(const RunRow& row, Metric m) {
    switch (m) {
        case Metric::Pehe: return row.pehe;
        case Metric::Ate: return row.ate;
        case Metric::Uplift: return row.uplift;
        case Metric::Auuc: return row.auuc;
        case Metric::Qini: return row.qini;
    }
    return 0.0;
}

bool metric_higher_is_better(Metric m) { return m != Metric::Pehe; }

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (n_runs < 1) throw std::invalid_argument("config: n_runs must be >= 1");
    if (tuning_budget < 1) throw std::invalid_argument("config: tuning_budget must be >= 1");
    for (double k : k_list)
        if (k <= 0.0 || k > 1.0) throw std::invalid_argument("config: k values must lie in (0,1]");
    for (const auto& s : settings)
        if (s != "A" && s != "B" && s != "C" && s != "D")
            throw std::invalid_argument("config: unknown setting '" + s + "'");
    if (base_family != "gbdt" && base_family != "ridge")
        throw std::invalid_argument("config: base_family must be gbdt or ridge");
    for (const auto& m : models) {
        if (m == "oracle") continue;
        const auto& keys = all_model_keys();
        if (std::find(keys.begin(), keys.end(), m) == keys.end())
            throw std::invalid_argument("config: unknown model '" + m + "'");
    }
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("master_seed")) c.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("settings")) c.settings = j.at("settings").get<std::vector<std::string>>();
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        if (g.contains("A")) c.grid.a_xi = g.at("A").get<std::vector<double>>();
        if (g.contains("B")) {
            c.grid.b_theta.clear();
            for (const auto& pair : g.at("B"))
                c.grid.b_theta.emplace_back(pair.at(0).get<double>(), pair.at(1).get<double>());
        }
        if (g.contains("C")) c.grid.c_omega = g.at("C").get<std::vector<double>>();
        if (g.contains("D")) c.grid.d_m = g.at("D").get<std::vector<double>>();
    }
    if (j.contains("n_runs")) c.n_runs = j.at("n_runs").get<int>();
    if (j.contains("k_list")) c.k_list = j.at("k_list").get<std::vector<double>>();
    if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
    if (j.contains("base_family")) c.base_family = j.at("base_family").get<std::string>();
    if (j.contains("tuning_budget")) c.tuning_budget = j.at("tuning_budget").get<int>();
    if (j.contains("oracle_tuning")) c.oracle_tuning = j.at("oracle_tuning").get<bool>();
    if (j.contains("resplit_per_run")) c.resplit_per_run = j.at("resplit_per_run").get<bool>();
    if (j.contains("subsample_n") && !j.at("subsample_n").is_null()) {
        const auto v = j.at("subsample_n").get<std::size_t>();
        if (v > 0) c.subsample_n = v;
    }
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
    if (j.contains("net_max_epochs")) c.net_max_epochs = j.at("net_max_epochs").get<int>();
    if (j.contains("net_patience")) c.net_patience = j.at("net_patience").get<int>();
    if (j.contains("qini_random_permutations"))
        c.qini_random_permutations = j.at("qini_random_permutations").get<int>();
    if (j.contains("defaults")) {
        const auto& d = j.at("defaults");
        if (d.contains("theta0")) c.default_theta0 = d.at("theta0").get<double>();
        if (d.contains("theta1")) c.default_theta1 = d.at("theta1").get<double>();
        if (d.contains("omega")) c.default_omega = d.at("omega").get<double>();
        if (d.contains("m")) c.default_m = d.at("m").get<double>();
        if (d.contains("radius")) c.radius = d.at("radius").get<double>();
        if (d.contains("outcome_noise_var"))
            c.outcome_noise_var = d.at("outcome_noise_var").get<double>();
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        c.ratios.train = s.at("train").get<double>();
        c.ratios.val = s.at("val").get<double>();
        c.ratios.test = s.at("test").get<double>();
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        const std::string src = d.value("source", "synthetic");
        if (src == "synthetic") {
            c.data.source = DataSourceConfig::Source::Synthetic;
            if (d.contains("n")) c.data.n = d.at("n").get<std::size_t>();
            if (d.contains("d")) c.data.d = d.at("d").get<std::size_t>();
            if (d.contains("n_discrete")) c.data.n_discrete = d.at("n_discrete").get<std::size_t>();
        } else if (src == "csv") {
            c.data.source = DataSourceConfig::Source::Csv;
            c.data.csv_path = d.at("path").get<std::string>();
            c.data.mapping_path = d.at("mapping").get<std::string>();
        } else {
            throw std::invalid_argument("config: data.source must be synthetic or csv");
        }
    }
    c.validate();
    return c;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["master_seed"] = c.master_seed;
    j["settings"] = c.settings;
    nlohmann::json b = nlohmann::json::array();
    for (const auto& [t0, t1] : c.grid.b_theta) b.push_back({t0, t1});
    j["grid"] = {{"A", c.grid.a_xi}, {"B", b}, {"C", c.grid.c_omega}, {"D", c.grid.d_m}};
    j["n_runs"] = c.n_runs;
    j["k_list"] = c.k_list;
    j["models"] = c.models;
    j["base_family"] = c.base_family;
    j["tuning_budget"] = c.tuning_budget;
    j["oracle_tuning"] = c.oracle_tuning;
    j["resplit_per_run"] = c.resplit_per_run;
    j["subsample_n"] = c.subsample_n ? nlohmann::json(*c.subsample_n) : nlohmann::json();
    j["threads"] = c.threads;
    j["net_max_epochs"] = c.net_max_epochs;
    j["net_patience"] = c.net_patience;
    j["qini_random_permutations"] = c.qini_random_permutations;
    j["defaults"] = {{"theta0", c.default_theta0}, {"theta1", c.default_theta1},
                     {"omega", c.default_omega},   {"m", c.default_m},
                     {"radius", c.radius},         {"outcome_noise_var", c.outcome_noise_var}};
    j["split"] = {{"train", c.ratios.train}, {"val", c.ratios.val}, {"test", c.ratios.test}};
    if (c.data.source == DataSourceConfig::Source::Synthetic) {
        j["data"] = {{"source", "synthetic"},
                     {"n", c.data.n},
                     {"d", c.data.d},
                     {"n_discrete", c.data.n_discrete}};
    } else {
        j["data"] = {{"source", "csv"}, {"path", c.data.csv_path}, {"mapping", c.data.mapping_path}};
    }
    return j;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config '" + path + "': " + e.what());
    }
    try {
        return experiment_config_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config '" + path + "': " + e.what());
    }
}

std::size_t knob_count(const ExperimentConfig& cfg, const std::string& setting) {
    if (setting == "A") return cfg.grid.a_xi.size();
    if (setting == "B") return cfg.grid.b_theta.size();
    if (setting == "C") return cfg.grid.c_omega.size();
    if (setting == "D") return cfg.grid.d_m.size();
    throw std::invalid_argument("unknown setting '" + setting + "'");
}

double knob_label(const ExperimentConfig& cfg, const std::string& setting,
                  std::size_t knob_index) {
    if (knob_index >= knob_count(cfg, setting))
        throw std::invalid_argument("knob index out of range for setting " + setting);
    if (setting == "A") return cfg.grid.a_xi[knob_index];
    if (setting == "B") return cfg.grid.b_theta[knob_index].first;
    if (setting == "C") return cfg.grid.c_omega[knob_index];
    return cfg.grid.d_m[knob_index];
}

DGPConfig dgp_config_for(const ExperimentConfig& cfg, const std::string& setting,
                         std::size_t knob_index) {
    if (knob_index >= knob_count(cfg, setting))
        throw std::invalid_argument("knob index out of range for setting " + setting);
    DGPConfig d;
    d.xi = 0.0;
    d.theta0 = cfg.default_theta0;
    d.theta1 = cfg.default_theta1;
    d.omega = cfg.default_omega;
    d.m = cfg.default_m;
    d.radius = cfg.radius;
    d.outcome_noise_var = cfg.outcome_noise_var;
    if (setting == "A") {
        d.xi = cfg.grid.a_xi[knob_index];
    } else if (setting == "B") {
        d.theta0 = cfg.grid.b_theta[knob_index].first;
        d.theta1 = cfg.grid.b_theta[knob_index].second;
    } else if (setting == "C") {
        d.omega = cfg.grid.c_omega[knob_index];
    } else {
        d.m = cfg.grid.d_m[knob_index];
    }
    // One stream per purpose, independent of the knob values: the base draws
    // form a single fixed semi-synthetic ensemble and each knob only
    // transforms its own part of the pipeline.
    d.coeff_seed = derive_seed(cfg.master_seed, "dgp", "coeff");
    d.treat_seed = derive_seed(cfg.master_seed, "dgp", "treat");
    d.noise_seed = derive_seed(cfg.master_seed, "dgp", "outcome_noise");
    d.measure_seed = derive_seed(cfg.master_seed, "dgp", "measure");
    d.mask_seed = derive_seed(cfg.master_seed, "dgp", "mask");
    return d;
}

// ---------------------------------------------------------------------------
// Results table
// ---------------------------------------------------------------------------

void ResultsTable::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write results: " + path);
    out << "setting,knob,model,run,k,metric,value\n";
    for (const auto& row : rows) {
        for (Metric m : all_metrics()) {
            out << row.setting << ',' << fmt_double(row.knob) << ',' << row.model << ','
                << row.run << ',' << fmt_double(row.k) << ',' << metric_name(m) << ','
                << fmt_double(metric_value(row, m)) << '\n';
        }
    }
    if (!out) throw IoError("failed while writing results: " + path);
}

ResultsTable ResultsTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open results: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("results file '" + path + "' is empty");

    ResultsTable table;
    std::map<std::string, std::size_t> index;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++lineno;
        std::vector<std::string> f;
        std::string field;
        for (char ch : line) {
            if (ch == ',') {
                f.push_back(field);
                field.clear();
            } else if (ch != '\r') {
                field.push_back(ch);
            }
        }
        f.push_back(field);
        if (f.size() != 7)
            throw ParseError("results row " + std::to_string(lineno) + ": expected 7 fields");
        try {
            const std::string key = f[0] + '\x1f' + f[1] + '\x1f' + f[2] + '\x1f' + f[3] +
                                    '\x1f' + f[4];
            auto it = index.find(key);
            if (it == index.end()) {
                RunRow row;
                row.setting = f[0];
                row.knob = std::stod(f[1]);
                row.model = f[2];
                row.run = std::stoi(f[3]);
                row.k = std::stod(f[4]);
                it = index.emplace(key, table.rows.size()).first;
                table.rows.push_back(row);
            }
            RunRow& row = table.rows[it->second];
            const double v = std::stod(f[6]);
            if (f[5] == "PEHE")
                row.pehe = v;
            else if (f[5] == "ATE")
                row.ate = v;
            else if (f[5] == "Uplift")
                row.uplift = v;
            else if (f[5] == "AUUC")
                row.auuc = v;
            else if (f[5] == "Qini")
                row.qini = v;
            else
                throw ParseError("results row " + std::to_string(lineno) + ": unknown metric '" +
                                 f[5] + "'");
        } catch (const std::invalid_argument&) {
            throw ParseError("results row " + std::to_string(lineno) + ": unparseable number");
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Search spaces and tuning
// ---------------------------------------------------------------------------

bool SearchSpace::finite() const {
    for (const auto& p : params)
        if (p.type != ParamSpec::Type::Choice) return false;
    return true;
}

std::vector<nlohmann::json> SearchSpace::enumerate() const {
    if (!finite()) throw std::invalid_argument("search space is not finite");
    std::vector<nlohmann::json> out{nlohmann::json::object()};
    for (const auto& p : params) {
        std::vector<nlohmann::json> next;
        next.reserve(out.size() * p.choices.size());
        for (const auto& partial : out) {
            for (double c : p.choices) {
                nlohmann::json trial = partial;
                trial[p.name] = c;
                next.push_back(std::move(trial));
            }
        }
        out = std::move(next);
    }
    return out;
}

nlohmann::json SearchSpace::sample(Rng& rng) const {
    nlohmann::json trial;
    for (const auto& p : params) {
        switch (p.type) {
            case ParamSpec::Type::Continuous:
                trial[p.name] = rng.uniform(p.lo, p.hi);
                break;
            case ParamSpec::Type::Integer:
                trial[p.name] = static_cast<int>(p.lo) +
                                rng.uniform_int(static_cast<int>(p.hi) - static_cast<int>(p.lo) + 1);
                break;
            case ParamSpec::Type::Choice:
                trial[p.name] = p.choices[static_cast<std::size_t>(
                    rng.uniform_int(static_cast<int>(p.choices.size())))];
                break;
        }
    }
    return trial;
}

void SearchSpace::check_in_range(const nlohmann::json& trial) const {
    for (const auto& p : params) {
        if (!trial.contains(p.name))
            throw std::invalid_argument("trial missing parameter '" + p.name + "'");
        const double v = trial.at(p.name).get<double>();
        if (p.type == ParamSpec::Type::Choice) {
            if (std::find(p.choices.begin(), p.choices.end(), v) == p.choices.end())
                throw std::invalid_argument("trial parameter '" + p.name + "' not in choice set");
        } else if (v < p.lo || v > p.hi) {
            throw std::invalid_argument("trial parameter '" + p.name + "' outside its range");
        }
    }
}

namespace {

void add_gbdt_params(SearchSpace& s) {
    s.params.push_back({"n_estimators", ParamSpec::Type::Integer, 3, 10, {}});
    s.params.push_back({"max_depth", ParamSpec::Type::Integer, 3, 10, {}});
    s.params.push_back({"learning_rate", ParamSpec::Type::Continuous, 0.01, 0.3, {}});
    s.params.push_back({"subsample", ParamSpec::Type::Continuous, 0.6, 1.0, {}});
    s.params.push_back({"colsample_bytree", ParamSpec::Type::Continuous, 0.6, 1.0, {}});
    s.params.push_back({"reg_alpha", ParamSpec::Type::Continuous, 0.0, 1.0, {}});
    s.params.push_back({"reg_lambda", ParamSpec::Type::Continuous, 0.0, 1.0, {}});
}

void add_ridge_params(SearchSpace& s) {
    s.params.push_back({"ridge_lambda", ParamSpec::Type::Choice, 0, 0, {1e-8, 1e-6, 1e-4, 1e-2}});
}

void add_prop_param(SearchSpace& s) {
    s.params.push_back({"prop_C", ParamSpec::Type::Continuous, 0.01, 10.0, {}});
}

bool model_uses_propensity(const std::string& key) {
    return key == "x" || key == "r" || key == "u" || key == "dr";
}

bool model_is_network(const std::string& key) { return key == "tarnet" || key == "dragonnet"; }

}  // namespace

SearchSpace search_space_for(const std::string& key, const std::string& base_family) {
    SearchSpace s;
    if (key == "tarnet") {
        s.params.push_back({"hidden_layer", ParamSpec::Type::Choice, 0, 0, {50, 100, 200}});
        s.params.push_back({"outcome_layer", ParamSpec::Type::Choice, 0, 0, {100, 200}});
        s.params.push_back({"learning_rate", ParamSpec::Type::Choice, 0, 0, {1e-2, 1e-3}});
        s.params.push_back({"batch_size", ParamSpec::Type::Choice, 0, 0, {200, 500}});
        return s;
    }
    if (key == "dragonnet") {
        s.params.push_back({"alpha", ParamSpec::Type::Choice, 0, 0, {0.1, 0.5, 1, 2}});
        s.params.push_back({"beta", ParamSpec::Type::Choice, 0, 0, {0.1, 0.5, 1, 2}});
        s.params.push_back({"hidden_layer", ParamSpec::Type::Choice, 0, 0, {100, 200}});
        s.params.push_back({"outcome_layer", ParamSpec::Type::Choice, 0, 0, {100, 200}});
        s.params.push_back({"learning_rate", ParamSpec::Type::Choice, 0, 0, {1e-2, 1e-3}});
        s.params.push_back({"batch_size", ParamSpec::Type::Choice, 0, 0, {200, 500}});
        return s;
    }
    if (base_family == "gbdt")
        add_gbdt_params(s);
    else
        add_ridge_params(s);
    if (model_uses_propensity(key)) add_prop_param(s);
    return s;
}

std::unique_ptr<UpliftModel> fit_named_model(const std::string& key, const nlohmann::json& trial,
                                             const Matrix& x, const std::vector<int>& t,
                                             const std::vector<double>& y, const NetValData& val,
                                             std::uint64_t model_seed,
                                             const ExperimentConfig& cfg) {
    if (model_is_network(key)) {
        NetUpliftConfig nc;
        nc.hidden_dim = static_cast<int>(trial.at("hidden_layer").get<double>());
        nc.outcome_dim = static_cast<int>(trial.at("outcome_layer").get<double>());
        nc.learning_rate = trial.at("learning_rate").get<double>();
        nc.batch_size = static_cast<int>(trial.at("batch_size").get<double>());
        nc.max_epochs = cfg.net_max_epochs;
        nc.patience = cfg.net_patience;
        nc.seed = model_seed;
        if (key == "tarnet") return fit_tarnet(x, t, y, nc, val);
        return fit_dragonnet(x, t, y, nc, trial.at("alpha").get<double>(),
                             trial.at("beta").get<double>(), val);
    }

    BaseConfig base;
    base.seed = model_seed;
    if (cfg.base_family == "gbdt") {
        base.kind = BaseConfig::Kind::Gbdt;
        base.gbdt.n_estimators = trial.at("n_estimators").get<int>();
        base.gbdt.max_depth = trial.at("max_depth").get<int>();
        base.gbdt.learning_rate = trial.at("learning_rate").get<double>();
        base.gbdt.subsample = trial.at("subsample").get<double>();
        base.gbdt.colsample_bytree = trial.at("colsample_bytree").get<double>();
        base.gbdt.reg_alpha = trial.at("reg_alpha").get<double>();
        base.gbdt.reg_lambda = trial.at("reg_lambda").get<double>();
        base.gbdt.validate_search_range();
    } else {
        base.kind = BaseConfig::Kind::Ridge;
        base.ridge_lambda = trial.at("ridge_lambda").get<double>();
    }
    PropConfig prop;
    if (model_uses_propensity(key)) prop.C = trial.at("prop_C").get<double>();

    if (key == "s") return fit_s_learner(x, t, y, base);
    if (key == "t") return fit_t_learner(x, t, y, base);
    if (key == "x") return fit_x_learner(x, t, y, base, prop);
    if (key == "r") return fit_r_learner(x, t, y, base, prop);
    if (key == "u") return fit_u_learner(x, t, y, base, prop);
    if (key == "dr") return fit_dr_learner(x, t, y, base, prop);
    if (key == "ra") return fit_ra_learner(x, t, y, base);
    throw std::invalid_argument("unknown model key '" + key + "'");
}

TuneResult tune(const std::string& key, const SearchSpace& space, const TuneData& data,
                int budget, std::uint64_t tune_seed, std::uint64_t model_seed,
                const ExperimentConfig& cfg) {
    if (budget < 1) throw std::invalid_argument("tune: budget must be >= 1");

    std::vector<nlohmann::json> trials;
    Rng rng(tune_seed);
    if (space.finite()) {
        trials = space.enumerate();
        if (static_cast<int>(trials.size()) > budget) {
            std::vector<int> order(trials.size());
            for (std::size_t i = 0; i < trials.size(); ++i) order[i] = static_cast<int>(i);
            rng.shuffle(order);
            std::vector<nlohmann::json> picked;
            picked.reserve(static_cast<std::size_t>(budget));
            for (int i = 0; i < budget; ++i)
                picked.push_back(trials[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            trials = std::move(picked);
        }
    } else {
        trials.reserve(static_cast<std::size_t>(budget));
        for (int i = 0; i < budget; ++i) trials.push_back(space.sample(rng));
    }

    const NetValData val{data.x_val, data.t_val, data.y_val};
    TuneResult result;
    std::string failures;
    for (const auto& trial : trials) {
        space.check_in_range(trial);
        ++result.n_trials;
        std::unique_ptr<UpliftModel> model;
        try {
            model = fit_named_model(key, trial, data.x_train, data.t_train, data.y_train, val,
                                    model_seed, cfg);
        } catch (const TrainingError& e) {
            ++result.n_failures;
            failures += std::string(failures.empty() ? "" : "; ") + e.what();
            continue;
        }
        const auto tau_hat = model->predict_tau(data.x_val);
        double score;
        if (cfg.oracle_tuning) {
            const auto rp = rank_population(tau_hat, data.tau_val, data.t_val, data.y_val, 0.30);
            score = -pehe_at_k(rp);
        } else {
            const auto rp = rank_population(tau_hat, std::nullopt, data.t_val, data.y_val, 0.30);
            score = uplift_at_k(build_prefix_counts(rp), rp.n_k);
        }
        if (!result.model || score > result.best_score) {
            result.best_score = score;
            result.best_trial = trial;
            result.model = std::move(model);
        }
    }
    if (!result.model)
        throw TrainingError("tune(" + key + "): all " + std::to_string(result.n_trials) +
                            " trials failed to train: " + failures);
    return result;
}

// ---------------------------------------------------------------------------
// Bench execution
// ---------------------------------------------------------------------------

namespace {

std::string dgp_cache_key(const DGPConfig& d) {
    return fmt_double(d.xi) + '|' + fmt_double(d.theta0) + '|' + fmt_double(d.theta1) + '|' +
           fmt_double(d.omega) + '|' + fmt_double(d.m) + '|' + fmt_double(d.radius) + '|' +
           fmt_double(d.outcome_noise_var);
}

CovariateMatrix build_covariates(const ExperimentConfig& cfg) {
    CovariateMatrix cov;
    if (cfg.data.source == DataSourceConfig::Source::Synthetic) {
        cov = synthesize_covariates(cfg.data.n, cfg.data.d, cfg.data.n_discrete,
                                    derive_seed(cfg.master_seed, "covariates"));
    } else {
        cov = load_covariates(cfg.data.csv_path, load_column_mapping(cfg.data.mapping_path));
    }
    if (cfg.subsample_n && *cfg.subsample_n < cov.n()) {
        std::vector<int> idx(cov.n());
        for (std::size_t i = 0; i < cov.n(); ++i) idx[i] = static_cast<int>(i);
        Rng rng(derive_seed(cfg.master_seed, "subsample"));
        rng.shuffle(idx);
        idx.resize(*cfg.subsample_n);
        std::sort(idx.begin(), idx.end());
        cov.values = take_rows(cov.values, idx);
    }
    return cov;
}

std::mutex g_dataset_mutex;

}  // namespace

BenchContext BenchContext::prepare(const ExperimentConfig& cfg) {
    cfg.validate();
    BenchContext ctx;
    ctx.cfg = cfg;
    ctx.covariates = build_covariates(cfg);
    for (const auto& setting : cfg.settings) {
        for (std::size_t ki = 0; ki < knob_count(cfg, setting); ++ki) {
            const DGPConfig d = dgp_config_for(cfg, setting, ki);
            const std::string key = dgp_cache_key(d);
            if (!ctx.datasets.contains(key))
                ctx.datasets[key] =
                    std::make_shared<const SemiSyntheticDataset>(generate(ctx.covariates, d));
        }
    }
    return ctx;
}

const SemiSyntheticDataset& BenchContext::dataset_for(const std::string& setting,
                                                      std::size_t knob_index) {
    const DGPConfig d = dgp_config_for(cfg, setting, knob_index);
    const std::string key = dgp_cache_key(d);
    std::lock_guard<std::mutex> lock(g_dataset_mutex);
    auto it = datasets.find(key);
    if (it == datasets.end()) {
        it = datasets
                 .emplace(key, std::make_shared<const SemiSyntheticDataset>(
                                   generate(covariates, d)))
                 .first;
    }
    return *it->second;
}

std::vector<RunRow> run_cell(BenchContext& ctx, const std::string& setting,
                             std::size_t knob_index, int run) {
    const ExperimentConfig& cfg = ctx.cfg;
    const SemiSyntheticDataset& ds = ctx.dataset_for(setting, knob_index);
    const double knob = knob_label(cfg, setting, knob_index);

    const std::uint64_t split_seed =
        cfg.resplit_per_run ? derive_seed(cfg.master_seed, "split", static_cast<std::uint64_t>(run))
                            : derive_seed(cfg.master_seed, "split");
    const SplitIndices sp = split(ds.n(), cfg.ratios, split_seed);

    const Matrix x_train = take_rows(ds.x_obs, sp.train);
    const auto t_train = take(ds.t, sp.train);
    const auto y_train = take(ds.y, sp.train);
    const Matrix x_val = take_rows(ds.x_obs, sp.val);
    const auto t_val = take(ds.t, sp.val);
    const auto y_val = take(ds.y, sp.val);
    const auto tau_val = take(ds.tau, sp.val);
    const Matrix x_test = take_rows(ds.x_obs, sp.test);
    const auto t_test = take(ds.t, sp.test);
    const auto y_test = take(ds.y, sp.test);
    const auto tau_test = take(ds.tau, sp.test);

    QiniOptions qini_opts;
    qini_opts.random_baseline_permutations = cfg.qini_random_permutations;
    qini_opts.baseline_seed = derive_seed(cfg.master_seed, "qini_baseline");

    std::vector<RunRow> rows;
    rows.reserve(cfg.models.size() * cfg.k_list.size());
    for (const auto& key : cfg.models) {
        std::vector<double> tau_hat;
        if (key == "oracle") {
            tau_hat = tau_test;
        } else {
            const SearchSpace space = search_space_for(key, cfg.base_family);
            const TuneData td{x_train, t_train, y_train, x_val, t_val, y_val, tau_val};
            const std::uint64_t tune_seed =
                derive_seed(cfg.master_seed, "tune", key, static_cast<std::uint64_t>(run));
            const std::uint64_t model_seed =
                derive_seed(cfg.master_seed, "model", key, static_cast<std::uint64_t>(run));
            TuneResult tr;
            try {
                tr = tune(key, space, td, cfg.tuning_budget, tune_seed, model_seed, cfg);
            } catch (const TrainingError& e) {
                throw TrainingError("cell " + setting + ":" + fmt_double(knob, "%g") + " run " +
                                    std::to_string(run) + " model " + key + ": " + e.what());
            }
            tau_hat = tr.model->predict_tau(x_test);
        }
        for (double k : cfg.k_list) {
            const auto rp = rank_population(tau_hat, tau_test, t_test, y_test, k);
            const MetricReport mr = evaluate_metrics(rp, qini_opts);
            RunRow row;
            row.setting = setting;
            row.knob = knob;
            row.model = key;
            row.run = run;
            row.k = k;
            row.pehe = *mr.pehe_k;
            row.ate = *mr.ate_k;
            row.uplift = mr.uplift_k;
            row.auuc = mr.auuc_k;
            row.qini = mr.qini_k;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::vector<RunRow> run_cell(const ExperimentConfig& cfg, const std::string& setting,
                             std::size_t knob_index, int run) {
    BenchContext ctx;
    ctx.cfg = cfg;
    ctx.cfg.validate();
    ctx.covariates = build_covariates(cfg);
    return run_cell(ctx, setting, knob_index, run);
}

ResultsTable bench(const ExperimentConfig& cfg, std::ostream* progress) {
    BenchContext ctx = BenchContext::prepare(cfg);

    struct Job {
        std::string setting;
        std::size_t knob_index;
        int run;
    };
    std::vector<Job> jobs;
    for (const auto& setting : cfg.settings)
        for (std::size_t ki = 0; ki < knob_count(cfg, setting); ++ki)
            for (int run = 0; run < cfg.n_runs; ++run) jobs.push_back({setting, ki, run});

    std::vector<std::vector<RunRow>> slots(jobs.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex io_mutex;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    const auto t_start = std::chrono::steady_clock::now();

    int n_threads = cfg.threads > 0 ? cfg.threads
                                    : static_cast<int>(std::thread::hardware_concurrency());
    if (n_threads < 1) n_threads = 1;
    n_threads = std::min<int>(n_threads, static_cast<int>(jobs.size()));

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (first_error) return;
            }
            try {
                slots[i] = run_cell(ctx, jobs[i].setting, jobs[i].knob_index, jobs[i].run);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
            const std::size_t finished = done.fetch_add(1) + 1;
            if (progress) {
                std::lock_guard<std::mutex> lock(io_mutex);
                const double secs = std::chrono::duration<double>(
                                        std::chrono::steady_clock::now() - t_start)
                                        .count();
                *progress << "[bench] " << jobs[i].setting << ':'
                          << fmt_double(knob_label(cfg, jobs[i].setting, jobs[i].knob_index), "%g")
                          << " run " << (jobs[i].run + 1) << '/' << cfg.n_runs << " done ("
                          << finished << '/' << jobs.size() << ", " << fmt_double(secs, "%.1f")
                          << "s)" << std::endl;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);

    ResultsTable table;
    for (auto& slot : slots)
        for (auto& row : slot) table.rows.push_back(std::move(row));
    return table;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

namespace {

std::string cell_key(const CellRef& c) { return c.setting + '\x1f' + fmt_double(c.knob); }

std::string cell_label(const CellRef& c) { return c.setting + ':' + fmt_double(c.knob, "%g"); }

struct Layout {
    std::vector<CellRef> cells;
    std::vector<std::string> models;
    std::vector<double> ks;
    std::vector<int> runs;
    std::map<std::string, std::size_t> cell_idx;
    std::map<std::string, std::size_t> model_idx;
    std::map<std::string, std::size_t> k_idx;
    std::map<int, std::size_t> run_idx;
};

Layout discover_layout(const ResultsTable& results) {
    Layout lay;
    for (const auto& row : results.rows) {
        const CellRef cell{row.setting, row.knob};
        if (lay.cell_idx.emplace(cell_key(cell), lay.cells.size()).second)
            lay.cells.push_back(cell);
        if (lay.model_idx.emplace(row.model, lay.models.size()).second)
            lay.models.push_back(row.model);
        if (lay.k_idx.emplace(fmt_double(row.k), lay.ks.size()).second) lay.ks.push_back(row.k);
        if (lay.run_idx.emplace(row.run, lay.runs.size()).second) lay.runs.push_back(row.run);
    }
    return lay;
}

}  // namespace

const AggRow* Aggregates::find(const CellRef& cell, const std::string& model, double k) const {
    for (const auto& row : rows)
        if (row.cell == cell && row.model == model && row.k == k) return &row;
    return nullptr;
}

const RankRow* Aggregates::find_ranks(const CellRef& cell, double k, Metric m) const {
    for (const auto& row : ranks)
        if (row.cell == cell && row.k == k && row.metric == m) return &row;
    return nullptr;
}

Aggregates aggregate(const ResultsTable& results) {
    if (results.rows.empty()) throw std::invalid_argument("aggregate: no rows");
    const Layout lay = discover_layout(results);

    Aggregates agg;
    agg.cells = lay.cells;
    agg.models = lay.models;
    agg.ks = lay.ks;
    agg.n_runs = static_cast<int>(lay.runs.size());

    // (cell, model, k) -> per-run row pointers
    const std::size_t n_groups = lay.cells.size() * lay.models.size() * lay.ks.size();
    std::vector<std::vector<const RunRow*>> groups(n_groups,
                                                   std::vector<const RunRow*>(lay.runs.size()));
    auto group_of = [&lay](const RunRow& r) {
        const std::size_t c = lay.cell_idx.at(cell_key({r.setting, r.knob}));
        const std::size_t m = lay.model_idx.at(r.model);
        const std::size_t k = lay.k_idx.at(fmt_double(r.k));
        return (c * lay.models.size() + m) * lay.ks.size() + k;
    };
    for (const auto& row : results.rows) {
        auto& slot = groups[group_of(row)][lay.run_idx.at(row.run)];
        if (slot)
            throw std::invalid_argument("aggregate: duplicate row for " + row.setting + ":" +
                                        fmt_double(row.knob, "%g") + " model " + row.model);
        slot = &row;
    }

    for (std::size_t c = 0; c < lay.cells.size(); ++c) {
        for (std::size_t m = 0; m < lay.models.size(); ++m) {
            for (std::size_t k = 0; k < lay.ks.size(); ++k) {
                const auto& group = groups[(c * lay.models.size() + m) * lay.ks.size() + k];
                for (std::size_t r = 0; r < group.size(); ++r) {
                    if (!group[r])
                        throw std::invalid_argument(
                            "aggregate: missing run " + std::to_string(lay.runs[r]) + " for " +
                            cell_label(lay.cells[c]) + " model " + lay.models[m] + " k " +
                            fmt_double(lay.ks[k], "%g"));
                }
                AggRow row;
                row.cell = lay.cells[c];
                row.model = lay.models[m];
                row.k = lay.ks[k];
                row.n_runs = static_cast<int>(group.size());
                for (Metric metric : all_metrics()) {
                    std::vector<double> vals;
                    vals.reserve(group.size());
                    for (const RunRow* rr : group) vals.push_back(metric_value(*rr, metric));
                    const auto mi = static_cast<std::size_t>(metric);
                    row.mean[mi] = mean(vals);
                    row.stdev[mi] = std::sqrt(sample_variance(vals));
                }
                agg.rows.push_back(std::move(row));
            }
        }
    }

    // dense ranks per (cell, k, metric); ties break toward the earlier model
    for (const auto& cell : agg.cells) {
        for (double k : agg.ks) {
            for (Metric metric : all_metrics()) {
                std::vector<std::pair<double, std::size_t>> vals;  // (mean, model index)
                for (std::size_t m = 0; m < agg.models.size(); ++m) {
                    const AggRow* row = agg.find(cell, agg.models[m], k);
                    vals.emplace_back(row->mean[static_cast<std::size_t>(metric)], m);
                }
                const bool desc = metric_higher_is_better(metric);
                std::sort(vals.begin(), vals.end(), [desc](const auto& a, const auto& b) {
                    if (a.first != b.first) return desc ? a.first > b.first : a.first < b.first;
                    return a.second < b.second;
                });
                RankRow rr;
                rr.cell = cell;
                rr.k = k;
                rr.metric = metric;
                rr.ranks.resize(agg.models.size());
                for (std::size_t pos = 0; pos < vals.size(); ++pos)
                    rr.ranks[pos] = {agg.models[vals[pos].second], static_cast<int>(pos) + 1};
                agg.ranks.push_back(std::move(rr));
            }
        }
    }
    return agg;
}

std::vector<RankCorrRow> rank_correlation_table(const ResultsTable& results) {
    const Layout lay = discover_layout(results);
    if (lay.models.size() < 2)
        throw std::invalid_argument("rank_correlation_table: need at least two models");

    // (cell, k, run, model) -> row
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, const RunRow*> index;
    for (const auto& row : results.rows) {
        index[{lay.cell_idx.at(cell_key({row.setting, row.knob})),
               lay.k_idx.at(fmt_double(row.k)), lay.run_idx.at(row.run),
               lay.model_idx.at(row.model)}] = &row;
    }

    std::vector<RankCorrRow> out;
    const std::vector<Metric> practical{Metric::Uplift, Metric::Auuc, Metric::Qini};
    for (std::size_t c = 0; c < lay.cells.size(); ++c) {
        for (std::size_t k = 0; k < lay.ks.size(); ++k) {
            for (Metric metric : practical) {
                RankCorrRow row;
                row.cell = lay.cells[c];
                row.k = lay.ks[k];
                row.metric = metric;
                std::vector<double> rhos;
                for (std::size_t r = 0; r < lay.runs.size(); ++r) {
                    std::vector<double> metric_vec, ate_vec;
                    bool complete = true;
                    for (std::size_t m = 0; m < lay.models.size(); ++m) {
                        auto it = index.find({c, k, r, m});
                        if (it == index.end()) {
                            complete = false;
                            break;
                        }
                        metric_vec.push_back(metric_value(*it->second, metric));
                        ate_vec.push_back(it->second->ate);
                    }
                    if (!complete)
                        throw std::invalid_argument("rank_correlation_table: incomplete run grid");
                    const double rho = spearman_rank_corr(metric_vec, ate_vec);
                    if (std::isnan(rho)) {
                        ++row.runs_excluded;
                    } else {
                        rhos.push_back(rho);
                    }
                }
                row.runs_used = static_cast<int>(rhos.size());
                row.rho = rhos.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(rhos);
                out.push_back(std::move(row));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace {

std::string k_tag(double k) {
    return "k" + std::to_string(static_cast<int>(std::llround(k * 100.0)));
}

void write_matrix_csv(const std::string& path, const Aggregates& agg, double k, Metric metric,
                      bool stdev) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report file: " + path);
    out << "model";
    for (const auto& cell : agg.cells) out << ',' << cell_label(cell);
    out << '\n';
    for (const auto& model : agg.models) {
        out << model_display_name(model);
        for (const auto& cell : agg.cells) {
            const AggRow* row = agg.find(cell, model, k);
            const auto mi = static_cast<std::size_t>(metric);
            out << ',' << fmt_fixed(stdev ? row->stdev[mi] : row->mean[mi]);
        }
        out << '\n';
    }
}

void write_ranks_csv(const std::string& path, const Aggregates& agg, double k, Metric metric) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report file: " + path);
    out << "model";
    for (const auto& cell : agg.cells) out << ',' << cell_label(cell);
    out << '\n';
    for (const auto& model : agg.models) {
        out << model_display_name(model);
        for (const auto& cell : agg.cells) {
            const RankRow* rr = agg.find_ranks(cell, k, metric);
            int rank = 0;
            for (const auto& [m, r] : rr->ranks)
                if (m == model) rank = r;
            out << ',' << rank;
        }
        out << '\n';
    }
}

}  // namespace

void emit_report(const ResultsTable& results, const std::string& format,
                 const std::string& out_dir) {
    if (format != "csv" && format != "json")
        throw std::invalid_argument("emit_report: format must be csv or json");
    std::filesystem::create_directories(out_dir);

    results.save(out_dir + "/runs.csv");
    const Aggregates agg = aggregate(results);
    const auto corr = rank_correlation_table(results);

    if (format == "csv") {
        for (double k : agg.ks) {
            for (Metric metric : all_metrics()) {
                const std::string base = out_dir + '/' + metric_name(metric) + '_' + k_tag(k);
                write_matrix_csv(base + "_mean.csv", agg, k, metric, false);
                write_matrix_csv(base + "_std.csv", agg, k, metric, true);
                write_ranks_csv(base + "_ranks.csv", agg, k, metric);
            }
        }
        std::ofstream out(out_dir + "/rank_correlation.csv");
        if (!out) throw IoError("cannot write rank correlation table");
        out << "metric,k";
        for (const auto& cell : agg.cells) out << ',' << cell_label(cell);
        out << ",runs_excluded\n";
        for (Metric metric : {Metric::Uplift, Metric::Auuc, Metric::Qini}) {
            for (double k : agg.ks) {
                out << metric_name(metric) << ',' << fmt_double(k, "%g");
                int excluded = 0;
                for (const auto& cell : agg.cells) {
                    const RankCorrRow* found = nullptr;
                    for (const auto& row : corr)
                        if (row.cell == cell && row.k == k && row.metric == metric) found = &row;
                    out << ',' << (found ? fmt_fixed(found->rho) : "nan");
                    if (found) excluded += found->runs_excluded;
                }
                out << ',' << excluded << '\n';
            }
        }
        return;
    }

    nlohmann::json j;
    j["models"] = agg.models;
    j["k_list"] = agg.ks;
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : agg.cells)
        cells.push_back({{"setting", cell.setting}, {"knob", cell.knob}});
    j["cells"] = cells;
    nlohmann::json aggregates = nlohmann::json::array();
    for (const auto& row : agg.rows) {
        nlohmann::json r;
        r["setting"] = row.cell.setting;
        r["knob"] = row.cell.knob;
        r["model"] = row.model;
        r["k"] = row.k;
        for (Metric metric : all_metrics()) {
            const auto mi = static_cast<std::size_t>(metric);
            r["mean_" + metric_name(metric)] = row.mean[mi];
            r["std_" + metric_name(metric)] = row.stdev[mi];
        }
        aggregates.push_back(std::move(r));
    }
    j["aggregates"] = aggregates;
    nlohmann::json ranks = nlohmann::json::array();
    for (const auto& rr : agg.ranks) {
        nlohmann::json r;
        r["setting"] = rr.cell.setting;
        r["knob"] = rr.cell.knob;
        r["k"] = rr.k;
        r["metric"] = metric_name(rr.metric);
        nlohmann::json per_model = nlohmann::json::object();
        for (const auto& [model, rank] : rr.ranks) per_model[model] = rank;
        r["ranks"] = per_model;
        ranks.push_back(std::move(r));
    }
    j["ranks"] = ranks;
    nlohmann::json correlation = nlohmann::json::array();
    for (const auto& row : corr) {
        correlation.push_back({{"setting", row.cell.setting},
                               {"knob", row.cell.knob},
                               {"k", row.k},
                               {"metric", metric_name(row.metric)},
                               {"rho", row.rho},
                               {"runs_used", row.runs_used},
                               {"runs_excluded", row.runs_excluded}});
    }
    j["rank_correlation"] = correlation;
    std::ofstream out(out_dir + "/report.json");
    if (!out) throw IoError("cannot write report.json");
    out << j.dump(2) << '\n';
}

}  // namespace upbench
