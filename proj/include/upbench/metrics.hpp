#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "upbench/common.hpp"

namespace upbench {

/// A population sorted by predicted uplift, descending; ties keep ascending
/// original index. All metric computations run over this ranking.
struct RankedPopulation {
    std::vector<int> order;  // permutation of 0..n-1, best-ranked first
    std::vector<double> tau_hat;
    std::optional<std::vector<double>> tau_true;
    std::vector<int> t;
    std::vector<double> y;
    double k_fraction = 1.0;
    int n_k = 1;  // max(1, floor(n * k))

    std::size_t n() const { return tau_hat.size(); }
};

RankedPopulation rank_population(const std::vector<double>& tau_hat,
                                 const std::optional<std::vector<double>>& tau_true,
                                 const std::vector<int>& t, const std::vector<double>& y,
                                 double k_fraction);

/// Cumulative arm counts and outcome sums along the ranking (1-based prefix
/// i stored at index i-1).
struct PrefixCounts {
    std::vector<double> n_treated, n_control;  // N_i^T, N_i^C
    std::vector<double> s_treated, s_control;  // S_i^T, S_i^C

    std::size_t n() const { return n_treated.size(); }
};

PrefixCounts build_prefix_counts(const RankedPopulation& rp);

double pehe_at_k(const RankedPopulation& rp);
double ate_at_k(const RankedPopulation& rp);

/// Difference of within-arm outcome means over the top n_k units; an empty
/// arm contributes 0 for its mean.
double uplift_at_k(const PrefixCounts& pc, int n_k);

/// Trapezoid area of the uplift curve over prefixes 1..n_k, divided by n_k.
double auuc_at_k(const PrefixCounts& pc, int n_k);

struct QiniOptions {
    /// 0 uses the analytic diagonal baseline from (0,0) to the whole-sample
    /// curve endpoint; > 0 averages that many seeded random orderings instead.
    int random_baseline_permutations = 0;
    std::uint64_t baseline_seed = 0;
};

/// (model area - random-baseline area) over prefixes 1..n_k, divided by n_k.
double qini_at_k(const PrefixCounts& pc, int n_k, const QiniOptions& opts = {});

struct MetricReport {
    std::optional<double> pehe_k, ate_k;
    double uplift_k = 0.0, auuc_k = 0.0, qini_k = 0.0;
    double k_fraction = 1.0;
    int n_k = 1;
};

/// All five metrics of one ranked population (oracle ones only when the true
/// effects are present).
MetricReport evaluate_metrics(const RankedPopulation& rp, const QiniOptions& opts = {});

/// Spearman rank correlation with mid-ranks for ties. Returns NaN when either
/// input has zero rank variance.
double spearman_rank_corr(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace upbench
