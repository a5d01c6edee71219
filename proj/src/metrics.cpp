#include "upbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "upbench/rng.hpp"

namespace upbench {

RankedPopulation rank_population(const std::vector<double>& tau_hat,
                                 const std::optional<std::vector<double>>& tau_true,
                                 const std::vector<int>& t, const std::vector<double>& y,
                                 double k_fraction) {
    const std::size_t n = tau_hat.size();
    if (t.size() != n || y.size() != n || (tau_true && tau_true->size() != n))
        throw std::invalid_argument("rank_population: input length mismatch");
    if (n == 0) throw std::invalid_argument("rank_population: empty population");
    if (k_fraction <= 0.0 || k_fraction > 1.0)
        throw std::invalid_argument("rank_population: k must lie in (0,1]");

    RankedPopulation rp;
    rp.order.resize(n);
    std::iota(rp.order.begin(), rp.order.end(), 0);
    std::stable_sort(rp.order.begin(), rp.order.end(), [&tau_hat](int a, int b) {
        return tau_hat[static_cast<std::size_t>(a)] > tau_hat[static_cast<std::size_t>(b)];
    });
    rp.tau_hat = tau_hat;
    rp.tau_true = tau_true;
    rp.t = t;
    rp.y = y;
    rp.k_fraction = k_fraction;
    rp.n_k = std::max(1, static_cast<int>(std::floor(k_fraction * static_cast<double>(n))));
    return rp;
}

PrefixCounts build_prefix_counts(const RankedPopulation& rp) {
    const std::size_t n = rp.n();
    PrefixCounts pc;
    pc.n_treated.resize(n);
    pc.n_control.resize(n);
    pc.s_treated.resize(n);
    pc.s_control.resize(n);
    double nt = 0, nc = 0, st = 0, sc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(rp.order[i]);
        if (rp.t[u]) {
            nt += 1.0;
            st += rp.y[u];
        } else {
            nc += 1.0;
            sc += rp.y[u];
        }
        pc.n_treated[i] = nt;
        pc.n_control[i] = nc;
        pc.s_treated[i] = st;
        pc.s_control[i] = sc;
    }
    return pc;
}

double pehe_at_k(const RankedPopulation& rp) {
    if (!rp.tau_true) throw std::invalid_argument("pehe_at_k: true effects missing");
    double s = 0.0;
    for (int i = 0; i < rp.n_k; ++i) {
        const auto u = static_cast<std::size_t>(rp.order[static_cast<std::size_t>(i)]);
        const double e = rp.tau_hat[u] - (*rp.tau_true)[u];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(rp.n_k));
}

double ate_at_k(const RankedPopulation& rp) {
    if (!rp.tau_true) throw std::invalid_argument("ate_at_k: true effects missing");
    double s = 0.0;
    for (int i = 0; i < rp.n_k; ++i) {
        const auto u = static_cast<std::size_t>(rp.order[static_cast<std::size_t>(i)]);
        s += (*rp.tau_true)[u];
    }
    return s / static_cast<double>(rp.n_k);
}

namespace {

// V^UC_i: arm-mean difference scaled by prefix size; empty arm's mean is 0.
double uplift_curve_value(const PrefixCounts& pc, std::size_t i) {
    const double mt = pc.n_treated[i] > 0 ? pc.s_treated[i] / pc.n_treated[i] : 0.0;
    const double mc = pc.n_control[i] > 0 ? pc.s_control[i] / pc.n_control[i] : 0.0;
    return (mt - mc) * (pc.n_treated[i] + pc.n_control[i]);
}

// V^QC_i: S^T - S^C * (N^T / N^C), the ratio defined as 0 while N^C = 0.
double qini_curve_value(const PrefixCounts& pc, std::size_t i) {
    const double ratio = pc.n_control[i] > 0 ? pc.n_treated[i] / pc.n_control[i] : 0.0;
    return pc.s_treated[i] - pc.s_control[i] * ratio;
}

}  // namespace

double uplift_at_k(const PrefixCounts& pc, int n_k) {
    const auto i = static_cast<std::size_t>(n_k - 1);
    const double mt = pc.n_treated[i] > 0 ? pc.s_treated[i] / pc.n_treated[i] : 0.0;
    const double mc = pc.n_control[i] > 0 ? pc.s_control[i] / pc.n_control[i] : 0.0;
    return mt - mc;
}

double auuc_at_k(const PrefixCounts& pc, int n_k) {
    double area = 0.0;
    for (int i = 1; i < n_k; ++i) {
        area += (uplift_curve_value(pc, static_cast<std::size_t>(i - 1)) +
                 uplift_curve_value(pc, static_cast<std::size_t>(i))) /
                2.0;
    }
    return area / static_cast<double>(n_k);
}

double qini_at_k(const PrefixCounts& pc, int n_k, const QiniOptions& opts) {
    double model_area = 0.0;
    for (int i = 1; i < n_k; ++i) {
        model_area += (qini_curve_value(pc, static_cast<std::size_t>(i - 1)) +
                       qini_curve_value(pc, static_cast<std::size_t>(i))) /
                      2.0;
    }

    const std::size_t n = pc.n();
    double baseline_area = 0.0;
    if (opts.random_baseline_permutations <= 0) {
        // analytic diagonal from (0,0) to the whole-sample curve value:
        // V_rand(i) = (i/n) * V_full at prefix i
        const double v_full = qini_curve_value(pc, n - 1);
        auto v_rand = [&](int i) {
            return static_cast<double>(i) / static_cast<double>(n) * v_full;
        };
        for (int i = 1; i < n_k; ++i) baseline_area += (v_rand(i) + v_rand(i + 1)) / 2.0;
    } else {
        // averaged random orderings of the same arm/outcome sequence
        std::vector<int> arm(n);
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            arm[i] = pc.n_treated[i] > (i ? pc.n_treated[i - 1] : 0.0) ? 1 : 0;
            const double prev_s = i ? (arm[i] ? pc.s_treated[i - 1] : pc.s_control[i - 1]) : 0.0;
            out[i] = (arm[i] ? pc.s_treated[i] : pc.s_control[i]) - prev_s;
        }
        Rng rng(opts.baseline_seed);
        std::vector<int> perm(n);
        for (int rep = 0; rep < opts.random_baseline_permutations; ++rep) {
            std::iota(perm.begin(), perm.end(), 0);
            rng.shuffle(perm);
            double nt = 0, nc = 0, st = 0, sc = 0;
            std::vector<double> v(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto u = static_cast<std::size_t>(perm[i]);
                if (arm[u]) {
                    nt += 1.0;
                    st += out[u];
                } else {
                    nc += 1.0;
                    sc += out[u];
                }
                const double ratio = nc > 0 ? nt / nc : 0.0;
                v[i] = st - sc * ratio;
            }
            for (int i = 1; i < n_k; ++i)
                baseline_area += (v[static_cast<std::size_t>(i - 1)] +
                                  v[static_cast<std::size_t>(i)]) /
                                 2.0;
        }
        baseline_area /= static_cast<double>(opts.random_baseline_permutations);
    }
    return (model_area - baseline_area) / static_cast<double>(n_k);
}

MetricReport evaluate_metrics(const RankedPopulation& rp, const QiniOptions& opts) {
    MetricReport r;
    r.k_fraction = rp.k_fraction;
    r.n_k = rp.n_k;
    if (rp.tau_true) {
        r.pehe_k = pehe_at_k(rp);
        r.ate_k = ate_at_k(rp);
    }
    const PrefixCounts pc = build_prefix_counts(rp);
    r.uplift_k = uplift_at_k(pc, rp.n_k);
    r.auuc_k = auuc_at_k(pc, rp.n_k);
    r.qini_k = qini_at_k(pc, rp.n_k, opts);
    return r;
}

namespace {

std::vector<double> mid_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&v](int a, int b) {
        return v[static_cast<std::size_t>(a)] < v[static_cast<std::size_t>(b)];
    });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[static_cast<std::size_t>(order[j + 1])] ==
                                v[static_cast<std::size_t>(order[i])])
            ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[static_cast<std::size_t>(order[k])] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_rank_corr(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman: need two equal-length vectors of size >= 2");
    const auto ra = mid_ranks(a);
    const auto rb = mid_ranks(b);
    const double ma = mean(ra), mb = mean(rb);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double da = ra[i] - ma;
        const double db = rb[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

}  // namespace upbench
