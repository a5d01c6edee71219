#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "upbench/metrics.hpp"
#include "upbench/rng.hpp"

using namespace upbench;

namespace {

struct Instance {
    std::vector<double> tau_hat, tau, y;
    std::vector<int> t;
};

Instance random_instance(Rng& rng, std::size_t n, bool allow_ties = true) {
    Instance inst;
    inst.tau_hat.resize(n);
    inst.tau.resize(n);
    inst.y.resize(n);
    inst.t.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        inst.tau_hat[i] = allow_ties && rng.bernoulli(0.2)
                              ? std::floor(rng.uniform(-2, 2))  // deliberate tie blocks
                              : rng.uniform(-2, 2);
        inst.tau[i] = rng.uniform(-2, 2);
        inst.y[i] = rng.uniform(-1, 3);
        inst.t[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    return inst;
}

}  // namespace

TEST_CASE("rank_population sorts descending with index tie-break") {
    const std::vector<double> tau_hat{3, 1, 2};
    const std::vector<int> t{1, 0, 1};
    const std::vector<double> y{1, 2, 3};
    const auto rp = rank_population(tau_hat, std::nullopt, t, y, 1.0);
    CHECK(rp.order == std::vector<int>{0, 2, 1});

    const std::vector<double> equal(5, 0.7);
    const auto tied =
        rank_population(equal, std::nullopt, std::vector<int>(5, 1), std::vector<double>(5, 0), 0.5);
    CHECK(tied.order == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(tied.n_k == 2);

    const auto ten = rank_population(std::vector<double>(10, 1.0), std::nullopt,
                                     std::vector<int>(10, 0), std::vector<double>(10, 0), 0.30);
    CHECK(ten.n_k == 3);

    CHECK_THROWS_AS(rank_population(tau_hat, std::nullopt, {1, 0}, y, 0.5),
                    std::invalid_argument);
}

TEST_CASE("pehe_at_k: zero error, hand value, truncation") {
    const std::vector<double> tau{1.0, 0.5, -0.2};
    const std::vector<int> t{1, 0, 1};
    const std::vector<double> y{0, 0, 0};
    const auto exact = rank_population(tau, tau, t, y, 1.0);
    CHECK(pehe_at_k(exact) == 0.0);

    // top-2 errors (1, 2): sqrt(5/2)
    const std::vector<double> tau_hat{5.0, 4.0, 3.0, 2.0};
    const std::vector<double> tau4{4.0, 2.0, 3.0, 2.0};
    const std::vector<int> t4{1, 0, 1, 0};
    const std::vector<double> y4{0, 0, 0, 0};
    const auto rp = rank_population(tau_hat, tau4, t4, y4, 0.5);
    CHECK(pehe_at_k(rp) == doctest::Approx(std::sqrt(2.5)));

    // changing units below rank n_k leaves the value unchanged
    std::vector<double> tau4b = tau4;
    tau4b[3] = -100.0;
    const auto rp2 = rank_population(tau_hat, tau4b, t4, y4, 0.5);
    CHECK(pehe_at_k(rp2) == pehe_at_k(rp));

    const auto no_truth = rank_population(tau_hat, std::nullopt, t4, y4, 0.5);
    CHECK_THROWS_AS(pehe_at_k(no_truth), std::invalid_argument);
}

TEST_CASE("ate_at_k: constant effects and the top-1 pick") {
    const std::vector<double> c(6, 2.5);
    const std::vector<int> t(6, 1);
    const std::vector<double> y(6, 0.0);
    for (double k : {0.2, 0.5, 1.0}) {
        const auto rp = rank_population(c, c, t, y, k);
        CHECK(ate_at_k(rp) == doctest::Approx(2.5));
    }

    const std::vector<double> tau{5, 1, 1, 1};
    const std::vector<double> tau_hat{9, 0, 0, 0};  // puts the 5 first
    const auto rp = rank_population(tau_hat, tau, {1, 0, 1, 0}, {0, 0, 0, 0}, 0.25);
    CHECK(rp.n_k == 1);
    CHECK(ate_at_k(rp) == doctest::Approx(5.0));
}

TEST_CASE("ranking by true effects maximizes ate_at_k over permutations") {
    Rng rng(404);
    // exhaustive over all permutations at n <= 7
    for (std::size_t n : {5u, 6u, 7u}) {
        std::vector<double> tau(n);
        for (auto& v : tau) v = rng.uniform(-1, 1);
        const std::vector<int> t(n, 1);
        const std::vector<double> y(n, 0.0);
        for (double k : {0.2, 0.5, 0.9}) {
            const auto oracle_rp = rank_population(tau, tau, t, y, k);
            const double best = ate_at_k(oracle_rp);
            std::vector<int> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            do {
                const int nk = oracles::naive_n_k(n, k);
                double s = 0.0;
                for (int i = 0; i < nk; ++i)
                    s += tau[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
                CHECK(s / nk <= best + 1e-12);
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
    }
    // sampled permutations at n = 20
    const std::size_t n = 20;
    std::vector<double> tau(n);
    for (auto& v : tau) v = rng.uniform(-1, 1);
    const auto oracle_rp =
        rank_population(tau, tau, std::vector<int>(n, 1), std::vector<double>(n, 0.0), 0.3);
    const double best = ate_at_k(oracle_rp);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int rep = 0; rep < 1000; ++rep) {
        rng.shuffle(perm);
        double s = 0.0;
        for (int i = 0; i < oracle_rp.n_k; ++i)
            s += tau[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        CHECK(s / oracle_rp.n_k <= best + 1e-12);
    }
}

TEST_CASE("prefix counts accumulate the hand example") {
    // ranked (t, y) = (1,1), (0,2), (1,3)
    const std::vector<double> tau_hat{3, 2, 1};
    const std::vector<int> t{1, 0, 1};
    const std::vector<double> y{1, 2, 3};
    const auto rp = rank_population(tau_hat, std::nullopt, t, y, 1.0);
    const auto pc = build_prefix_counts(rp);
    CHECK(pc.n_treated == std::vector<double>{1, 1, 2});
    CHECK(pc.n_control == std::vector<double>{0, 1, 1});
    CHECK(pc.s_treated == std::vector<double>{1, 1, 4});
    CHECK(pc.s_control == std::vector<double>{0, 2, 2});

    // all treated: control sequences identically zero
    const auto all_t = rank_population(tau_hat, std::nullopt, {1, 1, 1}, y, 1.0);
    const auto pct = build_prefix_counts(all_t);
    CHECK(pct.n_control == std::vector<double>{0, 0, 0});
    CHECK(pct.s_control == std::vector<double>{0, 0, 0});

    // telescoping: final prefix equals whole-sample counts and sums
    CHECK(pc.n_treated.back() + pc.n_control.back() == 3);
    CHECK(pc.s_treated.back() == 4);
    CHECK(pc.s_control.back() == 2);
}

TEST_CASE("prefix counts are monotone and arm-consistent") {
    Rng rng(5150);
    const auto inst = random_instance(rng, 200);
    const auto rp = rank_population(inst.tau_hat, std::nullopt, inst.t, inst.y, 1.0);
    const auto pc = build_prefix_counts(rp);
    for (std::size_t i = 1; i < pc.n(); ++i) {
        CHECK(pc.n_treated[i] + pc.n_control[i] == static_cast<double>(i + 1));
        CHECK(pc.n_treated[i] >= pc.n_treated[i - 1]);
        CHECK(pc.n_control[i] >= pc.n_control[i - 1]);
        const bool treated_step = pc.n_treated[i] > pc.n_treated[i - 1];
        if (treated_step)
            CHECK(pc.s_control[i] == pc.s_control[i - 1]);
        else
            CHECK(pc.s_treated[i] == pc.s_treated[i - 1]);
    }
}

TEST_CASE("uplift_at_k hand values and conventions") {
    // top-k: treated y {1,0}, control y {0,0}
    const std::vector<double> tau_hat{4, 3, 2, 1};
    const auto rp = rank_population(tau_hat, std::nullopt, {1, 1, 0, 0}, {1, 0, 0, 0}, 1.0);
    CHECK(uplift_at_k(build_prefix_counts(rp), 4) == doctest::Approx(0.5));

    const auto sym = rank_population(tau_hat, std::nullopt, {1, 1, 0, 0}, {1, 0, 1, 0}, 1.0);
    CHECK(uplift_at_k(build_prefix_counts(sym), 4) == doctest::Approx(0.0));

    // no control units in the top-k: empty arm contributes zero
    const std::vector<double> y{0.7, 0.7, 0.0, 0.0};
    const auto top = rank_population(tau_hat, std::nullopt, {1, 1, 0, 0}, y, 0.5);
    CHECK(uplift_at_k(build_prefix_counts(top), top.n_k) == doctest::Approx(0.7));
}

TEST_CASE("uplift at k=1 equals the arm-mean difference exactly") {
    Rng rng(808);
    auto inst = random_instance(rng, 157);
    // integer outcomes make the sums order-independent, so the identity
    // holds bit-for-bit
    for (auto& v : inst.y) v = std::floor(v * 4.0);
    const auto rp = rank_population(inst.tau_hat, std::nullopt, inst.t, inst.y, 1.0);
    const double got = uplift_at_k(build_prefix_counts(rp), rp.n_k);
    double st = 0, sc = 0, nt = 0, nc = 0;
    for (std::size_t i = 0; i < inst.y.size(); ++i) {
        if (inst.t[i]) {
            st += inst.y[i];
            nt += 1;
        } else {
            sc += inst.y[i];
            nc += 1;
        }
    }
    CHECK(got == st / nt - sc / nc);
}

TEST_CASE("auuc_at_k: zero curve, hand trapezoid, single-unit prefix") {
    const std::vector<double> tau_hat{2, 1};
    const auto zero = rank_population(tau_hat, std::nullopt, {1, 0}, {0, 0}, 1.0);
    CHECK(auuc_at_k(build_prefix_counts(zero), 2) == 0.0);

    const auto hand = rank_population(tau_hat, std::nullopt, {1, 0}, {1, 0}, 1.0);
    CHECK(auuc_at_k(build_prefix_counts(hand), 2) == doctest::Approx(0.75));

    CHECK(auuc_at_k(build_prefix_counts(hand), 1) == 0.0);  // empty trapezoid sum
}

TEST_CASE("qini_at_k: diagonal-equal curve and zero outcomes") {
    // all treated with constant outcomes: curve is exactly the diagonal
    const std::vector<double> tau_hat{4, 3, 2, 1};
    const auto diag =
        rank_population(tau_hat, std::nullopt, {1, 1, 1, 1}, {2, 2, 2, 2}, 1.0);
    CHECK(qini_at_k(build_prefix_counts(diag), 4) == doctest::Approx(0.0));

    const auto zeros = rank_population(tau_hat, std::nullopt, {1, 0, 1, 0}, {0, 0, 0, 0}, 1.0);
    CHECK(qini_at_k(build_prefix_counts(zeros), 4) == doctest::Approx(0.0));
}

TEST_CASE("practical metrics match direct-summation oracles on random instances") {
    Rng rng(31337);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform_int(199));
        const auto inst = random_instance(rng, n);
        const double k = rng.uniform(0.05, 1.0);
        const auto rp = rank_population(inst.tau_hat, inst.tau, inst.t, inst.y, k);
        const auto pc = build_prefix_counts(rp);
        CHECK(uplift_at_k(pc, rp.n_k) ==
              doctest::Approx(oracles::naive_uplift(inst.tau_hat, inst.t, inst.y, k)).epsilon(1e-9));
        CHECK(auuc_at_k(pc, rp.n_k) ==
              doctest::Approx(oracles::naive_auuc(inst.tau_hat, inst.t, inst.y, k)).epsilon(1e-9));
        CHECK(qini_at_k(pc, rp.n_k) ==
              doctest::Approx(oracles::naive_qini(inst.tau_hat, inst.t, inst.y, k)).epsilon(1e-9));
        CHECK(pehe_at_k(rp) ==
              doctest::Approx(oracles::naive_pehe(inst.tau_hat, inst.tau, k)).epsilon(1e-9));
        CHECK(ate_at_k(rp) ==
              doctest::Approx(oracles::naive_ate(inst.tau_hat, inst.tau, k)).epsilon(1e-9));
    }
}

TEST_CASE("rank-only metrics are invariant to increasing transforms of tau-hat") {
    Rng rng(99);
    const auto inst = random_instance(rng, 120, /*allow_ties=*/false);
    std::vector<double> scaled(inst.tau_hat.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = 3.0 * inst.tau_hat[i] + 7.0;

    for (double k : {0.1, 0.3, 0.7, 1.0}) {
        const auto a = rank_population(inst.tau_hat, inst.tau, inst.t, inst.y, k);
        const auto b = rank_population(scaled, inst.tau, inst.t, inst.y, k);
        const auto pa = build_prefix_counts(a);
        const auto pb = build_prefix_counts(b);
        CHECK(uplift_at_k(pa, a.n_k) == uplift_at_k(pb, b.n_k));
        CHECK(auuc_at_k(pa, a.n_k) == auuc_at_k(pb, b.n_k));
        CHECK(qini_at_k(pa, a.n_k) == qini_at_k(pb, b.n_k));
        CHECK(ate_at_k(a) == ate_at_k(b));
        CHECK(pehe_at_k(a) != pehe_at_k(b));  // PEHE is scale sensitive
    }
}

TEST_CASE("metrics at fraction k ignore units ranked below n_k") {
    Rng rng(2718);
    auto inst = random_instance(rng, 80, false);
    const double k = 0.25;
    const auto rp = rank_population(inst.tau_hat, inst.tau, inst.t, inst.y, k);
    const auto pc = build_prefix_counts(rp);
    const double u0 = uplift_at_k(pc, rp.n_k);
    const double a0 = auuc_at_k(pc, rp.n_k);
    const double p0 = pehe_at_k(rp);
    const double t0 = ate_at_k(rp);

    // perturb everything strictly below the cut, keeping the ranking prefix
    auto perturbed = inst;
    for (int i = rp.n_k; i < static_cast<int>(inst.y.size()); ++i) {
        const auto u = static_cast<std::size_t>(rp.order[static_cast<std::size_t>(i)]);
        perturbed.y[u] += 5.0;
        perturbed.t[u] = 1 - perturbed.t[u];
        perturbed.tau[u] -= 3.0;
    }
    const auto rp2 = rank_population(inst.tau_hat, perturbed.tau, perturbed.t, perturbed.y, k);
    const auto pc2 = build_prefix_counts(rp2);
    CHECK(uplift_at_k(pc2, rp2.n_k) == u0);
    CHECK(auuc_at_k(pc2, rp2.n_k) == a0);
    CHECK(pehe_at_k(rp2) == p0);
    CHECK(ate_at_k(rp2) == t0);
    // Qini's diagonal uses whole-sample totals, so it may move; assert the
    // model-area part via the oracle instead
    CHECK(qini_at_k(pc2, rp2.n_k) ==
          doctest::Approx(oracles::naive_qini(inst.tau_hat, perturbed.t, perturbed.y, k))
              .epsilon(1e-9));
}

TEST_CASE("qini permutation baseline stays close to the diagonal on balanced data") {
    Rng rng(11);
    const auto inst = random_instance(rng, 150, false);
    const auto rp = rank_population(inst.tau_hat, std::nullopt, inst.t, inst.y, 0.5);
    const auto pc = build_prefix_counts(rp);
    const double diag = qini_at_k(pc, rp.n_k);
    QiniOptions opts;
    opts.random_baseline_permutations = 400;
    opts.baseline_seed = 9;
    const double permuted = qini_at_k(pc, rp.n_k, opts);
    CHECK(std::abs(permuted - diag) < 2.0);  // same scale, agreeing baselines
    // deterministic for a fixed baseline seed
    CHECK(qini_at_k(pc, rp.n_k, opts) == permuted);
}

TEST_CASE("spearman: hand values, ties, and degenerate inputs") {
    CHECK(spearman_rank_corr({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
    CHECK(spearman_rank_corr({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman_rank_corr({1, 2, 3}, {2, 1, 3}) == doctest::Approx(0.5));

    // mid-ranks: a = (1, 2.5, 2.5, 4); b reverses the tie block order
    const double rho = spearman_rank_corr({1, 2, 2, 3}, {3, 2, 2, 1});
    CHECK(rho == doctest::Approx(-1.0));

    CHECK(std::isnan(spearman_rank_corr({1, 1, 1}, {1, 2, 3})));
    CHECK_THROWS_AS(spearman_rank_corr({1}, {1}), std::invalid_argument);
}

TEST_CASE("evaluate_metrics bundles all five values") {
    Rng rng(6);
    const auto inst = random_instance(rng, 60);
    const auto rp = rank_population(inst.tau_hat, inst.tau, inst.t, inst.y, 0.3);
    const auto r = evaluate_metrics(rp);
    CHECK(r.pehe_k.has_value());
    CHECK(r.ate_k.has_value());
    CHECK(r.n_k == rp.n_k);
    CHECK(*r.pehe_k >= 0.0);

    const auto rp2 = rank_population(inst.tau_hat, std::nullopt, inst.t, inst.y, 0.3);
    const auto r2 = evaluate_metrics(rp2);
    CHECK(!r2.pehe_k.has_value());
    CHECK(r2.uplift_k == r.uplift_k);
}
