#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "upbench/base_learners.hpp"
#include "upbench/net.hpp"
#include "upbench/rng.hpp"

using namespace upbench;

namespace {

Matrix random_matrix(Rng& rng, std::size_t n, std::size_t d, double lo = 0.0, double hi = 1.0) {
    Matrix x(n, d);
    for (auto& v : x.data()) v = rng.uniform(lo, hi);
    return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// ridge
// ---------------------------------------------------------------------------

TEST_CASE("ridge interpolates exactly linear data at lambda = 0") {
    Rng rng(1);
    const Matrix x = random_matrix(rng, 60, 4);
    std::vector<double> y(60);
    for (std::size_t i = 0; i < 60; ++i)
        y[i] = 1.5 + 2.0 * x(i, 0) - 3.0 * x(i, 1) + 0.25 * x(i, 2) - x(i, 3);
    const auto model = fit_ridge(x, y, 0.0);
    const auto pred = model->predict(x);
    double worst = 0.0;
    for (std::size_t i = 0; i < 60; ++i) worst = std::max(worst, std::abs(pred[i] - y[i]));
    CHECK(worst <= 1e-8);
}

TEST_CASE("ridge on constant targets returns the constant") {
    Rng rng(2);
    const Matrix x = random_matrix(rng, 30, 3);
    const std::vector<double> y(30, 4.25);
    const auto model = fit_ridge(x, y, 0.0);
    for (double p : model->predict(x)) CHECK(p == doctest::Approx(4.25));
}

TEST_CASE("huge lambda shrinks slopes to zero and keeps the mean") {
    Rng rng(3);
    const Matrix x = random_matrix(rng, 100, 3);
    std::vector<double> y(100);
    for (std::size_t i = 0; i < 100; ++i) y[i] = 2.0 + 3.0 * x(i, 0) + rng.gaussian(0, 0.1);
    const auto model = fit_ridge(x, y, 1e9);
    // predictions collapse to a constant: slope norm below 1e-3
    const auto p0 = model->predict(Matrix(1, 3, 0.0));
    const auto p1 = model->predict(Matrix(1, 3, 1.0));
    CHECK(std::abs(p1[0] - p0[0]) < 1e-3);
    CHECK(p0[0] == doctest::Approx(mean(y)).epsilon(1e-6));
}

TEST_CASE("singular normal system with lambda = 0 reports a numerical error") {
    Matrix x(5, 2);
    for (std::size_t i = 0; i < 5; ++i) {
        x(i, 0) = static_cast<double>(i);
        x(i, 1) = 2.0 * static_cast<double>(i);  // collinear
    }
    const std::vector<double> y{0, 1, 2, 3, 4};
    CHECK_THROWS_AS(fit_ridge(x, y, 0.0), TrainingError);
    CHECK_NOTHROW(fit_ridge(x, y, 1e-6));
}

TEST_CASE("weighted ridge ignores zero-weight rows") {
    Rng rng(4);
    const Matrix x = random_matrix(rng, 40, 2);
    std::vector<double> y(40);
    for (std::size_t i = 0; i < 40; ++i) y[i] = 1.0 + x(i, 0);
    std::vector<double> w(40, 1.0);
    // poison some rows but give them zero weight
    std::vector<double> y_poisoned = y;
    for (std::size_t i = 0; i < 10; ++i) {
        y_poisoned[i] = 100.0;
        w[i] = 0.0;
    }
    const auto model = fit_ridge(x, y_poisoned, 0.0, &w);
    const auto pred = model->predict(x);
    for (std::size_t i = 10; i < 40; ++i) CHECK(pred[i] == doctest::Approx(y[i]).epsilon(1e-9));
}

// ---------------------------------------------------------------------------
// logistic
// ---------------------------------------------------------------------------

TEST_CASE("logistic null fit predicts one half") {
    Rng rng(5);
    const Matrix x = random_matrix(rng, 4000, 3);
    std::vector<int> t(4000);
    for (auto& ti : t) ti = rng.bernoulli(0.5) ? 1 : 0;
    const auto model = fit_logistic(x, t, 1.0);
    for (double p : model.predict_proba(x)) {
        CHECK(p > 0.45);
        CHECK(p < 0.55);
    }
    CHECK(model.gradient_norm < 1e-6);  // first-order condition
}

TEST_CASE("logistic on separable data keeps probabilities strictly interior") {
    Matrix x(40, 1);
    std::vector<int> t(40);
    for (std::size_t i = 0; i < 40; ++i) {
        x(i, 0) = i < 20 ? static_cast<double>(i) * 0.01 : 0.5 + static_cast<double>(i) * 0.01;
        t[i] = i < 20 ? 0 : 1;
    }
    const auto model = fit_logistic(x, t, 9.0);
    for (double p : model.predict_proba(x)) {
        CHECK(p > 1e-12);
        CHECK(p < 1.0 - 1e-12);
    }
}

TEST_CASE("duplicating every row leaves the fitted weights unchanged") {
    Rng rng(6);
    const Matrix x = random_matrix(rng, 120, 2);
    std::vector<int> t(120);
    for (std::size_t i = 0; i < 120; ++i) t[i] = rng.bernoulli(0.3 + 0.4 * x(i, 0)) ? 1 : 0;
    const auto base = fit_logistic(x, t, 2.0);

    Matrix xx(240, 2);
    std::vector<int> tt(240);
    for (std::size_t i = 0; i < 240; ++i) {
        const std::size_t j = i % 120;
        xx(i, 0) = x(j, 0);
        xx(i, 1) = x(j, 1);
        tt[i] = t[j];
    }
    const auto doubled = fit_logistic(xx, tt, 2.0);
    for (std::size_t j = 0; j < base.weights.size(); ++j)
        CHECK(doubled.weights[j] == doctest::Approx(base.weights[j]).epsilon(1e-9));
}

TEST_CASE("logistic rejects single-class input") {
    Matrix x(10, 1, 0.5);
    CHECK_THROWS_AS(fit_logistic(x, std::vector<int>(10, 1), 1.0), std::invalid_argument);
}

TEST_CASE("logistic satisfies its first-order condition on a biased fit") {
    Rng rng(7);
    const Matrix x = random_matrix(rng, 500, 4);
    std::vector<int> t(500);
    for (std::size_t i = 0; i < 500; ++i)
        t[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-(x(i, 0) - 0.5)))) ? 1 : 0;
    const auto model = fit_logistic(x, t, 5.0);
    CHECK(model.gradient_norm < 1e-6);
}

// ---------------------------------------------------------------------------
// gbdt
// ---------------------------------------------------------------------------

TEST_CASE("single depth-1 tree recovers a step function exactly") {
    Matrix x(40, 2);
    std::vector<double> y(40);
    Rng rng(8);
    double lo_max = 0.0, hi_min = 1.0;
    for (std::size_t i = 0; i < 40; ++i) {
        x(i, 0) = rng.uniform01();
        x(i, 1) = rng.uniform01();
        y[i] = x(i, 0) > 0.5 ? 1.0 : 0.0;
        if (x(i, 0) <= 0.5) lo_max = std::max(lo_max, x(i, 0));
        if (x(i, 0) > 0.5) hi_min = std::min(hi_min, x(i, 0));
    }
    GBTConfig cfg;
    cfg.n_estimators = 1;
    cfg.max_depth = 1;
    cfg.learning_rate = 1.0;
    cfg.subsample = 1.0;
    cfg.colsample_bytree = 1.0;
    cfg.reg_alpha = 0.0;
    cfg.reg_lambda = 0.0;
    const auto model = fit_gbdt(x, y, cfg, 0);
    const auto pred = model->predict(x);
    double mse = 0.0;
    for (std::size_t i = 0; i < 40; ++i) mse += (pred[i] - y[i]) * (pred[i] - y[i]);
    mse /= 40;
    CHECK(mse <= 1e-12);

    // exhaustive split-search oracle on the tiny instance: the chosen
    // threshold must separate the two plateaus
    Matrix probe_lo(1, 2, 0.0);
    probe_lo(0, 0) = lo_max;
    Matrix probe_hi(1, 2, 0.0);
    probe_hi(0, 0) = hi_min;
    CHECK(model->predict(probe_lo)[0] == doctest::Approx(0.0));
    CHECK(model->predict(probe_hi)[0] == doctest::Approx(1.0));
}

TEST_CASE("gbdt on constant targets predicts the constant for any config") {
    Rng rng(9);
    const Matrix x = random_matrix(rng, 50, 3);
    const std::vector<double> y(50, -2.5);
    for (int trees : {1, 5}) {
        for (double alpha : {0.0, 0.7}) {
            GBTConfig cfg;
            cfg.n_estimators = trees;
            cfg.reg_alpha = alpha;
            cfg.subsample = 0.7;
            cfg.colsample_bytree = 0.7;
            const auto model = fit_gbdt(x, y, cfg, 17);
            for (double p : model->predict(x)) CHECK(p == doctest::Approx(-2.5));
        }
    }
}

TEST_CASE("gbdt is deterministic for a fixed seed and config") {
    Rng rng(10);
    const Matrix x = random_matrix(rng, 200, 4);
    std::vector<double> y(200);
    for (std::size_t i = 0; i < 200; ++i) y[i] = std::sin(6.0 * x(i, 0)) + x(i, 1);
    GBTConfig cfg;
    cfg.subsample = 0.8;
    cfg.colsample_bytree = 0.75;
    const auto a = fit_gbdt(x, y, cfg, 99);
    const auto b = fit_gbdt(x, y, cfg, 99);
    CHECK(a->predict(x) == b->predict(x));
    const auto c = fit_gbdt(x, y, cfg, 100);
    CHECK(a->predict(x) != c->predict(x));
}

TEST_CASE("training MSE is non-increasing in the number of trees") {
    Rng rng(11);
    const Matrix x = random_matrix(rng, 150, 3);
    std::vector<double> y(150);
    for (std::size_t i = 0; i < 150; ++i)
        y[i] = 2.0 * x(i, 0) * x(i, 1) + rng.gaussian(0, 0.2);
    double prev = 1e300;
    for (int trees = 1; trees <= 10; ++trees) {
        GBTConfig cfg;
        cfg.n_estimators = trees;
        cfg.max_depth = 3;
        cfg.learning_rate = 0.3;
        const auto model = fit_gbdt(x, y, cfg, 5);
        const auto pred = model->predict(x);
        double mse = 0.0;
        for (std::size_t i = 0; i < 150; ++i) mse += (pred[i] - y[i]) * (pred[i] - y[i]);
        CHECK(mse <= prev + 1e-9);
        prev = mse;
    }
}

TEST_CASE("gbdt honors sample weights") {
    Matrix x(4, 1);
    x(0, 0) = 0.1;
    x(1, 0) = 0.2;
    x(2, 0) = 0.8;
    x(3, 0) = 0.9;
    const std::vector<double> y{0.0, 10.0, 1.0, 5.0};
    const std::vector<double> w{1.0, 0.0, 1.0, 0.0};  // poisoned rows carry no weight
    GBTConfig cfg;
    cfg.n_estimators = 3;
    cfg.max_depth = 2;
    cfg.learning_rate = 1.0;
    cfg.reg_lambda = 0.0;
    const auto model = fit_gbdt(x, y, cfg, 1, &w);
    const auto pred = model->predict(x);
    CHECK(pred[0] == doctest::Approx(0.0));
    CHECK(pred[2] == doctest::Approx(1.0));
}

TEST_CASE("search-range validation flags out-of-range fields") {
    GBTConfig ok;
    ok.n_estimators = 5;
    ok.max_depth = 4;
    ok.learning_rate = 0.1;
    CHECK_NOTHROW(ok.validate_search_range());
    GBTConfig bad = ok;
    bad.learning_rate = 0.5;
    CHECK_THROWS_AS(bad.validate_search_range(), std::invalid_argument);
    bad = ok;
    bad.n_estimators = 12;
    CHECK_THROWS_AS(bad.validate_search_range(), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// mlp
// ---------------------------------------------------------------------------

TEST_CASE("mlp beats the mean predictor on linear data") {
    Rng rng(12);
    const Matrix x = random_matrix(rng, 600, 3);
    std::vector<double> y(600);
    for (std::size_t i = 0; i < 600; ++i) y[i] = 2.0 * x(i, 0) - x(i, 1) + 0.5;
    const Matrix xv = random_matrix(rng, 200, 3);
    std::vector<double> yv(200);
    for (std::size_t i = 0; i < 200; ++i) yv[i] = 2.0 * xv(i, 0) - xv(i, 1) + 0.5;

    MLPConfig cfg;
    cfg.hidden_dims = {50};
    cfg.max_epochs = 120;
    cfg.patience = 15;
    cfg.seed = 3;
    const auto model = fit_mlp(x, y, cfg, xv, yv);
    const auto pred = model->predict(xv);
    double mse = 0.0;
    for (std::size_t i = 0; i < 200; ++i) mse += (pred[i] - yv[i]) * (pred[i] - yv[i]);
    mse /= 200;
    CHECK(mse < sample_variance(yv));
}

TEST_CASE("zero-epoch mlp equals its initialization and stays finite") {
    Rng rng(13);
    const Matrix x = random_matrix(rng, 50, 2);
    std::vector<double> y(50, 1.0);
    MLPConfig cfg;
    cfg.max_epochs = 0;
    cfg.seed = 1;
    const auto a = fit_mlp(x, y, cfg, Matrix(), {});
    const auto b = fit_mlp(x, y, cfg, Matrix(), {});
    const auto pa = a->predict(x);
    CHECK(pa == b->predict(x));
    for (double v : pa) CHECK(std::isfinite(v));
}

TEST_CASE("mlp training is deterministic for a fixed seed") {
    Rng rng(14);
    const Matrix x = random_matrix(rng, 300, 3);
    std::vector<double> y(300);
    for (std::size_t i = 0; i < 300; ++i) y[i] = x(i, 0) * x(i, 1) + 0.3 * x(i, 2);
    const Matrix xv = random_matrix(rng, 100, 3);
    std::vector<double> yv(100, 0.5);
    MLPConfig cfg;
    cfg.hidden_dims = {20, 10};
    cfg.max_epochs = 25;
    cfg.seed = 77;
    const auto a = fit_mlp(x, y, cfg, xv, yv);
    const auto b = fit_mlp(x, y, cfg, xv, yv);
    CHECK(a->predict(xv) == b->predict(xv));
}

TEST_CASE("dense-stack gradients match finite differences on small networks") {
    Rng rng(15);
    for (int rep = 0; rep < 3; ++rep) {
        const std::size_t n = 12;
        const std::vector<int> dims{3, 2 + rep * 6, 1 + rep * 2, 1};  // up to 3 hidden layers
        std::vector<int> stack_dims(dims.begin(), dims.end() - 1);
        stack_dims.push_back(1);
        DenseStack stack(stack_dims, Act::Relu, Act::Identity);
        std::vector<double> params(static_cast<std::size_t>(stack.param_count()));
        Rng init(100 + rep);
        stack.init_params(params, init);
        // evaluate at a generic point: zero-initialized biases can park
        // pre-activations exactly on the rectifier kink
        for (auto& p : params) p += init.uniform(-0.3, 0.3);

        const Matrix x = random_matrix(rng, n, 3, -1.0, 1.0);
        std::vector<double> y(n);
        for (auto& v : y) v = rng.uniform(-1, 1);

        auto loss_at = [&](const std::vector<double>& p) {
            const Matrix out = stack.forward(x, p);
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += (out(i, 0) - y[i]) * (out(i, 0) - y[i]);
            return s / static_cast<double>(n);
        };

        std::vector<Matrix> cache;
        const Matrix out = stack.forward(x, params, &cache);
        Matrix d_out(n, 1);
        for (std::size_t i = 0; i < n; ++i)
            d_out(i, 0) = 2.0 * (out(i, 0) - y[i]) / static_cast<double>(n);
        std::vector<double> grad(params.size(), 0.0);
        stack.backward(x, cache, d_out, params, grad);

        CHECK(oracles::gradient_check(loss_at, params, grad) < 1e-4);
    }
}

TEST_CASE("fit_base dispatches on the configured family") {
    Rng rng(16);
    const Matrix x = random_matrix(rng, 80, 2);
    std::vector<double> y(80);
    for (std::size_t i = 0; i < 80; ++i) y[i] = x(i, 0) + 1.0;

    BaseConfig ridge_cfg;
    ridge_cfg.kind = BaseConfig::Kind::Ridge;
    ridge_cfg.ridge_lambda = 0.0;
    CHECK(fit_base(x, y, ridge_cfg)->predict(x)[0] == doctest::Approx(y[0]));

    BaseConfig custom_cfg;
    custom_cfg.custom = [](const Matrix&, const std::vector<double>&,
                           const std::vector<double>*) -> std::unique_ptr<RegressionModel> {
        struct Fixed : RegressionModel {
            std::vector<double> predict(const Matrix& q) const override {
                return std::vector<double>(q.rows(), 7.0);
            }
            std::size_t feature_dim() const override { return 2; }
        };
        return std::make_unique<Fixed>();
    };
    CHECK(fit_base(x, y, custom_cfg)->predict(x)[5] == 7.0);
}
