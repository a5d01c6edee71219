#include "upbench/base_learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "upbench/net.hpp"
#include "upbench/rng.hpp"

namespace upbench {

namespace {

// Solves A x = b for SPD A in place; returns false on a non-positive pivot.
bool cholesky_solve(Matrix& a, std::vector<double>& b) {
    const std::size_t n = a.rows();
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= a(j, k) * a(j, k);
        if (diag <= 0.0 || !std::isfinite(diag)) return false;
        const double ljj = std::sqrt(diag);
        a(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / ljj;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {  // L z = b
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a(i, k) * b[k];
        b[i] = s / a(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {  // L^T x = z
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a(k, i) * b[k];
        b[i] = s / a(i, i);
    }
    return true;
}

class LinearModel : public RegressionModel {
public:
    LinearModel(std::vector<double> w, std::size_t d) : w_(std::move(w)), d_(d) {}

    std::vector<double> predict(const Matrix& x) const override {
        if (x.cols() != d_)
            throw std::invalid_argument("linear model: feature dimension mismatch");
        std::vector<double> out(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double s = w_[0];
            const double* row = x.row(i);
            for (std::size_t j = 0; j < d_; ++j) s += w_[j + 1] * row[j];
            out[i] = s;
        }
        return out;
    }

    std::size_t feature_dim() const override { return d_; }

private:
    std::vector<double> w_;  // intercept first
    std::size_t d_;
};

double stable_sigmoid(double z) {
    z = std::clamp(z, -30.0, 30.0);
    return 1.0 / (1.0 + std::exp(-z));
}

}  // namespace

std::unique_ptr<RegressionModel> fit_ridge(const Matrix& x, const std::vector<double>& y,
                                           double lambda, const std::vector<double>* weights) {
    if (x.rows() != y.size()) throw std::invalid_argument("fit_ridge: row count mismatch");
    if (lambda < 0) throw std::invalid_argument("fit_ridge: negative lambda");
    const std::size_t n = x.rows();
    const std::size_t p = x.cols() + 1;

    Matrix m(p, p);
    std::vector<double> rhs(p, 0.0);
    std::vector<double> z(p);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weights ? (*weights)[i] : 1.0;
        if (w == 0.0) continue;
        z[0] = 1.0;
        const double* row = x.row(i);
        for (std::size_t j = 1; j < p; ++j) z[j] = row[j - 1];
        for (std::size_t a = 0; a < p; ++a) {
            const double wz = w * z[a];
            for (std::size_t b = a; b < p; ++b) m(a, b) += wz * z[b];
            rhs[a] += wz * y[i];
        }
    }
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < a; ++b) m(a, b) = m(b, a);
    for (std::size_t j = 1; j < p; ++j) m(j, j) += lambda;  // intercept unpenalized

    if (!cholesky_solve(m, rhs))
        throw TrainingError("fit_ridge: singular normal system (lambda = 0 needs full rank)");
    return std::make_unique<LinearModel>(std::move(rhs), x.cols());
}

std::vector<double> PropensityModel::predict_proba(const Matrix& x) const {
    if (x.cols() + 1 != weights.size())
        throw std::invalid_argument("propensity model: feature dimension mismatch");
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double z = weights[0];
        const double* row = x.row(i);
        for (std::size_t j = 1; j < weights.size(); ++j) z += weights[j] * row[j - 1];
        out[i] = stable_sigmoid(z);
    }
    return out;
}

PropensityModel fit_logistic(const Matrix& x, const std::vector<int>& t, double C) {
    if (x.rows() != t.size()) throw std::invalid_argument("fit_logistic: row count mismatch");
    if (C <= 0) throw std::invalid_argument("fit_logistic: C must be positive");
    const std::size_t n = x.rows();
    const std::size_t p = x.cols() + 1;

    int pos = 0;
    for (int ti : t) pos += ti;
    if (pos == 0 || static_cast<std::size_t>(pos) == n)
        throw std::invalid_argument("fit_logistic: both classes must be present");

    std::vector<double> w(p, 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);
    const double pen = 1.0 / C;

    auto objective = [&](const std::vector<double>& wv) {
        double j = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = wv[0];
            const double* row = x.row(i);
            for (std::size_t k = 1; k < p; ++k) z += wv[k] * row[k - 1];
            const double m = (t[i] ? z : -z);
            j += std::max(-m, 0.0) + std::log1p(std::exp(-std::abs(m)));
        }
        j *= inv_n;
        for (std::size_t k = 1; k < p; ++k) j += 0.5 * pen * wv[k] * wv[k];
        return j;
    };

    std::vector<double> grad(p);
    double gnorm = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
        std::fill(grad.begin(), grad.end(), 0.0);
        Matrix hess(p, p);
        for (std::size_t i = 0; i < n; ++i) {
            double z = w[0];
            const double* row = x.row(i);
            for (std::size_t k = 1; k < p; ++k) z += w[k] * row[k - 1];
            const double pi = stable_sigmoid(z);
            const double r = pi - static_cast<double>(t[i]);
            const double s = std::max(pi * (1.0 - pi), 1e-12);
            grad[0] += r;
            hess(0, 0) += s;
            for (std::size_t a = 1; a < p; ++a) {
                grad[a] += r * row[a - 1];
                hess(0, a) += s * row[a - 1];
                for (std::size_t b = a; b < p; ++b) hess(a, b) += s * row[a - 1] * row[b - 1];
            }
        }
        for (std::size_t a = 0; a < p; ++a) grad[a] *= inv_n;
        for (auto& h : hess.data()) h *= inv_n;
        for (std::size_t a = 1; a < p; ++a) {
            grad[a] += pen * w[a];
            hess(a, a) += pen;
        }
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < a; ++b) hess(a, b) = hess(b, a);

        gnorm = 0.0;
        for (double g : grad) gnorm = std::max(gnorm, std::abs(g));
        if (gnorm < 1e-8) break;

        std::vector<double> delta(grad);
        if (!cholesky_solve(hess, delta)) throw TrainingError("fit_logistic: singular Hessian");
        const double j0 = objective(w);
        double s = 1.0;
        std::vector<double> trial(p);
        while (true) {
            for (std::size_t a = 0; a < p; ++a) trial[a] = w[a] - s * delta[a];
            if (objective(trial) <= j0 || s < 1e-10) break;
            s *= 0.5;  // damping
        }
        w = trial;
    }

    PropensityModel model;
    model.weights = std::move(w);
    model.C = C;
    model.gradient_norm = gnorm;
    return model;
}

// ---------------------------------------------------------------------------
// Gradient-boosted regression trees
// ---------------------------------------------------------------------------

namespace {

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double eval(const double* row) const {
        int idx = 0;
        while (nodes[static_cast<std::size_t>(idx)].feature >= 0) {
            const auto& nd = nodes[static_cast<std::size_t>(idx)];
            idx = row[nd.feature] < nd.threshold ? nd.left : nd.right;
        }
        return nodes[static_cast<std::size_t>(idx)].value;
    }
};

double soft_threshold(double g, double alpha) {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
}

double leaf_score(double g, double h, double alpha, double lambda) {
    const double denom = h + lambda;
    if (denom <= 0.0) return 0.0;
    const double gs = soft_threshold(g, alpha);
    return gs * gs / denom;
}

double leaf_value(double g, double h, double alpha, double lambda) {
    const double denom = h + lambda;
    if (denom <= 0.0) return 0.0;
    return -soft_threshold(g, alpha) / denom;
}

class GbdtModel : public RegressionModel {
public:
    GbdtModel(double base, std::vector<Tree> trees, std::size_t d)
        : base_(base), trees_(std::move(trees)), d_(d) {}

    std::vector<double> predict(const Matrix& x) const override {
        if (x.cols() != d_) throw std::invalid_argument("gbdt: feature dimension mismatch");
        std::vector<double> out(x.rows(), base_);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double* row = x.row(i);
            for (const auto& tree : trees_) out[i] += tree.eval(row);
        }
        return out;
    }

    std::size_t feature_dim() const override { return d_; }

private:
    double base_;
    std::vector<Tree> trees_;
    std::size_t d_;
};

struct TreeBuilder {
    const Matrix& x;
    const std::vector<double>& grad;  // g_i at current predictions
    const std::vector<double>& hess;  // h_i (sample weights)
    const GBTConfig& cfg;
    Tree tree;

    int build(std::vector<int> rows, const std::vector<int>& features, int depth) {
        double g_sum = 0.0, h_sum = 0.0;
        for (int r : rows) {
            g_sum += grad[static_cast<std::size_t>(r)];
            h_sum += hess[static_cast<std::size_t>(r)];
        }
        const int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();

        if (depth >= cfg.max_depth || rows.size() < 2) {
            tree.nodes[static_cast<std::size_t>(node_id)].value =
                cfg.learning_rate * leaf_value(g_sum, h_sum, cfg.reg_alpha, cfg.reg_lambda);
            return node_id;
        }

        // exact greedy split search; ties break toward the lower feature
        // index, then the lower threshold (strict improvement required)
        double best_gain = 1e-12;
        int best_feature = -1;
        double best_threshold = 0.0;
        const double parent_score = leaf_score(g_sum, h_sum, cfg.reg_alpha, cfg.reg_lambda);
        std::vector<std::pair<double, int>> vals;
        vals.reserve(rows.size());
        for (int f : features) {
            vals.clear();
            for (int r : rows) vals.emplace_back(x(static_cast<std::size_t>(r), f), r);
            std::sort(vals.begin(), vals.end());
            double gl = 0.0, hl = 0.0;
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                gl += grad[static_cast<std::size_t>(vals[i].second)];
                hl += hess[static_cast<std::size_t>(vals[i].second)];
                if (vals[i].first >= vals[i + 1].first) continue;
                const double gain =
                    0.5 * (leaf_score(gl, hl, cfg.reg_alpha, cfg.reg_lambda) +
                           leaf_score(g_sum - gl, h_sum - hl, cfg.reg_alpha, cfg.reg_lambda) -
                           parent_score);
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = f;
                    best_threshold = (vals[i].first + vals[i + 1].first) / 2.0;
                }
            }
        }

        if (best_feature < 0) {
            tree.nodes[static_cast<std::size_t>(node_id)].value =
                cfg.learning_rate * leaf_value(g_sum, h_sum, cfg.reg_alpha, cfg.reg_lambda);
            return node_id;
        }

        std::vector<int> left_rows, right_rows;
        for (int r : rows) {
            if (x(static_cast<std::size_t>(r), best_feature) < best_threshold)
                left_rows.push_back(r);
            else
                right_rows.push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();
        const int left = build(std::move(left_rows), features, depth + 1);
        const int right = build(std::move(right_rows), features, depth + 1);
        auto& nd = tree.nodes[static_cast<std::size_t>(node_id)];
        nd.feature = best_feature;
        nd.threshold = best_threshold;
        nd.left = left;
        nd.right = right;
        return node_id;
    }
};

}  // namespace

void GBTConfig::validate_search_range() const {
    auto check = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("gbdt config outside search range: ") + what);
    };
    check(n_estimators >= 3 && n_estimators <= 10, "n_estimators");
    check(max_depth >= 3 && max_depth <= 10, "max_depth");
    check(learning_rate >= 0.01 && learning_rate <= 0.3, "learning_rate");
    check(subsample >= 0.6 && subsample <= 1.0, "subsample");
    check(colsample_bytree >= 0.6 && colsample_bytree <= 1.0, "colsample_bytree");
    check(reg_alpha >= 0.0 && reg_alpha <= 1.0, "reg_alpha");
    check(reg_lambda >= 0.0 && reg_lambda <= 1.0, "reg_lambda");
}

std::unique_ptr<RegressionModel> fit_gbdt(const Matrix& x, const std::vector<double>& y,
                                          const GBTConfig& config, std::uint64_t seed,
                                          const std::vector<double>* weights) {
    if (x.rows() != y.size()) throw std::invalid_argument("fit_gbdt: row count mismatch");
    if (x.rows() < 2) throw std::invalid_argument("fit_gbdt: need at least two rows");
    const std::size_t n = x.rows();
    const auto d = static_cast<int>(x.cols());

    std::vector<double> w(n, 1.0);
    if (weights) w = *weights;

    double w_sum = 0.0, wy_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w_sum += w[i];
        wy_sum += w[i] * y[i];
    }
    const double base = w_sum > 0.0 ? wy_sum / w_sum : 0.0;

    std::vector<double> pred(n, base);
    std::vector<double> grad(n), hess(n);
    std::vector<Tree> trees;
    trees.reserve(static_cast<std::size_t>(config.n_estimators));

    for (int ti = 0; ti < config.n_estimators; ++ti) {
        Rng rng(derive_seed(seed, "tree", static_cast<std::uint64_t>(ti)));

        std::vector<int> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = static_cast<int>(i);
        if (config.subsample < 1.0) {
            rng.shuffle(rows);
            const auto keep = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::floor(config.subsample * static_cast<double>(n))));
            rows.resize(keep);
            std::sort(rows.begin(), rows.end());
        }

        std::vector<int> features(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) features[static_cast<std::size_t>(j)] = j;
        if (config.colsample_bytree < 1.0) {
            rng.shuffle(features);
            const auto keep = std::max<std::size_t>(
                1, static_cast<std::size_t>(
                       std::ceil(config.colsample_bytree * static_cast<double>(d))));
            features.resize(keep);
            std::sort(features.begin(), features.end());
        }

        for (std::size_t i = 0; i < n; ++i) {
            grad[i] = w[i] * (pred[i] - y[i]);
            hess[i] = w[i];
        }

        TreeBuilder builder{x, grad, hess, config, {}};
        builder.build(std::move(rows), features, 0);
        trees.push_back(std::move(builder.tree));
        for (std::size_t i = 0; i < n; ++i) pred[i] += trees.back().eval(x.row(i));
    }
    return std::make_unique<GbdtModel>(base, std::move(trees), x.cols());
}

// ---------------------------------------------------------------------------
// Feed-forward regression
// ---------------------------------------------------------------------------

namespace {

class MlpModel : public RegressionModel {
public:
    MlpModel(DenseStack stack, std::vector<double> params, double y_mean, double y_scale)
        : stack_(std::move(stack)),
          params_(std::move(params)),
          y_mean_(y_mean),
          y_scale_(y_scale) {}

    std::vector<double> predict(const Matrix& x) const override {
        if (static_cast<int>(x.cols()) != stack_.in_dim())
            throw std::invalid_argument("mlp: feature dimension mismatch");
        const Matrix out = stack_.forward(x, params_);
        std::vector<double> p(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) p[i] = out(i, 0) * y_scale_ + y_mean_;
        return p;
    }

    std::size_t feature_dim() const override { return static_cast<std::size_t>(stack_.in_dim()); }

private:
    DenseStack stack_;
    std::vector<double> params_;
    double y_mean_, y_scale_;
};

}  // namespace

std::unique_ptr<RegressionModel> fit_mlp(const Matrix& x, const std::vector<double>& y,
                                         const MLPConfig& config, const Matrix& x_val,
                                         const std::vector<double>& y_val) {
    if (x.rows() != y.size()) throw std::invalid_argument("fit_mlp: row count mismatch");
    for (int hd : config.hidden_dims)
        if (hd <= 0) throw std::invalid_argument("fit_mlp: hidden widths must be positive");
    const std::size_t n = x.rows();

    // train in standardized target space
    const double y_mean = mean(y);
    double y_sd = std::sqrt(sample_variance(y));
    if (y_sd <= 0.0 || !std::isfinite(y_sd)) y_sd = 1.0;
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = (y[i] - y_mean) / y_sd;
    std::vector<double> yvs(y_val.size());
    for (std::size_t i = 0; i < y_val.size(); ++i) yvs[i] = (y_val[i] - y_mean) / y_sd;

    std::vector<int> dims{static_cast<int>(x.cols())};
    for (int hd : config.hidden_dims) dims.push_back(hd);
    dims.push_back(1);
    DenseStack stack(dims, Act::Relu, Act::Identity);

    Rng rng(derive_seed(config.seed, "mlp"));
    std::vector<double> params(static_cast<std::size_t>(stack.param_count()));
    stack.init_params(params, rng);

    Adam opt(params.size(), config.learning_rate);
    std::vector<double> grad(params.size());

    const auto batch = static_cast<std::size_t>(std::max(1, config.batch_size));
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

    auto val_mse = [&]() {
        if (x_val.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
        const Matrix out = stack.forward(x_val, params);
        double s = 0.0;
        for (std::size_t i = 0; i < x_val.rows(); ++i) {
            const double r = out(i, 0) - yvs[i];
            s += r * r;
        }
        return s / static_cast<double>(x_val.rows());
    };

    std::vector<double> best_params = params;
    double best_val = val_mse();
    int since_best = 0;
    std::vector<Matrix> cache;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            const std::size_t m = stop - start;
            Matrix xb(m, x.cols());
            std::vector<double> yb(m);
            for (std::size_t i = 0; i < m; ++i) {
                const auto r = static_cast<std::size_t>(order[start + i]);
                std::copy(x.row(r), x.row(r) + x.cols(), xb.row(i));
                yb[i] = ys[r];
            }
            const Matrix out = stack.forward(xb, params, &cache);
            Matrix d_out(m, 1);
            double loss = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double r = out(i, 0) - yb[i];
                loss += r * r;
                d_out(i, 0) = 2.0 * r / static_cast<double>(m);
            }
            loss /= static_cast<double>(m);
            if (!std::isfinite(loss))
                throw TrainingError("fit_mlp: training diverged at epoch " +
                                    std::to_string(epoch));
            std::fill(grad.begin(), grad.end(), 0.0);
            stack.backward(xb, cache, d_out, params, grad);
            opt.step(params, grad);
        }
        const double v = val_mse();
        if (std::isnan(v)) continue;  // no holdout: run all epochs
        if (v < best_val) {
            best_val = v;
            best_params = params;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    if (x_val.rows() > 0) params = best_params;

    return std::make_unique<MlpModel>(std::move(stack), std::move(params), y_mean, y_sd);
}

std::unique_ptr<RegressionModel> fit_base(const Matrix& x, const std::vector<double>& y,
                                          const BaseConfig& config,
                                          const std::vector<double>* weights) {
    if (config.custom) return config.custom(x, y, weights);
    switch (config.kind) {
        case BaseConfig::Kind::Ridge:
            return fit_ridge(x, y, config.ridge_lambda, weights);
        case BaseConfig::Kind::Gbdt:
            return fit_gbdt(x, y, config.gbdt, config.seed, weights);
        case BaseConfig::Kind::Mlp:
            if (weights)
                throw std::invalid_argument("fit_base: mlp base does not support weights");
            return fit_mlp(x, y, config.mlp, Matrix(), {});
    }
    throw std::invalid_argument("fit_base: unknown base kind");
}

}  // namespace upbench
