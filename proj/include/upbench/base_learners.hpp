#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "upbench/common.hpp"

namespace upbench {

/// A fitted regression: immutable after construction, safe to share.
class RegressionModel {
public:
    virtual ~RegressionModel() = default;
    virtual std::vector<double> predict(const Matrix& x) const = 0;
    virtual std::size_t feature_dim() const = 0;
};

/// Closed-form ridge regression; intercept unpenalized. With lambda = 0 the
/// normal system must be nonsingular.
std::unique_ptr<RegressionModel> fit_ridge(const Matrix& x, const std::vector<double>& y,
                                           double lambda,
                                           const std::vector<double>* weights = nullptr);

/// L2-penalized logistic regression fitted by damped Newton iterations.
/// Objective: mean negative log-likelihood + (1/(2C)) * ||slopes||^2.
struct PropensityModel {
    std::vector<double> weights;  // intercept first
    double C = 1.0;

    std::vector<double> predict_proba(const Matrix& x) const;
    /// Max-norm of the penalized objective gradient at the fitted weights.
    double gradient_norm = 0.0;
};

PropensityModel fit_logistic(const Matrix& x, const std::vector<int>& t, double C);

/// Gradient-boosted regression trees with the hyperparameter surface of the
/// usual boosted-tree libraries.
struct GBTConfig {
    int n_estimators = 10;
    int max_depth = 6;
    double learning_rate = 0.3;
    double subsample = 1.0;
    double colsample_bytree = 1.0;
    double reg_alpha = 0.0;   // L1 leaf penalty
    double reg_lambda = 1.0;  // L2 leaf penalty

    /// Checks the tuning-range invariants (n_estimators/max_depth in [3,10],
    /// learning_rate in [0.01,0.3], sampling ratios in [0.6,1], penalties in
    /// [0,1]). Only sampled search points are required to satisfy these.
    void validate_search_range() const;
};

std::unique_ptr<RegressionModel> fit_gbdt(const Matrix& x, const std::vector<double>& y,
                                          const GBTConfig& config, std::uint64_t seed,
                                          const std::vector<double>* weights = nullptr);

struct MLPConfig {
    std::vector<int> hidden_dims{64};
    double learning_rate = 1e-2;
    int batch_size = 200;
    int max_epochs = 300;
    int patience = 10;
    std::uint64_t seed = 0;
};

/// Feed-forward regression with rectified-linear hidden layers, trained with
/// Adam and early stopping on holdout MSE (best weights restored).
std::unique_ptr<RegressionModel> fit_mlp(const Matrix& x, const std::vector<double>& y,
                                         const MLPConfig& config, const Matrix& x_val,
                                         const std::vector<double>& y_val);

/// Base-learner selector shared by the uplift estimators. `custom` takes
/// precedence when set (used to inject oracles in tests).
struct BaseConfig {
    enum class Kind { Ridge, Gbdt, Mlp };
    Kind kind = Kind::Gbdt;
    double ridge_lambda = 1e-6;
    GBTConfig gbdt;
    MLPConfig mlp;
    std::uint64_t seed = 0;
    std::function<std::unique_ptr<RegressionModel>(const Matrix&, const std::vector<double>&,
                                                   const std::vector<double>*)>
        custom;
};

/// Fits the configured base-learner family on (x, y) with optional weights.
std::unique_ptr<RegressionModel> fit_base(const Matrix& x, const std::vector<double>& y,
                                          const BaseConfig& config,
                                          const std::vector<double>* weights = nullptr);

}  // namespace upbench
