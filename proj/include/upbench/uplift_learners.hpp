#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "upbench/base_learners.hpp"
#include "upbench/common.hpp"
#include "upbench/net.hpp"

namespace upbench {

/// Propensity estimation config; `custom` (a per-row probability function)
/// overrides the logistic fit and is also used at predict time.
struct PropConfig {
    double C = 1.0;
    std::function<std::vector<double>(const Matrix&)> custom;
};

/// Uniform fit/predict-tau interface over the nine estimators.
class UpliftModel {
public:
    virtual ~UpliftModel() = default;
    virtual std::vector<double> predict_tau(const Matrix& x) const = 0;

    const std::string& name() const { return name_; }
    double clip_eps() const { return clip_eps_; }

protected:
    UpliftModel(std::string name, double clip_eps) : name_(std::move(name)), clip_eps_(clip_eps) {}

private:
    std::string name_;
    double clip_eps_;
};

constexpr double kDefaultClipEps = 1e-3;

std::unique_ptr<UpliftModel> fit_s_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base);

std::unique_ptr<UpliftModel> fit_t_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base);

std::unique_ptr<UpliftModel> fit_x_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base,
                                           const PropConfig& prop);

std::unique_ptr<UpliftModel> fit_r_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base,
                                           const PropConfig& prop,
                                           double clip_eps = kDefaultClipEps);

std::unique_ptr<UpliftModel> fit_u_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base,
                                           const PropConfig& prop,
                                           double clip_eps = kDefaultClipEps);

std::unique_ptr<UpliftModel> fit_dr_learner(const Matrix& x, const std::vector<int>& t,
                                            const std::vector<double>& y, const BaseConfig& base,
                                            const PropConfig& prop,
                                            double clip_eps = kDefaultClipEps);

std::unique_ptr<UpliftModel> fit_ra_learner(const Matrix& x, const std::vector<int>& t,
                                            const std::vector<double>& y, const BaseConfig& base);

/// Doubly robust pseudo-outcomes with the propensity clamped to
/// [clip_eps, 1 - clip_eps].
struct DrPseudo {
    std::vector<double> y1_dr, y0_dr;
};
DrPseudo dr_pseudo_outcomes(const std::vector<int>& t, const std::vector<double>& y,
                            const std::vector<double>& mu1_hat,
                            const std::vector<double>& mu0_hat,
                            const std::vector<double>& prop_hat, double clip_eps);

/// Regression-adjusted pseudo-outcomes: t*(y - mu0) + (1-t)*(mu1 - y).
std::vector<double> ra_pseudo_outcomes(const std::vector<int>& t, const std::vector<double>& y,
                                       const std::vector<double>& mu1_hat,
                                       const std::vector<double>& mu0_hat);

// ---------------------------------------------------------------------------
// Representation networks
// ---------------------------------------------------------------------------

struct NetUpliftConfig {
    int hidden_dim = 100;   // trunk width, two layers
    int outcome_dim = 100;  // head hidden width, one layer
    double learning_rate = 1e-2;
    double lr_decay = 1.0;  // per-epoch multiplicative decay
    int batch_size = 200;
    int max_epochs = 300;
    int patience = 10;
    std::uint64_t seed = 0;
    bool identity_trunk = false;  // phi(x) = x (ablation/testing)
    bool linear_heads = false;    // heads become single linear maps
};

struct NetValData {
    Matrix x;
    std::vector<int> t;
    std::vector<double> y;
};

/// Shared trunk + gated outcome heads (+ propensity head and targeted
/// regularization for the Dragonnet mode). Parameters live in one flat
/// vector so the whole loss is finite-difference checkable.
class TarnetCore {
public:
    enum class Mode { Tarnet, Dragonnet };

    TarnetCore(int in_dim, const NetUpliftConfig& cfg, Mode mode);

    int param_count() const { return n_params_; }
    Mode mode() const { return mode_; }
    int in_dim() const { return in_dim_; }

    /// Trunk/prop heads from their own derived streams; the two outcome heads
    /// are initialized identically so tau-hat is exactly zero at start.
    void init_params(std::span<double> p, std::uint64_t seed) const;

    struct LossParts {
        double total = 0.0, mse = 0.0, ce = 0.0, targeted = 0.0;
    };

    /// Outcome MSE + alpha * cross-entropy + beta * targeted regularization.
    /// Accumulates parameter gradients into `grad` unless it is empty.
    LossParts loss_and_grad(std::span<const double> p, const Matrix& x, const std::vector<int>& t,
                            const std::vector<double>& y, double alpha, double beta,
                            std::span<double> grad) const;

    std::vector<double> predict_tau_raw(std::span<const double> p, const Matrix& x) const;
    std::vector<double> predict_propensity(std::span<const double> p, const Matrix& x) const;

    double epsilon_value(std::span<const double> p) const;

private:
    Matrix trunk_forward(const Matrix& x, std::span<const double> p,
                         std::vector<Matrix>* cache) const;

    NetUpliftConfig cfg_;
    Mode mode_;
    int in_dim_ = 0, phi_dim_ = 0;
    DenseStack trunk_, head0_, head1_;
    int trunk_off_ = 0, head0_off_ = 0, head1_off_ = 0, prop_off_ = 0, eps_off_ = 0;
    int n_params_ = 0;
};

/// TARNet: tau-hat(x) = h1(phi(x)) - h0(phi(x)), factual-MSE training.
class TarnetModel : public UpliftModel {
public:
    TarnetModel(TarnetCore core, std::vector<double> params, double y_mean, double y_scale,
                std::vector<double> epoch_losses, std::string name = "TARNet");

    std::vector<double> predict_tau(const Matrix& x) const override;

    const std::vector<double>& epoch_losses() const { return epoch_losses_; }
    const TarnetCore& core() const { return core_; }
    std::span<const double> params() const { return params_; }
    double y_scale() const { return y_scale_; }

protected:
    TarnetCore core_;
    std::vector<double> params_;
    double y_mean_, y_scale_;
    std::vector<double> epoch_losses_;
};

/// Dragonnet: TARNet plus a propensity head, treatment cross-entropy and a
/// learnable-epsilon targeted regularization term.
class DragonnetModel : public TarnetModel {
public:
    DragonnetModel(TarnetCore core, std::vector<double> params, double y_mean, double y_scale,
                   std::vector<double> epoch_losses, double alpha, double beta);

    std::vector<double> predict_propensity(const Matrix& x) const;
    double alpha() const { return alpha_; }
    double beta() const { return beta_; }
    double epsilon() const;

private:
    double alpha_, beta_;
};

std::unique_ptr<UpliftModel> fit_tarnet(const Matrix& x, const std::vector<int>& t,
                                        const std::vector<double>& y, const NetUpliftConfig& cfg,
                                        const NetValData& val);

std::unique_ptr<UpliftModel> fit_dragonnet(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y,
                                           const NetUpliftConfig& cfg, double alpha, double beta,
                                           const NetValData& val);

}  // namespace upbench
