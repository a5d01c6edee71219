#include "upbench/uplift_learners.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "upbench/rng.hpp"

namespace upbench {

namespace {

void require_both_arms(const std::vector<int>& t) {
    int pos = 0;
    for (int ti : t) pos += ti;
    if (pos == 0 || static_cast<std::size_t>(pos) == t.size())
        throw std::invalid_argument("uplift learner: both treatment arms must be present");
}

void require_dim(std::size_t got, std::size_t want, const char* who) {
    if (got != want)
        throw std::invalid_argument(std::string(who) + ": feature dimension mismatch (got " +
                                    std::to_string(got) + ", trained on " + std::to_string(want) +
                                    ")");
}

/// Denominator guard: never divide by anything smaller than eps in magnitude.
double clip_magnitude(double v, double eps) {
    const double c = (v >= 0.0) ? std::max(v, eps) : std::min(v, -eps);
    assert(std::abs(c) >= eps);
    return c;
}

double clip_unit_interval(double p, double eps) {
    const double c = std::clamp(p, eps, 1.0 - eps);
    assert(c >= eps && c <= 1.0 - eps);
    return c;
}

BaseConfig with_role_seed(const BaseConfig& base, const char* role) {
    BaseConfig out = base;
    out.seed = derive_seed(base.seed, "role", role);
    return out;
}

struct Arms {
    std::vector<int> treated_rows, control_rows;
};

Arms split_arms(const std::vector<int>& t) {
    Arms a;
    for (std::size_t i = 0; i < t.size(); ++i)
        (t[i] ? a.treated_rows : a.control_rows).push_back(static_cast<int>(i));
    return a;
}

using PropFn = std::function<std::vector<double>(const Matrix&)>;

PropFn make_prop_fn(const Matrix& x, const std::vector<int>& t, const PropConfig& prop) {
    if (prop.custom) return prop.custom;
    PropensityModel model = fit_logistic(x, t, prop.C);
    return [model = std::move(model)](const Matrix& q) { return model.predict_proba(q); };
}

// S-learner: one regression on [x, t].
class SLearnerModel : public UpliftModel {
public:
    SLearnerModel(std::unique_ptr<RegressionModel> mu, std::size_t d)
        : UpliftModel("S", kDefaultClipEps), mu_(std::move(mu)), d_(d) {}

    std::vector<double> predict_tau(const Matrix& x) const override {
        require_dim(x.cols(), d_, "s-learner");
        const std::vector<double> ones(x.rows(), 1.0);
        const std::vector<double> zeros(x.rows(), 0.0);
        const auto p1 = mu_->predict(append_column(x, ones));
        const auto p0 = mu_->predict(append_column(x, zeros));
        std::vector<double> tau(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) tau[i] = p1[i] - p0[i];
        return tau;
    }

private:
    std::unique_ptr<RegressionModel> mu_;
    std::size_t d_;
};

// T-learner and friends: difference of two arm regressions.
class TLearnerModel : public UpliftModel {
public:
    TLearnerModel(std::string name, std::unique_ptr<RegressionModel> mu1,
                  std::unique_ptr<RegressionModel> mu0, std::size_t d)
        : UpliftModel(std::move(name), kDefaultClipEps),
          mu1_(std::move(mu1)),
          mu0_(std::move(mu0)),
          d_(d) {}

    std::vector<double> predict_tau(const Matrix& x) const override {
        require_dim(x.cols(), d_, "t-learner");
        const auto p1 = mu1_->predict(x);
        const auto p0 = mu0_->predict(x);
        std::vector<double> tau(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) tau[i] = p1[i] - p0[i];
        return tau;
    }

private:
    std::unique_ptr<RegressionModel> mu1_, mu0_;
    std::size_t d_;
};

// X-learner: propensity-blended arm-wise effect regressions.
class XLearnerModel : public UpliftModel {
public:
    XLearnerModel(std::unique_ptr<RegressionModel> tau1, std::unique_ptr<RegressionModel> tau0,
                  PropFn prop, std::size_t d)
        : UpliftModel("X", kDefaultClipEps),
          tau1_(std::move(tau1)),
          tau0_(std::move(tau0)),
          prop_(std::move(prop)),
          d_(d) {}

    std::vector<double> predict_tau(const Matrix& x) const override {
        require_dim(x.cols(), d_, "x-learner");
        const auto t1 = tau1_->predict(x);
        const auto t0 = tau0_->predict(x);
        const auto pi = prop_(x);
        std::vector<double> tau(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i)
            tau[i] = (1.0 - pi[i]) * t1[i] + pi[i] * t0[i];
        return tau;
    }

private:
    std::unique_ptr<RegressionModel> tau1_, tau0_;
    PropFn prop_;
    std::size_t d_;
};

// Pseudo-outcome learners (R/U/DR/RA): a single final effect regression.
class FinalRegressionModel : public UpliftModel {
public:
    FinalRegressionModel(std::string name, std::unique_ptr<RegressionModel> fit, std::size_t d,
                         double clip_eps)
        : UpliftModel(std::move(name), clip_eps), fit_(std::move(fit)), d_(d) {}

    std::vector<double> predict_tau(const Matrix& x) const override {
        require_dim(x.cols(), d_, "effect regression");
        return fit_->predict(x);
    }

private:
    std::unique_ptr<RegressionModel> fit_;
    std::size_t d_;
};

}  // namespace

std::unique_ptr<UpliftModel> fit_s_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base) {
    require_both_arms(t);
    std::vector<double> t_col(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) t_col[i] = static_cast<double>(t[i]);
    auto mu = fit_base(append_column(x, t_col), y, with_role_seed(base, "mu"));
    return std::make_unique<SLearnerModel>(std::move(mu), x.cols());
}

std::unique_ptr<UpliftModel> fit_t_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base) {
    require_both_arms(t);
    const Arms arms = split_arms(t);
    auto mu1 = fit_base(take_rows(x, arms.treated_rows), take(y, arms.treated_rows),
                        with_role_seed(base, "mu1"));
    auto mu0 = fit_base(take_rows(x, arms.control_rows), take(y, arms.control_rows),
                        with_role_seed(base, "mu0"));
    return std::make_unique<TLearnerModel>("T", std::move(mu1), std::move(mu0), x.cols());
}

std::unique_ptr<UpliftModel> fit_x_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base,
                                           const PropConfig& prop) {
    require_both_arms(t);
    const Arms arms = split_arms(t);
    const Matrix x_t = take_rows(x, arms.treated_rows);
    const Matrix x_c = take_rows(x, arms.control_rows);
    const auto y_t = take(y, arms.treated_rows);
    const auto y_c = take(y, arms.control_rows);

    auto mu1 = fit_base(x_t, y_t, with_role_seed(base, "mu1"));
    auto mu0 = fit_base(x_c, y_c, with_role_seed(base, "mu0"));

    // imputed individual effects per arm
    const auto mu0_on_t = mu0->predict(x_t);
    std::vector<double> d1(y_t.size());
    for (std::size_t i = 0; i < y_t.size(); ++i) d1[i] = y_t[i] - mu0_on_t[i];
    const auto mu1_on_c = mu1->predict(x_c);
    std::vector<double> d0(y_c.size());
    for (std::size_t i = 0; i < y_c.size(); ++i) d0[i] = mu1_on_c[i] - y_c[i];

    auto tau1 = fit_base(x_t, d1, with_role_seed(base, "tau1"));
    auto tau0 = fit_base(x_c, d0, with_role_seed(base, "tau0"));
    return std::make_unique<XLearnerModel>(std::move(tau1), std::move(tau0),
                                           make_prop_fn(x, t, prop), x.cols());
}

std::unique_ptr<UpliftModel> fit_r_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base,
                                           const PropConfig& prop, double clip_eps) {
    require_both_arms(t);
    auto m_hat = fit_base(x, y, with_role_seed(base, "m"));
    const auto m_on_x = m_hat->predict(x);
    const auto pi = make_prop_fn(x, t, prop)(x);

    // minimize sum (r_y - tau(x) r_t)^2 == weighted fit of r_y/r_t with
    // weights r_t^2; zero-residual treatment rows carry zero weight
    const std::size_t n = x.rows();
    std::vector<double> ratio(n), weight(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r_y = y[i] - m_on_x[i];
        const double r_t = static_cast<double>(t[i]) - pi[i];
        weight[i] = r_t * r_t;
        ratio[i] = r_y / clip_magnitude(r_t, clip_eps);
    }
    auto fit = fit_base(x, ratio, with_role_seed(base, "final"), &weight);
    return std::make_unique<FinalRegressionModel>("R", std::move(fit), x.cols(), clip_eps);
}

std::unique_ptr<UpliftModel> fit_u_learner(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y, const BaseConfig& base,
                                           const PropConfig& prop, double clip_eps) {
    require_both_arms(t);
    auto m_hat = fit_base(x, y, with_role_seed(base, "m"));
    const auto m_on_x = m_hat->predict(x);
    const auto pi = make_prop_fn(x, t, prop)(x);

    const std::size_t n = x.rows();
    std::vector<double> ratio(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r_y = y[i] - m_on_x[i];
        const double r_t = static_cast<double>(t[i]) - pi[i];
        ratio[i] = r_y / clip_magnitude(r_t, clip_eps);
    }
    auto fit = fit_base(x, ratio, with_role_seed(base, "final"));
    return std::make_unique<FinalRegressionModel>("U", std::move(fit), x.cols(), clip_eps);
}

DrPseudo dr_pseudo_outcomes(const std::vector<int>& t, const std::vector<double>& y,
                            const std::vector<double>& mu1_hat,
                            const std::vector<double>& mu0_hat,
                            const std::vector<double>& prop_hat, double clip_eps) {
    const std::size_t n = t.size();
    DrPseudo out;
    out.y1_dr.resize(n);
    out.y0_dr.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double pi = clip_unit_interval(prop_hat[i], clip_eps);
        out.y1_dr[i] = mu1_hat[i] + static_cast<double>(t[i]) / pi * (y[i] - mu1_hat[i]);
        out.y0_dr[i] =
            mu0_hat[i] + static_cast<double>(1 - t[i]) / (1.0 - pi) * (y[i] - mu0_hat[i]);
    }
    return out;
}

std::unique_ptr<UpliftModel> fit_dr_learner(const Matrix& x, const std::vector<int>& t,
                                            const std::vector<double>& y, const BaseConfig& base,
                                            const PropConfig& prop, double clip_eps) {
    require_both_arms(t);
    const Arms arms = split_arms(t);
    auto mu1 = fit_base(take_rows(x, arms.treated_rows), take(y, arms.treated_rows),
                        with_role_seed(base, "mu1"));
    auto mu0 = fit_base(take_rows(x, arms.control_rows), take(y, arms.control_rows),
                        with_role_seed(base, "mu0"));
    const auto mu1_on_x = mu1->predict(x);
    const auto mu0_on_x = mu0->predict(x);
    const auto pi = make_prop_fn(x, t, prop)(x);

    const DrPseudo pseudo = dr_pseudo_outcomes(t, y, mu1_on_x, mu0_on_x, pi, clip_eps);
    std::vector<double> target(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) target[i] = pseudo.y1_dr[i] - pseudo.y0_dr[i];
    auto fit = fit_base(x, target, with_role_seed(base, "final"));
    return std::make_unique<FinalRegressionModel>("DR", std::move(fit), x.cols(), clip_eps);
}

std::vector<double> ra_pseudo_outcomes(const std::vector<int>& t, const std::vector<double>& y,
                                       const std::vector<double>& mu1_hat,
                                       const std::vector<double>& mu0_hat) {
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        out[i] = t[i] ? (y[i] - mu0_hat[i]) : (mu1_hat[i] - y[i]);
    }
    return out;
}

std::unique_ptr<UpliftModel> fit_ra_learner(const Matrix& x, const std::vector<int>& t,
                                            const std::vector<double>& y,
                                            const BaseConfig& base) {
    require_both_arms(t);
    const Arms arms = split_arms(t);
    auto mu1 = fit_base(take_rows(x, arms.treated_rows), take(y, arms.treated_rows),
                        with_role_seed(base, "mu1"));
    auto mu0 = fit_base(take_rows(x, arms.control_rows), take(y, arms.control_rows),
                        with_role_seed(base, "mu0"));
    const auto target = ra_pseudo_outcomes(t, y, mu1->predict(x), mu0->predict(x));
    auto fit = fit_base(x, target, with_role_seed(base, "final"));
    return std::make_unique<FinalRegressionModel>("RA", std::move(fit), x.cols(),
                                                  kDefaultClipEps);
}

// ---------------------------------------------------------------------------
// TARNet / Dragonnet
// ---------------------------------------------------------------------------

namespace {

double stable_sigmoid(double z) {
    z = std::clamp(z, -30.0, 30.0);
    return 1.0 / (1.0 + std::exp(-z));
}

}  // namespace

TarnetCore::TarnetCore(int in_dim, const NetUpliftConfig& cfg, Mode mode)
    : cfg_(cfg), mode_(mode), in_dim_(in_dim) {
    if (cfg.hidden_dim <= 0 || cfg.outcome_dim <= 0)
        throw std::invalid_argument("tarnet: layer widths must be positive");
    phi_dim_ = cfg.identity_trunk ? in_dim : cfg.hidden_dim;
    if (!cfg.identity_trunk)
        trunk_ = DenseStack({in_dim, cfg.hidden_dim, cfg.hidden_dim}, Act::Relu, Act::Relu);
    const std::vector<int> head_dims = cfg.linear_heads
                                           ? std::vector<int>{phi_dim_, 1}
                                           : std::vector<int>{phi_dim_, cfg.outcome_dim, 1};
    head0_ = DenseStack(head_dims, Act::Relu, Act::Identity);
    head1_ = DenseStack(head_dims, Act::Relu, Act::Identity);

    trunk_off_ = 0;
    head0_off_ = trunk_off_ + (cfg.identity_trunk ? 0 : trunk_.param_count());
    head1_off_ = head0_off_ + head0_.param_count();
    n_params_ = head1_off_ + head1_.param_count();
    if (mode_ == Mode::Dragonnet) {
        prop_off_ = n_params_;
        n_params_ += phi_dim_ + 1;  // linear propensity head on phi
        eps_off_ = n_params_;
        n_params_ += 1;  // learnable perturbation scalar, initialized to zero
    }
}

void TarnetCore::init_params(std::span<double> p, std::uint64_t seed) const {
    if (!cfg_.identity_trunk) {
        Rng trunk_rng(derive_seed(seed, "init", "trunk"));
        trunk_.init_params(p.subspan(static_cast<std::size_t>(trunk_off_),
                                     static_cast<std::size_t>(trunk_.param_count())),
                           trunk_rng);
    }
    // both heads take the same stream: identical start, tau-hat == 0
    {
        Rng head_rng(derive_seed(seed, "init", "head"));
        head0_.init_params(p.subspan(static_cast<std::size_t>(head0_off_),
                                     static_cast<std::size_t>(head0_.param_count())),
                           head_rng);
    }
    {
        Rng head_rng(derive_seed(seed, "init", "head"));
        head1_.init_params(p.subspan(static_cast<std::size_t>(head1_off_),
                                     static_cast<std::size_t>(head1_.param_count())),
                           head_rng);
    }
    if (mode_ == Mode::Dragonnet) {
        Rng prop_rng(derive_seed(seed, "init", "prop"));
        const double scale = std::sqrt(1.0 / static_cast<double>(phi_dim_));
        for (int i = 0; i < phi_dim_; ++i)
            p[static_cast<std::size_t>(prop_off_ + i)] = scale * prop_rng.gaussian();
        p[static_cast<std::size_t>(prop_off_ + phi_dim_)] = 0.0;
        p[static_cast<std::size_t>(eps_off_)] = 0.0;
    }
}

Matrix TarnetCore::trunk_forward(const Matrix& x, std::span<const double> p,
                                 std::vector<Matrix>* cache) const {
    if (cfg_.identity_trunk) return x;
    return trunk_.forward(x,
                          p.subspan(static_cast<std::size_t>(trunk_off_),
                                    static_cast<std::size_t>(trunk_.param_count())),
                          cache);
}

TarnetCore::LossParts TarnetCore::loss_and_grad(std::span<const double> p, const Matrix& x,
                                                const std::vector<int>& t,
                                                const std::vector<double>& y, double alpha,
                                                double beta, std::span<double> grad) const {
    const std::size_t m = x.rows();
    const double inv_m = 1.0 / static_cast<double>(m);
    const bool want_grad = !grad.empty();

    std::vector<Matrix> trunk_cache, c0, c1;
    const Matrix phi = trunk_forward(x, p, want_grad ? &trunk_cache : nullptr);
    const auto p0 = p.subspan(static_cast<std::size_t>(head0_off_),
                              static_cast<std::size_t>(head0_.param_count()));
    const auto p1 = p.subspan(static_cast<std::size_t>(head1_off_),
                              static_cast<std::size_t>(head1_.param_count()));
    const Matrix out0 = head0_.forward(phi, p0, want_grad ? &c0 : nullptr);
    const Matrix out1 = head1_.forward(phi, p1, want_grad ? &c1 : nullptr);

    LossParts parts;
    std::vector<double> yhat(m);
    for (std::size_t i = 0; i < m; ++i) {
        yhat[i] = t[i] ? out1(i, 0) : out0(i, 0);
        const double r = yhat[i] - y[i];
        parts.mse += r * r;
    }
    parts.mse *= inv_m;
    parts.total = parts.mse;

    std::vector<double> z, g_raw, g_clip, u, yeps;
    double eps_param = 0.0;
    if (mode_ == Mode::Dragonnet) {
        z.resize(m);
        g_raw.resize(m);
        g_clip.resize(m);
        u.resize(m);
        yeps.resize(m);
        eps_param = p[static_cast<std::size_t>(eps_off_)];
        for (std::size_t i = 0; i < m; ++i) {
            double zi = p[static_cast<std::size_t>(prop_off_ + phi_dim_)];
            const double* pr = phi.row(i);
            for (int j = 0; j < phi_dim_; ++j)
                zi += p[static_cast<std::size_t>(prop_off_ + j)] * pr[j];
            z[i] = zi;
            g_raw[i] = stable_sigmoid(zi);
            parts.ce += std::max(zi, 0.0) - zi * static_cast<double>(t[i]) +
                        std::log1p(std::exp(-std::abs(zi)));
            g_clip[i] = std::clamp(g_raw[i], 0.01, 0.99);  // inside inverse weights only
            u[i] = static_cast<double>(t[i]) / g_clip[i] -
                   static_cast<double>(1 - t[i]) / (1.0 - g_clip[i]);
            yeps[i] = yhat[i] + eps_param * u[i];
            const double r = y[i] - yeps[i];
            parts.targeted += r * r;
        }
        parts.ce *= inv_m;
        parts.targeted *= inv_m;
        if (alpha != 0.0) parts.total += alpha * parts.ce;
        if (beta != 0.0) parts.total += beta * parts.targeted;
    }

    if (!want_grad) return parts;

    Matrix d_out0(m, 1), d_out1(m, 1);
    std::vector<double> dz(mode_ == Mode::Dragonnet ? m : 0, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double dyhat = 2.0 * (yhat[i] - y[i]) * inv_m;
        if (mode_ == Mode::Dragonnet && beta != 0.0) {
            const double dyeps = beta * 2.0 * (yeps[i] - y[i]) * inv_m;
            dyhat += dyeps;
            grad[static_cast<std::size_t>(eps_off_)] += dyeps * u[i];
            if (g_raw[i] > 0.01 && g_raw[i] < 0.99) {
                const double du_dg =
                    -static_cast<double>(t[i]) / (g_clip[i] * g_clip[i]) -
                    static_cast<double>(1 - t[i]) / ((1.0 - g_clip[i]) * (1.0 - g_clip[i]));
                dz[i] += dyeps * eps_param * du_dg * g_raw[i] * (1.0 - g_raw[i]);
            }
        }
        if (mode_ == Mode::Dragonnet && alpha != 0.0)
            dz[i] += alpha * (g_raw[i] - static_cast<double>(t[i])) * inv_m;
        d_out0(i, 0) = t[i] ? 0.0 : dyhat;
        d_out1(i, 0) = t[i] ? dyhat : 0.0;
    }

    const auto g0 = grad.subspan(static_cast<std::size_t>(head0_off_),
                                 static_cast<std::size_t>(head0_.param_count()));
    const auto g1 = grad.subspan(static_cast<std::size_t>(head1_off_),
                                 static_cast<std::size_t>(head1_.param_count()));
    Matrix d_phi = head0_.backward(phi, c0, d_out0, p0, g0);
    {
        const Matrix d_phi1 = head1_.backward(phi, c1, d_out1, p1, g1);
        for (std::size_t i = 0; i < d_phi.data().size(); ++i)
            d_phi.data()[i] += d_phi1.data()[i];
    }

    if (mode_ == Mode::Dragonnet) {
        for (std::size_t i = 0; i < m; ++i) {
            if (dz[i] == 0.0) continue;
            const double* pr = phi.row(i);
            for (int j = 0; j < phi_dim_; ++j) {
                grad[static_cast<std::size_t>(prop_off_ + j)] += dz[i] * pr[j];
                d_phi(i, static_cast<std::size_t>(j)) +=
                    dz[i] * p[static_cast<std::size_t>(prop_off_ + j)];
            }
            grad[static_cast<std::size_t>(prop_off_ + phi_dim_)] += dz[i];
        }
    }

    if (!cfg_.identity_trunk) {
        const auto pt = p.subspan(static_cast<std::size_t>(trunk_off_),
                                  static_cast<std::size_t>(trunk_.param_count()));
        const auto gt = grad.subspan(static_cast<std::size_t>(trunk_off_),
                                     static_cast<std::size_t>(trunk_.param_count()));
        trunk_.backward(x, trunk_cache, d_phi, pt, gt);
    }
    return parts;
}

std::vector<double> TarnetCore::predict_tau_raw(std::span<const double> p, const Matrix& x) const {
    const Matrix phi = trunk_forward(x, p, nullptr);
    const Matrix out0 = head0_.forward(phi, p.subspan(static_cast<std::size_t>(head0_off_),
                                                      static_cast<std::size_t>(head0_.param_count())));
    const Matrix out1 = head1_.forward(phi, p.subspan(static_cast<std::size_t>(head1_off_),
                                                      static_cast<std::size_t>(head1_.param_count())));
    std::vector<double> tau(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) tau[i] = out1(i, 0) - out0(i, 0);
    return tau;
}

std::vector<double> TarnetCore::predict_propensity(std::span<const double> p,
                                                   const Matrix& x) const {
    if (mode_ != Mode::Dragonnet)
        throw std::invalid_argument("propensity head only exists in dragonnet mode");
    const Matrix phi = trunk_forward(x, p, nullptr);
    std::vector<double> g(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double zi = p[static_cast<std::size_t>(prop_off_ + phi_dim_)];
        const double* pr = phi.row(i);
        for (int j = 0; j < phi_dim_; ++j)
            zi += p[static_cast<std::size_t>(prop_off_ + j)] * pr[j];
        g[i] = stable_sigmoid(zi);
    }
    return g;
}

double TarnetCore::epsilon_value(std::span<const double> p) const {
    if (mode_ != Mode::Dragonnet)
        throw std::invalid_argument("epsilon only exists in dragonnet mode");
    return p[static_cast<std::size_t>(eps_off_)];
}

namespace {

struct NetTrainResult {
    std::vector<double> params;
    std::vector<double> epoch_losses;
};

NetTrainResult train_net(const TarnetCore& core, const Matrix& x, const std::vector<int>& t,
                         const std::vector<double>& y_std, const Matrix& x_val,
                         const std::vector<int>& t_val, const std::vector<double>& yv_std,
                         const NetUpliftConfig& cfg, double alpha, double beta) {
    NetTrainResult res;
    res.params.resize(static_cast<std::size_t>(core.param_count()));
    core.init_params(res.params, cfg.seed);

    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    Adam opt(res.params.size(), cfg.learning_rate);
    std::vector<double> grad(res.params.size());
    const double lr_decay = cfg.lr_decay > 0.0 ? cfg.lr_decay : 1.0;

    const std::size_t n = x.rows();
    const auto batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

    auto val_loss = [&]() {
        if (x_val.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
        return core.loss_and_grad(res.params, x_val, t_val, yv_std, alpha, beta, {}).total;
    };

    std::vector<double> best_params = res.params;
    double best_val = val_loss();
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            const std::size_t m = stop - start;
            Matrix xb(m, x.cols());
            std::vector<int> tb(m);
            std::vector<double> yb(m);
            for (std::size_t i = 0; i < m; ++i) {
                const auto r = static_cast<std::size_t>(order[start + i]);
                std::copy(x.row(r), x.row(r) + x.cols(), xb.row(i));
                tb[i] = t[r];
                yb[i] = y_std[r];
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            const auto parts = core.loss_and_grad(res.params, xb, tb, yb, alpha, beta, grad);
            if (!std::isfinite(parts.total))
                throw TrainingError("network training diverged at epoch " +
                                    std::to_string(epoch));
            epoch_loss += parts.total * static_cast<double>(m);
            opt.step(res.params, grad);
        }
        res.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
        opt.lr *= lr_decay;

        const double v = val_loss();
        if (std::isnan(v)) continue;
        if (v < best_val) {
            best_val = v;
            best_params = res.params;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    if (x_val.rows() > 0) res.params = best_params;
    return res;
}

struct Standardized {
    std::vector<double> train, val;
    double mean = 0.0, scale = 1.0;
};

Standardized standardize(const std::vector<double>& y, const std::vector<double>& y_val) {
    Standardized s;
    s.mean = mean(y);
    s.scale = std::sqrt(sample_variance(y));
    if (s.scale <= 0.0 || !std::isfinite(s.scale)) s.scale = 1.0;
    s.train.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) s.train[i] = (y[i] - s.mean) / s.scale;
    s.val.resize(y_val.size());
    for (std::size_t i = 0; i < y_val.size(); ++i) s.val[i] = (y_val[i] - s.mean) / s.scale;
    return s;
}

}  // namespace

TarnetModel::TarnetModel(TarnetCore core, std::vector<double> params, double y_mean,
                         double y_scale, std::vector<double> epoch_losses, std::string name)
    : UpliftModel(std::move(name), kDefaultClipEps),
      core_(std::move(core)),
      params_(std::move(params)),
      y_mean_(y_mean),
      y_scale_(y_scale),
      epoch_losses_(std::move(epoch_losses)) {}

std::vector<double> TarnetModel::predict_tau(const Matrix& x) const {
    require_dim(x.cols(), static_cast<std::size_t>(core_.in_dim()), "network model");
    auto tau = core_.predict_tau_raw(params_, x);
    for (double& v : tau) v *= y_scale_;
    return tau;
}

DragonnetModel::DragonnetModel(TarnetCore core, std::vector<double> params, double y_mean,
                               double y_scale, std::vector<double> epoch_losses, double alpha,
                               double beta)
    : TarnetModel(std::move(core), std::move(params), y_mean, y_scale, std::move(epoch_losses),
                  "Dragonnet"),
      alpha_(alpha),
      beta_(beta) {}

std::vector<double> DragonnetModel::predict_propensity(const Matrix& x) const {
    require_dim(x.cols(), static_cast<std::size_t>(core_.in_dim()), "network model");
    return core_.predict_propensity(params_, x);
}

double DragonnetModel::epsilon() const { return core_.epsilon_value(params_); }

std::unique_ptr<UpliftModel> fit_tarnet(const Matrix& x, const std::vector<int>& t,
                                        const std::vector<double>& y, const NetUpliftConfig& cfg,
                                        const NetValData& val) {
    require_both_arms(t);
    if (x.rows() != t.size() || x.rows() != y.size())
        throw std::invalid_argument("fit_tarnet: row count mismatch");
    const Standardized s = standardize(y, val.y);
    TarnetCore core(static_cast<int>(x.cols()), cfg, TarnetCore::Mode::Tarnet);
    auto res = train_net(core, x, t, s.train, val.x, val.t, s.val, cfg, 0.0, 0.0);
    return std::make_unique<TarnetModel>(std::move(core), std::move(res.params), s.mean, s.scale,
                                         std::move(res.epoch_losses));
}

std::unique_ptr<UpliftModel> fit_dragonnet(const Matrix& x, const std::vector<int>& t,
                                           const std::vector<double>& y,
                                           const NetUpliftConfig& cfg, double alpha, double beta,
                                           const NetValData& val) {
    require_both_arms(t);
    if (alpha < 0 || beta < 0)
        throw std::invalid_argument("fit_dragonnet: alpha and beta must be nonnegative");
    if (x.rows() != t.size() || x.rows() != y.size())
        throw std::invalid_argument("fit_dragonnet: row count mismatch");
    const Standardized s = standardize(y, val.y);
    TarnetCore core(static_cast<int>(x.cols()), cfg, TarnetCore::Mode::Dragonnet);
    auto res = train_net(core, x, t, s.train, val.x, val.t, s.val, cfg, alpha, beta);
    return std::make_unique<DragonnetModel>(std::move(core), std::move(res.params), s.mean,
                                            s.scale, std::move(res.epoch_losses), alpha, beta);
}

}  // namespace upbench
