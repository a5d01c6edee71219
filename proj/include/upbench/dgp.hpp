#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "upbench/common.hpp"
#include "upbench/data.hpp"

namespace upbench {

/// All knobs of the semi-synthetic generator. Each random purpose has its own
/// seed so varying one knob never perturbs another knob's draws.
struct DGPConfig {
    double xi = 0.0;      // selection-bias strength; 0 means RCT
    double theta0 = 0.0;  // control-arm spillover strength
    double theta1 = 0.0;  // treated-arm spillover strength
    double omega = 0.0;   // measurement-error level (per-entry variance omega/d)
    double m = 0.0;       // confounding fraction, removes floor(m*d) columns
    double radius = 0.1;  // neighborhood radius in scaled-feature Euclidean distance
    double outcome_noise_var = 0.1;

    std::uint64_t coeff_seed = 1;
    std::uint64_t treat_seed = 2;
    std::uint64_t noise_seed = 3;
    std::uint64_t measure_seed = 4;
    std::uint64_t mask_seed = 5;

    void validate() const;
};

/// Sampled outcome/treatment coefficients. Quadratic and cubic blocks are
/// stored row-major over ordered index tuples.
struct CoefficientSet {
    std::size_t d = 0;
    std::vector<double> beta_T;      // d, N(-0.2, 0.01)
    std::vector<double> beta0_lin;   // d, Bern(0.3)
    std::vector<double> beta0_quad;  // d*d, Bern(0.2)
    std::vector<double> beta1_lin;   // d, Bern(0.2)
    std::vector<double> beta1_quad;  // d*d, Bern(0.5)
    std::vector<double> beta1_cubic; // d*d*d, Bern(0.6)

    std::uint64_t checksum() const;
};

/// Fixed-radius neighbor lists; self is always included, so sizes[i] >= 1.
struct NeighborIndex {
    std::vector<std::vector<int>> neighbors;  // each list sorted ascending
    std::vector<int> sizes;
};

struct SemiSyntheticDataset {
    CovariateMatrix x_true;
    Matrix x_obs;                       // n x d_obs, after error injection and masking
    std::vector<int> observed_columns;  // indices into x_true columns, ascending

    std::vector<int> t;
    std::vector<double> propensity;
    std::vector<double> y, y0, y1, tau, eps;

    // intermediates kept for auditability
    std::vector<double> zeta, gamma0, gamma1;
    std::vector<double> sigma_nbr, gamma0_nbr, gamma1_nbr;
    std::vector<int> neighbor_sizes;

    DGPConfig config;
    CoefficientSet coeffs;

    std::size_t n() const { return t.size(); }
    std::size_t d_obs() const { return x_obs.cols(); }
};

CoefficientSet draw_coefficients(std::size_t d, std::uint64_t coeff_seed);

/// Exact fixed-radius search: j in N(i) iff ||x_i - x_j||_2 <= radius.
/// Uses grid bucketing with cell side = radius; duplicate rows are grouped
/// before the scan.
NeighborIndex build_neighbor_index(const Matrix& x, double radius);

struct Baselines {
    std::vector<double> zeta, gamma0, gamma1;
};

Baselines compute_baselines(const Matrix& x, const CoefficientSet& coeffs);

/// Mean of v over each unit's neighborhood, summed in ascending index order.
std::vector<double> neighborhood_mean(const std::vector<double>& v, const NeighborIndex& nbr);

struct TreatmentDraw {
    std::vector<int> t;
    std::vector<double> propensity;
    std::vector<double> sigma_nbr;
};

TreatmentDraw assign_treatment(const std::vector<double>& zeta, const NeighborIndex& nbr,
                               double xi, std::uint64_t treat_seed);

struct OutcomeDraw {
    std::vector<double> y0, y1, y, tau, eps;
    std::vector<double> gamma0_nbr, gamma1_nbr;
};

OutcomeDraw generate_outcomes(const std::vector<double>& gamma0, const std::vector<double>& gamma1,
                              const NeighborIndex& nbr, double theta0, double theta1,
                              const std::vector<int>& t, double noise_var,
                              std::uint64_t noise_seed);

/// Adds i.i.d. N(0, omega/d_total) noise to every entry; the input is untouched.
Matrix apply_measurement_error(const Matrix& x, double omega, std::size_t d_total,
                               std::uint64_t measure_seed);

/// Removes floor(m*d) columns chosen uniformly without replacement. Remaining
/// columns keep their original order; `kept` receives their indices.
Matrix mask_confounders(const Matrix& x, double m, std::uint64_t mask_seed,
                        std::vector<int>* kept = nullptr);

/// Full pipeline: coefficients -> neighbors -> baselines -> treatment ->
/// outcomes -> measurement error -> masking.
SemiSyntheticDataset generate(const CovariateMatrix& x, const DGPConfig& config);

/// Writes `id, x1..xd, xobs1..xobs_dobs, t, propensity, y, y0, y1, tau` plus a
/// JSON sidecar at `path + ".meta.json"` with the config, seeds, and
/// coefficient checksum.
void write_dataset_csv(const SemiSyntheticDataset& ds, const std::string& path);

/// Columns read back from a dataset file (enough to score predictions).
struct DatasetColumns {
    std::vector<int> t;
    std::vector<double> y, tau;
    std::size_t n = 0;
};

DatasetColumns read_dataset_columns(const std::string& path);

}  // namespace upbench
