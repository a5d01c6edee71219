#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "upbench/common.hpp"
#include "upbench/rng.hpp"

namespace upbench {

enum class Act { Relu, Identity };

/// A stack of dense layers whose parameters live in an external flat array,
/// so whole multi-head networks can share one optimizer state and be
/// finite-difference checked end to end.
class DenseStack {
public:
    DenseStack() = default;
    /// dims = {in, h1, ..., out}. Hidden layers use `hidden`, the last layer
    /// uses `output`.
    DenseStack(std::vector<int> dims, Act hidden, Act output);

    int param_count() const { return param_count_; }
    int in_dim() const { return dims_.front(); }
    int out_dim() const { return dims_.back(); }

    void init_params(std::span<double> p, Rng& rng) const;

    /// Forward pass; `cache` (when given) stores per-layer activations for
    /// backward.
    Matrix forward(const Matrix& x, std::span<const double> p,
                   std::vector<Matrix>* cache = nullptr) const;

    /// Backpropagates `d_out`, accumulating parameter gradients into `gp`;
    /// returns the gradient w.r.t. the input.
    Matrix backward(const Matrix& x, const std::vector<Matrix>& cache, const Matrix& d_out,
                    std::span<const double> p, std::span<double> gp) const;

private:
    std::vector<int> dims_;
    Act hidden_ = Act::Relu;
    Act output_ = Act::Identity;
    int param_count_ = 0;
};

struct Adam {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m, v;
    long step_count = 0;

    explicit Adam(std::size_t n_params, double learning_rate)
        : lr(learning_rate), m(n_params, 0.0), v(n_params, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad);
};

// matmul helpers shared by the network code
Matrix matmul(const Matrix& a, const Matrix& b);                    // (m,k)x(k,n)
Matrix matmul_transpose_a(const Matrix& a, const Matrix& b);        // (k,m)^T x (k,n)
Matrix matmul_transpose_b(const Matrix& a, const Matrix& b);        // (m,k) x (n,k)^T

}  // namespace upbench
