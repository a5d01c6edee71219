#include "upbench/net.hpp"

#include <cassert>
#include <cmath>

namespace upbench {

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ar = a.row(i);
        double* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double av = ar[k];
            if (av == 0.0) continue;
            const double* br = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += av * br[j];
        }
    }
    return out;
}

Matrix matmul_transpose_a(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* ar = a.row(k);
        const double* br = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double av = ar[i];
            if (av == 0.0) continue;
            double* orow = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += av * br[j];
        }
    }
    return out;
}

Matrix matmul_transpose_b(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ar = a.row(i);
        double* orow = out.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* br = b.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
            orow[j] = s;
        }
    }
    return out;
}

DenseStack::DenseStack(std::vector<int> dims, Act hidden, Act output)
    : dims_(std::move(dims)), hidden_(hidden), output_(output) {
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
        param_count_ += dims_[l] * dims_[l + 1] + dims_[l + 1];
}

void DenseStack::init_params(std::span<double> p, Rng& rng) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        const int fan_in = dims_[l];
        const int fan_out = dims_[l + 1];
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));  // He init
        for (int i = 0; i < fan_in * fan_out; ++i) p[off++] = scale * rng.gaussian();
        for (int i = 0; i < fan_out; ++i) p[off++] = 0.0;
    }
    assert(off == static_cast<std::size_t>(param_count_));
}

Matrix DenseStack::forward(const Matrix& x, std::span<const double> p,
                           std::vector<Matrix>* cache) const {
    if (cache) cache->clear();
    Matrix h = x;
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        const auto in = static_cast<std::size_t>(dims_[l]);
        const auto out = static_cast<std::size_t>(dims_[l + 1]);
        Matrix w(in, out);
        std::copy(p.begin() + off, p.begin() + off + in * out, w.data().begin());
        off += in * out;
        Matrix z = matmul(h, w);
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t c = 0; c < out; ++c) z(r, c) += p[off + c];
        off += out;
        const Act act = (l + 2 == dims_.size()) ? output_ : hidden_;
        if (act == Act::Relu) {
            for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
        }
        if (cache) cache->push_back(z);
        h = std::move(z);
    }
    return h;
}

Matrix DenseStack::backward(const Matrix& x, const std::vector<Matrix>& cache,
                            const Matrix& d_out, std::span<const double> p,
                            std::span<double> gp) const {
    const std::size_t n_layers = dims_.size() - 1;
    // parameter offsets per layer
    std::vector<std::size_t> w_off(n_layers), b_off(n_layers);
    {
        std::size_t off = 0;
        for (std::size_t l = 0; l < n_layers; ++l) {
            w_off[l] = off;
            off += static_cast<std::size_t>(dims_[l]) * dims_[l + 1];
            b_off[l] = off;
            off += static_cast<std::size_t>(dims_[l + 1]);
        }
    }

    Matrix delta = d_out;
    for (std::size_t li = n_layers; li-- > 0;) {
        const auto in = static_cast<std::size_t>(dims_[li]);
        const auto out = static_cast<std::size_t>(dims_[li + 1]);
        const Act act = (li + 1 == n_layers) ? output_ : hidden_;
        const Matrix& a = cache[li];  // post-activation of this layer
        if (act == Act::Relu) {
            for (std::size_t r = 0; r < delta.rows(); ++r)
                for (std::size_t c = 0; c < out; ++c)
                    if (a(r, c) <= 0.0) delta(r, c) = 0.0;
        }
        const Matrix& prev = (li == 0) ? x : cache[li - 1];
        Matrix dw = matmul_transpose_a(prev, delta);
        for (std::size_t i = 0; i < in * out; ++i) gp[w_off[li] + i] += dw.data()[i];
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            const double* dr = delta.row(r);
            for (std::size_t c = 0; c < out; ++c) gp[b_off[li] + c] += dr[c];
        }
        if (li == 0) {
            // input gradient only needed by callers stacking networks
            Matrix w(in, out);
            std::copy(p.begin() + w_off[li], p.begin() + w_off[li] + in * out, w.data().begin());
            return matmul_transpose_b(delta, w);
        }
        Matrix w(in, out);
        std::copy(p.begin() + w_off[li], p.begin() + w_off[li] + in * out, w.data().begin());
        delta = matmul_transpose_b(delta, w);
    }
    return delta;
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace upbench
