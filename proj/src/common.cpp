#include "upbench/common.hpp"

#include <cstring>
#include <numeric>

namespace upbench {

Matrix take_rows(const Matrix& m, const std::vector<int>& idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::memcpy(out.row(r), m.row(static_cast<std::size_t>(idx[r])),
                    m.cols() * sizeof(double));
    }
    return out;
}

Matrix append_column(const Matrix& m, const std::vector<double>& col) {
    Matrix out(m.rows(), m.cols() + 1);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        std::memcpy(out.row(r), m.row(r), m.cols() * sizeof(double));
        out(r, m.cols()) = col[r];
    }
    return out;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

}  // namespace upbench
