#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "upbench/common.hpp"

namespace upbench {

enum class ColumnKind { Continuous, Discrete };

/// Unit covariates, min-max scaled to [0,1] per column.
struct CovariateMatrix {
    Matrix values;
    std::vector<ColumnKind> column_kinds;
    std::vector<std::string> column_names;
    std::vector<bool> constant_column;  // columns that had zero range before scaling

    std::size_t n() const { return values.rows(); }
    std::size_t d() const { return values.cols(); }

    /// Throws std::invalid_argument if any structural invariant is broken
    /// (finite entries, [0,1] range, d >= 1, n >= 2).
    void validate() const;
};

/// Names the feature columns of a delimited file and which of them are discrete.
struct ColumnMapping {
    std::vector<std::string> features;
    std::vector<std::string> discrete;
};

ColumnMapping load_column_mapping(const std::string& path);

/// Loads a comma-separated table with a header row. Discrete columns are
/// integer-encoded by first appearance, then every column is min-max scaled.
CovariateMatrix load_covariates(const std::string& path, const ColumnMapping& mapping);

/// Test stand-in for the real covariate file: continuous columns uniform on
/// [0,1], discrete columns uniform over {0, 1/3, 2/3, 1}. Continuous columns
/// come first.
CovariateMatrix synthesize_covariates(std::size_t n, std::size_t d, std::size_t n_discrete,
                                      std::uint64_t seed);

struct SplitRatios {
    double train = 0.49;
    double val = 0.21;
    double test = 0.30;
};

struct SplitIndices {
    std::vector<int> train, val, test;
};

/// Seeded uniform shuffle of 0..n-1, partitioned at floor(train*n) and
/// floor(train*n) + floor(val*n); the test set takes the remainder.
SplitIndices split(std::size_t n, SplitRatios ratios, std::uint64_t seed);

/// In-place min-max scaling of every column to [0,1]. Zero-range columns
/// become all zeros and are flagged.
void min_max_scale_columns(Matrix& m, std::vector<bool>* constant_flags = nullptr);

}  // namespace upbench
