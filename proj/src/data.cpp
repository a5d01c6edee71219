#include "upbench/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "upbench/rng.hpp"

namespace upbench {

void CovariateMatrix::validate() const {
    if (d() < 1) throw std::invalid_argument("covariates: need at least one feature column");
    if (n() < 2) throw std::invalid_argument("covariates: need at least two rows");
    if (column_kinds.size() != d() || column_names.size() != d())
        throw std::invalid_argument("covariates: column metadata out of sync");
    for (std::size_t i = 0; i < n(); ++i) {
        for (std::size_t j = 0; j < d(); ++j) {
            const double v = values(i, j);
            if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                throw std::invalid_argument("covariates: entry outside [0,1] at row " +
                                            std::to_string(i) + ", column " + std::to_string(j));
        }
    }
}

void min_max_scale_columns(Matrix& m, std::vector<bool>* constant_flags) {
    if (constant_flags) constant_flags->assign(m.cols(), false);
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m.rows(); ++i) {
            lo = std::min(lo, m(i, j));
            hi = std::max(hi, m(i, j));
        }
        if (hi <= lo) {
            // zero-range column: scaled to all zeros
            for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) = 0.0;
            if (constant_flags) (*constant_flags)[j] = true;
            continue;
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) = (m(i, j) - lo) / range;
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    out.push_back(field);
    for (auto& f : out) {
        // trim whitespace and optional surrounding quotes
        std::size_t b = f.find_first_not_of(" \t\r\n");
        std::size_t e = f.find_last_not_of(" \t\r\n");
        f = (b == std::string::npos) ? std::string() : f.substr(b, e - b + 1);
        if (f.size() >= 2 && f.front() == '"' && f.back() == '"') f = f.substr(1, f.size() - 2);
    }
    return out;
}

double parse_double(const std::string& s, std::size_t row, const std::string& col) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || !std::isfinite(v))
        throw ParseError("unparseable cell at row " + std::to_string(row) + ", column '" + col +
                         "': '" + s + "'");
    return v;
}

}  // namespace

ColumnMapping load_column_mapping(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open column mapping: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("column mapping '" + path + "': " + e.what());
    }
    ColumnMapping m;
    m.features = j.at("features").get<std::vector<std::string>>();
    if (j.contains("discrete")) m.discrete = j.at("discrete").get<std::vector<std::string>>();
    return m;
}

CovariateMatrix load_covariates(const std::string& path, const ColumnMapping& mapping) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open covariate file: " + path);
    if (mapping.features.empty())
        throw std::invalid_argument("column mapping names no feature columns");

    std::string line;
    if (!std::getline(in, line)) throw ParseError("covariate file '" + path + "' has no header");
    const auto header = split_csv_line(line);

    std::vector<int> col_pos(mapping.features.size(), -1);
    for (std::size_t f = 0; f < mapping.features.size(); ++f) {
        for (std::size_t h = 0; h < header.size(); ++h) {
            if (header[h] == mapping.features[f]) {
                col_pos[f] = static_cast<int>(h);
                break;
            }
        }
        if (col_pos[f] < 0)
            throw ParseError("feature column '" + mapping.features[f] + "' not found in header");
    }

    std::vector<ColumnKind> kinds(mapping.features.size(), ColumnKind::Continuous);
    for (std::size_t f = 0; f < mapping.features.size(); ++f) {
        for (const auto& d : mapping.discrete) {
            if (d == mapping.features[f]) kinds[f] = ColumnKind::Discrete;
        }
    }

    // category -> ordinal code, by first appearance, per discrete column
    std::vector<std::unordered_map<std::string, double>> codes(mapping.features.size());

    std::vector<double> flat;
    std::size_t n = 0;
    std::size_t row = 1;  // 1-based data row for error messages (header is row 0)
    while (std::getline(in, line)) {
        if (line.empty() && in.eof()) break;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw ParseError("row " + std::to_string(row) + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(header.size()));
        for (std::size_t f = 0; f < mapping.features.size(); ++f) {
            const std::string& cell = fields[static_cast<std::size_t>(col_pos[f])];
            if (kinds[f] == ColumnKind::Discrete) {
                auto [it, inserted] =
                    codes[f].try_emplace(cell, static_cast<double>(codes[f].size()));
                flat.push_back(it->second);
            } else {
                flat.push_back(parse_double(cell, row, mapping.features[f]));
            }
        }
        ++n;
        ++row;
    }
    if (n < 2) throw ParseError("covariate file '" + path + "' has fewer than two data rows");

    CovariateMatrix cm;
    cm.values = Matrix(n, mapping.features.size());
    cm.values.data() = std::move(flat);
    cm.column_kinds = kinds;
    cm.column_names = mapping.features;
    min_max_scale_columns(cm.values, &cm.constant_column);
    return cm;
}

CovariateMatrix synthesize_covariates(std::size_t n, std::size_t d, std::size_t n_discrete,
                                      std::uint64_t seed) {
    if (n_discrete > d)
        throw std::invalid_argument("synthesize_covariates: n_discrete exceeds d");
    constexpr int kLevels = 4;
    Rng rng(seed);
    CovariateMatrix cm;
    cm.values = Matrix(n, d);
    const std::size_t n_cont = d - n_discrete;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (j < n_cont) {
                cm.values(i, j) = rng.uniform01();
            } else {
                cm.values(i, j) =
                    static_cast<double>(rng.uniform_int(kLevels)) / (kLevels - 1);
            }
        }
    }
    cm.column_kinds.assign(d, ColumnKind::Continuous);
    for (std::size_t j = n_cont; j < d; ++j) cm.column_kinds[j] = ColumnKind::Discrete;
    for (std::size_t j = 0; j < d; ++j) cm.column_names.push_back("x" + std::to_string(j + 1));
    cm.constant_column.assign(d, false);
    return cm;
}

SplitIndices split(std::size_t n, SplitRatios ratios, std::uint64_t seed) {
    if (n < 3) throw std::invalid_argument("split: need n >= 3");
    if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0)
        throw std::invalid_argument("split: ratios must be positive");
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
        throw std::invalid_argument("split: ratios must sum to 1");

    std::vector<int> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<int>(i);
    Rng rng(seed);
    rng.shuffle(perm);

    const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * static_cast<double>(n)));
    SplitIndices s;
    s.train.assign(perm.begin(), perm.begin() + n_train);
    s.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
    s.test.assign(perm.begin() + n_train + n_val, perm.end());
    return s;
}

}  // namespace upbench
