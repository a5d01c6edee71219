#include "upbench/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "upbench/rng.hpp"

namespace upbench {

void DGPConfig::validate() const {
    if (radius <= 0) throw std::invalid_argument("dgp: radius must be positive");
    if (omega < 0) throw std::invalid_argument("dgp: omega must be nonnegative");
    if (m < 0 || m >= 1) throw std::invalid_argument("dgp: m must lie in [0,1)");
    if (outcome_noise_var < 0)
        throw std::invalid_argument("dgp: outcome noise variance must be nonnegative");
}

std::uint64_t CoefficientSet::checksum() const {
    std::uint64_t h = derive_seed(0x75706265ULL, "coeffs", static_cast<std::uint64_t>(d));
    auto fold = [&h](const std::vector<double>& v) {
        for (double x : v) h = derive_seed(h, x);
    };
    fold(beta_T);
    fold(beta0_lin);
    fold(beta0_quad);
    fold(beta1_lin);
    fold(beta1_quad);
    fold(beta1_cubic);
    return h;
}

CoefficientSet draw_coefficients(std::size_t d, std::uint64_t coeff_seed) {
    if (d < 1) throw std::invalid_argument("draw_coefficients: d must be >= 1");
    Rng rng(coeff_seed);
    CoefficientSet c;
    c.d = d;
    c.beta_T.resize(d);
    for (auto& b : c.beta_T) b = rng.gaussian(-0.2, 0.1);  // N(-0.2, 0.01): std 0.1
    auto draw_bern = [&rng](std::vector<double>& v, std::size_t count, double p) {
        v.resize(count);
        for (auto& b : v) b = rng.bernoulli(p) ? 1.0 : 0.0;
    };
    draw_bern(c.beta0_lin, d, 0.3);
    draw_bern(c.beta0_quad, d * d, 0.2);
    draw_bern(c.beta1_lin, d, 0.2);
    draw_bern(c.beta1_quad, d * d, 0.5);
    draw_bern(c.beta1_cubic, d * d * d, 0.6);
    return c;
}

namespace {

std::uint64_t fold_cell_coord(std::uint64_t h, std::int32_t c) {
    return detail::fold_token(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(c)));
}

}  // namespace

NeighborIndex build_neighbor_index(const Matrix& x, double radius) {
    if (radius <= 0) throw std::invalid_argument("build_neighbor_index: radius must be positive");
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    const double r2 = radius * radius;

    // Group exact-duplicate rows: discrete columns create heavy duplication
    // and duplicates share neighbor sets.
    std::vector<int> group_of(n);
    std::vector<int> group_rep;                // representative row per group
    std::vector<std::vector<int>> group_rows;  // members, ascending
    {
        std::unordered_map<std::uint64_t, std::vector<int>> seen;
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t h = 0xcbf29ce484222325ULL;
            for (std::size_t j = 0; j < d; ++j) h = detail::fold_token(h, x(i, j));
            auto& cands = seen[h];
            int g = -1;
            for (int cand : cands) {
                const double* a = x.row(static_cast<std::size_t>(group_rep[cand]));
                const double* b = x.row(i);
                bool eq = true;
                for (std::size_t j = 0; j < d; ++j)
                    if (a[j] != b[j]) {
                        eq = false;
                        break;
                    }
                if (eq) {
                    g = cand;
                    break;
                }
            }
            if (g < 0) {
                g = static_cast<int>(group_rep.size());
                group_rep.push_back(static_cast<int>(i));
                group_rows.emplace_back();
                cands.push_back(g);
            }
            group_of[i] = g;
            group_rows[static_cast<std::size_t>(g)].push_back(static_cast<int>(i));
        }
    }
    const std::size_t ng = group_rep.size();

    // Grid cells (cell side = radius): points within the radius differ by at
    // most one cell per dimension, so candidate cells are the 3^d adjacent
    // ones. A depth-first walk over dimensions prunes against per-depth
    // prefix sets; columns with few distinct cell values go first because
    // their +/-1 cells are rarely occupied (discrete levels sit far apart
    // relative to the radius).
    std::vector<std::vector<std::int32_t>> cells(ng, std::vector<std::int32_t>(d));
    std::vector<std::size_t> dim_order(d);
    {
        std::vector<std::unordered_map<std::int32_t, int>> distinct(d);
        for (std::size_t g = 0; g < ng; ++g) {
            const double* row = x.row(static_cast<std::size_t>(group_rep[g]));
            for (std::size_t j = 0; j < d; ++j) {
                const auto c = static_cast<std::int32_t>(std::floor(row[j] / radius));
                cells[g][j] = c;
                distinct[j][c] = 1;
            }
        }
        for (std::size_t j = 0; j < d; ++j) dim_order[j] = j;
        std::sort(dim_order.begin(), dim_order.end(), [&distinct](std::size_t a, std::size_t b) {
            if (distinct[a].size() != distinct[b].size())
                return distinct[a].size() < distinct[b].size();
            return a < b;
        });
    }

    std::vector<std::unordered_set<std::uint64_t>> prefix(d);  // occupied prefixes per depth
    std::unordered_map<std::uint64_t, std::vector<int>> buckets;
    constexpr std::uint64_t kSeed = 0x9e3779b97f4a7c15ULL;
    for (std::size_t g = 0; g < ng; ++g) {
        std::uint64_t h = kSeed;
        for (std::size_t j = 0; j < d; ++j) {
            h = fold_cell_coord(h, cells[g][dim_order[j]]);
            prefix[j].insert(h);
        }
        buckets[h].push_back(static_cast<int>(g));
    }

    std::vector<std::vector<int>> gnbr(ng);
    std::vector<std::uint64_t> hash_stack(d + 1);
    std::vector<int> probe_count;  // depth-first stack of pending offsets
    for (std::size_t g = 0; g < ng; ++g) {
        const double* a = x.row(static_cast<std::size_t>(group_rep[g]));
        const auto& gc = cells[g];
        hash_stack[0] = kSeed;

        // iterative DFS over offset choices per dimension
        struct Frame {
            int next_offset;  // -1, 0, 1; 2 = exhausted
        };
        std::vector<Frame> stack(d, Frame{-1});
        std::size_t depth = 0;
        while (true) {
            if (stack[depth].next_offset > 1) {
                if (depth == 0) break;
                stack[depth].next_offset = -1;
                --depth;
                ++stack[depth].next_offset;
                continue;
            }
            const int off = stack[depth].next_offset;
            const std::uint64_t h =
                fold_cell_coord(hash_stack[depth], gc[dim_order[depth]] + off);
            if (!prefix[depth].contains(h)) {
                ++stack[depth].next_offset;
                continue;
            }
            if (depth + 1 == d) {
                auto it = buckets.find(h);
                if (it != buckets.end()) {
                    for (int cand : it->second) {
                        const auto& hc = cells[static_cast<std::size_t>(cand)];
                        bool cell_match = true;
                        for (std::size_t j = 0; j < d; ++j) {
                            const std::size_t dim = dim_order[j];
                            const int o = (j == depth) ? off : stack[j].next_offset;
                            if (hc[dim] != gc[dim] + o) {
                                cell_match = false;
                                break;
                            }
                        }
                        if (!cell_match) continue;  // hash collision
                        const double* b = x.row(static_cast<std::size_t>(group_rep[cand]));
                        double dist2 = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                            const double diff = a[j] - b[j];
                            dist2 += diff * diff;
                        }
                        if (dist2 <= r2) gnbr[g].push_back(cand);
                    }
                }
                ++stack[depth].next_offset;
            } else {
                hash_stack[depth + 1] = h;
                ++depth;
            }
        }
        std::sort(gnbr[g].begin(), gnbr[g].end());
    }

    NeighborIndex idx;
    idx.neighbors.resize(n);
    idx.sizes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto g = static_cast<std::size_t>(group_of[i]);
        auto& list = idx.neighbors[i];
        for (int h : gnbr[g])
            for (int member : group_rows[static_cast<std::size_t>(h)]) list.push_back(member);
        std::sort(list.begin(), list.end());
        idx.sizes[i] = static_cast<int>(list.size());
    }
    return idx;
}

std::vector<double> neighborhood_mean(const std::vector<double>& v, const NeighborIndex& nbr) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double s = 0.0;
        for (int j : nbr.neighbors[i]) s += v[static_cast<std::size_t>(j)];
        out[i] = s / static_cast<double>(nbr.sizes[i]);
    }
    return out;
}

Baselines compute_baselines(const Matrix& x, const CoefficientSet& coeffs) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    if (coeffs.d != d) throw std::invalid_argument("compute_baselines: dimension mismatch");

    Baselines b;
    b.zeta.resize(n);
    b.gamma0.resize(n);
    b.gamma1.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.row(i);
        double zeta = 0.0;
        for (std::size_t j = 0; j < d; ++j) zeta += coeffs.beta_T[j] * xi[j];

        double g0 = 0.0;
        for (std::size_t j = 0; j < d; ++j) g0 += coeffs.beta0_lin[j] * xi[j];
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k) g0 += coeffs.beta0_quad[j * d + k] * xi[j] * xi[k];

        double g1 = 0.0;
        for (std::size_t j = 0; j < d; ++j) g1 += coeffs.beta1_lin[j] * xi[j];
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k) g1 += coeffs.beta1_quad[j * d + k] * xi[j] * xi[k];
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k)
                for (std::size_t l = 0; l < d; ++l)
                    g1 += coeffs.beta1_cubic[(j * d + k) * d + l] * xi[j] * xi[k] * xi[l];

        b.zeta[i] = zeta;
        b.gamma0[i] = g0;
        b.gamma1[i] = g1;
    }
    return b;
}

TreatmentDraw assign_treatment(const std::vector<double>& zeta, const NeighborIndex& nbr,
                               double xi, std::uint64_t treat_seed) {
    const std::size_t n = zeta.size();
    if (nbr.neighbors.size() != n) throw std::invalid_argument("assign_treatment: size mismatch");

    TreatmentDraw out;
    out.sigma_nbr = neighborhood_mean(zeta, nbr);
    out.propensity.resize(n);
    out.t.resize(n);
    Rng rng(treat_seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double logit = xi * (zeta[i] + 0.2 * out.sigma_nbr[i] + 0.3);
        out.propensity[i] = 1.0 / (1.0 + std::exp(-logit));
        out.t[i] = rng.uniform01() < out.propensity[i] ? 1 : 0;
    }
    return out;
}

OutcomeDraw generate_outcomes(const std::vector<double>& gamma0, const std::vector<double>& gamma1,
                              const NeighborIndex& nbr, double theta0, double theta1,
                              const std::vector<int>& t, double noise_var,
                              std::uint64_t noise_seed) {
    const std::size_t n = gamma0.size();
    if (gamma1.size() != n || t.size() != n || nbr.neighbors.size() != n)
        throw std::invalid_argument("generate_outcomes: size mismatch");
    if (noise_var < 0) throw std::invalid_argument("generate_outcomes: negative noise variance");

    OutcomeDraw out;
    out.gamma0_nbr = neighborhood_mean(gamma0, nbr);
    out.gamma1_nbr = neighborhood_mean(gamma1, nbr);
    out.y0.resize(n);
    out.y1.resize(n);
    out.y.resize(n);
    out.tau.resize(n);
    out.eps.resize(n);
    Rng rng(noise_seed);
    const double noise_sd = std::sqrt(noise_var);
    for (std::size_t i = 0; i < n; ++i) {
        out.y0[i] = gamma0[i] + theta0 * out.gamma0_nbr[i];
        out.y1[i] = gamma1[i] + theta1 * out.gamma1_nbr[i];
        out.eps[i] = noise_sd * rng.gaussian();
        out.y[i] = (t[i] ? out.y1[i] : out.y0[i]) + out.eps[i];
        out.tau[i] = out.y1[i] - out.y0[i];
    }
    return out;
}

Matrix apply_measurement_error(const Matrix& x, double omega, std::size_t d_total,
                               std::uint64_t measure_seed) {
    if (omega < 0) throw std::invalid_argument("apply_measurement_error: negative omega");
    Matrix out = x;
    Rng rng(measure_seed);
    const double sd = std::sqrt(omega / static_cast<double>(d_total));
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += sd * rng.gaussian();
    return out;
}

Matrix mask_confounders(const Matrix& x, double m, std::uint64_t mask_seed,
                        std::vector<int>* kept) {
    if (m < 0 || m >= 1) throw std::invalid_argument("mask_confounders: m must lie in [0,1)");
    const std::size_t d = x.cols();
    const auto n_drop = static_cast<std::size_t>(std::floor(m * static_cast<double>(d)));

    std::vector<int> perm(d);
    for (std::size_t j = 0; j < d; ++j) perm[j] = static_cast<int>(j);
    Rng rng(mask_seed);
    rng.shuffle(perm);

    std::vector<bool> dropped(d, false);
    for (std::size_t j = 0; j < n_drop; ++j) dropped[static_cast<std::size_t>(perm[j])] = true;

    std::vector<int> keep;
    for (std::size_t j = 0; j < d; ++j)
        if (!dropped[j]) keep.push_back(static_cast<int>(j));

    Matrix out(x.rows(), keep.size());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < keep.size(); ++j)
            out(i, j) = x(i, static_cast<std::size_t>(keep[j]));
    if (kept) *kept = std::move(keep);
    return out;
}

SemiSyntheticDataset generate(const CovariateMatrix& x, const DGPConfig& config) {
    config.validate();
    x.validate();

    SemiSyntheticDataset ds;
    ds.config = config;
    ds.x_true = x;
    ds.coeffs = draw_coefficients(x.d(), config.coeff_seed);

    const NeighborIndex nbr = build_neighbor_index(x.values, config.radius);
    ds.neighbor_sizes = nbr.sizes;

    Baselines base = compute_baselines(x.values, ds.coeffs);
    ds.zeta = std::move(base.zeta);
    ds.gamma0 = std::move(base.gamma0);
    ds.gamma1 = std::move(base.gamma1);

    TreatmentDraw td = assign_treatment(ds.zeta, nbr, config.xi, config.treat_seed);
    ds.t = std::move(td.t);
    ds.propensity = std::move(td.propensity);
    ds.sigma_nbr = std::move(td.sigma_nbr);

    OutcomeDraw od = generate_outcomes(ds.gamma0, ds.gamma1, nbr, config.theta0, config.theta1,
                                       ds.t, config.outcome_noise_var, config.noise_seed);
    ds.y0 = std::move(od.y0);
    ds.y1 = std::move(od.y1);
    ds.y = std::move(od.y);
    ds.tau = std::move(od.tau);
    ds.eps = std::move(od.eps);
    ds.gamma0_nbr = std::move(od.gamma0_nbr);
    ds.gamma1_nbr = std::move(od.gamma1_nbr);

    const Matrix noisy =
        apply_measurement_error(x.values, config.omega, x.d(), config.measure_seed);
    ds.x_obs = mask_confounders(noisy, config.m, config.mask_seed, &ds.observed_columns);
    return ds;
}

void write_dataset_csv(const SemiSyntheticDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset file: " + path);

    out << "id";
    for (std::size_t j = 0; j < ds.x_true.d(); ++j) out << ",x" << (j + 1);
    for (std::size_t j = 0; j < ds.d_obs(); ++j) out << ",xobs" << (j + 1);
    out << ",t,propensity,y,y0,y1,tau\n";

    char buf[32];
    auto put = [&out, &buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << ',' << buf;
    };
    for (std::size_t i = 0; i < ds.n(); ++i) {
        out << i;
        for (std::size_t j = 0; j < ds.x_true.d(); ++j) put(ds.x_true.values(i, j));
        for (std::size_t j = 0; j < ds.d_obs(); ++j) put(ds.x_obs(i, j));
        out << ',' << ds.t[i];
        put(ds.propensity[i]);
        put(ds.y[i]);
        put(ds.y0[i]);
        put(ds.y1[i]);
        put(ds.tau[i]);
        out << '\n';
    }
    if (!out) throw IoError("failed while writing dataset file: " + path);

    nlohmann::json meta;
    meta["n"] = ds.n();
    meta["d"] = ds.x_true.d();
    meta["d_obs"] = ds.d_obs();
    meta["observed_columns"] = ds.observed_columns;
    meta["config"] = {{"xi", ds.config.xi},
                      {"theta0", ds.config.theta0},
                      {"theta1", ds.config.theta1},
                      {"omega", ds.config.omega},
                      {"m", ds.config.m},
                      {"radius", ds.config.radius},
                      {"outcome_noise_var", ds.config.outcome_noise_var}};
    meta["seeds"] = {{"coeff", ds.config.coeff_seed},
                     {"treat", ds.config.treat_seed},
                     {"noise", ds.config.noise_seed},
                     {"measure", ds.config.measure_seed},
                     {"mask", ds.config.mask_seed}};
    meta["coefficient_checksum"] = ds.coeffs.checksum();
    std::ofstream mout(path + ".meta.json");
    if (!mout) throw IoError("cannot write dataset metadata: " + path + ".meta.json");
    mout << meta.dump(2) << '\n';
}

DatasetColumns read_dataset_columns(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("dataset file '" + path + "' has no header");

    std::vector<std::string> header;
    {
        std::string field;
        for (char c : line) {
            if (c == ',') {
                header.push_back(field);
                field.clear();
            } else if (c != '\r') {
                field.push_back(c);
            }
        }
        header.push_back(field);
    }
    int t_col = -1, y_col = -1, tau_col = -1;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == "t") t_col = static_cast<int>(j);
        if (header[j] == "y") y_col = static_cast<int>(j);
        if (header[j] == "tau") tau_col = static_cast<int>(j);
    }
    if (t_col < 0 || y_col < 0 || tau_col < 0)
        throw ParseError("dataset file '" + path + "' is missing t/y/tau columns");

    DatasetColumns cols;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        for (char c : line) {
            if (c == ',') {
                fields.push_back(field);
                field.clear();
            } else if (c != '\r') {
                field.push_back(c);
            }
        }
        fields.push_back(field);
        if (fields.size() != header.size())
            throw ParseError("dataset row " + std::to_string(row) + " has wrong field count");
        try {
            cols.t.push_back(std::stoi(fields[static_cast<std::size_t>(t_col)]));
            cols.y.push_back(std::stod(fields[static_cast<std::size_t>(y_col)]));
            cols.tau.push_back(std::stod(fields[static_cast<std::size_t>(tau_col)]));
        } catch (const std::exception&) {
            throw ParseError("unparseable dataset row " + std::to_string(row));
        }
        ++row;
    }
    cols.n = cols.t.size();
    return cols;
}

}  // namespace upbench
