#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "vdmood/errors.hpp"
#include "vdmood/matrix.hpp"
#include "vdmood/rng.hpp"

namespace vdmood {

// Classical density estimators fitted on the same feature rows the diffusion
// model sees: a diagonal Gaussian, a diagonal-covariance mixture trained with
// EM, and a Gaussian-kernel KDE. Negated log-density is the OOD score.

// Normalized features make smaller variances degenerate.
inline constexpr double kVarianceFloor = 1e-6;

namespace detail {

inline void require_finite_rows(const Matrix& m, const char* who) {
    for (double v : m.data)
        if (!std::isfinite(v)) throw DataError(std::string(who) + ": non-finite feature value");
}

// Sum of per-dimension Gaussian log-densities for one row.
inline double diag_normal_logpdf(const double* z, const double* mu, const double* var, int d) {
    constexpr double ln2pi = 1.8378770664093454836;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
        double r = z[j] - mu[j];
        acc += -0.5 * (ln2pi + std::log(var[j])) - r * r / (2.0 * var[j]);
    }
    return acc;
}

inline double logsumexp(const double* v, int n) {
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
    if (!std::isfinite(m)) return m;  // all -inf
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

}  // namespace detail

// ---- diagonal Gaussian ----

struct DiagGaussian {
    std::vector<double> mean;
    std::vector<double> var;              // >= kVarianceFloor
    int floored_dims = 0;                 // how many variances hit the floor

    int dim() const { return static_cast<int>(mean.size()); }
};

inline DiagGaussian fit_gaussian(const Matrix& data) {
    if (data.rows < 2) throw UsageError("baseline: gaussian fit needs at least 2 samples");
    detail::require_finite_rows(data, "baseline");
    int n = data.rows, d = data.cols;
    DiagGaussian g;
    g.mean.assign(d, 0.0);
    g.var.assign(d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) g.mean[j] += data.at(i, j);
    for (double& m : g.mean) m /= n;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            double r = data.at(i, j) - g.mean[j];
            g.var[j] += r * r;
        }
    for (double& v : g.var) {
        v /= n;                           // maximum-likelihood convention
        if (v < kVarianceFloor) {
            v = kVarianceFloor;
            ++g.floored_dims;
        }
    }
    return g;
}

inline double gaussian_logpdf(const DiagGaussian& g, const double* z) {
    return detail::diag_normal_logpdf(z, g.mean.data(), g.var.data(), g.dim());
}

inline std::vector<double> gaussian_logpdf(const DiagGaussian& g, const Matrix& z) {
    if (z.cols != g.dim()) throw UsageError("baseline: query dimension mismatch");
    detail::require_finite_rows(z, "baseline");
    std::vector<double> out(z.rows);
    for (int i = 0; i < z.rows; ++i) out[i] = gaussian_logpdf(g, z.row(i));
    return out;
}

// ---- diagonal-covariance Gaussian mixture via EM ----

struct DiagGmm {
    std::vector<double> weights;          // simplex
    Matrix means;                         // K x d
    Matrix vars;                          // K x d, >= kVarianceFloor
    std::vector<double> fit_history;      // mean train log-likelihood per EM iteration
    int floored_dims = 0;

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return means.cols; }
};

inline double gmm_logpdf(const DiagGmm& g, const double* z) {
    int k = g.components(), d = g.dim();
    std::vector<double> terms(k);
    for (int c = 0; c < k; ++c)
        terms[c] = std::log(g.weights[c]) +
                   detail::diag_normal_logpdf(z, g.means.row(c), g.vars.row(c), d);
    return detail::logsumexp(terms.data(), k);
}

inline std::vector<double> gmm_logpdf(const DiagGmm& g, const Matrix& z) {
    if (z.cols != g.dim()) throw UsageError("baseline: query dimension mismatch");
    detail::require_finite_rows(z, "baseline");
    std::vector<double> out(z.rows);
    for (int i = 0; i < z.rows; ++i) out[i] = gmm_logpdf(g, z.row(i));
    return out;
}

namespace detail {

// k-means++-style seeding: later centers prefer rows far from the chosen ones.
inline std::vector<int> seed_centers(const Matrix& data, int k, Rng& rng) {
    int n = data.rows, d = data.cols;
    std::vector<int> picks;
    picks.push_back(static_cast<int>(rng.uniform() * n) % n);
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(picks.size()) < k) {
        const double* c = data.row(picks.back());
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double q = 0.0;
            for (int j = 0; j < d; ++j) {
                double r = data.at(i, j) - c[j];
                q += r * r;
            }
            dist2[i] = std::min(dist2[i], q);
            total += dist2[i];
        }
        if (total <= 0.0) {               // all rows already covered: pick anywhere
            picks.push_back(static_cast<int>(rng.uniform() * n) % n);
            continue;
        }
        double u = rng.uniform() * total;
        int chosen = n - 1;
        for (int i = 0; i < n; ++i) {
            u -= dist2[i];
            if (u <= 0.0) {
                chosen = i;
                break;
            }
        }
        picks.push_back(chosen);
    }
    return picks;
}

}  // namespace detail

inline DiagGmm fit_gmm_em(const Matrix& data, int components, uint64_t seed) {
    if (components < 1) throw UsageError("baseline: gmm needs at least one component");
    if (data.rows < components) throw UsageError("baseline: gmm needs at least one sample per component");
    detail::require_finite_rows(data, "baseline");
    int n = data.rows, d = data.cols, k = components;
    Rng rng(seed, 0x474d4d);  // "GMM"

    // overall per-dimension variance doubles as the reinitialization scale
    DiagGaussian overall = fit_gaussian(data);

    DiagGmm g;
    g.weights.assign(k, 1.0 / k);
    g.means = Matrix(k, d);
    g.vars = Matrix(k, d);
    std::vector<int> picks = detail::seed_centers(data, k, rng);
    for (int c = 0; c < k; ++c)
        for (int j = 0; j < d; ++j) {
            g.means.at(c, j) = data.at(picks[c], j);
            g.vars.at(c, j) = overall.var[j];
        }

    Matrix resp(n, k);                    // responsibilities, E-step scratch
    std::vector<double> terms(k);
    for (int iter = 0; iter < 500; ++iter) {
        // E step; the per-row normalizers give the current log-likelihood
        double ll = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* zi = data.row(i);
            for (int c = 0; c < k; ++c)
                terms[c] = std::log(g.weights[c]) +
                           detail::diag_normal_logpdf(zi, g.means.row(c), g.vars.row(c), d);
            double norm = detail::logsumexp(terms.data(), k);
            ll += norm;
            for (int c = 0; c < k; ++c) resp.at(i, c) = std::exp(terms[c] - norm);
        }
        ll /= n;
        if (!std::isfinite(ll)) throw NumericalError("baseline: gmm log-likelihood diverged");
        bool converged = !g.fit_history.empty() && std::fabs(ll - g.fit_history.back()) < 1e-6;
        g.fit_history.push_back(ll);
        if (converged) break;

        // M step
        g.floored_dims = 0;
        for (int c = 0; c < k; ++c) {
            double nc = 0.0;
            for (int i = 0; i < n; ++i) nc += resp.at(i, c);
            if (nc < 1e-12) {             // collapsed: restart from a random datum
                int pick = static_cast<int>(rng.uniform() * n) % n;
                for (int j = 0; j < d; ++j) {
                    g.means.at(c, j) = data.at(pick, j);
                    g.vars.at(c, j) = overall.var[j];
                }
                g.weights[c] = 1.0 / n;
                continue;
            }
            g.weights[c] = nc / n;
            for (int j = 0; j < d; ++j) {
                double m = 0.0;
                for (int i = 0; i < n; ++i) m += resp.at(i, c) * data.at(i, j);
                m /= nc;
                double v = 0.0;
                for (int i = 0; i < n; ++i) {
                    double r = data.at(i, j) - m;
                    v += resp.at(i, c) * r * r;
                }
                v /= nc;
                if (v < kVarianceFloor) {
                    v = kVarianceFloor;
                    ++g.floored_dims;
                }
                g.means.at(c, j) = m;
                g.vars.at(c, j) = v;
            }
        }
        double wsum = 0.0;                // reinitialized components perturb the simplex
        for (double w : g.weights) wsum += w;
        for (double& w : g.weights) w /= wsum;
    }
    return g;
}

// ---- Gaussian-kernel KDE ----

struct Kde {
    double bandwidth = 1.0;               // > 0, shared across dimensions
    Matrix reference;                     // fit rows the kernel sums over

    int dim() const { return reference.cols; }
};

inline Kde fit_kde(const Matrix& data, double bandwidth) {
    if (data.rows < 1) throw UsageError("baseline: kde needs a nonempty reference set");
    if (!(bandwidth > 0.0)) throw UsageError("baseline: kde bandwidth must be positive");
    detail::require_finite_rows(data, "baseline");
    return Kde{bandwidth, data};
}

inline double kde_logpdf(const Kde& k, const double* z) {
    constexpr double ln2pi = 1.8378770664093454836;
    int n = k.reference.rows, d = k.dim();
    double h2 = k.bandwidth * k.bandwidth;
    double base = -0.5 * d * (ln2pi + std::log(h2));
    std::vector<double> terms(n);
    for (int i = 0; i < n; ++i) {
        const double* x = k.reference.row(i);
        double q = 0.0;
        for (int j = 0; j < d; ++j) {
            double r = z[j] - x[j];
            q += r * r;
        }
        terms[i] = base - q / (2.0 * h2);
    }
    return detail::logsumexp(terms.data(), n) - std::log(static_cast<double>(n));
}

inline std::vector<double> kde_logpdf(const Kde& k, const Matrix& z) {
    if (z.cols != k.dim()) throw UsageError("baseline: query dimension mismatch");
    detail::require_finite_rows(z, "baseline");
    std::vector<double> out(z.rows);
    for (int i = 0; i < z.rows; ++i) out[i] = kde_logpdf(k, z.row(i));
    return out;
}

// ---- held-out hyperparameter tuning ----

// Fit on the first `fit_split` rows, score each grid entry by mean held-out
// log-likelihood, keep the best. Ties break toward the earlier grid entry.
struct TuneOutcome {
    double chosen = 0.0;
    std::vector<double> grid;
    std::vector<double> validation_ll;    // mean held-out log-likelihood per entry
};

namespace detail {

template <typename FitScore>
TuneOutcome tune_grid(const Matrix& data, const std::vector<double>& grid, int fit_split,
                      FitScore&& score) {
    if (grid.empty()) throw UsageError("baseline: tuning grid is empty");
    if (fit_split < 1) throw UsageError("baseline: fit split must be positive");
    if (data.rows <= fit_split)
        throw UsageError("baseline: tuning needs more samples than the fit split");
    Matrix fit(fit_split, data.cols);
    Matrix val(data.rows - fit_split, data.cols);
    std::copy_n(data.data.begin(), fit.size(), fit.data.begin());
    std::copy(data.data.begin() + fit.size(), data.data.end(), val.data.begin());

    TuneOutcome out;
    out.grid = grid;
    int best = 0;
    for (size_t i = 0; i < grid.size(); ++i) {
        std::vector<double> ll = score(fit, val, grid[i]);
        double mean = 0.0;
        for (double v : ll) mean += v / ll.size();
        out.validation_ll.push_back(mean);
        if (mean > out.validation_ll[best]) best = static_cast<int>(i);
    }
    out.chosen = grid[best];
    return out;
}

}  // namespace detail

inline TuneOutcome tune_gmm_components(const Matrix& data, const std::vector<int>& grid,
                                       uint64_t seed, int fit_split = 10000) {
    std::vector<double> g;
    for (int k : grid) {
        if (k < 1) throw UsageError("baseline: component counts must be positive");
        g.push_back(k);
    }
    return detail::tune_grid(data, g, fit_split, [&](const Matrix& fit, const Matrix& val, double k) {
        return gmm_logpdf(fit_gmm_em(fit, static_cast<int>(k), seed), val);
    });
}

inline TuneOutcome tune_kde_bandwidth(const Matrix& data, const std::vector<double>& grid,
                                      int fit_split = 10000) {
    for (double h : grid)
        if (!(h > 0.0)) throw UsageError("baseline: bandwidths must be positive");
    return detail::tune_grid(data, grid, fit_split, [](const Matrix& fit, const Matrix& val, double h) {
        return kde_logpdf(fit_kde(fit, h), val);
    });
}

}  // namespace vdmood
