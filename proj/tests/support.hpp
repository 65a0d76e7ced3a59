#pragma once

// Shared test utilities. The oracles here are deliberately written as naive,
// independent routes (triple loops, finite differences, rank counting) so the
// library implementations are checked against something they share no code
// with.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "vdmood/matrix.hpp"

namespace testsupport {

using vdmood::Matrix;

// Plain j-indexed triple loop, different loop order from the library.
inline Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
            c.at(i, j) = s;
        }
    return c;
}

// Central finite differences of a scalar function of several matrices.
inline std::vector<Matrix> fd_gradients(
    const std::function<double(const std::vector<Matrix>&)>& f, std::vector<Matrix> params,
    double h = 1e-5) {
    std::vector<Matrix> grads;
    for (size_t p = 0; p < params.size(); ++p) {
        Matrix g(params[p].rows, params[p].cols);
        for (size_t i = 0; i < params[p].size(); ++i) {
            double orig = params[p].data[i];
            params[p].data[i] = orig + h;
            double up = f(params);
            params[p].data[i] = orig - h;
            double down = f(params);
            params[p].data[i] = orig;
            g.data[i] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Relative agreement with a floor so near-zero gradients compare absolutely.
inline double rel_gap(double a, double b, double floor = 1e-3) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

inline double max_rel_gap(const std::vector<Matrix>& a, const std::vector<Matrix>& b,
                          double floor = 1e-3) {
    double worst = 0.0;
    for (size_t p = 0; p < a.size(); ++p)
        for (size_t i = 0; i < a[p].size(); ++i)
            worst = std::max(worst, rel_gap(a[p].data[i], b[p].data[i], floor));
    return worst;
}

// Fractional ranks (ties get the average of their positions), 1-based.
inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        double r = 0.5 * (i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    size_t n = x.size();
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(fractional_ranks(x), fractional_ranks(y));
}

// Pairwise O(n^2) AUROC oracle with half credit for ties.
inline double auroc_oracle(const std::vector<double>& ind, const std::vector<double>& ood) {
    double wins = 0.0;
    for (double o : ood)
        for (double i : ind) {
            if (o > i) wins += 1.0;
            else if (o == i) wins += 0.5;
        }
    return wins / (static_cast<double>(ind.size()) * static_cast<double>(ood.size()));
}

// Exhaustive threshold sweep: smallest cutoff keeping >= 95% of InD scores at
// or below it, then the OOD fraction at or below that cutoff.
inline double fpr95_oracle(std::vector<double> ind, const std::vector<double>& ood) {
    std::sort(ind.begin(), ind.end());
    double best_tau = 0.0;
    bool found = false;
    for (double tau : ind) {
        size_t kept = 0;
        for (double i : ind)
            if (i <= tau) ++kept;
        if (static_cast<double>(kept) >= 0.95 * static_cast<double>(ind.size())) {
            best_tau = tau;
            found = true;
            break;
        }
    }
    if (!found) best_tau = ind.back();
    size_t fp = 0;
    for (double o : ood)
        if (o <= best_tau) ++fp;
    return static_cast<double>(fp) / static_cast<double>(ood.size());
}

inline double std_normal_logpdf(const double* x, int d) {
    double q = 0.0;
    for (int i = 0; i < d; ++i) q += x[i] * x[i];
    return -0.5 * q - 0.5 * d * std::log(2.0 * 3.14159265358979323846);
}

// Unique temp directory for file-format and CLI tests.
inline std::filesystem::path make_temp_dir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path() / ("vdmood_" + tag + "_" +
                std::to_string(::getpid()));
    std::filesystem::create_directories(base);
    return base;
}

}  // namespace testsupport
