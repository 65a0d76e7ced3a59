#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "vdmood/data.hpp"
#include "vdmood/errors.hpp"
#include "vdmood/eval.hpp"
#include "vdmood/predictor.hpp"
#include "vdmood/rng.hpp"
#include "vdmood/schedule.hpp"

namespace vdmood {

// Mean and spread of the raw denoising error over noise levels, per dataset.
// The t=1 end of this curve is what separates OOD from InD before any
// likelihood is computed, which is the premise behind the top-class loss
// score.

// The decade grid plus the high-noise refinements the other diagnostics use.
inline std::vector<double> default_noise_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 10; ++i) g.push_back(i / 10.0);  // exact decade doubles
    g.push_back(0.95);
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    return g;
}

struct NoiseCurveConfig {
    std::vector<double> t_grid = default_noise_grid();
    int repeats = 8;
    uint64_t seed = 0;
};

struct NoiseCurve {
    std::vector<double> t_grid;            // ascending
    std::vector<std::string> datasets;
    Matrix mean;                           // t x dataset, mean of ||eps - eps_hat||^2
    Matrix variance;                       // unbiased sample variance of the same draws
};

inline NoiseCurve loss_vs_noise(const NoisePredictor& model, const NoiseSchedule& sched,
                                const std::vector<std::pair<std::string, const Matrix*>>& datasets,
                                const NoiseCurveConfig& cfg = {}) {
    if (cfg.t_grid.empty()) throw UsageError("curve: empty noise grid");
    for (double t : cfg.t_grid)
        if (!(t >= 0.0) || !(t <= 1.0)) throw UsageError("curve: noise grid must lie in [0,1]");
    if (cfg.repeats < 2) throw UsageError("curve: need at least two draws for a variance");
    if (datasets.empty()) throw UsageError("curve: no datasets");
    for (const auto& [name, m] : datasets) {
        if (m->rows < 1) throw DataError("curve: dataset " + name + " is empty");
        if (m->cols != model.dim()) throw UsageError("curve: dataset " + name + " dimension mismatch");
    }

    NoiseCurve curve;
    curve.t_grid = cfg.t_grid;
    std::sort(curve.t_grid.begin(), curve.t_grid.end());
    for (const auto& [name, m] : datasets) curve.datasets.push_back(name);
    int nt = static_cast<int>(curve.t_grid.size());
    int nd = static_cast<int>(datasets.size());
    curve.mean = Matrix(nt, nd);
    curve.variance = Matrix(nt, nd);

    Rng rng(cfg.seed, 0x43555256);  // "CURV"
    int d = model.dim();
    for (int ti = 0; ti < nt; ++ti) {
        double t = curve.t_grid[ti];
        SchedulePoint sp = sched.eval(t);
        for (int di = 0; di < nd; ++di) {
            const Matrix& z = *datasets[di].second;
            int n = z.rows;
            // one pooled loss value per (sample, repeat) draw
            std::vector<double> losses;
            losses.reserve(static_cast<size_t>(n) * cfg.repeats);
            Matrix zt(n, d), eps(n, d);
            for (int r = 0; r < cfg.repeats; ++r) {
                for (double& e : eps.data) e = rng.normal();
                for (size_t i = 0; i < zt.size(); ++i)
                    zt.data[i] = sp.alpha * z.data[i] + sp.sigma * eps.data[i];
                Matrix pred = model.predict(zt, t);
                for (int i = 0; i < n; ++i) {
                    double q = 0.0;
                    for (int j = 0; j < d; ++j) {
                        double rdiff = eps.at(i, j) - pred.at(i, j);
                        q += rdiff * rdiff;
                    }
                    losses.push_back(q);
                }
            }
            double mean = 0.0;
            for (double v : losses) mean += v / losses.size();
            double var = 0.0;
            for (double v : losses) var += (v - mean) * (v - mean);
            var /= losses.size() - 1;
            curve.mean.at(ti, di) = mean;
            curve.variance.at(ti, di) = var;
        }
    }
    return curve;
}

// Long-format rows (t, dataset, mean, var), one line per grid cell.
inline void write_noise_curve_csv(const std::filesystem::path& path, const NoiseCurve& curve) {
    std::ofstream out(path);
    if (!out) throw DataError("curve: cannot write " + path.string());
    out << "t,dataset,mean,var\n";
    for (size_t ti = 0; ti < curve.t_grid.size(); ++ti)
        for (size_t di = 0; di < curve.datasets.size(); ++di)
            out << format_double(curve.t_grid[ti]) << "," << curve.datasets[di] << ","
                << format_double(curve.mean.at(ti, di)) << ","
                << format_double(curve.variance.at(ti, di)) << "\n";
    if (!out) throw DataError("curve: cannot write " + path.string());
}

// Score histograms are the report histogrammer applied to named vectors.
inline Histogram score_histograms(
    const std::vector<std::pair<std::string, const std::vector<double>*>>& series,
    int bins = 64) {
    return pooled_histogram(series, bins);
}

}  // namespace vdmood
