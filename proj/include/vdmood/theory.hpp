#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vdmood/errors.hpp"
#include "vdmood/eval.hpp"
#include "vdmood/rng.hpp"

namespace vdmood {

// Small executable arguments about density-based OOD detection: a monotone
// change of variables can invert which of two points is "denser", and when
// the outlier distribution is uniform over the data's support, thresholding
// the data density reaches the likelihood-ratio AUC exactly.

// Normalized density with a sampler, dimension-generic.
struct AnalyticDensity {
    int dim = 1;
    std::function<double(const double*)> pdf;
    std::function<void(Rng&, double*)> draw;
};

inline AnalyticDensity normal_density(double mean, double std_dev) {
    if (!(std_dev > 0.0)) throw UsageError("theory: standard deviation must be positive");
    AnalyticDensity d;
    d.dim = 1;
    d.pdf = [=](const double* x) {
        double r = (x[0] - mean) / std_dev;
        return std::exp(-0.5 * r * r) / (std_dev * std::sqrt(2.0 * 3.14159265358979323846));
    };
    d.draw = [=](Rng& rng, double* out) { out[0] = mean + std_dev * rng.normal(); };
    return d;
}

inline AnalyticDensity mixture1d_density(std::vector<double> weights, std::vector<double> means,
                                         std::vector<double> std_devs) {
    if (weights.empty() || weights.size() != means.size() || weights.size() != std_devs.size())
        throw UsageError("theory: mixture component lists must align");
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw UsageError("theory: mixture weights must be positive");
        total += w;
    }
    for (double& w : weights) w /= total;
    for (double s : std_devs)
        if (!(s > 0.0)) throw UsageError("theory: standard deviation must be positive");

    AnalyticDensity d;
    d.dim = 1;
    d.pdf = [=](const double* x) {
        double p = 0.0;
        for (size_t k = 0; k < weights.size(); ++k) {
            double r = (x[0] - means[k]) / std_devs[k];
            p += weights[k] * std::exp(-0.5 * r * r) /
                 (std_devs[k] * std::sqrt(2.0 * 3.14159265358979323846));
        }
        return p;
    };
    d.draw = [=](Rng& rng, double* out) {
        double u = rng.uniform();
        size_t k = 0;
        while (k + 1 < weights.size() && u >= weights[k]) u -= weights[k], ++k;
        out[0] = means[k] + std_devs[k] * rng.normal();
    };
    return d;
}

inline AnalyticDensity uniform_box_density(std::vector<double> lo, std::vector<double> hi) {
    if (lo.empty() || lo.size() != hi.size())
        throw UsageError("theory: box bounds must align and be nonempty");
    double volume = 1.0;
    for (size_t j = 0; j < lo.size(); ++j) {
        if (!(hi[j] > lo[j])) throw UsageError("theory: box must have positive extent");
        volume *= hi[j] - lo[j];
    }
    double c = 1.0 / volume;
    int dim = static_cast<int>(lo.size());
    AnalyticDensity d;
    d.dim = dim;
    d.pdf = [=](const double* x) {
        for (int j = 0; j < dim; ++j)
            if (x[j] < lo[j] || x[j] > hi[j]) return 0.0;
        return c;
    };
    d.draw = [=](Rng& rng, double* out) {
        for (int j = 0; j < dim; ++j) out[j] = lo[j] + rng.uniform() * (hi[j] - lo[j]);
    };
    return d;
}

// ---- change of variables ----

// Strictly increasing piecewise-linear map on [x.front(), x.back()].
struct MonotoneTransform {
    std::vector<double> x;       // segment boundaries, ascending
    std::vector<double> slope;   // per segment, > 0
    double y0 = 0.0;             // image of x.front()

    void validate() const {
        if (x.size() < 2 || slope.size() != x.size() - 1)
            throw UsageError("theory: transform needs one slope per segment");
        for (size_t i = 0; i + 1 < x.size(); ++i)
            if (!(x[i + 1] > x[i])) throw UsageError("theory: transform knots must ascend");
        for (double s : slope)
            if (!(s > 0.0)) throw UsageError("theory: transform slopes must be positive");
    }

    static MonotoneTransform identity(double lo, double hi) {
        return MonotoneTransform{{lo, hi}, {1.0}, lo};
    }

    int segment(double v) const {
        if (v < x.front() || v > x.back())
            throw UsageError("theory: point outside the transform domain");
        int s = 0;
        while (s + 2 < static_cast<int>(x.size()) && v >= x[s + 1]) ++s;
        return s;
    }

    double apply(double v) const {
        int s = segment(v);
        double y = y0;
        for (int i = 0; i < s; ++i) y += slope[i] * (x[i + 1] - x[i]);
        return y + slope[s] * (v - x[s]);
    }

    double deriv(double v) const { return slope[segment(v)]; }
};

// Density of the pushforward at the image point: p_Y(T(x)) = p(x) / T'(x).
inline double transformed_density(const std::function<double(double)>& pdf,
                                  const MonotoneTransform& t, double x) {
    t.validate();
    return pdf(x) / t.deriv(x);
}

// ---- mixture posterior and the uniform-outlier experiment ----

struct MixtureSetup {
    AnalyticDensity ind;
    AnalyticDensity ood;
    double alpha = 0.5;          // P(Y = OOD), strictly interior

    void validate() const {
        if (!(alpha > 0.0) || !(alpha < 1.0))
            throw UsageError("theory: mixture prior must lie strictly inside (0,1)");
        if (ind.dim != ood.dim) throw UsageError("theory: component dimensions differ");
    }
};

inline double likelihood_ratio(const MixtureSetup& s, const double* x) {
    s.validate();
    double pi = s.ind.pdf(x);
    if (pi <= 0.0) throw NumericalError("theory: likelihood ratio undefined where the data density vanishes");
    return s.ood.pdf(x) / pi;
}

inline double posterior_ood(const MixtureSetup& s, const double* x) {
    s.validate();
    double po = s.alpha * s.ood.pdf(x);
    double pi = (1.0 - s.alpha) * s.ind.pdf(x);
    if (po + pi <= 0.0) throw NumericalError("theory: posterior undefined outside both supports");
    return po / (po + pi);
}

struct OptimalityResult {
    double auc_density = 0.0;    // score = negated InD density
    double auc_ratio = 0.0;      // score = likelihood ratio
    int n = 0;
    uint64_t seed = 0;
    std::vector<double> density_ind, density_ood;  // the scored draws
    std::vector<double> ratio_ind, ratio_ood;
};

// Draw n points from each side, score them with -P_I and with P_O/P_I, and
// report both AUCs. With a uniform P_O the two scores order the samples
// identically, so the AUCs agree to the last bit.
inline OptimalityResult optimality_experiment(const MixtureSetup& setup, int n, uint64_t seed) {
    setup.validate();
    if (n < 1) throw UsageError("theory: need at least one sample per side");
    Rng rng(seed, 0x4f505449);  // "OPTI"
    int d = setup.ind.dim;
    std::vector<double> point(d);
    OptimalityResult r;
    r.n = n;
    r.seed = seed;
    for (int i = 0; i < n; ++i) {
        setup.ind.draw(rng, point.data());
        r.density_ind.push_back(-setup.ind.pdf(point.data()));
        r.ratio_ind.push_back(likelihood_ratio(setup, point.data()));
    }
    for (int i = 0; i < n; ++i) {
        setup.ood.draw(rng, point.data());
        r.density_ood.push_back(-setup.ind.pdf(point.data()));
        r.ratio_ood.push_back(likelihood_ratio(setup, point.data()));
    }
    r.auc_density = auroc(r.density_ind, r.density_ood);
    r.auc_ratio = auroc(r.ratio_ind, r.ratio_ood);
    return r;
}

}  // namespace vdmood
