#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vdmood/errors.hpp"
#include "vdmood/matrix.hpp"
#include "vdmood/predictor.hpp"
#include "vdmood/rng.hpp"
#include "vdmood/schedule.hpp"
#include "vdmood/tape.hpp"

namespace vdmood {

// ---- probability-flow ODE ----
//
// Deterministic companion of the diffusion: running
//   dz/dt = -gamma'(t) sigma_t^2 / 2 * (z - eps_hat(z, t) / sigma_t)
// from t=0 to t=1 carries a clean point to the t=1 marginal, and the running
// divergence of that drift converts densities between the two ends:
//   log p0(z(0)) = log pT(z(1)) + integral_0^1 div f(z(t), t) dt.

struct FlowConfig {
    int steps = 50;                         // fixed-step RK4 stages over [0, 1]
    int probe_count = 1;                    // trace probes per sample
    std::string probe_kind = "rademacher";  // "rademacher", "gaussian" or "exact"
    uint64_t seed = 0;
    std::vector<int> class_ids;  // one per row when conditioning; empty = unconditional
};

struct FlowResult {
    Matrix z_end;
    std::vector<double> log_p_end;     // prior log-density at the flow endpoint
    std::vector<double> div_integral;  // accumulated drift divergence
    std::vector<double> log_p0;        // log_p_end + div_integral, per row
};

// The t=1 reference density N(0, sigmoid(gamma_max) I). A learned schedule
// pins gamma(1) to gamma_max exactly, so this holds for both kinds.
inline std::vector<double> prior_logpdf(const Matrix& z, const NoiseSchedule& s) {
    double s2 = sigmoid(s.gamma_max());
    double log_norm = -0.5 * z.cols * std::log(2.0 * 3.14159265358979323846 * s2);
    std::vector<double> out(z.rows);
    for (int i = 0; i < z.rows; ++i) {
        double zz = 0.0;
        for (int j = 0; j < z.cols; ++j) zz += z.at(i, j) * z.at(i, j);
        out[i] = log_norm - zz / (2.0 * s2);
    }
    return out;
}

inline Matrix score_field(const NoisePredictor& pred, const NoiseSchedule& s, const Matrix& z,
                          double t, std::span<const int> ids = {}) {
    return pred.predict(z, t, ids) * (-1.0 / s.eval(t).sigma);
}

// Hutchinson estimate of the per-row divergence of `field` at `z`: mean over
// probes of v' J v, each contraction via one reverse sweep (grad of <field, v>
// with respect to z is J'v, and <J'v, v> equals <v, J v>). Row Jacobians are
// independent, so one sweep serves the whole batch.
inline std::vector<double> probe_divergence(Tape& tape, Tape::Id field, Tape::Id z,
                                            const std::vector<Matrix>& probes) {
    // adding nodes may reallocate tape storage: never hold value references
    // across builder calls
    int rows = tape.value(z).rows, cols = tape.value(z).cols;
    if (probes.empty()) throw UsageError("divergence: no probes");
    std::vector<Tape::Id> roots;
    roots.reserve(probes.size());
    for (const Matrix& v : probes) {
        if (v.rows != rows || v.cols != cols)
            throw UsageError("divergence: probe shape mismatch");
        roots.push_back(tape.sum(tape.mul(field, tape.constant(v))));
    }
    std::vector<double> div(rows, 0.0);
    for (size_t p = 0; p < probes.size(); ++p) {
        tape.backward(roots[p]);
        const Matrix& gz = tape.gradient(z);
        for (int i = 0; i < rows; ++i) {
            double acc = 0.0;
            for (int j = 0; j < cols; ++j) acc += gz.at(i, j) * probes[p].at(i, j);
            div[i] += acc;
        }
    }
    for (double& v : div) v /= static_cast<double>(probes.size());
    return div;
}

// Exact trace of the row Jacobians: one coordinate probe per input dimension.
inline std::vector<double> exact_divergence(Tape& tape, Tape::Id field, Tape::Id z) {
    int rows = tape.value(z).rows, cols = tape.value(z).cols;
    std::vector<Matrix> probes;
    for (int j = 0; j < cols; ++j) {
        Matrix v(rows, cols);
        for (int i = 0; i < rows; ++i) v.at(i, j) = 1.0;
        probes.push_back(std::move(v));
    }
    std::vector<double> div = probe_divergence(tape, field, z, probes);
    for (double& v : div) v *= cols;  // mean over coordinates -> sum
    return div;
}

struct DriftEval {
    Matrix drift;
    std::vector<double> div;
};

inline DriftEval eval_drift(const NoisePredictor& pred, const NoiseSchedule& sched,
                            const Matrix& z, double t, std::span<const int> ids,
                            const std::vector<Matrix>& probes, bool exact) {
    SchedulePoint p = sched.eval(t);
    Tape tape;
    Tape::Id zn = tape.variable(z);
    Tape::Id eps = pred.build_eps(tape, zn, t, ids);
    Tape::Id inner = tape.sub(zn, tape.scale(eps, 1.0 / p.sigma));
    Tape::Id drift = tape.scale(inner, -0.5 * p.gamma_prime * p.sigma * p.sigma);
    DriftEval out;
    out.div = exact ? exact_divergence(tape, drift, zn) : probe_divergence(tape, drift, zn, probes);
    out.drift = tape.value(drift);
    return out;
}

// Probes are drawn once per sample, keyed by the sample's feature bytes, and
// reused at every integrator stage: refining `steps` never redraws noise, and
// duplicate rows receive identical estimates.
inline std::vector<Matrix> draw_probes(const Matrix& z0, const FlowConfig& cfg) {
    bool gauss = cfg.probe_kind == "gaussian";
    std::vector<Matrix> probes;
    for (int p = 0; p < cfg.probe_count; ++p) {
        Matrix v(z0.rows, z0.cols);
        for (int i = 0; i < z0.rows; ++i) {
            Rng rng = Rng::for_sample(cfg.seed, std::span<const double>(z0.row(i), z0.cols),
                                      0x1000 + p);
            for (int j = 0; j < z0.cols; ++j)
                v.at(i, j) = gauss ? rng.normal() : rng.rademacher();
        }
        probes.push_back(std::move(v));
    }
    return probes;
}

inline FlowResult integrate_flow(const NoisePredictor& pred, const NoiseSchedule& sched,
                                 const Matrix& z0, const FlowConfig& cfg) {
    if (cfg.steps < 1) throw UsageError("flow: steps must be positive");
    if (cfg.probe_count < 1) throw UsageError("flow: probe count must be positive");
    if (cfg.probe_kind != "rademacher" && cfg.probe_kind != "gaussian" &&
        cfg.probe_kind != "exact")
        throw UsageError("flow: unknown probe kind '" + cfg.probe_kind + "'");
    if (!cfg.class_ids.empty() && static_cast<int>(cfg.class_ids.size()) != z0.rows)
        throw UsageError("flow: class id count does not match the batch");
    if (z0.cols != pred.dim()) throw UsageError("flow: input dim does not match the model");
    if (!z0.all_finite()) throw DataError("flow: non-finite input");

    bool exact = cfg.probe_kind == "exact";
    std::vector<Matrix> probes = exact ? std::vector<Matrix>{} : draw_probes(z0, cfg);
    std::span<const int> ids = cfg.class_ids;

    int n = z0.rows;
    Matrix z = z0;
    std::vector<double> div(n, 0.0);
    double h = 1.0 / cfg.steps;
    for (int k = 0; k < cfg.steps; ++k) {
        double t0 = static_cast<double>(k) / cfg.steps;
        double tm = (k + 0.5) / cfg.steps;
        double t1 = static_cast<double>(k + 1) / cfg.steps;
        DriftEval e1 = eval_drift(pred, sched, z, t0, ids, probes, exact);
        DriftEval e2 = eval_drift(pred, sched, z + e1.drift * (h / 2), tm, ids, probes, exact);
        DriftEval e3 = eval_drift(pred, sched, z + e2.drift * (h / 2), tm, ids, probes, exact);
        DriftEval e4 = eval_drift(pred, sched, z + e3.drift * h, t1, ids, probes, exact);
        z = z + (e1.drift + e2.drift * 2.0 + e3.drift * 2.0 + e4.drift) * (h / 6);
        bool ok = z.all_finite();
        for (int i = 0; i < n; ++i) {
            div[i] += h / 6 * (e1.div[i] + 2 * e2.div[i] + 2 * e3.div[i] + e4.div[i]);
            ok = ok && std::isfinite(div[i]);
        }
        if (!ok)
            throw NumericalError("flow: state diverged at step " + std::to_string(k + 1) + "/" +
                                 std::to_string(cfg.steps));
    }

    FlowResult out;
    out.z_end = std::move(z);
    out.log_p_end = prior_logpdf(out.z_end, sched);
    out.div_integral = std::move(div);
    out.log_p0.resize(n);
    for (int i = 0; i < n; ++i) out.log_p0[i] = out.log_p_end[i] + out.div_integral[i];
    return out;
}

inline std::vector<double> exact_log_likelihood(const NoisePredictor& pred,
                                                const NoiseSchedule& sched, const Matrix& z0,
                                                const FlowConfig& cfg = {}) {
    return integrate_flow(pred, sched, z0, cfg).log_p0;
}

}  // namespace vdmood
