#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vdmood/data.hpp"
#include "vdmood/errors.hpp"
#include "vdmood/flow.hpp"
#include "vdmood/matrix.hpp"
#include "vdmood/predictor.hpp"
#include "vdmood/rng.hpp"
#include "vdmood/schedule.hpp"

namespace vdmood {

// Every scorer reports "higher = more OOD": likelihoods are negated, TKDL's
// max-softmax confidence is flipped to 1 - confidence.

inline ScoreVector score_el(const NoisePredictor& pred, const NoiseSchedule& sched,
                            const Matrix& z, const FlowConfig& cfg = {}) {
    FlowResult r = integrate_flow(pred, sched, z, cfg);
    ScoreVector out;
    out.method = "el";
    out.scores.reserve(r.log_p0.size());
    for (double v : r.log_p0) out.scores.push_back(-v);
    return out;
}

inline ScoreVector score_pl(const NoisePredictor& pred, const NoiseSchedule& sched,
                            const Matrix& z, const FlowConfig& cfg = {}) {
    FlowResult r = integrate_flow(pred, sched, z, cfg);
    ScoreVector out;
    out.method = "pl";
    out.scores.reserve(r.log_p_end.size());
    for (double v : r.log_p_end) out.scores.push_back(-v);
    return out;
}

// ---- top-k diffusion loss ----

struct TkdlConfig {
    int k = 5;
    int repeats = 20;
    uint64_t seed = 0;
};

// Classes ordered by descending logit; equal logits keep ascending class index.
inline std::vector<int> top_k_classes(const double* logits, int num_classes, int k) {
    if (k < 1) throw UsageError("tkdl: k must be positive");
    if (k > num_classes)
        throw UsageError("tkdl: k = " + std::to_string(k) + " exceeds the " +
                         std::to_string(num_classes) + " available classes");
    std::vector<int> idx(num_classes);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return logits[a] > logits[b]; });
    idx.resize(k);
    return idx;
}

// max softmax(-losses), evaluated against the smallest loss so that equal
// losses give exactly 1/k.
inline double tkdl_raw_from_losses(const std::vector<double>& losses) {
    if (losses.empty()) throw UsageError("tkdl: empty loss vector");
    double m = *std::min_element(losses.begin(), losses.end());
    double denom = 0.0;
    for (double l : losses) denom += std::exp(m - l);
    return 1.0 / denom;
}

struct TkdlLosses {
    std::vector<std::vector<int>> picks;  // per sample, its top-k class ids
    Matrix losses;                        // n x k, slot-aligned with picks
};

// Fixed-time diffusion loss at t=1 under each of the sample's top-k classes,
// averaged over `repeats` noise draws. The draws are shared across the k
// classes (paired design) and keyed by the sample's feature bytes, so the
// class ranking never hinges on luck and duplicate rows score identically.
inline TkdlLosses tkdl_losses(const NoisePredictor& pred, const NoiseSchedule& sched,
                              const Matrix& z, const Matrix& logits, const TkdlConfig& cfg) {
    int n = z.rows, d = z.cols;
    if (logits.rows != n) throw DataError("tkdl: logits rows do not match the data");
    if (!logits.all_finite()) throw DataError("tkdl: non-finite logits");
    if (!z.all_finite()) throw DataError("tkdl: non-finite features");
    if (cfg.repeats < 1) throw UsageError("tkdl: repeats must be positive");

    TkdlLosses out;
    out.picks.resize(n);
    for (int i = 0; i < n; ++i) out.picks[i] = top_k_classes(logits.row(i), logits.cols, cfg.k);
    out.losses = Matrix(n, cfg.k);

    SchedulePoint p1 = sched.eval(1.0);
    Matrix z1(n, d), eps(n, d);
    std::vector<int> ids(n);
    for (int r = 0; r < cfg.repeats; ++r) {
        for (int i = 0; i < n; ++i) {
            Rng rng = Rng::for_sample(cfg.seed, std::span<const double>(z.row(i), d), 0x2000 + r);
            for (int j = 0; j < d; ++j) {
                eps.at(i, j) = rng.normal();
                z1.at(i, j) = p1.alpha * z.at(i, j) + p1.sigma * eps.at(i, j);
            }
        }
        for (int slot = 0; slot < cfg.k; ++slot) {
            for (int i = 0; i < n; ++i) ids[i] = out.picks[i][slot];
            Matrix eps_hat = pred.predict(z1, 1.0, ids);
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int j = 0; j < d; ++j) {
                    double diff = eps.at(i, j) - eps_hat.at(i, j);
                    acc += diff * diff;
                }
                out.losses.at(i, slot) += acc / cfg.repeats;
            }
        }
    }
    return out;
}

inline ScoreVector score_tkdl(const NoisePredictor& pred, const NoiseSchedule& sched,
                              const Matrix& z, const Matrix& logits, const TkdlConfig& cfg = {}) {
    TkdlLosses tl = tkdl_losses(pred, sched, z, logits, cfg);
    ScoreVector out;
    out.method = "tkdl";
    out.scores.resize(z.rows);
    std::vector<double> row(cfg.k);
    for (int i = 0; i < z.rows; ++i) {
        for (int slot = 0; slot < cfg.k; ++slot) row[slot] = tl.losses.at(i, slot);
        out.scores[i] = 1.0 - tkdl_raw_from_losses(row);
    }
    return out;
}

// The class a sample's TKDL bets on: its smallest top-k loss, mapped back to
// the class id. Used to compare against ground-truth labels.
inline std::vector<int> tkdl_argmax_classes(const NoisePredictor& pred,
                                            const NoiseSchedule& sched, const Matrix& z,
                                            const Matrix& logits, const TkdlConfig& cfg = {}) {
    TkdlLosses tl = tkdl_losses(pred, sched, z, logits, cfg);
    std::vector<int> out(z.rows);
    for (int i = 0; i < z.rows; ++i) {
        int best = 0;
        for (int slot = 1; slot < cfg.k; ++slot)
            if (tl.losses.at(i, slot) < tl.losses.at(i, best)) best = slot;
        out[i] = tl.picks[i][best];
    }
    return out;
}

}  // namespace vdmood
