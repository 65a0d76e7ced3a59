#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vdmood/data.hpp"
#include "vdmood/denoiser.hpp"
#include "vdmood/errors.hpp"
#include "vdmood/matrix.hpp"
#include "vdmood/predictor.hpp"
#include "vdmood/rng.hpp"
#include "vdmood/schedule.hpp"

namespace vdmood {

// ---- forward process and objective pieces ----

struct ForwardDiffusion {
    Matrix z_t;
    Matrix eps;
};

// z_t = alpha_t z + sigma_t eps, one shared t for the whole batch.
inline ForwardDiffusion forward_diffuse(const Matrix& z, const NoiseSchedule& s, double t,
                                        Rng& rng) {
    SchedulePoint p = s.eval(t);
    ForwardDiffusion out;
    out.eps = Matrix(z.rows, z.cols);
    for (double& v : out.eps.data) v = rng.normal();
    out.z_t = z * p.alpha + out.eps * p.sigma;
    return out;
}

// Monte Carlo estimate of (1/2) E ||eps - eps_hat||^2 with t ~ U(0, 1),
// one (t, eps) draw per row. Value-only; the training loop has its own
// batched differentiable path.
inline double diffusion_loss(const NoisePredictor& pred, const NoiseSchedule& s,
                             const Matrix& batch, std::span<const int> class_ids, Rng& rng) {
    double total = 0.0;
    Matrix row(1, batch.cols), eps(1, batch.cols);
    for (int i = 0; i < batch.rows; ++i) {
        double t = rng.uniform();
        SchedulePoint p = s.eval(t);
        for (int j = 0; j < batch.cols; ++j) {
            eps.at(0, j) = rng.normal();
            row.at(0, j) = p.alpha * batch.at(i, j) + p.sigma * eps.at(0, j);
        }
        std::span<const int> ids =
            class_ids.empty() ? std::span<const int>{} : class_ids.subspan(i, 1);
        Matrix eps_hat = pred.predict(row, t, ids);
        for (int j = 0; j < batch.cols; ++j) {
            double d = eps.at(0, j) - eps_hat.at(0, j);
            total += d * d;
        }
    }
    return 0.5 * total / batch.rows;
}

// KL of q(z_1 | z) = N(alpha_1 z, sigma_1^2 I) against the standard-normal
// prior, in closed form per sample.
inline double prior_kl_row(const double* z, int d, double alpha1_sq, double sigma1_sq) {
    double zz = 0.0;
    for (int j = 0; j < d; ++j) zz += z[j] * z[j];
    return 0.5 * (d * sigma1_sq + alpha1_sq * zz - d - d * std::log(sigma1_sq));
}

inline std::vector<double> prior_kl(const Matrix& z, const NoiseSchedule& s) {
    SchedulePoint p = s.eval(1.0);
    double a2 = p.alpha * p.alpha, s2 = p.sigma * p.sigma;
    std::vector<double> out(z.rows);
    for (int i = 0; i < z.rows; ++i) out[i] = prior_kl_row(z.row(i), z.cols, a2, s2);
    return out;
}

// ---- optimizer ----

// Adam with decoupled weight decay; the decay term never touches the moment
// estimates, so parameters with identically zero gradients stay exactly put.
class AdamW {
  public:
    AdamW(const std::vector<Matrix*>& params, double beta1 = 0.9, double beta2 = 0.999,
          double weight_decay = 0.01, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
        for (Matrix* p : params) {
            m_.emplace_back(p->rows, p->cols);
            v_.emplace_back(p->rows, p->cols);
        }
    }

    void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
              double lr) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t p = 0; p < params.size(); ++p) {
            Matrix& w = *params[p];
            const Matrix& g = *grads[p];
            for (size_t i = 0; i < w.size(); ++i) {
                double gi = g.data[i];
                m_[p].data[i] = beta1_ * m_[p].data[i] + (1.0 - beta1_) * gi;
                v_[p].data[i] = beta2_ * v_[p].data[i] + (1.0 - beta2_) * gi * gi;
                double mhat = m_[p].data[i] / bc1;
                double vhat = v_[p].data[i] / bc2;
                w.data[i] -= lr * weight_decay_ * w.data[i];
                w.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

  private:
    double beta1_, beta2_, weight_decay_, eps_;
    long t_ = 0;
    std::vector<Matrix> m_, v_;
};

// Multiplies the learning rate by `factor` after `patience` epochs without
// an improvement of the monitored objective. The rate only ever decreases.
class PlateauLr {
  public:
    PlateauLr(double lr, int patience, double factor)
        : lr_(lr), patience_(patience), factor_(factor) {}

    double observe(double objective) {
        if (objective < best_) {
            best_ = objective;
            wait_ = 0;
        } else if (++wait_ > patience_) {
            lr_ *= factor_;
            wait_ = 0;
        }
        return lr_;
    }

    double lr() const { return lr_; }

  private:
    double lr_;
    int patience_;
    double factor_;
    double best_ = std::numeric_limits<double>::infinity();
    int wait_ = 0;
};

// ---- training loop ----

struct TrainConfig {
    int epochs = 2000;
    int batch_size = 128;
    double lr = 2e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int plateau_patience = 100;
    double plateau_factor = 0.9;
    double cfg_drop_prob = 0.1;  // chance of replacing a label with "null"
    uint64_t seed = 0;
};

struct TrainEpoch {
    int epoch;
    double diffusion_loss;
    double prior_kl;
    double lr;
};

struct TrainResult {
    std::vector<TrainEpoch> history;
};

inline void write_loss_history(const std::string& path, const std::vector<TrainEpoch>& h) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "epoch,diffusion_loss,prior_kl,lr\n";
    for (const TrainEpoch& e : h)
        f << e.epoch << "," << format_double(e.diffusion_loss) << ","
          << format_double(e.prior_kl) << "," << format_double(e.lr) << "\n";
}

// Minimizes diffusion loss plus mean prior KL with AdamW. The schedule's
// parameters are trained alongside the network when it is learnable (the loss
// then backpropagates through gamma via z_t and the KL term). Deterministic:
// a fixed seed fixes the shuffles, the (t, eps) draws, the label dropout and
// therefore every parameter bit.
inline TrainResult train(DenoiserModel& model, NoiseSchedule& schedule,
                         const FeatureDataset& data, const TrainConfig& cfg) {
    if (data.n() == 0) throw DataError("train: empty dataset");
    if (data.dim() != model.config().input_dim)
        throw UsageError("train: data dimension does not match the model");
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw UsageError("train: bad epochs/batch size");
    if (cfg.cfg_drop_prob < 0.0 || cfg.cfg_drop_prob > 1.0)
        throw UsageError("train: cfg_drop_prob outside [0, 1]");
    bool conditional = data.labeled() && model.config().num_classes > 0;
    if (conditional && data.num_classes() > model.config().num_classes)
        throw DataError("train: label exceeds the model's class count");
    bool learned_schedule = schedule.kind() == ScheduleKind::kLearnedMonotone;

    std::vector<Matrix*> params = model.parameters();
    if (learned_schedule) {
        params.push_back(&schedule.rho_w());
        params.push_back(&schedule.bias());
        params.push_back(&schedule.rho_u());
    }
    AdamW opt(params, cfg.beta1, cfg.beta2, cfg.weight_decay);
    PlateauLr plateau(cfg.lr, cfg.plateau_patience, cfg.plateau_factor);

    Rng rng(cfg.seed, 0x545241494e);  // "TRAIN"
    int n = data.n(), d = data.dim();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    double lr = cfg.lr;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<int>(rng.below(i + 1))]);

        double epoch_loss = 0.0, epoch_kl = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int b = std::min(cfg.batch_size, n - start);
            Matrix z(b, d), eps(b, d), t_col(b, 1);
            std::vector<int> ids(b, -1);
            double batch_zz = 0.0;
            for (int r = 0; r < b; ++r) {
                int src = order[start + r];
                for (int j = 0; j < d; ++j) {
                    double zv = data.features.at(src, j);
                    z.at(r, j) = zv;
                    batch_zz += zv * zv;
                }
                t_col.at(r, 0) = rng.uniform();
                for (int j = 0; j < d; ++j) eps.at(r, j) = rng.normal();
                if (conditional) {
                    int label = data.labels[src];
                    ids[r] = rng.uniform() < cfg.cfg_drop_prob ? -1 : label;
                }
            }

            Tape tape;
            DenoiserTapeIds mids = model.register_params(tape, true);
            ScheduleTapeParams sids;
            Tape::Id zt_node, objective;
            double batch_kl;
            if (!learned_schedule) {
                Matrix zt(b, d);
                for (int r = 0; r < b; ++r) {
                    SchedulePoint p = schedule.eval(t_col.at(r, 0));
                    for (int j = 0; j < d; ++j)
                        zt.at(r, j) = p.alpha * z.at(r, j) + p.sigma * eps.at(r, j);
                }
                zt_node = tape.constant(std::move(zt));
            } else {
                sids.rho_w = tape.variable(schedule.rho_w());
                sids.bias = tape.variable(schedule.bias());
                sids.rho_u = tape.variable(schedule.rho_u());
                Tape::Id gamma = schedule.build_gamma(tape, tape.constant(t_col), sids);
                Tape::Id sig2 = tape.sigmoid(gamma);
                Tape::Id sigma = tape.sqrt(sig2);
                Tape::Id alpha = tape.sqrt(tape.add_scalar(tape.scale(sig2, -1.0), 1.0));
                zt_node = tape.add(tape.mul_colvec(tape.constant(z), alpha),
                                   tape.mul_colvec(tape.constant(eps), sigma));
            }
            Tape::Id eps_hat = model.build(tape, zt_node, t_col, ids, mids);
            Tape::Id diff = tape.sub(tape.constant(eps), eps_hat);
            Tape::Id loss = tape.scale(tape.sum(tape.mul(diff, diff)), 0.5 / b);

            if (!learned_schedule) {
                SchedulePoint p1 = schedule.eval(1.0);
                double a2 = p1.alpha * p1.alpha, s2 = p1.sigma * p1.sigma;
                batch_kl = 0.5 * (d * s2 + a2 * batch_zz / b - d - d * std::log(s2));
                objective = loss;  // KL is constant in the trained parameters here
            } else {
                Tape::Id g1 = schedule.build_gamma(tape, tape.constant(Matrix::full(1, 1, 1.0)),
                                                   sids);
                Tape::Id s2 = tape.sigmoid(g1);
                Tape::Id a2 = tape.add_scalar(tape.scale(s2, -1.0), 1.0);
                Tape::Id kl = tape.scale(
                    tape.add(tape.add(tape.add_scalar(tape.scale(s2, d), -d),
                                      tape.scale(a2, batch_zz / b)),
                             tape.scale(tape.softplus(tape.scale(g1, -1.0)), d)),
                    0.5);
                batch_kl = tape.value(kl).at(0, 0);
                objective = tape.add(loss, kl);
            }

            double loss_val = tape.value(loss).at(0, 0);
            if (!std::isfinite(loss_val) || !std::isfinite(batch_kl))
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(batches));
            tape.backward(objective);

            std::vector<const Matrix*> grads;
            std::vector<Tape::Id> pid;
            pid.push_back(mids.time_w);
            pid.push_back(mids.time_b);
            if (model.config().num_classes > 0) pid.push_back(mids.class_table);
            for (const auto& bl : mids.blocks) {
                pid.push_back(bl.w);
                pid.push_back(bl.b);
                pid.push_back(bl.cond);
                pid.push_back(bl.ln_gain);
                pid.push_back(bl.ln_bias);
            }
            pid.push_back(mids.out_w);
            pid.push_back(mids.out_b);
            if (learned_schedule) {
                pid.push_back(sids.rho_w);
                pid.push_back(sids.bias);
                pid.push_back(sids.rho_u);
            }
            for (Tape::Id id : pid) grads.push_back(&tape.gradient(id));
            opt.step(params, grads, lr);

            epoch_loss += loss_val;
            epoch_kl += batch_kl;
            ++batches;
        }

        epoch_loss /= batches;
        epoch_kl /= batches;
        result.history.push_back({epoch, epoch_loss, epoch_kl, lr});
        lr = plateau.observe(epoch_loss + epoch_kl);
    }
    return result;
}

}  // namespace vdmood
