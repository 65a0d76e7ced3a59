#pragma once

#include <cmath>
#include <stdexcept>

#include "vdmood/errors.hpp"
#include "vdmood/matrix.hpp"
#include "vdmood/tape.hpp"

namespace vdmood {

// The forward process is variance preserving: sigma_t^2 = sigmoid(gamma(t)),
// alpha_t^2 = 1 - sigma_t^2, with gamma strictly increasing in t. Conventional
// endpoints keep z_0 essentially clean and z_1 essentially pure noise.
constexpr double kDefaultGammaMin = -13.3;
constexpr double kDefaultGammaMax = 5.0;

enum class ScheduleKind { kLinear, kLearnedMonotone };

struct SchedulePoint {
    double t = 0.0;
    double gamma = 0.0;
    double alpha = 0.0;
    double sigma = 0.0;
    double gamma_prime = 0.0;  // d gamma / d t
    double g = 0.0;            // diffusion coefficient, g^2 = gamma' * sigma^2
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Tape node ids of the learnable schedule parameters inside a training graph.
struct ScheduleTapeParams {
    Tape::Id rho_w = -1;
    Tape::Id bias = -1;
    Tape::Id rho_u = -1;
};

class NoiseSchedule {
  public:
    static NoiseSchedule linear(double gamma_min = kDefaultGammaMin,
                                double gamma_max = kDefaultGammaMax) {
        NoiseSchedule s;
        s.kind_ = ScheduleKind::kLinear;
        s.set_endpoints(gamma_min, gamma_max);
        return s;
    }

    // Monotone 1 -> hidden -> 1 net: positive (softplus-reparameterized)
    // weights and an increasing activation make the raw output strictly
    // increasing; an affine rescale pins gamma(0) and gamma(1) exactly.
    static NoiseSchedule learned_monotone(double gamma_min = kDefaultGammaMin,
                                          double gamma_max = kDefaultGammaMax, int hidden = 64) {
        if (hidden < 1) throw std::invalid_argument("schedule: hidden must be positive");
        NoiseSchedule s;
        s.kind_ = ScheduleKind::kLearnedMonotone;
        s.set_endpoints(gamma_min, gamma_max);
        s.rho_w_ = Matrix(1, hidden);
        s.bias_ = Matrix(1, hidden);
        s.rho_u_ = Matrix(hidden, 1);
        for (int i = 0; i < hidden; ++i) {
            double frac = hidden > 1 ? static_cast<double>(i) / (hidden - 1) : 0.5;
            double slope = 1.0 + 9.0 * frac;  // pre-activation slopes spread over [1, 10]
            s.rho_w_.at(0, i) = softplus_inverse(slope);
            s.bias_.at(0, i) = -slope * frac;  // sigmoid centers spread over [0, 1]
            s.rho_u_.at(i, 0) = 0.0;
        }
        return s;
    }

    ScheduleKind kind() const { return kind_; }
    double gamma_min() const { return gamma_min_; }
    double gamma_max() const { return gamma_max_; }
    int hidden() const { return rho_w_.cols; }

    Matrix& rho_w() { return rho_w_; }
    Matrix& bias() { return bias_; }
    Matrix& rho_u() { return rho_u_; }
    const Matrix& rho_w() const { return rho_w_; }
    const Matrix& bias() const { return bias_; }
    const Matrix& rho_u() const { return rho_u_; }

    // Pure: no internal state is touched, safe to call concurrently.
    SchedulePoint eval(double t) const {
        if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("schedule: t outside [0, 1]");
        double gamma, gamma_prime;
        if (kind_ == ScheduleKind::kLinear) {
            gamma = gamma_min_ + (gamma_max_ - gamma_min_) * t;
            gamma_prime = gamma_max_ - gamma_min_;
        } else {
            // gamma' by reverse-mode differentiation of the rescaled raw net.
            double raw0 = raw_value(0.0);
            double raw1 = raw_value(1.0);
            double rescale = (gamma_max_ - gamma_min_) / (raw1 - raw0);
            Tape tape;
            Matrix tm(1, 1);
            tm.at(0, 0) = t;
            Tape::Id tn = tape.variable(std::move(tm));
            Tape::Id raw = build_raw_const_params(tape, tn);
            tape.backward(raw);
            gamma = gamma_min_ + rescale * (tape.value(raw).at(0, 0) - raw0);
            gamma_prime = rescale * tape.gradient(tn).at(0, 0);
        }
        if (!std::isfinite(gamma)) throw NumericalError("schedule: non-finite gamma");
        SchedulePoint p;
        p.t = t;
        p.gamma = gamma;
        p.gamma_prime = gamma_prime;
        double sig2 = sigmoid(gamma);
        p.sigma = std::sqrt(sig2);
        p.alpha = std::sqrt(1.0 - sig2);
        p.g = std::sqrt(gamma_prime) * p.sigma;
        return p;
    }

    double snr(double t) const { return std::exp(-eval(t).gamma); }

    // gamma over a tape-resident column of t values, with the schedule
    // parameters as differentiable nodes; used when training the schedule.
    Tape::Id build_gamma(Tape& tape, Tape::Id t_col, const ScheduleTapeParams& p) const {
        if (kind_ != ScheduleKind::kLearnedMonotone)
            throw std::invalid_argument("build_gamma: schedule is not learnable");
        Tape::Id w = tape.softplus(p.rho_w);
        Tape::Id u = tape.softplus(p.rho_u);
        auto raw_of = [&](Tape::Id t_node) {
            Tape::Id pre = tape.add_rowvec(tape.matmul(t_node, w), p.bias);
            return tape.matmul(tape.sigmoid(pre), u);
        };
        Tape::Id raw_t = raw_of(t_col);
        Tape::Id raw0 = raw_of(tape.constant(Matrix::zeros(1, 1)));
        Tape::Id raw1 = raw_of(tape.constant(Matrix::full(1, 1, 1.0)));
        Tape::Id num = tape.add_rowvec(raw_t, tape.scale(raw0, -1.0));
        Tape::Id frac = tape.scale_by(num, tape.recip(tape.sub(raw1, raw0)));
        return tape.add_scalar(tape.scale(frac, gamma_max_ - gamma_min_), gamma_min_);
    }

  private:
    ScheduleKind kind_ = ScheduleKind::kLinear;
    double gamma_min_ = kDefaultGammaMin;
    double gamma_max_ = kDefaultGammaMax;
    Matrix rho_w_, bias_, rho_u_;

    void set_endpoints(double lo, double hi) {
        if (!(hi > lo)) throw std::invalid_argument("schedule: gamma_max must exceed gamma_min");
        gamma_min_ = lo;
        gamma_max_ = hi;
    }

    static double softplus_inverse(double y) { return std::log(std::expm1(y)); }

    double raw_value(double t) const {
        double out = 0.0;
        for (int i = 0; i < rho_w_.cols; ++i) {
            double w = softplus(rho_w_.at(0, i));
            double u = softplus(rho_u_.at(i, 0));
            out += u * sigmoid(w * t + bias_.at(0, i));
        }
        return out;
    }

    Tape::Id build_raw_const_params(Tape& tape, Tape::Id t_node) const {
        Tape::Id w = tape.constant(softplus_rows(rho_w_));
        Tape::Id u = tape.constant(softplus_rows(rho_u_));
        Tape::Id pre = tape.add_rowvec(tape.matmul(t_node, w), tape.constant(bias_));
        return tape.matmul(tape.sigmoid(pre), u);
    }

    static Matrix softplus_rows(const Matrix& m) {
        Matrix r = m;
        for (double& v : r.data) v = softplus(v);
        return r;
    }
};

}  // namespace vdmood
