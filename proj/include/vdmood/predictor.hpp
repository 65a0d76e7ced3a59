#pragma once

#include <span>

#include "vdmood/matrix.hpp"
#include "vdmood/tape.hpp"

namespace vdmood {

// Anything that can place an epsilon prediction on a tape as a differentiable
// function of the latent state. The flow integrator and the diagnostics only
// see this interface, so analytic stand-ins can ride the same pipeline as a
// trained network.
//
// class_ids: one entry per row of z, -1 for the null (unconditional) class;
// an empty span means every row is unconditional.
struct NoisePredictor {
    virtual ~NoisePredictor() = default;

    virtual int dim() const = 0;

    virtual Tape::Id build_eps(Tape& tape, Tape::Id z, double t,
                               std::span<const int> class_ids) const = 0;

    // Value-only convenience; builds a throwaway tape.
    Matrix predict(const Matrix& z, double t, std::span<const int> class_ids = {}) const {
        Tape tape;
        Tape::Id zi = tape.constant(z);
        return tape.value(build_eps(tape, zi, t, class_ids));
    }
};

}  // namespace vdmood
