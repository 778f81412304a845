#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rlhf_lab/errors.hpp"

namespace rlhf_lab {

struct OptimOpts {
    double step_size = 1.0;  // initial step; backtracking halves from here
    int max_iters = 5000;
    double tolerance = 1e-7;  // sup-norm of the regularized gradient
    double l2_reg = 1e-6;
    std::uint64_t seed = 0;  // reserved for stochastic variants; unused by full-batch GD

    void validate() const {
        if (!(step_size > 0.0)) throw ArgumentError("optim: step_size must be > 0");
        if (max_iters < 1) throw ArgumentError("optim: max_iters must be >= 1");
        if (!(tolerance > 0.0)) throw ArgumentError("optim: tolerance must be > 0");
        if (l2_reg < 0.0) throw ArgumentError("optim: l2_reg must be >= 0");
    }
};

struct OptimResult {
    std::vector<double> params;
    bool converged = false;
    int iterations = 0;
    double final_loss = 0.0;
    double grad_sup_norm = 0.0;
};

using LossFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

// Full-batch gradient descent with Armijo backtracking. The engine adds
// 0.5 * l2_reg * ||p||^2 to the objective and l2_reg * p to the gradient.
// Deterministic: no randomness, fixed evaluation order. Throws
// OptimizationError if the loss turns non-finite.
OptimResult minimize(std::vector<double> init, const LossFn& loss, const GradFn& grad,
                     const OptimOpts& opts);

}  // namespace rlhf_lab
