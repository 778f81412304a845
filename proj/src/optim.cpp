#include "rlhf_lab/optim.hpp"

#include <algorithm>
#include <cmath>

namespace rlhf_lab {

namespace {

double regularized_loss(const LossFn& loss, std::span<const double> p, double l2) {
    double value = loss(p);
    if (l2 > 0.0) {
        double sq = 0.0;
        for (const double v : p) sq += v * v;
        value += 0.5 * l2 * sq;
    }
    return value;
}

double sup_norm(std::span<const double> v) {
    double hi = 0.0;
    for (const double x : v) hi = std::max(hi, std::abs(x));
    return hi;
}

}  // namespace

OptimResult minimize(std::vector<double> init, const LossFn& loss, const GradFn& grad,
                     const OptimOpts& opts) {
    opts.validate();

    std::vector<double> params = std::move(init);
    std::vector<double> trace;
    const auto record = [&trace](double v) {
        trace.push_back(v);
        if (trace.size() > 16) trace.erase(trace.begin());
    };

    double current = regularized_loss(loss, params, opts.l2_reg);
    if (!std::isfinite(current)) {
        throw OptimizationError("loss non-finite at initial point", {current});
    }
    record(current);

    OptimResult result;
    std::vector<double> g;
    std::vector<double> trial(params.size());

    // Step memory: each iteration backtracks from twice the last accepted
    // step, so the schedule adapts to the local curvature instead of
    // re-halving from scratch.
    double step = opts.step_size;
    const double step_cap = opts.step_size * 1048576.0;

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        g = grad(params);
        if (opts.l2_reg > 0.0) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += opts.l2_reg * params[i];
        }
        const double gnorm = sup_norm(g);
        result.iterations = iter;
        result.grad_sup_norm = gnorm;
        if (gnorm <= opts.tolerance) {
            result.converged = true;
            break;
        }

        double g2 = 0.0;
        for (const double v : g) g2 += v * v;

        bool accepted = false;
        for (int half = 0; half < 80; ++half) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                trial[i] = params[i] - step * g[i];
            }
            const double candidate = regularized_loss(loss, trial, opts.l2_reg);
            // Strict decrease: once improvements underflow, stop instead of
            // spinning on zero-progress steps.
            if (std::isfinite(candidate) && candidate < current &&
                candidate <= current - 1e-4 * step * g2) {
                params.swap(trial);
                current = candidate;
                record(current);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // No descent direction at machine scale; report where we stopped.
            break;
        }
        step = std::min(step * 2.0, step_cap);
        if (!std::isfinite(current)) {
            throw OptimizationError("loss diverged to non-finite value", trace);
        }
    }

    if (!result.converged) {
        g = grad(params);
        if (opts.l2_reg > 0.0) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += opts.l2_reg * params[i];
        }
        result.grad_sup_norm = sup_norm(g);
        result.converged = result.grad_sup_norm <= opts.tolerance;
    }
    result.params = std::move(params);
    result.final_loss = current;
    return result;
}

}  // namespace rlhf_lab
