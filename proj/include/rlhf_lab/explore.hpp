#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <vector>

#include "rlhf_lab/dpo.hpp"
#include "rlhf_lab/env.hpp"
#include "rlhf_lab/optim.hpp"
#include "rlhf_lab/policy.hpp"

namespace rlhf_lab {

// Ridge-seeded running sum of expected feature-difference outer products.
// Symmetric positive definite with min eigenvalue >= ridge by construction.
struct CovarianceAccumulator {
    Eigen::MatrixXd matrix;
    double ridge = 1.0;
    int history_count = 0;

    static CovarianceAccumulator initial(std::size_t dim, double ridge);
};

struct LinearExploreConfig {
    double beta = 1.0;
    double ridge_lambda = 1.0;
    double eta = 0.1;
    int iterations = 6;   // T
    int batch_size = 64;  // m labeled pairs per iteration
    std::vector<double> candidate_temps = {0.25, 0.5, 0.7, 1.5, 2.0, 4.0};
    int candidate_n = 8;  // width of the best/worst-of-n candidates
    // Gibbs-tilt strengths along the least-covered feature direction; each
    // scale contributes a +/- pair of candidates. Without these the grid
    // degenerates when the main agent is uniform (iteration 1).
    std::vector<double> tilt_scales = {0.5, 1.0, 2.0};

    void validate() const {
        if (!(beta > 0.0)) throw ArgumentError("explore: beta must be > 0");
        if (!(ridge_lambda > 0.0)) throw ArgumentError("explore: ridge_lambda must be > 0");
        if (!(eta > 0.0)) throw ArgumentError("explore: eta must be > 0");
        if (iterations < 1) throw ArgumentError("explore: iterations must be >= 1");
        if (batch_size < 1) throw ArgumentError("explore: batch_size must be >= 1");
        if (candidate_n < 2) throw ArgumentError("explore: candidate_n must be >= 2");
        for (const double s : tilt_scales) {
            if (!(s > 0.0)) throw ArgumentError("explore: tilt scales must be > 0");
        }
    }
};

// Exact E_{x~d0, a~pi} phi(x, a); linear mode only.
Eigen::VectorXd expected_feature(const Environment& env, const Policy& policy);

// Adds the exact expected outer product of feature differences under
// (d0, pi1, pi2). Returns the updated accumulator by value.
CovarianceAccumulator covariance_update(CovarianceAccumulator acc, const Policy& pi1,
                                        const Policy& pi2, const Environment& env);

// Gamma = beta * sqrt(delta^T Sigma^{-1} delta) with
// delta = E_{pi1} phi - E_{pi2} phi. Zero exactly when the expected
// features coincide.
double information_gain(const CovarianceAccumulator& acc, const Policy& pi1, const Policy& pi2,
                        const Environment& env, double beta);

// Temperature-grid and best/worst-of-n variants of the main agent (scored
// by its implicit reward eta * log(pi/ref)), plus Gibbs tilts along the
// minimal-eigenvalue eigenvector of the accumulated covariance, i.e. the
// feature direction with the most remaining uncertainty.
std::vector<Policy> make_enhancer_candidates(const Environment& env, const Policy& main_agent,
                                             const Policy& ref, const CovarianceAccumulator& acc,
                                             const LinearExploreConfig& cfg);

struct EnhancerSelection {
    Policy policy;
    double gamma = 0.0;
    bool exhausted = false;  // no candidate satisfied the KL budget
};

// Among candidates with eta * E_{d0} KL(pi' || main) <= Gamma(main, pi'),
// picks the one maximizing Gamma. Falls back to the main agent itself
// (Gamma = 0, budget trivially met) when the set is empty.
EnhancerSelection select_enhancer(const Environment& env, const Policy& main_agent,
                                  std::span<const Policy> candidates,
                                  const CovarianceAccumulator& acc,
                                  const LinearExploreConfig& cfg);

struct ExploreTraceRow {
    int iteration = 0;
    double gamma_selected = 0.0;
    double subopt_gap = 0.0;
    double min_eig = 0.0;
    double max_eig = 0.0;
    std::size_t dataset_size = 0;
    bool exhausted = false;
};

struct ExploreTrace {
    std::vector<ExploreTraceRow> rows;
    std::vector<Policy> main_checkpoints;
    int skipped_pairs = 0;  // identical draws, no preference to record

    // Columns: iteration, gamma_selected, subopt_gap, min_eig, max_eig.
    void write_csv(std::ostream& os) const;
};

// Algorithm-1 loop in the linear case: exploit with a DPO fit of the
// history, explore with the information-gain enhancer under the KL budget,
// collect oracle-labeled pairs from (main, enhancer), update the
// covariance.
ExploreTrace run_theoretical_loop(const Environment& env, const LinearExploreConfig& cfg,
                                  const Policy& ref, const OptimOpts& dpo_opts,
                                  std::uint64_t master_seed);

}  // namespace rlhf_lab
