#pragma once

#include <optional>
#include <vector>

#include "rubslam/bayes_tree.hpp"
#include "rubslam/factor_graph.hpp"

namespace rubslam {

/// Gaussian posterior in square-root information form: linearization point,
/// factor graph and its Bayes tree, plus the per-step association record.
/// The timestamp pair reads "state at time t given data up to time k".
struct Belief {
    int t = 0;
    int k = 0;
    Values lin;
    std::vector<Factor> graph;
    BayesTree tree;
    std::vector<DaSet> da;  // indexed by step

    const DaSet& da_at(int step) const;
};

struct UpdateCounters {
    int n_reeliminations = 0;     ///< variables re-eliminated this update
    int n_added_factor_rows = 0;  ///< rows appended to the system
};

/// Belief anchored by a single pose prior.
Belief make_prior_belief(const Factor& prior, const PoseSE2& init);

/// Gauss-Newton step of the current system: linearization point plus the
/// solved increment.
Values map_estimate(const Belief& b);

/// Values for variables of `new_factors` missing from `lin`: the new pose is
/// the motion-composed estimate, new landmarks invert their range-bearing
/// measurement from it. Appends in factor order at the ordering tail.
void initialize_new_variables(Values& lin, const std::vector<Factor>& new_factors,
                              const Values& estimate);

/// Full re-assembly and re-factorization with the new factors appended.
Belief batch_update(const Belief& b, const std::vector<Factor>& new_factors,
                    UpdateCounters* counters = nullptr);

/// Incremental update: detaches the subtree involved in the new factors,
/// re-eliminates it together with them, and reattaches. Produces the same
/// (R, d) as batch_update.
Belief incremental_update(const Belief& b, const std::vector<Factor>& new_factors,
                          UpdateCounters* counters = nullptr);

/// Whitened residual norm of the whole graph at the given values.
double graph_residual_norm(const std::vector<Factor>& graph, const Values& values);

struct GaussNewtonReport {
    int iterations = 0;
    std::vector<double> residuals;  ///< norm before each accepted iterate
};

/// Iterates solve + relinearize until the step norm drops below tol. Throws
/// Diverged when the residual grows three iterations in a row.
Belief gauss_newton(const Belief& b, int max_iter = 10, double tol = 1e-6,
                    GaussNewtonReport* report = nullptr);

/// Marginal covariance block of one variable, via sparse solves against unit
/// vectors (never forming the dense inverse).
DenseMat marginal_cov_block(const Belief& b, VarKey key);

double marginal_cov_trace(const Belief& b, VarKey key);

}  // namespace rubslam
