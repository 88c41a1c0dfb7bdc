#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rubslam/inference.hpp"

namespace rubslam {

/// The four exact right-hand-side update methods. The orthogonal-transform
/// pair replays stored rotations; the downdate-update pair works through
/// triangular transpose solves. All four produce the same vector.
enum class RhsMethod { OTM, OTM_OO, DU, DU_OO };

std::string to_string(RhsMethod m);
RhsMethod rhs_method_from_string(const std::string& s);

/// Everything the planner hands to inference for one step: the predicted
/// belief for the chosen action plus the factorization artifacts that make
/// the reuse methods cheap. Immutable once built.
struct PlanningSession {
    int k = 0;        ///< planning time; predicted belief is at (k+1 | k)
    Odometry action;  ///< the action the prediction is conditioned on

    Belief predicted;                       ///< b[X_{k+1|k}]
    std::vector<Factor> predicted_factors;  ///< motion first, then observations
    DaSet da_pred;                          ///< predicted associations at k+1

    UpperTriangular r_prev;  ///< previous-step factor
    DenseVec d_prev;
    GivensSeq q_motion;      ///< rotations absorbing the motion rows
    UpperTriangular r_motion;
    DenseVec d_motion;       ///< motion-propagated rhs
    GivensSeq q_obs;         ///< rotations absorbing the observation rows
    GivensSeq q_full;        ///< both stages composed
    UpperTriangular r_pred;  ///< predicted factor at k+1
    DenseVec d_pred;
    SparseRowMatrix a_new;   ///< stacked motion + observation rows
    SparseRowMatrix h_obs;   ///< observation rows only
    DenseVec b_motion;       ///< predicted motion rhs values
    DenseVec b_obs;          ///< predicted observation rhs values
    int n_prev = 0;
    int n_pred = 0;

    /// Row offset of a landmark's block inside the observation stack.
    int obs_row_offset(int lm) const;
};

/// Builds the session for one candidate action: appends the motion factor,
/// factorizes in two stages (motion, then predicted observations) and stores
/// the rotations. `predicted_obs` must be sorted by landmark index.
PlanningSession make_session(const Belief& belief, const Odometry& action,
                             std::vector<Factor> predicted_obs,
                             const std::array<double, 3>& motion_sigmas);

/// d = Q^T [d_prev; b_new] with the stored full rotation sequence. b_new is
/// the new whitened rhs stacked in planning factor order (motion, then
/// observations). Returns the first n_pred entries.
DenseVec otm_update(const PlanningSession& s, const DenseVec& b_new);

/// Observations-only variant: starts from the motion-propagated d and only
/// rotates the observation rows.
DenseVec otm_oo_update(const PlanningSession& s, const DenseVec& b_new_obs);

/// Information downdate/update: d = R^{-T} ([R_prev^T d_prev; 0] + A^T b_new),
/// realized as a triangular transpose solve.
DenseVec du_update(const PlanningSession& s, const DenseVec& b_new);

/// d = d_pred + R^{-T} H^T (b_new_obs - b_obs).
DenseVec du_oo_update(const PlanningSession& s, const DenseVec& b_new_obs);

struct DaUpdateResult {
    std::vector<Factor> graph;  ///< corrected factor set (consistent factors
                                ///< keep their planning-time values)
    BayesTree tree;
    Values lin;
    DaReport report;
    std::vector<VarKey> new_vars;
    int n_reeliminations = 0;
    int n_added_rows = 0;
    bool changed = false;
};

/// Incremental association repair: removes predicted factors that did not
/// materialize, adds unpredicted ones, and re-eliminates only the involved
/// subtree. Consistent-DA factors keep their predicted measurement values;
/// the rhs correction happens afterwards in the reuse step.
DaUpdateResult da_update_graph(const std::vector<Factor>& graph, const BayesTree& tree,
                               const Values& lin, const DaSet& m_plan,
                               const std::vector<Factor>& actual_factors, const DaSet& m_inf);

DaUpdateResult da_update(const PlanningSession& s, const std::vector<Factor>& actual_factors,
                         const DaSet& m_inf);

struct RubTimings {
    std::int64_t da_ns = 0;
    std::int64_t rhs_ns = 0;
};

struct RubCounters {
    int factors_reused = 0;
    int factors_added = 0;
    int factors_removed = 0;
    int n_reeliminations = 0;
};

/// One full reuse-based inference step: association repair followed by the
/// rhs update. On a consistent step the chosen method runs as stored; after
/// an association repair the factorization from planning no longer matches,
/// so the surviving consistent rows are corrected with the observations-only
/// delta (exact for any factor), whichever method was requested.
Belief rub_inference_step(const PlanningSession& s, const std::vector<Factor>& actual_factors,
                          const DaSet& m_inf, RhsMethod method, RubTimings* timings = nullptr,
                          RubCounters* counters = nullptr);

}  // namespace rubslam
