#pragma once

#include <optional>
#include <vector>

#include "rubslam/rub.hpp"

namespace rubslam {

using CandidateAction = Odometry;

/// Sensor and noise models shared by planning and inference.
struct ModelParams {
    std::array<double, 3> prior_sigmas{0.1, 0.1, 0.05};
    std::array<double, 3> motion_sigmas{0.05, 0.05, 0.02};
    std::array<double, 2> obs_sigmas{0.1, 0.02};
    double sensing_range = 4.0;
    std::optional<double> fov_rad;  ///< optional field-of-view gate
};

struct PlannerParams {
    std::vector<CandidateAction> candidates;
    int horizon = 5;       ///< lookahead steps (L >= 1)
    double w_dist = 1.0;   ///< weight of the distance-to-goal term
    double w_unc = 1.0;    ///< weight of the pose-uncertainty term
};

struct Prediction {
    std::vector<Factor> factors;  ///< zero-innovation measurements, sorted by landmark
    DaSet da;
};

/// Maximum-likelihood measurement prediction: every mapped landmark whose
/// estimate falls inside the sensing gate of the propagated pose estimate
/// yields a factor whose measured value is exactly the model prediction.
Prediction predict_measurements(const Belief& belief, const PoseSE2& propagated_pose,
                                const ModelParams& models);

/// One lookahead step: appends the motion factor and the predicted
/// observations, factorizing in two stages, and returns the reuse payload.
PlanningSession propagate(const Belief& belief, const CandidateAction& action,
                          const ModelParams& models);

/// Accumulated cost of a lookahead chain: weighted distance to goal plus the
/// trace of the pose marginal covariance at every step.
double objective(const std::vector<PlanningSession>& chain, const Point2& goal,
                 const PlannerParams& params);

struct SelectedAction {
    CandidateAction action;
    PlanningSession session;  ///< the session of the first step of the best chain
    double cost = 0.0;
};

/// Exhaustive evaluation of the candidate tree to the configured horizon
/// under maximum-likelihood chaining. Ties break in candidate order.
SelectedAction select_action(const Belief& belief, const Point2& goal,
                             const PlannerParams& params, const ModelParams& models);

}  // namespace rubslam
