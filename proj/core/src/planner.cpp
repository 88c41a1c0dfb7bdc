#include "rubslam/planner.hpp"

#include <cmath>

namespace rubslam {

Prediction predict_measurements(const Belief& belief, const PoseSE2& propagated_pose,
                                const ModelParams& models) {
    Prediction out;
    out.da.timestamp = belief.t + 1;
    const Values est = map_estimate(belief);
    for (const VarKey& key : belief.lin.ordering()) {
        if (key.kind != VarKind::Landmark) continue;
        const Point2 lm = est.point(key);
        auto [r, b] = range_bearing(propagated_pose, lm);
        if (r > models.sensing_range) continue;
        if (models.fov_rad && std::abs(b) > *models.fov_rad / 2.0) continue;
        out.factors.push_back(
            make_range_bearing(belief.t + 1, key.index, r, b, models.obs_sigmas));
        out.da.landmarks.push_back(key.index);
    }
    // Landmarks enter the ordering in first-seen order; predictions are kept
    // sorted by index.
    std::sort(out.factors.begin(), out.factors.end(),
              [](const Factor& a, const Factor& b) { return a.keys[1] < b.keys[1]; });
    std::sort(out.da.landmarks.begin(), out.da.landmarks.end());
    return out;
}

PlanningSession propagate(const Belief& belief, const CandidateAction& action,
                          const ModelParams& models) {
    const Values est = map_estimate(belief);
    const PoseSE2 next = motion_compose(est.pose(pose_key(belief.t)), action);
    Prediction pred = predict_measurements(belief, next, models);
    return make_session(belief, action, std::move(pred.factors), models.motion_sigmas);
}

double objective(const std::vector<PlanningSession>& chain, const Point2& goal,
                 const PlannerParams& params) {
    double cost = 0.0;
    for (const PlanningSession& s : chain) {
        const Belief& b = s.predicted;
        const Values est = map_estimate(b);
        const PoseSE2 p = est.pose(pose_key(b.t));
        cost += params.w_dist * std::hypot(p.x - goal.x, p.y - goal.y);
        if (params.w_unc != 0.0)
            cost += params.w_unc * marginal_cov_trace(b, pose_key(b.t));
    }
    return cost;
}

namespace {

// Depth-first enumeration of candidate sequences under ML chaining.
void search(const Belief& belief, const Point2& goal, const PlannerParams& params,
            const ModelParams& models, int depth, double cost_so_far,
            std::vector<PlanningSession>& chain, SelectedAction& best, bool& have_best) {
    for (std::size_t ci = 0; ci < params.candidates.size(); ++ci) {
        PlanningSession s = propagate(belief, params.candidates[ci], models);
        const Belief& b = s.predicted;
        const Values est = map_estimate(b);
        const PoseSE2 p = est.pose(pose_key(b.t));
        double cost = cost_so_far + params.w_dist * std::hypot(p.x - goal.x, p.y - goal.y);
        if (params.w_unc != 0.0)
            cost += params.w_unc * marginal_cov_trace(b, pose_key(b.t));
        if (depth + 1 < params.horizon) {
            chain.push_back(std::move(s));
            search(chain.back().predicted, goal, params, models, depth + 1, cost, chain,
                   best, have_best);
            s = std::move(chain.back());
            chain.pop_back();
        }
        if (depth + 1 == params.horizon) {
            if (!have_best || cost < best.cost) {
                have_best = true;
                best.cost = cost;
                const PlanningSession& first = chain.empty() ? s : chain.front();
                best.action = first.action;
                best.session = first;
            }
        }
    }
}

}  // namespace

SelectedAction select_action(const Belief& belief, const Point2& goal,
                             const PlannerParams& params, const ModelParams& models) {
    if (params.candidates.empty()) throw NoCandidates("no candidate actions configured");
    if (params.horizon < 1) throw InvalidArgument("horizon must be at least 1");
    SelectedAction best;
    bool have_best = false;
    std::vector<PlanningSession> chain;
    search(belief, goal, params, models, 0, 0.0, chain, best, have_best);
    return best;
}

}  // namespace rubslam
