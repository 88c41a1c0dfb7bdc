// Shared SLAM fixtures: small seeded pose/landmark worlds with exact or noisy
// measurements, used across the tree, inference and reuse test suites.
#pragma once

#include <random>
#include <vector>

#include "rubslam/factor_graph.hpp"

namespace fixtures {

using namespace rubslam;

constexpr std::array<double, 3> kPriorSig{0.1, 0.1, 0.05};
constexpr std::array<double, 3> kMotionSig{0.05, 0.05, 0.02};
constexpr std::array<double, 2> kObsSig{0.1, 0.02};

struct SlamFixture {
    std::vector<Factor> graph;
    Values values;
};

// A short trajectory over a couple of landmarks, with values perturbed away
// from the exact solution so residuals are non-trivial.
inline SlamFixture small_slam(std::uint64_t seed, int n_poses = 4, int n_lms = 2) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.2, 0.2);

    SlamFixture fx;
    std::vector<PoseSE2> truth;
    PoseSE2 p{0, 0, 0};
    truth.push_back(p);
    for (int t = 1; t < n_poses; ++t) {
        p = motion_compose(p, {1.0, 0.0, 0.15});
        truth.push_back(p);
    }
    std::vector<Point2> lms;
    for (int j = 0; j < n_lms; ++j) lms.push_back({1.0 + 1.5 * j, 2.0 - 0.5 * j});

    fx.graph.push_back(make_prior(0, truth[0], kPriorSig));
    fx.values.insert(pose_key(0), PoseSE2{truth[0].x + u(rng), truth[0].y + u(rng),
                                          truth[0].theta + u(rng) / 4});
    std::vector<bool> seen(n_lms, false);
    for (int t = 1; t < n_poses; ++t) {
        fx.graph.push_back(make_motion(t - 1, {1.0, 0.0, 0.15}, kMotionSig));
        fx.values.insert(pose_key(t), PoseSE2{truth[t].x + u(rng), truth[t].y + u(rng),
                                              truth[t].theta + u(rng) / 4});
        for (int j = 0; j < n_lms; ++j) {
            auto [r, b] = range_bearing(truth[t], lms[j]);
            if (r > 4.0) continue;
            fx.graph.push_back(make_range_bearing(t, j, r + u(rng) / 10, b + u(rng) / 20, kObsSig));
            if (!seen[j]) {
                fx.values.insert(landmark_key(j), Point2{lms[j].x + u(rng), lms[j].y + u(rng)});
                seen[j] = true;
            }
        }
    }
    return fx;
}

// Pure odometry chain: prior plus motion factors, insertion ordering.
inline SlamFixture pose_chain(int n_poses) {
    SlamFixture fx;
    fx.graph.push_back(make_prior(0, {0, 0, 0}, kPriorSig));
    fx.values.insert(pose_key(0), PoseSE2{0, 0, 0});
    PoseSE2 p{0, 0, 0};
    for (int t = 1; t < n_poses; ++t) {
        fx.graph.push_back(make_motion(t - 1, {1.0, 0.0, 0.0}, kMotionSig));
        p = motion_compose(p, {1.0, 0.0, 0.0});
        fx.values.insert(pose_key(t), p);
    }
    return fx;
}

}  // namespace fixtures
