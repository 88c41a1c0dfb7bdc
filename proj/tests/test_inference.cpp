#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "rubslam/inference.hpp"

using namespace rubslam;
using fixtures::kMotionSig;
using fixtures::kObsSig;
using fixtures::kPriorSig;

namespace {

double estimate_diff(const Values& a, const Values& b) {
    double worst = 0.0;
    for (const VarKey& k : a.ordering()) {
        if (k.kind == VarKind::Pose) {
            const auto& pa = a.pose(k);
            const auto& pb = b.pose(k);
            worst = std::max({worst, std::abs(pa.x - pb.x), std::abs(pa.y - pb.y),
                              std::abs(wrap_angle(pa.theta - pb.theta))});
        } else {
            const auto& la = a.point(k);
            const auto& lb = b.point(k);
            worst = std::max({worst, std::abs(la.x - lb.x), std::abs(la.y - lb.y)});
        }
    }
    return worst;
}

double belief_diff(const Belief& a, const Belief& b) {
    auto [ra, da] = flatten(a.tree, a.lin);
    auto [rb, db] = flatten(b.tree, b.lin);
    double worst = oracle::inf_diff(da, db);
    worst = std::max(worst, oracle::fro_diff(oracle::to_dense(ra), oracle::to_dense(rb)));
    worst = std::max(worst, estimate_diff(map_estimate(a), map_estimate(b)));
    return worst;
}

// Dense single Gauss-Newton step at the same linearization point.
DenseVec dense_gn_step(const std::vector<Factor>& graph, const Values& lin) {
    auto sys = assemble(graph, lin);
    return oracle::least_squares(oracle::to_dense(sys.a), sys.b);
}

// A deterministic plan-free scenario: drive a loop over a few landmarks.
struct Scripted {
    std::vector<std::vector<Factor>> steps;  // new factors per step
    Belief initial;
};

Scripted scripted_loop(int n_steps) {
    Scripted s;
    const PoseSE2 start{0, 0, 0};
    s.initial = make_prior_belief(make_prior(0, start, kPriorSig), start);
    std::vector<Point2> lms{{2.0, 1.5}, {4.0, -1.0}, {1.0, -2.0}, {5.0, 2.0}};
    PoseSE2 truth = start;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-0.02, 0.02);
    for (int t = 1; t <= n_steps; ++t) {
        const Odometry cmd{1.0, 0.0, t % 4 == 0 ? 1.2 : 0.1};
        truth = motion_compose(truth, cmd);
        std::vector<Factor> step;
        step.push_back(make_motion(t - 1, cmd, kMotionSig));
        for (std::size_t j = 0; j < lms.size(); ++j) {
            auto [r, b] = range_bearing(truth, lms[j]);
            if (r > 3.5) continue;
            step.push_back(make_range_bearing(t, static_cast<int>(j), r + u(rng), b + u(rng),
                                              kObsSig));
        }
        s.steps.push_back(std::move(step));
    }
    return s;
}

}  // namespace

TEST_CASE("prior-only belief solves to the prior mean") {
    const PoseSE2 mean{0.4, -0.3, 0.2};
    auto b = make_prior_belief(make_prior(0, mean, kPriorSig), PoseSE2{0, 0, 0});
    auto est = map_estimate(b);
    CHECK(est.pose(pose_key(0)).x == doctest::Approx(mean.x));
    CHECK(est.pose(pose_key(0)).y == doctest::Approx(mean.y));
    CHECK(est.pose(pose_key(0)).theta == doctest::Approx(mean.theta));
}

TEST_CASE("two-pose odometry chain solves to the composed odometry") {
    const PoseSE2 start{0, 0, 0};
    auto b = make_prior_belief(make_prior(0, start, kPriorSig), start);
    const Odometry u{1.0, 0.5, 0.3};
    auto b1 = batch_update(b, {make_motion(0, u, kMotionSig)});
    auto est = map_estimate(b1);
    const PoseSE2 expect = motion_compose(start, u);
    CHECK(estimate_diff(est, b1.lin) < 1e-12);  // zero-residual chain
    CHECK(est.pose(pose_key(1)).x == doctest::Approx(expect.x));
    CHECK(est.pose(pose_key(1)).y == doctest::Approx(expect.y));
    CHECK(est.pose(pose_key(1)).theta == doctest::Approx(expect.theta));
}

TEST_CASE("batch_update matches the dense normal-equations step") {
    auto fx = fixtures::small_slam(55);
    Belief b;
    b.lin = fx.values;
    b.graph = fx.graph;
    b.tree = eliminate(b.graph, b.lin);
    const DenseVec dx_ref = dense_gn_step(b.graph, b.lin);
    const DenseVec dx = tree_solve(b.tree, b.lin);
    CHECK(oracle::inf_diff(dx, dx_ref) < 1e-8);
}

TEST_CASE("incremental_update equals batch_update step by step") {
    auto scripted = scripted_loop(12);
    Belief batch = scripted.initial;
    Belief inc = scripted.initial;
    for (const auto& step : scripted.steps) {
        UpdateCounters cb, ci;
        batch = batch_update(batch, step, &cb);
        inc = incremental_update(inc, step, &ci);
        CHECK(belief_diff(batch, inc) < 1e-9);
        CHECK(ci.n_reeliminations <= cb.n_reeliminations);
        CHECK(ci.n_added_factor_rows == cb.n_added_factor_rows);
    }
}

TEST_CASE("motion-only step re-eliminates only the last-pose path") {
    auto scripted = scripted_loop(6);
    Belief b = scripted.initial;
    for (const auto& step : scripted.steps) b = incremental_update(b, step);

    // A pure motion step involves the last pose only.
    const int t = b.t;
    UpdateCounters c;
    auto b2 = incremental_update(b, {make_motion(t, {1, 0, 0}, kMotionSig)}, &c);
    auto region = involved_subtree(b.tree, {pose_key(t)}, b.lin);
    CHECK(c.n_reeliminations == static_cast<int>(region.cliques.size()) + 1);
    CHECK(c.n_reeliminations < b.lin.size());
    CHECK(b2.t == t + 1);
}

TEST_CASE("loop closure spikes the re-elimination counter") {
    auto scripted = scripted_loop(10);
    Belief b = scripted.initial;
    for (const auto& step : scripted.steps) b = incremental_update(b, step);

    // Re-observing the first landmark drags in its whole ancestor path.
    const int t = b.t;
    auto est = map_estimate(b);
    auto truth = est.pose(pose_key(t));
    auto [r, brg] = range_bearing(truth, est.point(landmark_key(0)));
    std::vector<Factor> lc{make_motion(t, {1, 0, 0}, kMotionSig),
                           make_range_bearing(t + 1, 0, r, brg, kObsSig)};
    UpdateCounters c_lc;
    auto b2 = incremental_update(b, lc, &c_lc);

    UpdateCounters c_mo;
    incremental_update(b, {make_motion(t, {1, 0, 0}, kMotionSig)}, &c_mo);
    CHECK(c_lc.n_reeliminations > c_mo.n_reeliminations);
    CHECK(belief_diff(b2, batch_update(b, lc)) < 1e-9);
}

TEST_CASE("empty update leaves the belief unchanged") {
    auto scripted = scripted_loop(3);
    Belief b = scripted.initial;
    for (const auto& step : scripted.steps) b = incremental_update(b, step);
    auto b2 = incremental_update(b, {});
    CHECK(belief_diff(b, b2) == 0.0);
}

TEST_CASE("gauss_newton") {
    SUBCASE("linear problem converges in one iteration") {
        const PoseSE2 mean{1.0, 2.0, 0.3};
        auto b = make_prior_belief(make_prior(0, mean, kPriorSig), PoseSE2{0, 0, 0});
        GaussNewtonReport rep;
        auto solved = gauss_newton(b, 10, 1e-9, &rep);
        CHECK(rep.iterations == 1);
        CHECK(estimate_diff(solved.lin, map_estimate(b)) < 1e-12);
    }
    SUBCASE("near-linear fixture matches the dense NLS oracle") {
        auto fx = fixtures::small_slam(57);
        Belief b;
        b.lin = fx.values;
        b.graph = fx.graph;
        b.tree = eliminate(b.graph, b.lin);
        auto solved = gauss_newton(b, 20, 1e-10);

        // Dense reference: iterate normal-equation steps to convergence.
        Values ref = fx.values;
        for (int it = 0; it < 20; ++it) {
            const DenseVec dx = dense_gn_step(fx.graph, ref);
            double step = 0.0;
            for (double v : dx) step = std::max(step, std::abs(v));
            ref.add_delta(dx);
            if (step < 1e-10) break;
        }
        CHECK(estimate_diff(solved.lin, ref) < 1e-8);
    }
    SUBCASE("whitened residual is monotone non-increasing on the fixture") {
        auto fx = fixtures::small_slam(59, 5, 3);
        Belief b;
        b.lin = fx.values;
        b.graph = fx.graph;
        b.tree = eliminate(b.graph, b.lin);
        GaussNewtonReport rep;
        gauss_newton(b, 15, 1e-10, &rep);
        for (std::size_t i = 1; i < rep.residuals.size(); ++i)
            CHECK(rep.residuals[i] <= rep.residuals[i - 1] + 1e-12);
    }
}

TEST_CASE("marginal covariance blocks") {
    SUBCASE("prior-only belief returns the prior covariance") {
        auto b = make_prior_belief(make_prior(0, {0, 0, 0}, kPriorSig), PoseSE2{0, 0, 0});
        auto cov = marginal_cov_block(b, pose_key(0));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(cov.at(i, j) ==
                      doctest::Approx(i == j ? kPriorSig[i] * kPriorSig[i] : 0.0)
                          .epsilon(1e-10));
    }
    SUBCASE("two-pose chain composes prior and motion covariance") {
        const PoseSE2 start{0, 0, 0};
        auto b0 = make_prior_belief(make_prior(0, start, kPriorSig), start);
        auto b1 = batch_update(b0, {make_motion(0, {1, 0, 0}, kMotionSig)});
        auto cov = marginal_cov_block(b1, pose_key(1));
        // Dense oracle: invert the full information matrix.
        auto sys = assemble(b1.graph, b1.lin);
        auto info = oracle::gram(oracle::to_dense(sys.a));
        auto full_cov = oracle::inverse(info);
        const int off = b1.lin.col_offset(pose_key(1));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(cov.at(i, j) == doctest::Approx(full_cov[off + i][off + j])
                                          .epsilon(1e-8));
        // At identity heading the position block is prior + motion variance.
        CHECK(cov.at(0, 0) ==
              doctest::Approx(kPriorSig[0] * kPriorSig[0] + kMotionSig[0] * kMotionSig[0])
                  .epsilon(1e-9));
    }
    SUBCASE("fixture block matches the dense inverse") {
        auto fx = fixtures::small_slam(61);
        Belief b;
        b.lin = fx.values;
        b.graph = fx.graph;
        b.tree = eliminate(b.graph, b.lin);
        auto sys = assemble(b.graph, b.lin);
        auto full_cov = oracle::inverse(oracle::gram(oracle::to_dense(sys.a)));
        for (const VarKey key : {pose_key(2), landmark_key(0)}) {
            auto cov = marginal_cov_block(b, key);
            const int off = b.lin.col_offset(key);
            for (int i = 0; i < cov.rows; ++i)
                for (int j = 0; j < cov.cols; ++j)
                    CHECK(std::abs(cov.at(i, j) - full_cov[off + i][off + j]) < 1e-8);
        }
    }
}
