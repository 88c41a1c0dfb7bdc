#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "rubslam/factor_graph.hpp"

using namespace rubslam;

namespace {

constexpr double kPi = std::numbers::pi;

// Homogeneous-matrix oracle for SE(2) composition.
PoseSE2 compose_via_matrices(const PoseSE2& x, const Odometry& u) {
    auto tf = [](double c, double s, double tx, double ty) {
        oracle::Mat m = oracle::identity(3);
        m[0][0] = c;
        m[0][1] = -s;
        m[0][2] = tx;
        m[1][0] = s;
        m[1][1] = c;
        m[1][2] = ty;
        return m;
    };
    auto a = tf(std::cos(x.theta), std::sin(x.theta), x.x, x.y);
    auto b = tf(std::cos(u.dtheta), std::sin(u.dtheta), u.dx, u.dy);
    auto c = oracle::matmul(a, b);
    return {c[0][2], c[1][2], std::atan2(c[1][0], c[0][0])};
}

Values random_values(std::mt19937_64& rng, int n_poses, int n_lms) {
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::uniform_real_distribution<double> ang(-kPi, kPi);
    Values v;
    for (int t = 0; t < n_poses; ++t) v.insert(pose_key(t), PoseSE2{u(rng), u(rng), ang(rng)});
    for (int j = 0; j < n_lms; ++j) v.insert(landmark_key(j), Point2{u(rng), u(rng)});
    return v;
}

// Central finite differences of the whitened residual; the analytic block
// must equal minus this derivative.
oracle::Mat fd_jacobian(const Factor& f, const Values& lin, VarKey key, double h = 1e-6) {
    const int n = var_dof(key);
    oracle::Mat j = oracle::zeros(f.dof(), n);
    for (int c = 0; c < n; ++c) {
        Values plus = lin, minus = lin;
        DenseVec dp(static_cast<std::size_t>(lin.dim()), 0.0);
        dp[lin.col_offset(key) + c] = h;
        plus.add_delta(dp);
        dp[lin.col_offset(key) + c] = -h;
        minus.add_delta(dp);
        const DenseVec rp = whitened_residual(f, plus);
        const DenseVec rm = whitened_residual(f, minus);
        for (int r = 0; r < f.dof(); ++r) j[r][c] = -(rp[r] - rm[r]) / (2.0 * h);
    }
    return j;
}

double max_block_fd_error(const Factor& f, const Values& lin) {
    const Linearized l = linearize(f, lin);
    double worst = 0.0;
    for (const auto& [key, block] : l.blocks) {
        auto fd = fd_jacobian(f, lin, key);
        double scale = 1.0;
        for (int r = 0; r < block.rows; ++r)
            for (int c = 0; c < block.cols; ++c) scale = std::max(scale, std::abs(fd[r][c]));
        for (int r = 0; r < block.rows; ++r)
            for (int c = 0; c < block.cols; ++c)
                worst = std::max(worst, std::abs(block.at(r, c) - fd[r][c]) / scale);
    }
    return worst;
}

}  // namespace

TEST_CASE("motion_compose") {
    auto p1 = motion_compose({0, 0, 0}, {1, 0, 0});
    CHECK(p1.x == doctest::Approx(1.0));
    CHECK(p1.y == doctest::Approx(0.0));
    CHECK(p1.theta == doctest::Approx(0.0));

    auto p2 = motion_compose({0, 0, kPi / 2}, {1, 0, 0});
    CHECK(p2.x == doctest::Approx(0.0));
    CHECK(p2.y == doctest::Approx(1.0));
    CHECK(p2.theta == doctest::Approx(kPi / 2));

    const PoseSE2 x{1, 2, 0.3};
    const Odometry u{0.5, -0.1, 0.2};
    auto got = motion_compose(x, u);
    auto ref = compose_via_matrices(x, u);
    CHECK(got.x == doctest::Approx(ref.x).epsilon(1e-12));
    CHECK(got.y == doctest::Approx(ref.y).epsilon(1e-12));
    CHECK(got.theta == doctest::Approx(ref.theta).epsilon(1e-12));
}

TEST_CASE("wrap_angle maps to (-pi, pi]") {
    CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
    CHECK(wrap_angle(0.1) == doctest::Approx(0.1));
}

TEST_CASE("range_bearing") {
    auto [r1, b1] = range_bearing({0, 0, 0}, {1, 0});
    CHECK(r1 == doctest::Approx(1.0));
    CHECK(b1 == doctest::Approx(0.0));

    auto [r2, b2] = range_bearing({0, 0, kPi / 2}, {0, 2});
    CHECK(r2 == doctest::Approx(2.0));
    CHECK(b2 == doctest::Approx(0.0));

    const PoseSE2 x{1, 1, 0.5};
    const Point2 l{3, 4};
    auto [r3, b3] = range_bearing(x, l);
    CHECK(r3 == doctest::Approx(std::hypot(2.0, 3.0)).epsilon(1e-12));
    CHECK(b3 == doctest::Approx(std::atan2(3.0, 2.0) - 0.5).epsilon(1e-12));

    CHECK_THROWS_AS(range_bearing({3, 4, 0}, {3, 4}), DegenerateGeometry);
}

TEST_CASE("linearize prior at its own point") {
    Values v;
    v.insert(pose_key(0), PoseSE2{1, 2, 0.5});
    auto f = make_prior(0, {1, 2, 0.5}, {0.1, 0.1, 0.05});
    auto l = linearize(f, v);
    for (double r : l.rhs) CHECK(r == doctest::Approx(0.0));
    REQUIRE(l.blocks.size() == 1);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(l.blocks[0].second.at(i, j) ==
                  doctest::Approx(i == j ? f.noise_sqrt_info[i] : 0.0));
}

TEST_CASE("linearize motion with exact odometry has zero residual") {
    Values v;
    const PoseSE2 a{1, 2, 0.3};
    const Odometry u{0.5, -0.1, 0.2};
    v.insert(pose_key(0), a);
    v.insert(pose_key(1), motion_compose(a, u));
    auto f = make_motion(0, u, {0.1, 0.1, 0.05});
    auto l = linearize(f, v);
    for (double r : l.rhs) CHECK(std::abs(r) < 1e-14);
}

TEST_CASE("analytic Jacobians match central finite differences") {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int checked = 0;
    while (checked < 100) {
        Values v = random_values(rng, 2, 1);
        // Keep geometry away from the degenerate pose-on-landmark case.
        const auto& p0 = v.pose(pose_key(0));
        const auto& lm = v.point(landmark_key(0));
        if (std::hypot(lm.x - p0.x, lm.y - p0.y) < 0.5) continue;
        const Factor prior = make_prior(0, {u(rng), u(rng), u(rng)}, {0.3, 0.4, 0.1});
        const Factor motion = make_motion(0, {u(rng), u(rng), u(rng)}, {0.2, 0.2, 0.1});
        const Factor rb =
            make_range_bearing(0, 0, 1.0 + std::abs(u(rng)), u(rng), {0.1, 0.02});
        CHECK(max_block_fd_error(prior, v) < 1e-5);
        CHECK(max_block_fd_error(motion, v) < 1e-5);
        CHECK(max_block_fd_error(rb, v) < 1e-5);
        ++checked;
    }
}

TEST_CASE("whitened residual squares to the Mahalanobis term") {
    std::mt19937_64 rng(103);
    for (int it = 0; it < 20; ++it) {
        Values v = random_values(rng, 1, 1);
        const auto& p = v.pose(pose_key(0));
        const auto& lm = v.point(landmark_key(0));
        if (std::hypot(lm.x - p.x, lm.y - p.y) < 0.5) continue;
        const Factor f = make_range_bearing(0, 0, 2.0, 0.3, {0.1, 0.02});
        const DenseVec rhs = whitened_residual(f, v);
        double norm2 = 0.0;
        for (double r : rhs) norm2 += r * r;
        auto [rr, bb] = range_bearing(p, lm);
        const double e_r = f.measured[0] - rr;
        const double e_b = wrap_angle(f.measured[1] - bb);
        const double mahal = e_r * e_r / (0.1 * 0.1) + e_b * e_b / (0.02 * 0.02);
        CHECK(std::abs(norm2 - mahal) < 1e-10 * std::max(1.0, mahal));
    }
}

TEST_CASE("assemble") {
    SUBCASE("empty graph") {
        Values v;
        v.insert(pose_key(0), PoseSE2{});
        auto sys = assemble({}, v);
        CHECK(sys.a.n_rows == 0);
        CHECK(sys.b.empty());
    }
    SUBCASE("single prior gives a 3x3 block") {
        Values v;
        v.insert(pose_key(0), PoseSE2{});
        auto sys = assemble({make_prior(0, {0, 0, 0}, {1, 1, 1})}, v);
        CHECK(sys.a.n_rows == 3);
        CHECK(sys.a.n_cols == 3);
        CHECK(sys.factor_rows[0] == std::pair<int, int>{0, 3});
    }
    SUBCASE("Gram of the assembled system equals the sum of block outer products") {
        std::mt19937_64 rng(107);
        Values v = random_values(rng, 3, 2);
        std::vector<Factor> graph;
        graph.push_back(make_prior(0, {0.1, -0.2, 0.05}, {0.3, 0.3, 0.1}));
        graph.push_back(make_motion(0, {1.0, 0.0, 0.1}, {0.2, 0.2, 0.05}));
        graph.push_back(make_motion(1, {1.0, 0.2, -0.1}, {0.2, 0.2, 0.05}));
        graph.push_back(make_range_bearing(1, 0, 2.0, 0.3, {0.1, 0.02}));
        graph.push_back(make_range_bearing(2, 1, 1.5, -0.2, {0.1, 0.02}));
        auto sys = assemble(graph, v);
        oracle::Mat gram_blocks = oracle::zeros(v.dim(), v.dim());
        for (const Factor& f : graph) {
            const auto l = linearize(f, v);
            // Dense row block over the full state.
            oracle::Mat rows = oracle::zeros(f.dof(), v.dim());
            for (const auto& [key, block] : l.blocks)
                for (int r = 0; r < block.rows; ++r)
                    for (int c = 0; c < block.cols; ++c)
                        rows[r][v.col_offset(key) + c] = block.at(r, c);
            auto g = oracle::gram(rows);
            for (int i = 0; i < v.dim(); ++i)
                for (int j = 0; j < v.dim(); ++j) gram_blocks[i][j] += g[i][j];
        }
        auto gram_sys = oracle::gram(oracle::to_dense(sys.a));
        CHECK(oracle::fro_diff(gram_sys, gram_blocks) / oracle::fro_norm(gram_blocks) < 1e-12);
    }
    SUBCASE("missing key is reported") {
        Values v;
        v.insert(pose_key(0), PoseSE2{});
        CHECK_THROWS_AS(assemble({make_motion(0, {1, 0, 0}, {1, 1, 1})}, v), MissingKey);
    }
}

TEST_CASE("da_report") {
    auto plan = DaSet::of(4, {5, 7});
    auto inf = DaSet::of(4, {5, 9});
    auto rep = da_report(plan, inf);
    CHECK(rep.common.landmarks == std::vector<int>{5});
    CHECK(rep.rmv.landmarks == std::vector<int>{7});
    CHECK(rep.add.landmarks == std::vector<int>{9});
    CHECK_FALSE(rep.consistent());

    auto same = da_report(DaSet::of(1, {1, 2}), DaSet::of(1, {1, 2}));
    CHECK(same.consistent());
    CHECK(same.common.landmarks == std::vector<int>{1, 2});

    auto fresh = da_report(DaSet::of(2, {}), DaSet::of(2, {4}));
    CHECK(fresh.add.landmarks == std::vector<int>{4});
    CHECK(fresh.rmv.landmarks.empty());

    CHECK_THROWS_AS(da_report(DaSet::of(1, {}), DaSet::of(2, {})), TimestampMismatch);
}

TEST_CASE("da_report partitions both inputs") {
    std::mt19937_64 rng(109);
    std::uniform_int_distribution<int> lm(0, 15);
    for (int it = 0; it < 50; ++it) {
        std::vector<int> a, b;
        for (int i = 0; i < 8; ++i) {
            a.push_back(lm(rng));
            b.push_back(lm(rng));
        }
        auto plan = DaSet::of(0, a);
        auto inf = DaSet::of(0, b);
        auto rep = da_report(plan, inf);
        std::vector<int> plan_re = rep.common.landmarks;
        plan_re.insert(plan_re.end(), rep.rmv.landmarks.begin(), rep.rmv.landmarks.end());
        std::sort(plan_re.begin(), plan_re.end());
        CHECK(plan_re == plan.landmarks);
        std::vector<int> inf_re = rep.common.landmarks;
        inf_re.insert(inf_re.end(), rep.add.landmarks.begin(), rep.add.landmarks.end());
        std::sort(inf_re.begin(), inf_re.end());
        CHECK(inf_re == inf.landmarks);
        for (int x : rep.rmv.landmarks) CHECK_FALSE(rep.add.contains(x));
    }
}

TEST_CASE("factor text format round trip") {
    std::mt19937_64 rng(113);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::vector<Factor> graph;
    graph.push_back(make_prior(0, {u(rng), u(rng), u(rng) / 3}, {0.3, 0.3, 0.1}));
    for (int t = 0; t < 5; ++t) {
        graph.push_back(make_motion(t, {u(rng), u(rng), u(rng) / 3}, {0.2, 0.2, 0.05}));
        graph.push_back(make_range_bearing(t, t % 3, std::abs(u(rng)) + 1, u(rng) / 3, {0.1, 0.02}));
    }
    std::stringstream ss;
    write_factors(ss, graph);
    auto back = read_factors(ss);
    REQUIRE(back.size() == graph.size());
    for (std::size_t i = 0; i < graph.size(); ++i) {
        CHECK(back[i].kind == graph[i].kind);
        CHECK(back[i].keys == graph[i].keys);
        for (std::size_t k = 0; k < graph[i].measured.size(); ++k) {
            CHECK(back[i].measured[k] == graph[i].measured[k]);
            CHECK(back[i].noise_sqrt_info[k] ==
                  doctest::Approx(graph[i].noise_sqrt_info[k]).epsilon(1e-15));
        }
    }
    CHECK_THROWS_AS(factor_from_line("BR 1 oops"), ParseError);
}
