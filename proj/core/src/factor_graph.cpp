#include "rubslam/factor_graph.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace rubslam {

double wrap_angle(double a) {
    double w = std::remainder(a, 2.0 * std::numbers::pi);
    if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
    return w;
}

PoseSE2 motion_compose(const PoseSE2& x, const Odometry& u) {
    const double c = std::cos(x.theta), s = std::sin(x.theta);
    return {x.x + c * u.dx - s * u.dy, x.y + s * u.dx + c * u.dy,
            wrap_angle(x.theta + u.dtheta)};
}

std::pair<double, double> range_bearing(const PoseSE2& x, const Point2& l) {
    const double dx = l.x - x.x, dy = l.y - x.y;
    const double r = std::hypot(dx, dy);
    if (r < 1e-9) throw DegenerateGeometry("robot coincides with landmark");
    return {r, wrap_angle(std::atan2(dy, dx) - x.theta)};
}

std::string var_name(VarKey k) {
    return (k.kind == VarKind::Pose ? "x" : "l") + std::to_string(k.index);
}

int Factor::time() const {
    switch (kind) {
        case FactorKind::Prior:
            return keys[0].index;
        case FactorKind::Motion:
            return keys[1].index;
        case FactorKind::RangeBearing:
            return keys[0].index;
    }
    return 0;
}

Factor make_prior(int t, const PoseSE2& mean, const std::array<double, 3>& sigmas) {
    Factor f;
    f.kind = FactorKind::Prior;
    f.keys = {pose_key(t)};
    f.measured = {mean.x, mean.y, mean.theta};
    f.noise_sqrt_info = {1.0 / sigmas[0], 1.0 / sigmas[1], 1.0 / sigmas[2]};
    return f;
}

Factor make_motion(int t_from, const Odometry& u, const std::array<double, 3>& sigmas) {
    Factor f;
    f.kind = FactorKind::Motion;
    f.keys = {pose_key(t_from), pose_key(t_from + 1)};
    f.measured = {u.dx, u.dy, u.dtheta};
    f.noise_sqrt_info = {1.0 / sigmas[0], 1.0 / sigmas[1], 1.0 / sigmas[2]};
    return f;
}

Factor make_range_bearing(int t, int lm, double range, double bearing,
                          const std::array<double, 2>& sigmas) {
    Factor f;
    f.kind = FactorKind::RangeBearing;
    f.keys = {pose_key(t), landmark_key(lm)};
    f.measured = {range, bearing};
    f.noise_sqrt_info = {1.0 / sigmas[0], 1.0 / sigmas[1]};
    return f;
}

FactorId factor_id(const Factor& f) {
    FactorId id{f.kind, f.keys};
    std::sort(id.keys.begin(), id.keys.end());
    return id;
}

std::size_t FactorIdHash::operator()(const FactorId& id) const {
    std::size_t h = static_cast<std::size_t>(id.kind) * 1000003u;
    for (const VarKey& k : id.keys)
        h = h * 31u + VarKeyHash()(k) + 0x9e3779b97f4a7c15ull;
    return h;
}

DaSet DaSet::of(int timestamp, std::vector<int> lms) {
    std::sort(lms.begin(), lms.end());
    lms.erase(std::unique(lms.begin(), lms.end()), lms.end());
    return {timestamp, std::move(lms)};
}

bool DaSet::contains(int lm) const {
    return std::binary_search(landmarks.begin(), landmarks.end(), lm);
}

DaReport da_report(const DaSet& plan, const DaSet& inf) {
    if (plan.timestamp != inf.timestamp)
        throw TimestampMismatch("association sets refer to different steps");
    DaReport rep;
    rep.common.timestamp = rep.rmv.timestamp = rep.add.timestamp = plan.timestamp;
    std::set_intersection(plan.landmarks.begin(), plan.landmarks.end(),
                          inf.landmarks.begin(), inf.landmarks.end(),
                          std::back_inserter(rep.common.landmarks));
    std::set_difference(plan.landmarks.begin(), plan.landmarks.end(),
                        inf.landmarks.begin(), inf.landmarks.end(),
                        std::back_inserter(rep.rmv.landmarks));
    std::set_difference(inf.landmarks.begin(), inf.landmarks.end(),
                        plan.landmarks.begin(), plan.landmarks.end(),
                        std::back_inserter(rep.add.landmarks));
    return rep;
}

void Values::insert(VarKey k, const PoseSE2& p) {
    assert(k.kind == VarKind::Pose && !has(k));
    pos_[k] = static_cast<int>(ordering_.size());
    ordering_.push_back(k);
    offsets_.push_back(dim_);
    poses_[k] = p;
    dim_ += var_dof(k);
}

void Values::insert(VarKey k, const Point2& p) {
    assert(k.kind == VarKind::Landmark && !has(k));
    pos_[k] = static_cast<int>(ordering_.size());
    ordering_.push_back(k);
    offsets_.push_back(dim_);
    points_[k] = p;
    dim_ += var_dof(k);
}

const PoseSE2& Values::pose(VarKey k) const {
    auto it = poses_.find(k);
    if (it == poses_.end()) throw MissingKey("no pose value for " + var_name(k));
    return it->second;
}

const Point2& Values::point(VarKey k) const {
    auto it = points_.find(k);
    if (it == points_.end()) throw MissingKey("no landmark value for " + var_name(k));
    return it->second;
}

int Values::col_offset(VarKey k) const {
    auto it = pos_.find(k);
    if (it == pos_.end()) throw MissingKey("variable not in ordering: " + var_name(k));
    return offsets_[it->second];
}

int Values::position(VarKey k) const {
    auto it = pos_.find(k);
    if (it == pos_.end()) throw MissingKey("variable not in ordering: " + var_name(k));
    return it->second;
}

VarKey Values::var_at_col(int col) const {
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), col);
    assert(it != offsets_.begin());
    return ordering_[static_cast<std::size_t>(it - offsets_.begin()) - 1];
}

void Values::add_delta(const DenseVec& dx) {
    if (static_cast<int>(dx.size()) != dim_)
        throw DimensionMismatch("increment does not match state dimension");
    for (std::size_t i = 0; i < ordering_.size(); ++i) {
        const VarKey k = ordering_[i];
        const int off = offsets_[i];
        if (k.kind == VarKind::Pose) {
            PoseSE2& p = poses_[k];
            p.x += dx[off];
            p.y += dx[off + 1];
            p.theta = wrap_angle(p.theta + dx[off + 2]);
        } else {
            Point2& p = points_[k];
            p.x += dx[off];
            p.y += dx[off + 1];
        }
    }
}

Linearized linearize(const Factor& f, const Values& lin) {
    Linearized out;
    const DenseVec& w = f.noise_sqrt_info;
    switch (f.kind) {
        case FactorKind::Prior: {
            const PoseSE2& p = lin.pose(f.keys[0]);
            DenseMat j(3, 3);
            for (int i = 0; i < 3; ++i) j.at(i, i) = w[i];
            out.blocks.emplace_back(f.keys[0], std::move(j));
            out.rhs = {w[0] * (f.measured[0] - p.x), w[1] * (f.measured[1] - p.y),
                       w[2] * wrap_angle(f.measured[2] - p.theta)};
            break;
        }
        case FactorKind::Motion: {
            const PoseSE2& pa = lin.pose(f.keys[0]);
            const PoseSE2& pb = lin.pose(f.keys[1]);
            const Odometry u{f.measured[0], f.measured[1], f.measured[2]};
            const PoseSE2 pred = motion_compose(pa, u);
            const double c = std::cos(pa.theta), s = std::sin(pa.theta);
            // d f / d pa, whitened and negated for the residual convention.
            DenseMat ja(3, 3), jb(3, 3);
            ja.at(0, 0) = -w[0];
            ja.at(0, 2) = -w[0] * (-s * u.dx - c * u.dy);
            ja.at(1, 1) = -w[1];
            ja.at(1, 2) = -w[1] * (c * u.dx - s * u.dy);
            ja.at(2, 2) = -w[2];
            for (int i = 0; i < 3; ++i) jb.at(i, i) = w[i];
            out.blocks.emplace_back(f.keys[0], std::move(ja));
            out.blocks.emplace_back(f.keys[1], std::move(jb));
            out.rhs = {w[0] * (pred.x - pb.x), w[1] * (pred.y - pb.y),
                       w[2] * wrap_angle(pred.theta - pb.theta)};
            break;
        }
        case FactorKind::RangeBearing: {
            const PoseSE2& p = lin.pose(f.keys[0]);
            const Point2& l = lin.point(f.keys[1]);
            const double dx = l.x - p.x, dy = l.y - p.y;
            const double r = std::hypot(dx, dy);
            if (r < 1e-9) throw DegenerateGeometry("robot coincides with landmark");
            const double q = r * r;
            DenseMat jp(2, 3), jl(2, 2);
            jp.at(0, 0) = w[0] * (-dx / r);
            jp.at(0, 1) = w[0] * (-dy / r);
            jp.at(1, 0) = w[1] * (dy / q);
            jp.at(1, 1) = w[1] * (-dx / q);
            jp.at(1, 2) = w[1] * (-1.0);
            jl.at(0, 0) = w[0] * (dx / r);
            jl.at(0, 1) = w[0] * (dy / r);
            jl.at(1, 0) = w[1] * (-dy / q);
            jl.at(1, 1) = w[1] * (dx / q);
            out.blocks.emplace_back(f.keys[0], std::move(jp));
            out.blocks.emplace_back(f.keys[1], std::move(jl));
            const double b_hat = wrap_angle(std::atan2(dy, dx) - p.theta);
            out.rhs = {w[0] * (f.measured[0] - r),
                       w[1] * wrap_angle(f.measured[1] - b_hat)};
            break;
        }
    }
    return out;
}

DenseVec whitened_residual(const Factor& f, const Values& values) {
    return linearize(f, values).rhs;
}

AssembledSystem assemble(const std::vector<Factor>& graph, const Values& lin) {
    AssembledSystem sys;
    int n_rows = 0;
    for (const Factor& f : graph) n_rows += f.dof();
    sys.a = SparseRowMatrix::zero(n_rows, lin.dim());
    sys.b.resize(static_cast<std::size_t>(n_rows));
    int row = 0;
    for (const Factor& f : graph) {
        const Linearized linf = linearize(f, lin);
        // Scatter blocks in ascending column order.
        std::vector<int> order(linf.blocks.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return lin.col_offset(linf.blocks[a].first) < lin.col_offset(linf.blocks[b].first);
        });
        for (int r = 0; r < f.dof(); ++r) {
            for (int bi : order) {
                const auto& [key, block] = linf.blocks[bi];
                const int base = lin.col_offset(key);
                for (int c = 0; c < block.cols; ++c)
                    sys.a.push_entry(row + r, base + c, block.at(r, c));
            }
            sys.b[row + r] = linf.rhs[r];
        }
        sys.factor_rows.emplace_back(row, row + f.dof());
        row += f.dof();
    }
    return sys;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string to_line(const Factor& f) {
    std::ostringstream os;
    switch (f.kind) {
        case FactorKind::Prior:
            os << "PRIOR " << f.keys[0].index;
            break;
        case FactorKind::Motion:
            os << "MOTION " << f.keys[0].index;
            break;
        case FactorKind::RangeBearing:
            os << "BR " << f.keys[0].index << ' ' << f.keys[1].index;
            break;
    }
    for (double v : f.measured) os << ' ' << fmt(v);
    for (double v : f.noise_sqrt_info) os << ' ' << fmt(1.0 / v);
    return os.str();
}

Factor factor_from_line(const std::string& line) {
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    auto need = [&](int n) {
        std::vector<double> v(n);
        for (double& x : v)
            if (!(is >> x)) throw ParseError("malformed factor line: " + line);
        return v;
    };
    if (tag == "PRIOR") {
        int t;
        if (!(is >> t)) throw ParseError("malformed factor line: " + line);
        auto v = need(6);
        return make_prior(t, {v[0], v[1], v[2]}, {v[3], v[4], v[5]});
    }
    if (tag == "MOTION") {
        int t;
        if (!(is >> t)) throw ParseError("malformed factor line: " + line);
        auto v = need(6);
        return make_motion(t, {v[0], v[1], v[2]}, {v[3], v[4], v[5]});
    }
    if (tag == "BR") {
        int t, j;
        if (!(is >> t >> j)) throw ParseError("malformed factor line: " + line);
        auto v = need(4);
        return make_range_bearing(t, j, v[0], v[1], {v[2], v[3]});
    }
    throw ParseError("unknown factor tag: " + tag);
}

void write_factors(std::ostream& os, const std::vector<Factor>& graph) {
    for (const Factor& f : graph) os << to_line(f) << '\n';
}

std::vector<Factor> read_factors(std::istream& is) {
    std::vector<Factor> graph;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        graph.push_back(factor_from_line(line));
    }
    return graph;
}

}  // namespace rubslam
