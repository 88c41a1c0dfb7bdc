#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "rubslam/errors.hpp"
#include "rubslam/linalg.hpp"

namespace rubslam {

struct PoseSE2 {
    double x = 0, y = 0, theta = 0;
};

struct Point2 {
    double x = 0, y = 0;
};

struct Odometry {
    double dx = 0, dy = 0, dtheta = 0;
};

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// SE(2) composition x (+) u with the heading wrapped.
PoseSE2 motion_compose(const PoseSE2& x, const Odometry& u);

/// Range and wrapped bearing from pose to landmark. Throws DegenerateGeometry
/// when the two coincide.
std::pair<double, double> range_bearing(const PoseSE2& x, const Point2& l);

enum class VarKind : std::uint8_t { Pose, Landmark };

struct VarKey {
    VarKind kind = VarKind::Pose;
    int index = 0;
    friend bool operator==(const VarKey&, const VarKey&) = default;
    friend auto operator<=>(const VarKey&, const VarKey&) = default;
};

inline VarKey pose_key(int t) { return {VarKind::Pose, t}; }
inline VarKey landmark_key(int j) { return {VarKind::Landmark, j}; }

/// Columns occupied by a variable: 3 for poses, 2 for landmarks.
inline int var_dof(VarKey k) { return k.kind == VarKind::Pose ? 3 : 2; }

std::string var_name(VarKey k);  // "x3", "l7"

struct VarKeyHash {
    std::size_t operator()(const VarKey& k) const {
        return std::hash<std::uint64_t>()((static_cast<std::uint64_t>(k.index) << 1) |
                                          static_cast<std::uint64_t>(k.kind));
    }
};

enum class FactorKind : std::uint8_t { Prior, Motion, RangeBearing };

/// One probabilistic constraint. `measured` holds the raw measurement and
/// `noise_sqrt_info` the diagonal of the whitening matrix (1/sigma per dof).
struct Factor {
    FactorKind kind = FactorKind::Prior;
    std::vector<VarKey> keys;
    DenseVec measured;
    DenseVec noise_sqrt_info;

    int dof() const { return static_cast<int>(measured.size()); }
    int time() const;  ///< Step the factor was added at (pose index).
};

Factor make_prior(int t, const PoseSE2& mean, const std::array<double, 3>& sigmas);
Factor make_motion(int t_from, const Odometry& u, const std::array<double, 3>& sigmas);
Factor make_range_bearing(int t, int lm, double range, double bearing,
                          const std::array<double, 2>& sigmas);

/// Identity of a factor by (kind, key set); unique in this artifact since at
/// most one factor ever connects a given key set.
struct FactorId {
    FactorKind kind;
    std::vector<VarKey> keys;  // sorted
    friend bool operator==(const FactorId&, const FactorId&) = default;
};
FactorId factor_id(const Factor& f);

struct FactorIdHash {
    std::size_t operator()(const FactorId& id) const;
};

/// Landmark indices associated at one timestamp (sorted, duplicate-free).
struct DaSet {
    int timestamp = 0;
    std::vector<int> landmarks;

    static DaSet of(int timestamp, std::vector<int> lms);
    bool contains(int lm) const;
};

struct DaReport {
    DaSet common;
    DaSet rmv;
    DaSet add;
    bool consistent() const { return rmv.landmarks.empty() && add.landmarks.empty(); }
};

/// Splits planning vs inference association sets into kept / removed / added.
DaReport da_report(const DaSet& plan, const DaSet& inf);

/// Small dense block used for per-key Jacobians and covariance blocks.
struct DenseMat {
    int rows = 0, cols = 0;
    std::vector<double> a;

    DenseMat() = default;
    DenseMat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
};

/// Linearization point plus the explicit elimination ordering.
class Values {
  public:
    void insert(VarKey k, const PoseSE2& p);
    void insert(VarKey k, const Point2& p);
    bool has(VarKey k) const { return pos_.count(k) > 0; }
    const PoseSE2& pose(VarKey k) const;
    const Point2& point(VarKey k) const;

    const std::vector<VarKey>& ordering() const { return ordering_; }
    int size() const { return static_cast<int>(ordering_.size()); }
    int dim() const { return dim_; }
    /// First column of the variable under this ordering.
    int col_offset(VarKey k) const;
    int position(VarKey k) const;
    VarKey var_at_col(int col) const;

    /// Applies a Gauss-Newton increment laid out per this ordering.
    void add_delta(const DenseVec& dx);

  private:
    std::vector<VarKey> ordering_;
    std::vector<int> offsets_;
    std::unordered_map<VarKey, int, VarKeyHash> pos_;
    std::unordered_map<VarKey, PoseSE2, VarKeyHash> poses_;
    std::unordered_map<VarKey, Point2, VarKeyHash> points_;
    int dim_ = 0;
};

/// Whitened Jacobian blocks and rhs of one factor at a linearization point.
struct Linearized {
    std::vector<std::pair<VarKey, DenseMat>> blocks;
    DenseVec rhs;
};

Linearized linearize(const Factor& f, const Values& lin_point);

/// Whitened residual vector of a factor evaluated at the given values.
DenseVec whitened_residual(const Factor& f, const Values& values);

struct AssembledSystem {
    SparseRowMatrix a;
    DenseVec b;
    std::vector<std::pair<int, int>> factor_rows;  ///< [begin, end) per factor
};

/// Stacks whitened factor rows in insertion order under the Values ordering.
AssembledSystem assemble(const std::vector<Factor>& graph, const Values& lin_point);

// Line-oriented text serialization:
//   PRIOR t x y th sx sy sth
//   MOTION t dx dy dth sx sy sth
//   BR t j r b sr sb
std::string to_line(const Factor& f);
Factor factor_from_line(const std::string& line);
void write_factors(std::ostream& os, const std::vector<Factor>& graph);
std::vector<Factor> read_factors(std::istream& is);

}  // namespace rubslam
