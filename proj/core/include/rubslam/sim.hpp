#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rubslam/planner.hpp"

namespace rubslam {

enum class InconsistencyMode { None, DropMeasured, SwapLandmark, InjectNew, Mixed };

InconsistencyMode inconsistency_mode_from_string(const std::string& s);
std::string to_string(InconsistencyMode m);

/// Ground-truth world: landmark layout, targets, noise magnitudes and the
/// sensing gate. Immutable; all randomness lives in the run handle.
struct World {
    std::uint64_t seed = 0;
    std::vector<Point2> landmarks;
    std::vector<Point2> targets;
    std::array<double, 3> sigma_w{0.05, 0.05, 0.02};  ///< process noise
    std::array<double, 2> sigma_v{0.1, 0.02};         ///< measurement noise
    std::array<double, 3> sigma_prior{0.1, 0.1, 0.05};
    double sensing_range = 4.0;
    std::optional<double> fov_rad;
    PoseSE2 start;
};

struct Measurement {
    int landmark = 0;
    double range = 0;
    double bearing = 0;
    bool forced = false;  ///< introduced or altered by the inconsistency stressor
};

struct StepTruth {
    PoseSE2 true_pose;     ///< pose after executing the command
    Odometry executed;     ///< the noisy motion that actually happened
    std::vector<Measurement> measurements;  ///< sorted by landmark index
};

/// Owns the RNG cursor of one simulation run; the world stays immutable.
class SimRun {
  public:
    explicit SimRun(const World& world);

    /// Advances the true pose by the commanded action plus process noise and
    /// measures every in-range landmark with measurement noise.
    StepTruth step(const CandidateAction& commanded);

    /// Perturbs the measurement list to realize association mismatches at
    /// the given per-measurement rate.
    StepTruth force_inconsistency(StepTruth truth, InconsistencyMode mode, double rate);

    /// Records which landmarks inference actually received this step.
    void commit(const StepTruth& truth);

    const PoseSE2& true_pose() const { return pose_; }
    const World& world() const { return world_; }

  private:
    double gauss(double sigma);

    const World world_;
    std::mt19937_64 rng_;
    PoseSE2 pose_;
    std::set<int> observed_;  ///< landmarks handed to inference so far
};

/// Scenario description parsed from a JSON config file.
struct ScenarioConfig {
    std::string id = "scenario";
    std::uint64_t seed = 1;
    double field_w = 20.0, field_h = 20.0;
    int n_landmarks = 40;
    std::vector<Point2> targets;
    std::array<double, 3> sigma_w{0.05, 0.05, 0.02};
    std::array<double, 2> sigma_v{0.1, 0.02};
    std::array<double, 3> sigma_prior{0.1, 0.1, 0.05};
    double sensing_range = 4.0;
    std::optional<double> fov_rad;
    InconsistencyMode mode = InconsistencyMode::None;
    double rate = 0.0;
    int horizon = 1;
    int n_headings = 8;
    double step_length = 1.0;
    double w_dist = 1.0;
    double w_unc = 1.0;
    int steps = 50;
    double goal_tolerance = 1.0;
};

ScenarioConfig load_scenario_config(const std::string& path);
ScenarioConfig parse_scenario_config(const std::string& json_text);

/// World realization for a scenario: landmarks drawn uniformly on the field
/// from a stream derived from the seed.
World make_world(const ScenarioConfig& cfg);

ModelParams model_params(const ScenarioConfig& cfg);
PlannerParams planner_params(const ScenarioConfig& cfg);

// Record/replay: the factor-graph text format for the measurement stream plus
// a truth sidecar (`TRUTH t x y th` and `ODO t dx dy dth` lines).
void write_truth_stream(std::ostream& os, const std::vector<StepTruth>& steps);
std::vector<StepTruth> read_truth_stream(std::istream& is);

}  // namespace rubslam
