#include "rubslam/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace rubslam {

InconsistencyMode inconsistency_mode_from_string(const std::string& s) {
    if (s == "none") return InconsistencyMode::None;
    if (s == "drop") return InconsistencyMode::DropMeasured;
    if (s == "swap") return InconsistencyMode::SwapLandmark;
    if (s == "inject") return InconsistencyMode::InjectNew;
    if (s == "mixed") return InconsistencyMode::Mixed;
    throw ConfigError("unknown inconsistency mode: " + s);
}

std::string to_string(InconsistencyMode m) {
    switch (m) {
        case InconsistencyMode::None:
            return "none";
        case InconsistencyMode::DropMeasured:
            return "drop";
        case InconsistencyMode::SwapLandmark:
            return "swap";
        case InconsistencyMode::InjectNew:
            return "inject";
        case InconsistencyMode::Mixed:
            return "mixed";
    }
    return "?";
}

SimRun::SimRun(const World& world) : world_(world), rng_(world.seed), pose_(world.start) {}

double SimRun::gauss(double sigma) {
    if (sigma == 0.0) return 0.0;  // keep zero-noise runs draw-free
    std::normal_distribution<double> n(0.0, sigma);
    return n(rng_);
}

StepTruth SimRun::step(const CandidateAction& commanded) {
    StepTruth out;
    out.executed = {commanded.dx + gauss(world_.sigma_w[0]),
                    commanded.dy + gauss(world_.sigma_w[1]),
                    commanded.dtheta + gauss(world_.sigma_w[2])};
    pose_ = motion_compose(pose_, out.executed);
    out.true_pose = pose_;
    for (std::size_t j = 0; j < world_.landmarks.size(); ++j) {
        auto [r, b] = range_bearing(pose_, world_.landmarks[j]);
        if (r > world_.sensing_range) continue;
        if (world_.fov_rad && std::abs(b) > *world_.fov_rad / 2.0) continue;
        out.measurements.push_back({static_cast<int>(j), r + gauss(world_.sigma_v[0]),
                                    wrap_angle(b + gauss(world_.sigma_v[1])), false});
    }
    return out;
}

StepTruth SimRun::force_inconsistency(StepTruth truth, InconsistencyMode mode, double rate) {
    if (mode == InconsistencyMode::None || rate <= 0.0) return truth;
    if (rate < 0.0 || rate > 1.0) throw InvalidArgument("rate must lie in [0, 1]");
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    auto in_step = [&](int lm) {
        return std::any_of(truth.measurements.begin(), truth.measurements.end(),
                           [&](const Measurement& m) { return m.landmark == lm; });
    };
    auto unseen_candidates = [&]() {
        // Prefer landmarks never handed to inference: those realize the
        // new-variable flavors of association mismatch.
        std::vector<int> fresh, mapped;
        for (int j = 0; j < static_cast<int>(world_.landmarks.size()); ++j) {
            if (in_step(j)) continue;
            (observed_.count(j) ? mapped : fresh).push_back(j);
        }
        fresh.insert(fresh.end(), mapped.begin(), mapped.end());
        return fresh;
    };

    std::vector<Measurement> out;
    for (Measurement m : truth.measurements) {
        InconsistencyMode applied = mode;
        if (mode == InconsistencyMode::Mixed) {
            const double pick = coin(rng_);
            applied = pick < 1.0 / 3 ? InconsistencyMode::DropMeasured
                      : pick < 2.0 / 3 ? InconsistencyMode::SwapLandmark
                                       : InconsistencyMode::InjectNew;
        }
        if (coin(rng_) >= rate) {
            out.push_back(m);
            continue;
        }
        switch (applied) {
            case InconsistencyMode::DropMeasured:
                break;  // measurement vanishes
            case InconsistencyMode::SwapLandmark: {
                auto cands = unseen_candidates();
                if (cands.empty()) {
                    out.push_back(m);
                    break;
                }
                std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
                m.landmark = cands[pick(rng_)];
                m.forced = true;
                out.push_back(m);
                break;
            }
            case InconsistencyMode::InjectNew: {
                out.push_back(m);
                auto cands = unseen_candidates();
                if (cands.empty()) break;
                std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
                const int lm = cands[pick(rng_)];
                auto [r, b] = range_bearing(truth.true_pose, world_.landmarks[lm]);
                out.push_back({lm, r + gauss(world_.sigma_v[0]),
                               wrap_angle(b + gauss(world_.sigma_v[1])), true});
                break;
            }
            default:
                out.push_back(m);
                break;
        }
    }
    std::sort(out.begin(), out.end(),
              [](const Measurement& a, const Measurement& b) { return a.landmark < b.landmark; });
    out.erase(std::unique(out.begin(), out.end(),
                          [](const Measurement& a, const Measurement& b) {
                              return a.landmark == b.landmark;
                          }),
              out.end());
    truth.measurements = std::move(out);
    return truth;
}

void SimRun::commit(const StepTruth& truth) {
    for (const Measurement& m : truth.measurements) observed_.insert(m.landmark);
}

ScenarioConfig parse_scenario_config(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ScenarioConfig cfg;
    try {
        cfg.id = j.value("id", cfg.id);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("field")) {
            cfg.field_w = j["field"].at(0).get<double>();
            cfg.field_h = j["field"].at(1).get<double>();
        }
        cfg.n_landmarks = j.value("n_landmarks", cfg.n_landmarks);
        if (j.contains("targets"))
            for (const auto& t : j["targets"])
                cfg.targets.push_back({t.at(0).get<double>(), t.at(1).get<double>()});
        auto read3 = [&](const char* key, std::array<double, 3>& out) {
            if (!j.contains(key)) return;
            for (int i = 0; i < 3; ++i) out[i] = j[key].at(i).get<double>();
        };
        read3("sigma_w", cfg.sigma_w);
        read3("sigma_prior", cfg.sigma_prior);
        if (j.contains("sigma_v")) {
            cfg.sigma_v[0] = j["sigma_v"].at(0).get<double>();
            cfg.sigma_v[1] = j["sigma_v"].at(1).get<double>();
        }
        cfg.sensing_range = j.value("sensing_range", cfg.sensing_range);
        if (j.contains("fov_deg"))
            cfg.fov_rad = j["fov_deg"].get<double>() * std::numbers::pi / 180.0;
        if (j.contains("inconsistency")) {
            cfg.mode = inconsistency_mode_from_string(
                j["inconsistency"].value("mode", std::string("none")));
            cfg.rate = j["inconsistency"].value("rate", 0.0);
        }
        cfg.horizon = j.value("horizon", cfg.horizon);
        if (j.contains("candidates")) {
            cfg.n_headings = j["candidates"].value("headings", cfg.n_headings);
            cfg.step_length = j["candidates"].value("step", cfg.step_length);
        }
        if (j.contains("weights")) {
            cfg.w_dist = j["weights"].value("dist", cfg.w_dist);
            cfg.w_unc = j["weights"].value("unc", cfg.w_unc);
        }
        cfg.steps = j.value("steps", cfg.steps);
        cfg.goal_tolerance = j.value("goal_tolerance", cfg.goal_tolerance);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config field: ") + e.what());
    }
    if (cfg.n_landmarks < 0 || cfg.steps < 1 || cfg.horizon < 1 || cfg.rate < 0 ||
        cfg.rate > 1)
        throw ConfigError("config values out of range");
    if (const char* env = std::getenv("BENCH_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);
    return cfg;
}

ScenarioConfig load_scenario_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario_config(ss.str());
}

World make_world(const ScenarioConfig& cfg) {
    World w;
    w.seed = cfg.seed;
    w.sigma_w = cfg.sigma_w;
    w.sigma_v = cfg.sigma_v;
    w.sigma_prior = cfg.sigma_prior;
    w.sensing_range = cfg.sensing_range;
    w.fov_rad = cfg.fov_rad;
    w.targets = cfg.targets;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> ux(-cfg.field_w / 2, cfg.field_w / 2);
    std::uniform_real_distribution<double> uy(-cfg.field_h / 2, cfg.field_h / 2);
    while (static_cast<int>(w.landmarks.size()) < cfg.n_landmarks) {
        const Point2 p{ux(rng), uy(rng)};
        const bool clash =
            std::any_of(w.landmarks.begin(), w.landmarks.end(), [&](const Point2& q) {
                return std::hypot(p.x - q.x, p.y - q.y) < 1e-6;
            }) ||
            std::hypot(p.x - w.start.x, p.y - w.start.y) < 0.5;
        if (!clash) w.landmarks.push_back(p);
    }
    return w;
}

ModelParams model_params(const ScenarioConfig& cfg) {
    ModelParams m;
    m.prior_sigmas = cfg.sigma_prior;
    m.motion_sigmas = cfg.sigma_w;
    m.obs_sigmas = cfg.sigma_v;
    m.sensing_range = cfg.sensing_range;
    m.fov_rad = cfg.fov_rad;
    return m;
}

PlannerParams planner_params(const ScenarioConfig& cfg) {
    PlannerParams p;
    p.horizon = cfg.horizon;
    p.w_dist = cfg.w_dist;
    p.w_unc = cfg.w_unc;
    for (int i = 0; i < cfg.n_headings; ++i) {
        const double a = 2.0 * std::numbers::pi * i / cfg.n_headings;
        p.candidates.push_back(
            {cfg.step_length * std::cos(a), cfg.step_length * std::sin(a), 0.0});
    }
    return p;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_truth_stream(std::ostream& os, const std::vector<StepTruth>& steps) {
    int t = 1;
    for (const StepTruth& s : steps) {
        os << "TRUTH " << t << ' ' << fmt(s.true_pose.x) << ' ' << fmt(s.true_pose.y) << ' '
           << fmt(s.true_pose.theta) << '\n';
        os << "ODO " << t << ' ' << fmt(s.executed.dx) << ' ' << fmt(s.executed.dy) << ' '
           << fmt(s.executed.dtheta) << '\n';
        for (const Measurement& m : s.measurements)
            os << "MEAS " << t << ' ' << m.landmark << ' ' << fmt(m.range) << ' '
               << fmt(m.bearing) << ' ' << (m.forced ? 1 : 0) << '\n';
        ++t;
    }
}

std::vector<StepTruth> read_truth_stream(std::istream& is) {
    std::vector<StepTruth> steps;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        int t;
        ls >> tag >> t;
        if (!ls) throw ParseError("malformed truth line: " + line);
        if (tag == "TRUTH") {
            if (static_cast<int>(steps.size()) != t - 1)
                throw ParseError("truth stream out of order at step " + std::to_string(t));
            StepTruth s;
            ls >> s.true_pose.x >> s.true_pose.y >> s.true_pose.theta;
            if (!ls) throw ParseError("malformed truth line: " + line);
            steps.push_back(s);
        } else if (tag == "ODO") {
            ls >> steps.at(t - 1).executed.dx >> steps.at(t - 1).executed.dy >>
                steps.at(t - 1).executed.dtheta;
            if (!ls) throw ParseError("malformed odometry line: " + line);
        } else if (tag == "MEAS") {
            Measurement m;
            int forced;
            ls >> m.landmark >> m.range >> m.bearing >> forced;
            if (!ls) throw ParseError("malformed measurement line: " + line);
            m.forced = forced != 0;
            steps.at(t - 1).measurements.push_back(m);
        } else {
            throw ParseError("unknown truth tag: " + tag);
        }
    }
    return steps;
}

}  // namespace rubslam
