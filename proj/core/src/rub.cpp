#include "rubslam/rub.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <set>
#include <unordered_map>

namespace rubslam {

namespace {

std::int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

std::string to_string(RhsMethod m) {
    switch (m) {
        case RhsMethod::OTM:
            return "OTM";
        case RhsMethod::OTM_OO:
            return "OTM_OO";
        case RhsMethod::DU:
            return "DU";
        case RhsMethod::DU_OO:
            return "DU_OO";
    }
    return "?";
}

RhsMethod rhs_method_from_string(const std::string& s) {
    if (s == "OTM") return RhsMethod::OTM;
    if (s == "OTM_OO") return RhsMethod::OTM_OO;
    if (s == "DU") return RhsMethod::DU;
    if (s == "DU_OO") return RhsMethod::DU_OO;
    throw InvalidArgument("unknown rhs method: " + s);
}

int PlanningSession::obs_row_offset(int lm) const {
    auto it = std::lower_bound(da_pred.landmarks.begin(), da_pred.landmarks.end(), lm);
    if (it == da_pred.landmarks.end() || *it != lm)
        throw InvalidArgument("landmark not in predicted associations: " + std::to_string(lm));
    return 2 * static_cast<int>(it - da_pred.landmarks.begin());
}

PlanningSession make_session(const Belief& belief, const Odometry& action,
                             std::vector<Factor> predicted_obs,
                             const std::array<double, 3>& motion_sigmas) {
    PlanningSession s;
    s.k = belief.t;
    s.action = action;

    const Factor motion = make_motion(belief.t, action, motion_sigmas);
    s.predicted_factors.push_back(motion);
    std::vector<int> lms;
    for (const Factor& f : predicted_obs) {
        assert(f.kind == FactorKind::RangeBearing);
        lms.push_back(f.keys[1].index);
        s.predicted_factors.push_back(f);
    }
    assert(std::is_sorted(lms.begin(), lms.end()));
    s.da_pred = DaSet::of(belief.t + 1, std::move(lms));

    // Tree-side prediction; carries the caches the association repair needs.
    s.predicted = incremental_update(belief, s.predicted_factors);
    s.predicted.k = belief.k;  // information only up to planning time

    // Flat two-stage factorization mirroring the tree-side update.
    const Values& lin = s.predicted.lin;
    s.n_prev = belief.lin.dim();
    s.n_pred = lin.dim();
    {
        auto [r0, d0] = flatten(belief.tree, belief.lin);
        s.r_prev = std::move(r0);
        s.d_prev = std::move(d0);
    }

    // The motion stage spans the old state plus the propagated pose only;
    // columns for landmarks first predicted this step join at the
    // observation stage.
    const int n_motion_cols = s.n_prev + 3;
    AssembledSystem fsys = assemble({motion}, lin);
    fsys.a.n_cols = n_motion_cols;
    for (const SparseRow& row : fsys.a.rows)
        assert(row.empty() || row.back().col < n_motion_cols);
    auto [qf, rf] = incremental_qr(s.r_prev, fsys.a);
    s.q_motion = std::move(qf);
    s.r_motion = std::move(rf);
    DenseVec v(static_cast<std::size_t>(n_motion_cols), 0.0);
    std::copy(s.d_prev.begin(), s.d_prev.end(), v.begin());
    v.insert(v.end(), fsys.b.begin(), fsys.b.end());
    DenseVec dm = apply_q_transpose(s.q_motion, v);
    dm.resize(static_cast<std::size_t>(n_motion_cols));
    s.d_motion = std::move(dm);
    s.b_motion = fsys.b;

    const AssembledSystem hsys = assemble(predicted_obs, lin);
    auto [qh, rp] = incremental_qr(s.r_motion, hsys.a);
    s.q_obs = std::move(qh);
    s.r_pred = std::move(rp);
    DenseVec vh = s.d_motion;
    vh.resize(static_cast<std::size_t>(s.n_pred), 0.0);
    vh.insert(vh.end(), hsys.b.begin(), hsys.b.end());
    DenseVec dp = apply_q_transpose(s.q_obs, vh);
    dp.resize(static_cast<std::size_t>(s.n_pred));
    s.d_pred = std::move(dp);
    s.b_obs = hsys.b;
    s.h_obs = hsys.a;

    // Compose both stages over [R_prev padded; F; H]. Motion rows sit past
    // the padded block, observation rows past them.
    const int n_motion_rows = fsys.a.n_rows;
    s.q_full.dim = s.n_pred + n_motion_rows + hsys.a.n_rows;
    for (GivensRot g : s.q_motion.rots) {
        if (g.i >= n_motion_cols) g.i += s.n_pred - n_motion_cols;
        if (g.j >= n_motion_cols) g.j += s.n_pred - n_motion_cols;
        s.q_full.rots.push_back(g);
    }
    for (GivensRot g : s.q_obs.rots) {
        if (g.i >= s.n_pred) g.i += n_motion_rows;
        if (g.j >= s.n_pred) g.j += n_motion_rows;
        s.q_full.rots.push_back(g);
    }

    s.a_new = SparseRowMatrix::zero(n_motion_rows + hsys.a.n_rows, s.n_pred);
    for (int i = 0; i < n_motion_rows; ++i) s.a_new.rows[i] = fsys.a.rows[i];
    for (int i = 0; i < hsys.a.n_rows; ++i) s.a_new.rows[n_motion_rows + i] = hsys.a.rows[i];
    return s;
}

DenseVec otm_update(const PlanningSession& s, const DenseVec& b_new) {
    if (static_cast<int>(b_new.size()) != s.a_new.n_rows)
        throw DimensionMismatch("rhs length does not match the new factor rows");
    DenseVec v(static_cast<std::size_t>(s.n_pred), 0.0);
    std::copy(s.d_prev.begin(), s.d_prev.end(), v.begin());
    v.insert(v.end(), b_new.begin(), b_new.end());
    DenseVec d = apply_q_transpose(s.q_full, v);
    d.resize(static_cast<std::size_t>(s.n_pred));
    return d;
}

DenseVec otm_oo_update(const PlanningSession& s, const DenseVec& b_new_obs) {
    if (static_cast<int>(b_new_obs.size()) != s.h_obs.n_rows)
        throw DimensionMismatch("rhs length does not match the observation rows");
    DenseVec v = s.d_motion;
    v.resize(static_cast<std::size_t>(s.n_pred), 0.0);
    v.insert(v.end(), b_new_obs.begin(), b_new_obs.end());
    DenseVec d = apply_q_transpose(s.q_obs, v);
    d.resize(static_cast<std::size_t>(s.n_pred));
    return d;
}

DenseVec du_update(const PlanningSession& s, const DenseVec& b_new) {
    if (static_cast<int>(b_new.size()) != s.a_new.n_rows)
        throw DimensionMismatch("rhs length does not match the new factor rows");
    DenseVec w = transpose_times(s.r_prev, s.d_prev);
    w.resize(static_cast<std::size_t>(s.n_pred), 0.0);
    const DenseVec atb = transpose_times(s.a_new, b_new);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += atb[i];
    return forward_substitute_transpose(s.r_pred, w);
}

DenseVec du_oo_update(const PlanningSession& s, const DenseVec& b_new_obs) {
    if (static_cast<int>(b_new_obs.size()) != s.h_obs.n_rows)
        throw DimensionMismatch("rhs length does not match the observation rows");
    DenseVec delta = b_new_obs;
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= s.b_obs[i];
    const DenseVec w = transpose_times(s.h_obs, delta);
    DenseVec d = forward_substitute_transpose(s.r_pred, w);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s.d_pred[i];
    return d;
}

namespace {

// Splits a step's factors into the motion factor and observations by landmark.
struct StepFactors {
    const Factor* motion = nullptr;
    std::unordered_map<int, const Factor*> obs;
};

StepFactors split_step(const std::vector<Factor>& factors) {
    StepFactors out;
    for (const Factor& f : factors) {
        if (f.kind == FactorKind::Motion)
            out.motion = &f;
        else if (f.kind == FactorKind::RangeBearing)
            out.obs[f.keys[1].index] = &f;
    }
    return out;
}

}  // namespace

DaUpdateResult da_update_graph(const std::vector<Factor>& graph, const BayesTree& tree,
                               const Values& lin, const DaSet& m_plan,
                               const std::vector<Factor>& actual_factors, const DaSet& m_inf) {
    DaUpdateResult out;
    out.report = da_report(m_plan, m_inf);
    if (out.report.consistent()) {
        out.graph = graph;
        out.tree = tree;
        out.lin = lin;
        return out;
    }
    out.changed = true;
    const int step = m_inf.timestamp;
    const StepFactors actual = split_step(actual_factors);

    // Factors to remove come from the predicted graph, factors to add from
    // the actual step.
    std::vector<std::size_t> rmv_idx;
    std::vector<const Factor*> add_factors;
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const Factor& f = graph[i];
        if (f.kind == FactorKind::RangeBearing && f.keys[0].index == step &&
            out.report.rmv.contains(f.keys[1].index))
            rmv_idx.push_back(i);
    }
    for (int lm : out.report.add.landmarks) {
        auto it = actual.obs.find(lm);
        if (it == actual.obs.end())
            throw InvalidArgument("association set lists a landmark with no factor: " +
                                  std::to_string(lm));
        add_factors.push_back(it->second);
    }

    // A landmark that existed only through a removed prediction disappears
    // with it. Such variables were appended by planning at the ordering tail,
    // so dropping them cannot shift the columns of surviving old variables.
    std::set<std::size_t> rmv_lookup(rmv_idx.begin(), rmv_idx.end());
    std::set<VarKey> dropped;
    for (std::size_t i : rmv_idx) {
        const VarKey lm = graph[i].keys[1];
        bool referenced = false;
        for (std::size_t j = 0; j < graph.size() && !referenced; ++j)
            if (!rmv_lookup.count(j))
                referenced = std::count(graph[j].keys.begin(), graph[j].keys.end(), lm) > 0;
        if (!referenced) dropped.insert(lm);
    }
    if (dropped.empty()) {
        out.lin = lin;
    } else {
        const int step_pos = lin.position(pose_key(step));
        for (const VarKey& v : dropped)
            if (lin.position(v) < step_pos)
                throw Error("cannot drop a pre-existing variable: " + var_name(v));
        for (const VarKey& v : lin.ordering()) {
            if (dropped.count(v)) continue;
            if (v.kind == VarKind::Pose)
                out.lin.insert(v, lin.pose(v));
            else
                out.lin.insert(v, lin.point(v));
        }
    }
    std::vector<Factor> adds;
    for (const Factor* f : add_factors) adds.push_back(*f);
    initialize_new_variables(out.lin, adds, out.lin);

    std::vector<VarKey> involved;
    for (std::size_t i : rmv_idx)
        for (const VarKey& k : graph[i].keys) involved.push_back(k);
    for (const Factor* f : add_factors)
        for (const VarKey& k : f->keys)
            if (tree.has_var(k))
                involved.push_back(k);
            else
                out.new_vars.push_back(k);
    // Dropping shifts the columns of every later variable, so their cliques
    // must be rebuilt as well; all of them are planning-created tail entries.
    if (!dropped.empty()) {
        int min_pos = lin.size();
        for (const VarKey& v : dropped) min_pos = std::min(min_pos, lin.position(v));
        for (int p = min_pos; p < lin.size(); ++p)
            if (!dropped.count(lin.ordering()[p])) involved.push_back(lin.ordering()[p]);
    }
    std::sort(involved.begin(), involved.end());
    involved.erase(std::unique(involved.begin(), involved.end()), involved.end());
    std::sort(out.new_vars.begin(), out.new_vars.end());
    out.new_vars.erase(std::unique(out.new_vars.begin(), out.new_vars.end()),
                       out.new_vars.end());

    // Sorting of the region needs positions for every frontal, including the
    // ones about to be dropped, so it runs under the pre-drop ordering.
    const SubtreeHandle region = involved_subtree(tree, involved, lin);
    const DetachedGraph split = detach_subgraph(graph, tree, region);

    std::set<std::size_t> rmv_set(rmv_idx.begin(), rmv_idx.end());
    std::vector<Factor> region_factors;
    for (int i : split.sub)
        if (!rmv_set.count(static_cast<std::size_t>(i)))
            region_factors.push_back(graph[i]);
    for (const Factor& f : adds) region_factors.push_back(f);

    out.tree = reattach(tree, region, region_factors, out.new_vars, out.lin);

    out.graph.reserve(graph.size() + adds.size());
    for (std::size_t i = 0; i < graph.size(); ++i)
        if (!rmv_set.count(i)) out.graph.push_back(graph[i]);
    out.graph.insert(out.graph.end(), adds.begin(), adds.end());

    out.n_reeliminations = static_cast<int>(region.cliques.size() + out.new_vars.size());
    for (const Factor& f : adds) out.n_added_rows += f.dof();
    return out;
}

DaUpdateResult da_update(const PlanningSession& s, const std::vector<Factor>& actual_factors,
                         const DaSet& m_inf) {
    return da_update_graph(s.predicted.graph, s.predicted.tree, s.predicted.lin, s.da_pred,
                           actual_factors, m_inf);
}

Belief rub_inference_step(const PlanningSession& s, const std::vector<Factor>& actual_factors,
                          const DaSet& m_inf, RhsMethod method, RubTimings* timings,
                          RubCounters* counters) {
    const StepFactors actual = split_step(actual_factors);
    if (actual.motion == nullptr)
        throw InvalidArgument("reuse step needs the executed motion factor");
    for (int i = 0; i < 3; ++i)
        if (std::abs(actual.motion->measured[i] -
                     s.predicted_factors[0].measured[i]) > 1e-12)
            throw InvalidArgument("executed action differs from the planned one");

    const std::int64_t t0 = now_ns();
    DaUpdateResult repair = da_update(s, actual_factors, m_inf);
    const std::int64_t t1 = now_ns();

    // Whitened rhs of the surviving consistent observations at the shared
    // linearization point, keyed by the stable factor id.
    std::unordered_map<FactorId, DenseVec, FactorIdHash> changed;
    std::vector<std::pair<int, DenseVec>> consistent_rhs;  // lm -> rhs rows
    for (int lm : repair.report.common.landmarks) {
        const Factor& f = *actual.obs.at(lm);
        DenseVec rhs = linearize(f, repair.lin).rhs;
        changed[factor_id(f)] = rhs;
        consistent_rhs.emplace_back(lm, std::move(rhs));
    }

    Belief out;
    out.t = out.k = m_inf.timestamp;
    out.lin = repair.lin;
    out.tree = std::move(repair.tree);

    if (!repair.changed) {
        // All associations held: the planning-time factorization is the
        // posterior factorization and only the rhs values move.
        DenseVec d;
        switch (method) {
            case RhsMethod::OTM:
            case RhsMethod::DU: {
                DenseVec b_new = s.b_motion;
                b_new.resize(static_cast<std::size_t>(s.a_new.n_rows), 0.0);
                for (const auto& [lm, rhs] : consistent_rhs) {
                    const int off = static_cast<int>(s.b_motion.size()) + s.obs_row_offset(lm);
                    std::copy(rhs.begin(), rhs.end(), b_new.begin() + off);
                }
                d = method == RhsMethod::OTM ? otm_update(s, b_new) : du_update(s, b_new);
                break;
            }
            case RhsMethod::OTM_OO:
            case RhsMethod::DU_OO: {
                DenseVec b_obs(static_cast<std::size_t>(s.h_obs.n_rows), 0.0);
                for (const auto& [lm, rhs] : consistent_rhs)
                    std::copy(rhs.begin(), rhs.end(), b_obs.begin() + s.obs_row_offset(lm));
                d = method == RhsMethod::OTM_OO ? otm_oo_update(s, b_obs)
                                                : du_oo_update(s, b_obs);
                break;
            }
        }
        scatter_rhs(out.tree, out.lin, d);
    } else {
        // The tree was repaired; correct the surviving consistent rows with
        // the observations-only delta, which is exact for the updated factor.
        auto [r_new, d_new] = flatten(out.tree, out.lin);
        DenseVec w(static_cast<std::size_t>(out.lin.dim()), 0.0);
        for (const auto& [lm, rhs] : consistent_rhs) {
            const Factor& f = *actual.obs.at(lm);
            const Linearized l = linearize(f, out.lin);
            const int off = s.obs_row_offset(lm);
            for (int r = 0; r < f.dof(); ++r) {
                const double dr = rhs[r] - s.b_obs[off + r];
                for (const auto& [key, block] : l.blocks) {
                    const int base = out.lin.col_offset(key);
                    for (int c = 0; c < block.cols; ++c)
                        w[base + c] += block.at(r, c) * dr;
                }
            }
        }
        const DenseVec t = forward_substitute_transpose(r_new, w);
        for (std::size_t i = 0; i < d_new.size(); ++i) d_new[i] += t[i];
        scatter_rhs(out.tree, out.lin, d_new);
    }

    // Swap the surviving predicted values for the measured ones and refresh
    // the cached remainder rhs along the affected paths.
    out.graph = std::move(repair.graph);
    {
        std::unordered_map<FactorId, const Factor*, FactorIdHash> actual_by_id;
        for (int lm : repair.report.common.landmarks) {
            const Factor* f = actual.obs.at(lm);
            actual_by_id[factor_id(*f)] = f;
        }
        for (Factor& f : out.graph) {
            auto it = actual_by_id.find(factor_id(f));
            if (it != actual_by_id.end()) f.measured = it->second->measured;
        }
    }
    std::vector<VarKey> touched;
    for (const auto& [lm, rhs] : consistent_rhs) {
        touched.push_back(landmark_key(lm));
        touched.push_back(pose_key(m_inf.timestamp));
    }
    if (!touched.empty()) {
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        const SubtreeHandle affected = involved_subtree(out.tree, touched, out.lin);
        refresh_cached_rhs(out.tree, affected.cliques, changed);
    }

    out.da = s.predicted.da;
    for (DaSet& d : out.da)
        if (d.timestamp == m_inf.timestamp) d = m_inf;

    if (timings) {
        timings->da_ns = t1 - t0;
        timings->rhs_ns = now_ns() - t1;
    }
    if (counters) {
        counters->factors_reused =
            static_cast<int>(repair.report.common.landmarks.size()) + 1;
        counters->factors_added = static_cast<int>(repair.report.add.landmarks.size());
        counters->factors_removed = static_cast<int>(repair.report.rmv.landmarks.size());
        counters->n_reeliminations = repair.n_reeliminations;
    }
    return out;
}

}  // namespace rubslam
