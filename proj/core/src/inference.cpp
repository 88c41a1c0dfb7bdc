#include "rubslam/inference.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace rubslam {

const DaSet& Belief::da_at(int step) const {
    for (const DaSet& d : da)
        if (d.timestamp == step) return d;
    throw InvalidArgument("no association record for step " + std::to_string(step));
}

Belief make_prior_belief(const Factor& prior, const PoseSE2& init) {
    Belief b;
    b.t = b.k = prior.keys[0].index;
    b.lin.insert(prior.keys[0], init);
    b.graph.push_back(prior);
    b.tree = eliminate(b.graph, b.lin);
    b.da.push_back(DaSet::of(b.t, {}));
    return b;
}

Values map_estimate(const Belief& b) {
    Values est = b.lin;
    est.add_delta(tree_solve(b.tree, b.lin));
    return est;
}

void initialize_new_variables(Values& lin, const std::vector<Factor>& new_factors,
                              const Values& estimate) {
    for (const Factor& f : new_factors) {
        switch (f.kind) {
            case FactorKind::Prior:
                if (!lin.has(f.keys[0]))
                    lin.insert(f.keys[0], PoseSE2{f.measured[0], f.measured[1], f.measured[2]});
                break;
            case FactorKind::Motion: {
                const VarKey next = f.keys[1];
                if (lin.has(next)) break;
                const PoseSE2 from = estimate.pose(f.keys[0]);
                lin.insert(next, motion_compose(from, {f.measured[0], f.measured[1],
                                                       f.measured[2]}));
                break;
            }
            case FactorKind::RangeBearing: {
                const VarKey lm = f.keys[1];
                if (lin.has(lm)) break;
                // The observing pose is either an old estimate or a pose just
                // initialized above; prefer the freshly extended values.
                const PoseSE2 p =
                    lin.has(f.keys[0]) ? lin.pose(f.keys[0]) : estimate.pose(f.keys[0]);
                const double a = p.theta + f.measured[1];
                lin.insert(lm, Point2{p.x + f.measured[0] * std::cos(a),
                                      p.y + f.measured[0] * std::sin(a)});
                break;
            }
        }
    }
}

namespace {

int new_time(const Belief& b, const std::vector<Factor>& new_factors) {
    int t = b.t;
    for (const Factor& f : new_factors) t = std::max(t, f.time());
    return t;
}

std::vector<DaSet> extended_da(const Belief& b, const std::vector<Factor>& new_factors,
                               int t_new) {
    std::vector<DaSet> da = b.da;
    if (t_new == b.t) return da;
    std::vector<int> lms;
    for (const Factor& f : new_factors)
        if (f.kind == FactorKind::RangeBearing) lms.push_back(f.keys[1].index);
    da.push_back(DaSet::of(t_new, std::move(lms)));
    return da;
}

}  // namespace

Belief batch_update(const Belief& b, const std::vector<Factor>& new_factors,
                    UpdateCounters* counters) {
    Belief out;
    out.k = out.t = new_time(b, new_factors);
    out.lin = b.lin;
    if (!new_factors.empty()) initialize_new_variables(out.lin, new_factors, map_estimate(b));
    out.graph = b.graph;
    out.graph.insert(out.graph.end(), new_factors.begin(), new_factors.end());
    out.tree = eliminate(out.graph, out.lin);
    out.da = extended_da(b, new_factors, out.t);
    if (counters) {
        counters->n_reeliminations = out.lin.size();
        for (const Factor& f : new_factors) counters->n_added_factor_rows += f.dof();
    }
    return out;
}

Belief incremental_update(const Belief& b, const std::vector<Factor>& new_factors,
                          UpdateCounters* counters) {
    if (new_factors.empty()) {
        if (counters) *counters = {};
        return b;
    }
    Belief out;
    out.k = out.t = new_time(b, new_factors);
    out.lin = b.lin;
    initialize_new_variables(out.lin, new_factors, map_estimate(b));

    // Involved variables: every existing key of the new factors.
    std::vector<VarKey> involved;
    std::vector<VarKey> new_vars;
    for (const Factor& f : new_factors)
        for (const VarKey& k : f.keys)
            if (b.tree.has_var(k))
                involved.push_back(k);
            else
                new_vars.push_back(k);
    std::sort(involved.begin(), involved.end());
    involved.erase(std::unique(involved.begin(), involved.end()), involved.end());
    std::sort(new_vars.begin(), new_vars.end());
    new_vars.erase(std::unique(new_vars.begin(), new_vars.end()), new_vars.end());

    const SubtreeHandle region = involved_subtree(b.tree, involved, out.lin);
    const DetachedGraph split = detach_subgraph(b.graph, b.tree, region);
    std::vector<Factor> region_factors;
    for (int i : split.sub) region_factors.push_back(b.graph[i]);
    region_factors.insert(region_factors.end(), new_factors.begin(), new_factors.end());

    out.tree = reattach(b.tree, region, region_factors, new_vars, out.lin);
    out.graph = b.graph;
    out.graph.insert(out.graph.end(), new_factors.begin(), new_factors.end());
    out.da = extended_da(b, new_factors, out.t);
    if (counters) {
        counters->n_reeliminations =
            static_cast<int>(region.cliques.size() + new_vars.size());
        for (const Factor& f : new_factors) counters->n_added_factor_rows += f.dof();
    }
    return out;
}

double graph_residual_norm(const std::vector<Factor>& graph, const Values& values) {
    double s = 0.0;
    for (const Factor& f : graph)
        for (double r : whitened_residual(f, values)) s += r * r;
    return std::sqrt(s);
}

Belief gauss_newton(const Belief& b, int max_iter, double tol, GaussNewtonReport* report) {
    Belief cur = b;
    double res = graph_residual_norm(cur.graph, cur.lin);
    if (report) report->residuals.push_back(res);
    int grow_streak = 0;
    for (int it = 0; it < max_iter; ++it) {
        const DenseVec dx = tree_solve(cur.tree, cur.lin);
        double step = 0.0;
        for (double v : dx) step = std::max(step, std::abs(v));
        if (step < tol) break;
        cur.lin.add_delta(dx);
        cur.tree = eliminate(cur.graph, cur.lin);
        if (report) ++report->iterations;
        const double next = graph_residual_norm(cur.graph, cur.lin);
        if (report) report->residuals.push_back(next);
        grow_streak = next > res ? grow_streak + 1 : 0;
        if (grow_streak >= 3) throw Diverged("residual grew three iterations in a row");
        res = next;
    }
    return cur;
}

DenseMat marginal_cov_block(const Belief& b, VarKey key) {
    const auto [r, d] = flatten(b.tree, b.lin);
    const int c0 = b.lin.col_offset(key);
    const int dof = var_dof(key);
    DenseMat block(dof, dof);
    for (int c = 0; c < dof; ++c) {
        DenseVec e(static_cast<std::size_t>(r.n), 0.0);
        e[c0 + c] = 1.0;
        const DenseVec w = forward_substitute_transpose(r, e);
        const DenseVec col = back_substitute(r, w);
        for (int row = 0; row < dof; ++row) block.at(row, c) = col[c0 + row];
    }
    return block;
}

double marginal_cov_trace(const Belief& b, VarKey key) {
    const DenseMat m = marginal_cov_block(b, key);
    double t = 0.0;
    for (int i = 0; i < m.rows; ++i) t += m.at(i, i);
    return t;
}

}  // namespace rubslam
