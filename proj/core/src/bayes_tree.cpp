#include "rubslam/bayes_tree.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <set>
#include <sstream>

namespace rubslam {

namespace {

struct WRow {
    SparseRow a;
    double rhs = 0.0;
    RowSource src;
};

void drop_tiny_lead(SparseRow& r) {
    std::size_t k = 0;
    while (k < r.size() && std::abs(r[k].v) < kDropTol) ++k;
    if (k > 0) r.erase(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(k));
}

// Plane rotation of two sparse rows plus their rhs scalars; annihilates b's
// leading entry (both rows lead at column col) and leaves a's non-negative.
std::pair<double, double> rotate_pair(SparseRow& a, double& da, SparseRow& b, double& db,
                                      int col) {
    const double av = a.front().v;
    const double bv = b.front().v;
    const double r = std::hypot(av, bv);
    const double c = av / r;
    const double s = bv / r;
    SparseRow na, nb;
    na.reserve(a.size() + b.size());
    nb.reserve(a.size() + b.size());
    na.push_back({col, r});
    std::size_t ia = 1, ib = 1;
    while (ia < a.size() || ib < b.size()) {
        const int ca = ia < a.size() ? a[ia].col : INT32_MAX;
        const int cb = ib < b.size() ? b[ib].col : INT32_MAX;
        const int cc = ca < cb ? ca : cb;
        double va = 0.0, vb = 0.0;
        if (ca == cc) va = a[ia++].v;
        if (cb == cc) vb = b[ib++].v;
        const double va2 = c * va + s * vb;
        const double vb2 = -s * va + c * vb;
        if (std::abs(va2) >= kDropTol) na.push_back({cc, va2});
        if (std::abs(vb2) >= kDropTol) nb.push_back({cc, vb2});
    }
    a = std::move(na);
    b = std::move(nb);
    const double da2 = c * da + s * db;
    const double db2 = -s * da + c * db;
    da = da2;
    db = db2;
    return {c, s};
}

// Sequential variable elimination over the given ordering positions. Rows
// must lead at one of those variables; remainder rows cascade forward. One
// clique per position, in ascending order. Parent/child wiring is left to
// the caller.
std::vector<Clique> eliminate_positions(std::vector<WRow> initial, const Values& lin,
                                        const std::vector<int>& positions) {
    std::unordered_map<int, std::size_t> slot_of_pos;
    for (std::size_t i = 0; i < positions.size(); ++i) slot_of_pos[positions[i]] = i;

    std::vector<std::vector<WRow>> buckets(positions.size());
    auto push_row = [&](WRow&& row) {
        drop_tiny_lead(row.a);
        if (row.a.empty()) return;
        const VarKey lead = lin.var_at_col(row.a.front().col);
        auto it = slot_of_pos.find(lin.position(lead));
        if (it == slot_of_pos.end())
            throw Error("row leads at a variable outside the elimination set: " +
                        var_name(lead));
        buckets[it->second].push_back(std::move(row));
    };
    for (WRow& row : initial) push_row(std::move(row));

    std::vector<Clique> out;
    out.reserve(positions.size());
    for (std::size_t slot = 0; slot < positions.size(); ++slot) {
        const VarKey var = lin.ordering()[positions[slot]];
        const int c0 = lin.col_offset(var);
        const int dof = var_dof(var);
        std::vector<WRow> work = std::move(buckets[slot]);
        if (work.empty())
            throw RankDeficient("variable " + var_name(var) + " is unconstrained");

        Clique cl;
        cl.frontal = var;
        cl.sources.reserve(work.size());
        cl.input_rhs.reserve(work.size());
        for (const WRow& w : work) {
            cl.sources.push_back(w.src);
            cl.input_rhs.push_back(w.rhs);
        }

        std::vector<int> pivot(dof, -1);
        for (int li = 0; li < static_cast<int>(work.size()); ++li) {
            SparseRow& row = work[li].a;
            for (;;) {
                drop_tiny_lead(row);
                if (row.empty()) break;
                const int col = row.front().col;
                if (col >= c0 + dof) break;
                const int s = col - c0;
                if (pivot[s] < 0) {
                    pivot[s] = li;
                    break;
                }
                auto [c, sn] =
                    rotate_pair(work[pivot[s]].a, work[pivot[s]].rhs, row, work[li].rhs, col);
                cl.elim_rots.push_back({pivot[s], li, c, sn});
            }
        }
        for (int s = 0; s < dof; ++s) {
            if (pivot[s] < 0)
                throw RankDeficient("variable " + var_name(var) + " is under-constrained");
            WRow& p = work[pivot[s]];
            if (p.a.front().v < 0.0) {
                cl.elim_rots.push_back({pivot[s], pivot[s], -1.0, 0.0});
                for (Entry& e : p.a) e.v = -e.v;
                p.rhs = -p.rhs;
            }
            if (p.a.front().v < kDropTol)
                throw RankDeficient("zero pivot for " + var_name(var));
        }

        // Separator covers the structure of the conditional and of every
        // remainder row, so messages can be routed strictly tree-wise.
        std::set<int> sep_positions;
        std::vector<bool> is_pivot(work.size(), false);
        for (int s = 0; s < dof; ++s) is_pivot[pivot[s]] = true;
        for (int li = 0; li < static_cast<int>(work.size()); ++li) {
            if (!is_pivot[li]) drop_tiny_lead(work[li].a);
            for (const Entry& e : work[li].a)
                if (e.col >= c0 + dof) sep_positions.insert(lin.position(lin.var_at_col(e.col)));
        }
        for (int pos : sep_positions) cl.separator.push_back(lin.ordering()[pos]);

        for (int s = 0; s < dof; ++s) {
            WRow& p = work[pivot[s]];
            cl.pivot_slots.push_back(pivot[s]);
            cl.d_rows.push_back(p.rhs);
            cl.r_rows.push_back(std::move(p.a));
        }

        // All remainder rows become this clique's cache and flow to the
        // parent's elimination; rows leading past the parent pass through it
        // unrotated so the message chain stays tree-structured.
        for (int li = 0; li < static_cast<int>(work.size()); ++li) {
            if (is_pivot[li] || work[li].a.empty()) continue;
            const int idx = static_cast<int>(cl.cached_rows.size());
            cl.cache_slots.push_back(li);
            cl.cached_rows.push_back(work[li].a);
            cl.cached_d.push_back(work[li].rhs);
            if (sep_positions.empty())
                throw Error("remainder row survives past the last eliminated variable");
            const int parent_pos = *sep_positions.begin();
            auto it = slot_of_pos.find(parent_pos);
            if (it == slot_of_pos.end())
                throw Error("remainder routed to a variable outside the elimination set");
            WRow fwd;
            fwd.a = std::move(work[li].a);
            fwd.rhs = work[li].rhs;
            fwd.src = RowSource{true, {}, var, idx};
            buckets[it->second].push_back(std::move(fwd));
        }
        out.push_back(std::move(cl));
    }
    return out;
}

std::vector<WRow> factor_rows(const std::vector<Factor>& factors, const Values& lin) {
    std::vector<WRow> rows;
    for (const Factor& f : factors) {
        const Linearized l = linearize(f, lin);
        const FactorId fid = factor_id(f);
        std::vector<int> order(l.blocks.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return lin.col_offset(l.blocks[a].first) < lin.col_offset(l.blocks[b].first);
        });
        for (int r = 0; r < f.dof(); ++r) {
            WRow row;
            for (int bi : order) {
                const auto& [key, block] = l.blocks[bi];
                const int base = lin.col_offset(key);
                for (int c = 0; c < block.cols; ++c)
                    if (std::abs(block.at(r, c)) >= kDropTol)
                        row.a.push_back({base + c, block.at(r, c)});
            }
            row.rhs = l.rhs[r];
            row.src = RowSource{false, fid, {}, r};
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

// Parent = clique holding the first-eliminated separator variable.
void wire_tree(BayesTree& tree, const Values& lin) {
    tree.var_to_clique.clear();
    for (std::size_t i = 0; i < tree.cliques.size(); ++i) {
        tree.cliques[i].children.clear();
        tree.cliques[i].parent = -1;
        tree.var_to_clique[tree.cliques[i].frontal] = static_cast<int>(i);
    }
    tree.root = -1;
    for (std::size_t i = 0; i < tree.cliques.size(); ++i) {
        Clique& c = tree.cliques[i];
        if (c.separator.empty()) {
            if (tree.root >= 0) throw Error("multiple roots after elimination");
            tree.root = static_cast<int>(i);
            continue;
        }
        int best = -1, best_pos = INT32_MAX;
        for (const VarKey& v : c.separator) {
            const int pos = lin.position(v);
            if (pos < best_pos) {
                best_pos = pos;
                best = tree.var_to_clique.count(v) ? tree.var_to_clique[v] : -1;
                if (best < 0)
                    throw SeparatorUnresolvable("separator variable " + var_name(v) +
                                                " has no clique");
            }
        }
        c.parent = best;
        tree.cliques[best].children.push_back(static_cast<int>(i));
    }
    if (tree.root < 0) throw Error("elimination produced no root");
    for (Clique& c : tree.cliques)
        std::sort(c.children.begin(), c.children.end(), [&](int a, int b) {
            return lin.position(tree.cliques[a].frontal) < lin.position(tree.cliques[b].frontal);
        });
}

}  // namespace

int BayesTree::clique_of(VarKey v) const {
    auto it = var_to_clique.find(v);
    if (it == var_to_clique.end())
        throw UnknownVariable("variable not in tree: " + var_name(v));
    return it->second;
}

BayesTree eliminate(const std::vector<Factor>& graph, const Values& lin) {
    std::vector<int> positions(lin.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    BayesTree tree;
    tree.cliques = eliminate_positions(factor_rows(graph, lin), lin, positions);
    wire_tree(tree, lin);
    return tree;
}

SubtreeHandle involved_subtree(const BayesTree& tree, const std::vector<VarKey>& vars,
                               const Values& lin) {
    std::vector<bool> in_region(tree.cliques.size(), false);
    for (const VarKey& v : vars) {
        int c = tree.clique_of(v);
        while (c >= 0 && !in_region[c]) {
            in_region[c] = true;
            c = tree.cliques[c].parent;
        }
    }
    SubtreeHandle h;
    for (std::size_t i = 0; i < tree.cliques.size(); ++i)
        if (in_region[i]) h.cliques.push_back(static_cast<int>(i));
    std::sort(h.cliques.begin(), h.cliques.end(), [&](int a, int b) {
        return lin.position(tree.cliques[a].frontal) < lin.position(tree.cliques[b].frontal);
    });
    for (int ci : h.cliques) {
        h.variables.push_back(tree.cliques[ci].frontal);
        for (int ch : tree.cliques[ci].children)
            if (!in_region[ch]) h.orphans.push_back(ch);
    }
    return h;
}

DetachedGraph detach_subgraph(const std::vector<Factor>& graph, const BayesTree& tree,
                              const SubtreeHandle& subtree) {
    (void)tree;
    std::set<VarKey> region(subtree.variables.begin(), subtree.variables.end());
    DetachedGraph d;
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const bool inside = std::all_of(graph[i].keys.begin(), graph[i].keys.end(),
                                        [&](const VarKey& k) { return region.count(k) > 0; });
        (inside ? d.sub : d.rem).push_back(static_cast<int>(i));
    }
    return d;
}

BayesTree reattach(const BayesTree& tree, const SubtreeHandle& region,
                   const std::vector<Factor>& region_factors,
                   const std::vector<VarKey>& new_vars, const Values& lin) {
    std::vector<WRow> rows = factor_rows(region_factors, lin);
    for (int oc : region.orphans) {
        const Clique& o = tree.cliques[oc];
        for (std::size_t i = 0; i < o.cached_rows.size(); ++i) {
            WRow w;
            w.a = o.cached_rows[i];
            w.rhs = o.cached_d[i];
            w.src = RowSource{true, {}, o.frontal, static_cast<int>(i)};
            rows.push_back(std::move(w));
        }
    }

    // Region frontals no longer present in the ordering were dropped along
    // with their factors and are not re-eliminated.
    std::vector<int> positions;
    for (int ci : region.cliques)
        if (lin.has(tree.cliques[ci].frontal))
            positions.push_back(lin.position(tree.cliques[ci].frontal));
    for (const VarKey& v : new_vars) positions.push_back(lin.position(v));
    std::sort(positions.begin(), positions.end());

    std::vector<Clique> fresh = eliminate_positions(std::move(rows), lin, positions);

    BayesTree out;
    std::vector<bool> in_region(tree.cliques.size(), false);
    for (int ci : region.cliques) in_region[ci] = true;
    for (std::size_t i = 0; i < tree.cliques.size(); ++i)
        if (!in_region[i]) out.cliques.push_back(tree.cliques[i]);
    for (Clique& c : fresh) out.cliques.push_back(std::move(c));
    wire_tree(out, lin);
    return out;
}

DenseVec tree_solve(const BayesTree& tree, const Values& lin) {
    DenseVec x(static_cast<std::size_t>(lin.dim()), 0.0);
    for (int pos = lin.size() - 1; pos >= 0; --pos) {
        const VarKey var = lin.ordering()[pos];
        const Clique& c = tree.cliques[tree.clique_of(var)];
        const int c0 = lin.col_offset(var);
        for (int s = var_dof(var) - 1; s >= 0; --s) {
            const SparseRow& row = c.r_rows[s];
            if (row.empty() || row.front().col != c0 + s)
                throw SingularPivot("missing diagonal for " + var_name(var));
            double acc = c.d_rows[s];
            for (std::size_t k = 1; k < row.size(); ++k) acc -= row[k].v * x[row[k].col];
            x[c0 + s] = acc / row.front().v;
        }
    }
    return x;
}

std::pair<UpperTriangular, DenseVec> flatten(const BayesTree& tree, const Values& lin) {
    UpperTriangular r;
    r.n = lin.dim();
    r.rows.resize(static_cast<std::size_t>(r.n));
    DenseVec d(static_cast<std::size_t>(r.n), 0.0);
    for (const VarKey& var : lin.ordering()) {
        const Clique& c = tree.cliques[tree.clique_of(var)];
        const int c0 = lin.col_offset(var);
        for (int s = 0; s < var_dof(var); ++s) {
            r.rows[c0 + s] = c.r_rows[s];
            d[c0 + s] = c.d_rows[s];
        }
    }
    return {std::move(r), std::move(d)};
}

void scatter_rhs(BayesTree& tree, const Values& lin, const DenseVec& d) {
    if (static_cast<int>(d.size()) < lin.dim())
        throw DimensionMismatch("rhs shorter than the state dimension");
    for (const VarKey& var : lin.ordering()) {
        Clique& c = tree.cliques[tree.clique_of(var)];
        const int c0 = lin.col_offset(var);
        for (int s = 0; s < var_dof(var); ++s) c.d_rows[s] = d[c0 + s];
    }
}

void refresh_cached_rhs(BayesTree& tree, const std::vector<int>& region_cliques,
                        const std::unordered_map<FactorId, DenseVec, FactorIdHash>& changed) {
    std::vector<bool> refreshed(tree.cliques.size(), false);
    for (int ci : region_cliques) {
        Clique& c = tree.cliques[ci];
        for (std::size_t i = 0; i < c.sources.size(); ++i) {
            const RowSource& src = c.sources[i];
            if (src.from_cache) {
                // Region children precede their parents in the list, so any
                // refreshed cache is already up to date; orphan caches are
                // valid as stored.
                const int child = tree.clique_of(src.cache_of);
                if (refreshed[child]) c.input_rhs[i] = tree.cliques[child].cached_d[src.row];
            } else {
                auto it = changed.find(src.fid);
                if (it != changed.end()) c.input_rhs[i] = it->second[src.row];
            }
        }
        DenseVec tmp = c.input_rhs;
        for (const GivensRot& g : c.elim_rots) {
            if (g.i == g.j) {
                tmp[g.i] = g.c * tmp[g.i];
                continue;
            }
            const double vi = tmp[g.i], vj = tmp[g.j];
            tmp[g.i] = g.c * vi + g.s * vj;
            tmp[g.j] = -g.s * vi + g.c * vj;
        }
        for (std::size_t s = 0; s < c.cache_slots.size(); ++s)
            c.cached_d[s] = tmp[c.cache_slots[s]];
        refreshed[ci] = true;
    }
}

namespace {

void dump_rec(const BayesTree& tree, int ci, int depth, std::ostringstream& os) {
    const Clique& c = tree.cliques[ci];
    for (int i = 0; i < depth; ++i) os << "  ";
    os << "F:{" << var_name(c.frontal) << "} S:{";
    for (std::size_t i = 0; i < c.separator.size(); ++i)
        os << (i ? "," : "") << var_name(c.separator[i]);
    os << "}\n";
    for (int ch : c.children) dump_rec(tree, ch, depth + 1, os);
}

}  // namespace

std::string dump_topology(const BayesTree& tree) {
    std::ostringstream os;
    if (tree.root >= 0) dump_rec(tree, tree.root, 0, os);
    return os.str();
}

std::vector<std::string> topology_signature(const BayesTree& tree) {
    std::vector<std::string> sig;
    for (const Clique& c : tree.cliques) {
        std::ostringstream os;
        os << "F:{" << var_name(c.frontal) << "} S:{";
        for (std::size_t i = 0; i < c.separator.size(); ++i)
            os << (i ? "," : "") << var_name(c.separator[i]);
        os << "}";
        sig.push_back(os.str());
    }
    std::sort(sig.begin(), sig.end());
    return sig;
}

}  // namespace rubslam
