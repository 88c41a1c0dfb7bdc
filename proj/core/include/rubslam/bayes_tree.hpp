#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "rubslam/factor_graph.hpp"
#include "rubslam/linalg.hpp"

namespace rubslam {

/// Provenance of one input row of a clique's elimination: a row of a factor
/// (stable id) or a cached remainder row of a child clique (keyed by the
/// child's frontal variable, which survives tree rebuilds).
struct RowSource {
    bool from_cache = false;
    FactorId fid;
    VarKey cache_of{};
    int row = 0;
};

/// One conditional of the Bayes tree. Construction keeps a single frontal
/// variable per clique; the rows are stored under global column indices.
///
/// Besides the conditional (r_rows, d_rows) each clique keeps the remainder
/// rows emitted when its frontal variable was eliminated (cached_rows,
/// cached_d). Those rows carry the subtree's contribution towards the root
/// and are what makes detach/re-eliminate/reattach exact. The elimination is
/// also recorded (sources, input_rhs, elim_rots, slots) so the rhs side can
/// be replayed when measurement values change without redoing structure.
struct Clique {
    VarKey frontal{};
    std::vector<VarKey> separator;  // sorted by ordering position

    std::vector<SparseRow> r_rows;
    DenseVec d_rows;
    std::vector<SparseRow> cached_rows;
    DenseVec cached_d;

    std::vector<RowSource> sources;
    DenseVec input_rhs;
    std::vector<GivensRot> elim_rots;  // local row indices into the inputs
    std::vector<int> pivot_slots;
    std::vector<int> cache_slots;

    int parent = -1;
    std::vector<int> children;
};

struct BayesTree {
    std::vector<Clique> cliques;
    int root = -1;
    std::unordered_map<VarKey, int, VarKeyHash> var_to_clique;

    int clique_of(VarKey v) const;
    bool has_var(VarKey v) const { return var_to_clique.count(v) > 0; }
};

/// Eliminates the factor graph into a Bayes tree under the Values ordering.
/// Throws RankDeficient when a variable is under-constrained.
BayesTree eliminate(const std::vector<Factor>& graph, const Values& lin);

struct SubtreeHandle {
    std::vector<int> cliques;     ///< region ids, ascending frontal position
    std::vector<int> orphans;     ///< child cliques left behind by detaching
    std::vector<VarKey> variables;  ///< frontals of the region cliques
};

/// Minimal clique set containing the given variables as frontals plus all
/// ancestors up to the root.
SubtreeHandle involved_subtree(const BayesTree& tree, const std::vector<VarKey>& vars,
                               const Values& lin);

struct DetachedGraph {
    std::vector<int> sub;  ///< factor indices fully inside the subtree variables
    std::vector<int> rem;
};

DetachedGraph detach_subgraph(const std::vector<Factor>& graph, const BayesTree& tree,
                              const SubtreeHandle& subtree);

/// Re-eliminates the detached region from `region_factors` (every key must be
/// a region variable or one of `new_vars`, which are appended at the ordering
/// tail) together with the cached rows of the orphaned children, then
/// reattaches the untouched remainder. Throws SeparatorUnresolvable if an
/// orphan's separator variable no longer exists.
BayesTree reattach(const BayesTree& tree, const SubtreeHandle& region,
                   const std::vector<Factor>& region_factors,
                   const std::vector<VarKey>& new_vars, const Values& lin);

/// Back substitution driven root-down over the clique structure.
DenseVec tree_solve(const BayesTree& tree, const Values& lin);

/// Concatenates the clique rows into the global (R, d) under the ordering.
std::pair<UpperTriangular, DenseVec> flatten(const BayesTree& tree, const Values& lin);

/// Writes corrected conditional rhs values back into the clique rows.
void scatter_rhs(BayesTree& tree, const Values& lin, const DenseVec& d);

/// Replays the recorded eliminations of the given cliques (ascending frontal
/// position) after substituting new rhs values for the changed factors,
/// refreshing the cached remainder values. Conditional d values are left to
/// the caller.
void refresh_cached_rhs(BayesTree& tree, const std::vector<int>& region_cliques,
                        const std::unordered_map<FactorId, DenseVec, FactorIdHash>& changed);

/// Indented `F:{...} S:{...}` rendering used by golden topology tests.
std::string dump_topology(const BayesTree& tree);

/// Frontal/separator multiset as sorted text lines, for topology comparison.
std::vector<std::string> topology_signature(const BayesTree& tree);

}  // namespace rubslam
