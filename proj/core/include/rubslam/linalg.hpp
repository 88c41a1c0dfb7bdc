#pragma once

#include <cstdint>
#include <vector>

#include "rubslam/errors.hpp"

namespace rubslam {

/// Entries with |value| below this threshold are dropped from sparse storage.
constexpr double kDropTol = 1e-12;

using DenseVec = std::vector<double>;

struct Entry {
    int col;
    double v;
};

/// One sparse row, entries sorted by strictly increasing column index.
using SparseRow = std::vector<Entry>;

/// Row-major sparse matrix. Holds Jacobian blocks and stacked systems.
struct SparseRowMatrix {
    int n_rows = 0;
    int n_cols = 0;
    std::vector<SparseRow> rows;

    static SparseRowMatrix zero(int n_rows, int n_cols);
    /// Appends an entry; columns must be pushed in increasing order per row.
    void push_entry(int row, int col, double v);
    double at(int row, int col) const;
    std::int64_t nnz() const;
};

/// Square sparse upper-triangular matrix; row i stores columns >= i and the
/// diagonal entry is always first when present.
struct UpperTriangular {
    int n = 0;
    std::vector<SparseRow> rows;

    /// Diagonal value, or 0 if structurally missing.
    double diag(int i) const;
    std::int64_t nnz() const;
};

/// A plane rotation acting on rows (i, j). The special form j == i encodes a
/// sign flip of row i (c = -1, s = 0), used to keep R's diagonal non-negative.
struct GivensRot {
    int i;
    int j;
    double c;
    double s;
};

/// Q stored implicitly as the ordered rotation sequence that triangularizes
/// the input: applying the rotations in order realizes Q^T.
struct GivensSeq {
    int dim = 0;
    std::vector<GivensRot> rots;

    bool empty() const { return rots.empty(); }
};

struct QrResult {
    GivensSeq q;
    UpperTriangular r;
};

/// QR factorization by Givens rotations. Rows are processed top to bottom and
/// within each row the leftmost surviving nonzero is eliminated first.
/// Requires n_rows >= n_cols and full column rank; the returned R has a
/// non-negative diagonal. Throws RankDeficient if a pivot never materializes.
QrResult givens_qr(const SparseRowMatrix& a);

/// Factorization of the stacked system [R_prev (zero-padded); new_rows].
/// Equivalent to givens_qr of that stack; q.dim = new_rows.n_cols +
/// new_rows.n_rows. Rotations are emitted only for columns at or beyond the
/// leftmost column touched by new_rows.
QrResult incremental_qr(const UpperTriangular& r_prev, const SparseRowMatrix& new_rows);

/// Returns Q^T v by applying each stored rotation in sequence order.
DenseVec apply_q_transpose(const GivensSeq& q, const DenseVec& v);

/// Returns Q v (rotations applied transposed, in reverse order).
DenseVec apply_q(const GivensSeq& q, const DenseVec& v);

/// Solves R x = d.
DenseVec back_substitute(const UpperTriangular& r, const DenseVec& d);

/// Solves R^T x = v.
DenseVec forward_substitute_transpose(const UpperTriangular& r, const DenseVec& v);

/// y = A^T x with x of length n_rows.
DenseVec transpose_times(const SparseRowMatrix& a, const DenseVec& x);

/// y = R^T x with x of length n.
DenseVec transpose_times(const UpperTriangular& r, const DenseVec& x);

/// Builds the stacked matrix [R zero-padded to n_cols; rows] used by
/// incremental factorization. Requires n_cols >= r.n.
SparseRowMatrix stack_padded(const UpperTriangular& r, const SparseRowMatrix& rows);

/// Closed-form count of the nonzeros in the accumulated rotation matrix for a
/// dense R of size n_s updated with n_f dense rows whose leftmost entry sits
/// in (1-based) column j.
std::int64_t nnz_q_predict(int n_s, int n_f, int j);

enum class NnzTerm { TermA, TermC };

/// Which quadratic term dominates the nonzero count: TermA iff
/// n_f > (n_s-3)/2 + sqrt(n_s^2 - 6 n_s)/2 and n_s >= 6.
NnzTerm nnz_q_dominant_term(int n_s, int n_f);

}  // namespace rubslam
