#include "rubslam/linalg.hpp"

#include <cassert>
#include <cmath>
#include <utility>

namespace rubslam {

SparseRowMatrix SparseRowMatrix::zero(int n_rows, int n_cols) {
    SparseRowMatrix m;
    m.n_rows = n_rows;
    m.n_cols = n_cols;
    m.rows.resize(static_cast<std::size_t>(n_rows));
    return m;
}

void SparseRowMatrix::push_entry(int row, int col, double v) {
    assert(row >= 0 && row < n_rows && col >= 0 && col < n_cols);
    if (std::abs(v) < kDropTol) return;
    SparseRow& r = rows[row];
    assert(r.empty() || r.back().col < col);
    r.push_back({col, v});
}

double SparseRowMatrix::at(int row, int col) const {
    for (const Entry& e : rows[row]) {
        if (e.col == col) return e.v;
        if (e.col > col) break;
    }
    return 0.0;
}

std::int64_t SparseRowMatrix::nnz() const {
    std::int64_t n = 0;
    for (const SparseRow& r : rows) n += static_cast<std::int64_t>(r.size());
    return n;
}

double UpperTriangular::diag(int i) const {
    const SparseRow& r = rows[i];
    if (!r.empty() && r.front().col == i) return r.front().v;
    return 0.0;
}

std::int64_t UpperTriangular::nnz() const {
    std::int64_t n = 0;
    for (const SparseRow& r : rows) n += static_cast<std::int64_t>(r.size());
    return n;
}

namespace {

// Rotates rows a and b, both leading at column col, so that b's entry at col
// is annihilated and a's becomes +hypot. Returns (c, s).
std::pair<double, double> rotate_pair(SparseRow& a, SparseRow& b, int col) {
    assert(!a.empty() && a.front().col == col);
    assert(!b.empty() && b.front().col == col);
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
        int ca = ia < a.size() ? a[ia].col : INT32_MAX;
        int cb = ib < b.size() ? b[ib].col : INT32_MAX;
        int cc = ca < cb ? ca : cb;
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
    return {c, s};
}

void drop_tiny_lead(SparseRow& r) {
    std::size_t k = 0;
    while (k < r.size() && std::abs(r[k].v) < kDropTol) ++k;
    if (k > 0) r.erase(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(k));
}

QrResult qr_worker(std::vector<SparseRow> work, int n_cols) {
    const int n_rows = static_cast<int>(work.size());
    QrResult out;
    out.q.dim = n_rows;

    std::vector<int> pivot_of_col(static_cast<std::size_t>(n_cols), -1);
    std::vector<int> col_of_phys(static_cast<std::size_t>(n_rows), -1);

    for (int p = 0; p < n_rows; ++p) {
        SparseRow& row = work[p];
        for (;;) {
            drop_tiny_lead(row);
            if (row.empty()) break;
            const int col = row.front().col;
            if (pivot_of_col[col] < 0) {
                pivot_of_col[col] = p;
                col_of_phys[p] = col;
                break;
            }
            const int piv = pivot_of_col[col];
            auto [c, s] = rotate_pair(work[piv], row, col);
            out.q.rots.push_back({piv, p, c, s});
        }
    }

    // Move every parked pivot row to the physical index of its column so the
    // triangular layout matches the global row numbering.
    for (int col = 0; col < n_cols; ++col) {
        const int p = pivot_of_col[col];
        if (p < 0 || p == col) continue;
        out.q.rots.push_back({col, p, 0.0, 1.0});
        SparseRow displaced = std::move(work[col]);
        work[col] = std::move(work[p]);
        for (Entry& e : displaced) e.v = -e.v;
        work[p] = std::move(displaced);
        const int disp_col = col_of_phys[col];
        pivot_of_col[col] = col;
        col_of_phys[col] = col;
        col_of_phys[p] = disp_col;
        if (disp_col >= 0) pivot_of_col[disp_col] = p;
    }

    // Force a non-negative diagonal; missing or tiny pivots mean the input
    // did not have full column rank.
    for (int col = 0; col < n_cols; ++col) {
        if (pivot_of_col[col] < 0 || work[col].empty() || work[col].front().col != col)
            throw RankDeficient("no pivot survives elimination for column " + std::to_string(col));
        double& dv = work[col].front().v;
        if (dv < 0.0) {
            out.q.rots.push_back({col, col, -1.0, 0.0});
            for (Entry& e : work[col]) e.v = -e.v;
        }
        if (work[col].front().v < kDropTol)
            throw RankDeficient("zero pivot in column " + std::to_string(col));
    }

    out.r.n = n_cols;
    out.r.rows.assign(work.begin(), work.begin() + n_cols);
    return out;
}

}  // namespace

QrResult givens_qr(const SparseRowMatrix& a) {
    if (a.n_rows < a.n_cols)
        throw RankDeficient("matrix has fewer rows than columns");
    return qr_worker(a.rows, a.n_cols);
}

SparseRowMatrix stack_padded(const UpperTriangular& r, const SparseRowMatrix& rows) {
    if (rows.n_cols < r.n)
        throw DimensionMismatch("new rows have fewer columns than the previous factor");
    SparseRowMatrix s = SparseRowMatrix::zero(rows.n_cols + rows.n_rows, rows.n_cols);
    for (int i = 0; i < r.n; ++i) s.rows[i] = r.rows[i];
    for (int i = 0; i < rows.n_rows; ++i) s.rows[rows.n_cols + i] = rows.rows[i];
    return s;
}

QrResult incremental_qr(const UpperTriangular& r_prev, const SparseRowMatrix& new_rows) {
    return givens_qr(stack_padded(r_prev, new_rows));
}

DenseVec apply_q_transpose(const GivensSeq& q, const DenseVec& v) {
    if (static_cast<int>(v.size()) != q.dim)
        throw DimensionMismatch("vector length does not match rotation dimension");
    DenseVec x = v;
    for (const GivensRot& g : q.rots) {
        if (g.i == g.j) {
            x[g.i] = g.c * x[g.i];
            continue;
        }
        const double vi = x[g.i];
        const double vj = x[g.j];
        x[g.i] = g.c * vi + g.s * vj;
        x[g.j] = -g.s * vi + g.c * vj;
    }
    return x;
}

DenseVec apply_q(const GivensSeq& q, const DenseVec& v) {
    if (static_cast<int>(v.size()) != q.dim)
        throw DimensionMismatch("vector length does not match rotation dimension");
    DenseVec x = v;
    for (auto it = q.rots.rbegin(); it != q.rots.rend(); ++it) {
        if (it->i == it->j) {
            x[it->i] = it->c * x[it->i];
            continue;
        }
        const double vi = x[it->i];
        const double vj = x[it->j];
        x[it->i] = it->c * vi - it->s * vj;
        x[it->j] = it->s * vi + it->c * vj;
    }
    return x;
}

DenseVec back_substitute(const UpperTriangular& r, const DenseVec& d) {
    if (static_cast<int>(d.size()) != r.n)
        throw DimensionMismatch("rhs length does not match matrix size");
    DenseVec x(d.size(), 0.0);
    for (int i = r.n - 1; i >= 0; --i) {
        const SparseRow& row = r.rows[i];
        if (row.empty() || row.front().col != i || std::abs(row.front().v) < kDropTol)
            throw SingularPivot("zero diagonal at row " + std::to_string(i));
        double acc = d[i];
        for (std::size_t k = 1; k < row.size(); ++k) acc -= row[k].v * x[row[k].col];
        x[i] = acc / row.front().v;
    }
    return x;
}

DenseVec forward_substitute_transpose(const UpperTriangular& r, const DenseVec& v) {
    if (static_cast<int>(v.size()) != r.n)
        throw DimensionMismatch("rhs length does not match matrix size");
    DenseVec x(v.size(), 0.0);
    DenseVec acc(v.size(), 0.0);
    for (int i = 0; i < r.n; ++i) {
        const SparseRow& row = r.rows[i];
        if (row.empty() || row.front().col != i || std::abs(row.front().v) < kDropTol)
            throw SingularPivot("zero diagonal at row " + std::to_string(i));
        const double xi = (v[i] - acc[i]) / row.front().v;
        x[i] = xi;
        for (std::size_t k = 1; k < row.size(); ++k) acc[row[k].col] += row[k].v * xi;
    }
    return x;
}

DenseVec transpose_times(const SparseRowMatrix& a, const DenseVec& x) {
    if (static_cast<int>(x.size()) != a.n_rows)
        throw DimensionMismatch("vector length does not match row count");
    DenseVec y(static_cast<std::size_t>(a.n_cols), 0.0);
    for (int i = 0; i < a.n_rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (const Entry& e : a.rows[i]) y[e.col] += e.v * xi;
    }
    return y;
}

DenseVec transpose_times(const UpperTriangular& r, const DenseVec& x) {
    if (static_cast<int>(x.size()) != r.n)
        throw DimensionMismatch("vector length does not match matrix size");
    DenseVec y(x.size(), 0.0);
    for (int i = 0; i < r.n; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (const Entry& e : r.rows[i]) y[e.col] += e.v * xi;
    }
    return y;
}

std::int64_t nnz_q_predict(int n_s, int n_f, int j) {
    if (n_s < 1 || n_f < 1 || j < 1 || j > n_s)
        throw InvalidArgument("nnz_q_predict arguments out of range");
    const std::int64_t ns = n_s, nf = n_f, jj = j;
    const std::int64_t n = ns + nf - jj + 1;
    assert((n * (n + 3)) % 2 == 0);
    assert(((nf - 1) * (2 * ns + nf + 2)) % 2 == 0);
    const std::int64_t count =
        (jj - 1) + n * (n + 3) / 2 - 1 + (nf - 1) * (2 * ns + nf + 2) / 2;
    assert(count > 0);
    return count;
}

NnzTerm nnz_q_dominant_term(int n_s, int n_f) {
    if (n_s < 6) return NnzTerm::TermC;
    const double ns = n_s;
    const double threshold = (ns - 3.0) / 2.0 + std::sqrt(ns * ns - 6.0 * ns) / 2.0;
    return n_f > threshold ? NnzTerm::TermA : NnzTerm::TermC;
}

}  // namespace rubslam
