#pragma once

#include <algorithm>
#include <complex>
#include <memory>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "scm/common.hpp"

namespace scm {

struct Triplet {
  int row;
  int col;
  double value;
};

/// Compressed-row sparse matrix, real double entries.
/// Column indices are strictly increasing within each row.
class CsrMatrix {
 public:
  CsrMatrix() = default;
  CsrMatrix(int rows, int cols) : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

  static CsrMatrix from_triplets(int rows, int cols, std::vector<Triplet> trip) {
    std::sort(trip.begin(), trip.end(), [](const Triplet& a, const Triplet& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    CsrMatrix m(rows, cols);
    m.col_idx_.reserve(trip.size());
    m.values_.reserve(trip.size());
    std::vector<int> counts(rows, 0);
    for (std::size_t i = 0; i < trip.size();) {
      const int r = trip[i].row;
      const int c = trip[i].col;
      if (r < 0 || r >= rows || c < 0 || c >= cols)
        throw NumericError("triplet index out of range");
      double v = 0.0;
      while (i < trip.size() && trip[i].row == r && trip[i].col == c) v += trip[i++].value;
      m.col_idx_.push_back(c);
      m.values_.push_back(v);
      ++counts[r];
    }
    for (int r = 0; r < rows; ++r) m.row_ptr_[r + 1] = m.row_ptr_[r] + counts[r];
    return m;
  }

  static CsrMatrix identity(int n) {
    std::vector<Triplet> t;
    t.reserve(n);
    for (int i = 0; i < n; ++i) t.push_back({i, i, 1.0});
    return from_triplets(n, n, std::move(t));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  const std::vector<int>& row_ptr() const { return row_ptr_; }
  const std::vector<int>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const {
    if (x.size() != cols_) throw NumericError("matvec dimension mismatch");
    Eigen::VectorXd y = Eigen::VectorXd::Zero(rows_);
    for (int r = 0; r < rows_; ++r) {
      double acc = 0.0;
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) acc += values_[k] * x[col_idx_[k]];
      y[r] = acc;
    }
    return y;
  }

  /// y = A x for complex x held as (re, im) pair.
  void multiply_complex(const Eigen::VectorXd& xr, const Eigen::VectorXd& xi,
                        Eigen::VectorXd& yr, Eigen::VectorXd& yi) const {
    yr = multiply(xr);
    yi = xi.size() == 0 ? Eigen::VectorXd::Zero(rows_) : multiply(xi);
  }

  CsrMatrix transposed() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) t.push_back({col_idx_[k], r, values_[k]});
    return from_triplets(cols_, rows_, std::move(t));
  }

  /// alpha*this + beta*other, patterns merged.
  CsrMatrix axpy(double alpha, double beta, const CsrMatrix& other) const {
    if (rows_ != other.rows_ || cols_ != other.cols_)
      throw NumericError("axpy dimension mismatch");
    std::vector<Triplet> t;
    t.reserve(nnz() + other.nnz());
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        t.push_back({r, col_idx_[k], alpha * values_[k]});
    for (int r = 0; r < other.rows_; ++r)
      for (int k = other.row_ptr_[r]; k < other.row_ptr_[r + 1]; ++k)
        t.push_back({r, other.col_idx_[k], beta * other.values_[k]});
    return from_triplets(rows_, cols_, std::move(t));
  }

  bool pattern_symmetric() const {
    CsrMatrix t = transposed();
    return t.row_ptr_ == row_ptr_ && t.col_idx_ == col_idx_;
  }

  Eigen::SparseMatrix<double> to_eigen() const {
    Eigen::SparseMatrix<double> m(rows_, cols_);
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(nnz());
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        t.emplace_back(r, col_idx_[k], values_[k]);
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
    return m;
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows_, cols_);
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) m(r, col_idx_[k]) = values_[k];
    return m;
  }

  /// Coordinate dump, one `row col value` per line, sorted by (row, col).
  void dump_coordinate(std::ostream& os) const {
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        os << r << ' ' << col_idx_[k] << ' ' << format_double(values_[k]) << '\n';
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<int> row_ptr_{0};
  std::vector<int> col_idx_;
  std::vector<double> values_;
};

/// Sparse LU factorization with fill-reducing ordering.
/// Immutable after construction; concurrent solves are safe.
class LuFactors {
 public:
  explicit LuFactors(const CsrMatrix& m, double shift = 0.0) : shift_(shift), n_(m.rows()) {
    if (m.rows() != m.cols()) throw NumericError("lu_factor: matrix not square");
    ++Counters::factorizations();
    matrix_ = m.to_eigen();
    solver_.compute(matrix_);
    if (solver_.info() != Eigen::Success)
      throw NumericError("lu_factor: singular at shift " + format_double(shift_));
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd x = solver_.solve(b);
    if (solver_.info() != Eigen::Success) throw NumericError("lu solve failed");
    return x;
  }

  double shift() const { return shift_; }
  int size() const { return n_; }

 private:
  double shift_;
  int n_;
  Eigen::SparseMatrix<double> matrix_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> solver_;
};

inline std::shared_ptr<LuFactors> lu_factor(const CsrMatrix& m, double shift = 0.0) {
  return std::make_shared<LuFactors>(m, shift);
}

struct SchurResult {
  Eigen::MatrixXd t;                          // real quasi-triangular factor
  Eigen::MatrixXd q;                          // orthonormal Schur vectors
  std::vector<std::complex<double>> values;   // eigenvalues, 2x2 blocks as conjugate pairs
};

/// Real Schur decomposition of a small dense matrix (Hessenberg or general):
/// h = q t q^T with 1x1/2x2 diagonal blocks on t.
inline SchurResult hessenberg_eigs(const Eigen::MatrixXd& h) {
  if (h.rows() != h.cols()) throw NumericError("hessenberg_eigs: matrix not square");
  Eigen::RealSchur<Eigen::MatrixXd> schur(h);
  if (schur.info() != Eigen::Success)
    throw NumericError("hessenberg_eigs: QR iteration did not converge");
  SchurResult r;
  r.t = schur.matrixT();
  r.q = schur.matrixU();
  const int n = static_cast<int>(h.rows());
  for (int i = 0; i < n;) {
    if (i + 1 < n && std::abs(r.t(i + 1, i)) > 0.0) {
      const double a = r.t(i, i), b = r.t(i, i + 1);
      const double c = r.t(i + 1, i), d = r.t(i + 1, i + 1);
      const double re = 0.5 * (a + d);
      const double disc = 0.25 * (a - d) * (a - d) + b * c;
      const double im = std::sqrt(std::max(0.0, -disc));
      r.values.emplace_back(re, im);
      r.values.emplace_back(re, -im);
      i += 2;
    } else {
      r.values.emplace_back(r.t(i, i), 0.0);
      ++i;
    }
  }
  return r;
}

}  // namespace scm
