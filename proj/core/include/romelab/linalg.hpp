#pragma once

#include <cstddef>
#include <vector>

namespace romelab {

// Dense row-major matrix of 64-bit floats. All public operations in this
// module are pure, sequential, and bit-deterministic for identical inputs.
using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  static Matrix identity(std::size_t n);
  static Matrix diagonal(const Vector& d);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

// Throws on any NaN/Inf entry; `what` names the offending value in the message.
void ensure_finite(const Vector& v, const char* what);
void ensure_finite(const Matrix& m, const char* what);

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& v);
Vector add(const Vector& a, const Vector& b);
Vector sub(const Vector& a, const Vector& b);
Vector scale(const Vector& v, double s);

// y = M x
Vector matvec(const Matrix& m, const Vector& x);
// y = M^T x
Vector matvec_transposed(const Matrix& m, const Vector& x);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// result[i][j] = u[i] * v[j]
Matrix outer(const Vector& u, const Vector& v);

double frobenius_norm(const Matrix& m);

// Cholesky factorization A = L L^T of a symmetric positive-definite matrix.
// Factor once, solve many right-hand sides. Throws NotPositiveDefinite when a
// pivot is non-positive, DimensionMismatch on shape errors.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(const Matrix& a);
  Vector solve(const Vector& b) const;
  std::size_t dim() const { return l_.rows(); }

 private:
  Matrix l_;
};

// Solves A x = b for symmetric positive-definite A. A must be symmetric
// within 1e-9 relative tolerance.
Vector solve_spd(const Matrix& a, const Vector& b);

struct SymEigen {
  Vector values;   // descending
  Matrix vectors;  // column j is the eigenvector for values[j]
};

// Full eigen-decomposition of a symmetric matrix via cyclic Jacobi rotations.
SymEigen sym_eigen(const Matrix& a);

// Mean-centers the points and projects them onto the top `target_dim`
// principal axes (eigenvectors of the sample covariance, descending
// eigenvalue order, sign fixed so each axis's largest-magnitude loading is
// positive). Requires at least target_dim + 1 points of equal dimension.
// Throws DegenerateSpread if all points are identical.
std::vector<Vector> pca_project(const std::vector<Vector>& points,
                                std::size_t target_dim = 2);

}  // namespace romelab
