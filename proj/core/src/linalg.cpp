#include "romelab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "romelab/errors.hpp"

namespace romelab {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(const Vector& d) {
  Matrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

void ensure_finite(const Vector& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw Error(std::string(what) + ": non-finite entry");
    }
  }
}

void ensure_finite(const Matrix& m, const char* what) {
  ensure_finite(m.data(), what);
}

double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("dot: " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vector& v) { return std::sqrt(dot(v, v)); }

Vector add(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionMismatch("add: vector sizes differ");
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

Vector sub(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionMismatch("sub: vector sizes differ");
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

Vector scale(const Vector& v, double s) {
  Vector r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) r[i] = v[i] * s;
  return r;
}

Vector matvec(const Matrix& m, const Vector& x) {
  if (m.cols() != x.size()) {
    throw DimensionMismatch("matvec: matrix cols " + std::to_string(m.cols()) +
                            " vs vector dim " + std::to_string(x.size()));
  }
  Vector y(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* r = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

Vector matvec_transposed(const Matrix& m, const Vector& x) {
  if (m.rows() != x.size()) {
    throw DimensionMismatch("matvec_transposed: matrix rows " +
                            std::to_string(m.rows()) + " vs vector dim " +
                            std::to_string(x.size()));
  }
  Vector y(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* r = m.row(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < m.cols(); ++j) y[j] += r[j] * xi;
  }
  return y;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("add: matrix shapes differ");
  Matrix r(a.rows(), a.cols());
  for (std::size_t i = 0; i < r.data().size(); ++i)
    r.data()[i] = a.data()[i] + b.data()[i];
  return r;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("sub: matrix shapes differ");
  Matrix r(a.rows(), a.cols());
  for (std::size_t i = 0; i < r.data().size(); ++i)
    r.data()[i] = a.data()[i] - b.data()[i];
  return r;
}

Matrix scale(const Matrix& m, double s) {
  Matrix r(m.rows(), m.cols());
  for (std::size_t i = 0; i < r.data().size(); ++i) r.data()[i] = m.data()[i] * s;
  return r;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dims differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* brow = b.row(k);
      double* crow = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

Matrix outer(const Vector& u, const Vector& v) {
  ensure_finite(u, "outer: u");
  ensure_finite(v, "outer: v");
  Matrix r(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    double* row = r.row(i);
    for (std::size_t j = 0; j < v.size(); ++j) row[j] = u[i] * v[j];
  }
  ensure_finite(r, "outer: result");
  return r;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return std::sqrt(s);
}

namespace {

void check_symmetric(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch("solve_spd: matrix not square");
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      const double x = a(i, j);
      const double y = a(j, i);
      const double tol = 1e-9 * std::max(1.0, std::max(std::fabs(x), std::fabs(y)));
      if (std::fabs(x - y) > tol) {
        throw NotPositiveDefinite("solve_spd: matrix not symmetric at (" +
                                  std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
}

}  // namespace

CholeskyFactor::CholeskyFactor(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("cholesky: matrix not square");
  ensure_finite(a, "cholesky: input");
  const std::size_t n = a.rows();
  l_ = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l_(j, k) * l_(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NotPositiveDefinite("cholesky: non-positive pivot at column " +
                                std::to_string(j));
    }
    l_(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l_(i, k) * l_(j, k);
      l_(i, j) = s / l_(j, j);
    }
  }
}

Vector CholeskyFactor::solve(const Vector& b) const {
  const std::size_t n = l_.rows();
  if (b.size() != n) throw DimensionMismatch("cholesky solve: rhs dim mismatch");
  // forward substitution L y = b
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * y[k];
    y[i] = s / l_(i, i);
  }
  // backward substitution L^T x = y
  Vector x(n);
  for (std::size_t ii = 0; ii < n; ++ii) {
    const std::size_t i = n - 1 - ii;
    double s = y[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l_(k, i) * x[k];
    x[i] = s / l_(i, i);
  }
  ensure_finite(x, "cholesky solve: result");
  return x;
}

Vector solve_spd(const Matrix& a, const Vector& b) {
  check_symmetric(a);
  if (a.rows() != b.size()) throw DimensionMismatch("solve_spd: rhs dim mismatch");
  return CholeskyFactor(a).solve(b);
}

SymEigen sym_eigen(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("sym_eigen: matrix not square");
  const std::size_t n = a.rows();
  Matrix d = a;
  Matrix v = Matrix::identity(n);

  auto offdiag = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += d(i, j) * d(i, j);
    return std::sqrt(2.0 * s);
  };

  const double target = 1e-14 * std::max(1.0, frobenius_norm(a));
  for (int sweep = 0; sweep < 100 && offdiag() > target; ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = d(p, q);
        if (apq == 0.0) continue;
        const double app = d(p, p);
        const double aqq = d(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        // smaller-magnitude root of t^2 + 2 t theta - 1 = 0
        const double t = (theta >= 0.0)
                             ? 1.0 / (theta + std::sqrt(1.0 + theta * theta))
                             : -1.0 / (-theta + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double dkp = d(k, p);
          const double dkq = d(k, q);
          d(k, p) = c * dkp - s * dkq;
          d(k, q) = s * dkp + c * dkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double dpk = d(p, k);
          const double dqk = d(q, k);
          d(p, k) = c * dpk - s * dqk;
          d(q, k) = s * dpk + c * dqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return d(i, i) > d(j, j); });

  SymEigen out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = d(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

std::vector<Vector> pca_project(const std::vector<Vector>& points,
                                std::size_t target_dim) {
  if (points.size() < target_dim + 1) {
    throw EmptyInput("pca_project: need at least target_dim + 1 points");
  }
  const std::size_t dim = points[0].size();
  if (dim < target_dim) {
    throw DimensionMismatch("pca_project: point dimension below target_dim");
  }
  for (const auto& p : points) {
    if (p.size() != dim) throw DimensionMismatch("pca_project: ragged input");
    ensure_finite(p, "pca_project: input point");
  }

  Vector mean(dim, 0.0);
  for (const auto& p : points)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += p[j];
  for (std::size_t j = 0; j < dim; ++j) mean[j] /= static_cast<double>(points.size());

  bool all_identical = true;
  for (const auto& p : points) {
    for (std::size_t j = 0; j < dim; ++j) {
      if (p[j] != points[0][j]) {
        all_identical = false;
        break;
      }
    }
    if (!all_identical) break;
  }
  if (all_identical) throw DegenerateSpread("pca_project: all points identical");

  // sample covariance (1/(n-1) normalization; the axes do not depend on it)
  Matrix cov(dim, dim);
  for (const auto& p : points) {
    Vector c = sub(p, mean);
    for (std::size_t i = 0; i < dim; ++i) {
      const double ci = c[i];
      double* row = cov.row(i);
      for (std::size_t j = 0; j < dim; ++j) row[j] += ci * c[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(points.size() - 1);
  for (double& x : cov.data()) x *= inv;

  SymEigen eig = sym_eigen(cov);

  // axes: top target_dim eigenvectors, sign fixed on the largest-magnitude loading
  std::vector<Vector> axes(target_dim, Vector(dim));
  for (std::size_t a = 0; a < target_dim; ++a) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double mag = std::fabs(eig.vectors(i, a));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    const double sign = eig.vectors(arg, a) >= 0.0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < dim; ++i) axes[a][i] = sign * eig.vectors(i, a);
  }

  std::vector<Vector> out(points.size(), Vector(target_dim));
  for (std::size_t p = 0; p < points.size(); ++p) {
    Vector c = sub(points[p], mean);
    for (std::size_t a = 0; a < target_dim; ++a) out[p][a] = dot(axes[a], c);
  }
  for (const auto& p : out) ensure_finite(p, "pca_project: result");
  return out;
}

}  // namespace romelab
