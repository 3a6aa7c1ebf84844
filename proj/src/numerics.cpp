#include "gem/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace gem {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionMismatch("DenseMatrix: payload length does not equal rows*cols");
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> d) {
  DenseMatrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double DenseMatrix::trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
  return t;
}

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

std::vector<double> DenseMatrix::apply(std::span<const double> x) const {
  if (x.size() != cols_) throw DimensionMismatch("DenseMatrix::apply: size mismatch");
  std::vector<double> y(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* row = &data_[r * cols_];
    double s = 0.0;
    for (std::size_t c = 0; c < cols_; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

std::vector<double> DenseMatrix::apply_transposed(std::span<const double> x) const {
  if (x.size() != rows_) {
    throw DimensionMismatch("DenseMatrix::apply_transposed: size mismatch");
  }
  std::vector<double> y(cols_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* row = &data_[r * cols_];
    for (std::size_t c = 0; c < cols_; ++c) y[c] += row[c] * x[r];
  }
  return y;
}

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matrix product: inner dimensions differ");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

namespace {

template <typename Op>
DenseMatrix elementwise(const DenseMatrix& a, const DenseMatrix& b, Op op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch("element-wise matrix op: shapes differ");
  }
  DenseMatrix c(a.rows(), a.cols());
  auto ad = a.data();
  auto bd = b.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] = op(ad[i], bd[i]);
  return c;
}

}  // namespace

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
  return elementwise(a, b, std::plus<>());
}

DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
  return elementwise(a, b, std::minus<>());
}

DenseMatrix operator*(double s, const DenseMatrix& a) {
  DenseMatrix c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  return (a - b).max_abs();
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

DescriptorVector l2_normalize(const DescriptorVector& v) {
  const double n = norm(v.values);
  DescriptorVector out(std::vector<double>(v.dim(), 0.0), true);
  if (n < 1e-12) return out;
  for (std::size_t i = 0; i < v.dim(); ++i) out.values[i] = v.values[i] / n;
  return out;
}

double inner_product(const DescriptorVector& a, const DescriptorVector& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("inner_product: dims " + std::to_string(a.dim()) + " and " +
                            std::to_string(b.dim()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a.values[i] * b.values[i];
  return s;
}

double squared_distance(const DescriptorVector& a, const DescriptorVector& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("squared_distance: dims " + std::to_string(a.dim()) + " and " +
                            std::to_string(b.dim()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return s;
}

EigenDecomposition sym_eig(const DenseMatrix& input) {
  if (!input.is_square()) {
    throw InvalidArgument("sym_eig: matrix is " + std::to_string(input.rows()) + "x" +
                          std::to_string(input.cols()) + ", expected square");
  }
  const std::size_t n = input.rows();
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (input(i, j) + input(j, i));
  DenseMatrix v = DenseMatrix::identity(n);

  auto off_diagonal = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };
  double scale = 0.0;
  for (double x : a.data()) scale += x * x;
  scale = std::sqrt(scale);
  const double tol = 1e-13 * std::max(scale, 1e-300);

  constexpr int kMaxSweeps = 100;
  int sweep = 0;
  double off = off_diagonal();
  while (off > tol) {
    if (sweep++ >= kMaxSweeps) {
      std::ostringstream msg;
      msg << "sym_eig: no convergence after " << kMaxSweeps
          << " sweeps, off-diagonal residual " << off;
      throw ConvergenceError(msg.str(), off);
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Rotation angle zeroing a(p,q): t = tan(theta), smaller root.
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    off = off_diagonal();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  EigenDecomposition out;
  out.eigenvalues.resize(n);
  out.eigenvectors = DenseMatrix(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    out.eigenvalues[c] = a(order[c], order[c]);
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, c) = v(r, order[c]);
  }
  return out;
}

double default_eigen_floor(const DenseMatrix& a) {
  if (a.rows() == 0) return 0.0;
  return 1e-10 * a.trace() / static_cast<double>(a.rows());
}

DenseMatrix inv_sqrt_psd(const DenseMatrix& a, double floor) {
  const EigenDecomposition eig = sym_eig(a);
  const std::size_t n = a.rows();
  DenseMatrix out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double lambda = std::max(eig.eigenvalues[k], floor);
    if (!(lambda > 0.0)) {
      throw InvalidArgument("inv_sqrt_psd: non-positive eigenvalue after flooring");
    }
    const double w = 1.0 / std::sqrt(lambda);
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = eig.eigenvectors(i, k) * w;
      if (vi == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vi * eig.eigenvectors(j, k);
    }
  }
  return out;
}

DenseMatrix inv_sqrt_psd(const DenseMatrix& a) {
  return inv_sqrt_psd(a, default_eigen_floor(a));
}

std::vector<double> finite_diff_grad(const ScalarFunction& fn,
                                     std::span<const double> point, double step) {
  if (!(step > 0.0)) throw InvalidArgument("finite_diff_grad: step must be positive");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = fn(x);
    x[i] = orig - step;
    const double fm = fn(x);
    x[i] = orig;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-6, std::abs(analytic) + std::abs(numeric));
}

}  // namespace gem
