#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gem/errors.hpp"

namespace gem {

// W x H x K stack of feature maps. Storage is row-major and map-minor:
// index = (y * width + x) * maps + k.
struct ActivationTensor {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maps = 0;
  std::vector<double> values;

  ActivationTensor() = default;
  ActivationTensor(std::size_t w, std::size_t h, std::size_t k, double fill = 0.0)
      : width(w), height(h), maps(k), values(w * h * k, fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t spatial() const { return width * height; }

  double& at(std::size_t x, std::size_t y, std::size_t k) {
    return values[(y * width + x) * maps + k];
  }
  double at(std::size_t x, std::size_t y, std::size_t k) const {
    return values[(y * width + x) * maps + k];
  }

  bool same_shape(const ActivationTensor& o) const {
    return width == o.width && height == o.height && maps == o.maps;
  }
};

// Image descriptor. `normalized` marks vectors that are unit norm, or the
// all-zero descriptor produced by normalizing a (near) zero vector.
struct DescriptorVector {
  std::vector<double> values;
  bool normalized = false;

  DescriptorVector() = default;
  explicit DescriptorVector(std::vector<double> v, bool is_normalized = false)
      : values(std::move(v)), normalized(is_normalized) {}

  std::size_t dim() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
};

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> d);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  DenseMatrix transpose() const;
  double trace() const;
  double max_abs() const;
  bool is_square() const { return rows_ == cols_; }

  // y = A x
  std::vector<double> apply(std::span<const double> x) const;
  // y = A^T x
  std::vector<double> apply_transposed(std::span<const double> x) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator*(double s, const DenseMatrix& a);

// Largest absolute element-wise difference.
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

struct EigenDecomposition {
  std::vector<double> eigenvalues;  // non-increasing
  DenseMatrix eigenvectors;         // column i pairs with eigenvalues[i]
};

double norm(std::span<const double> v);

// Scales to unit norm. Inputs with norm below 1e-12 become the zero vector,
// still flagged normalized.
DescriptorVector l2_normalize(const DescriptorVector& v);

double inner_product(const DescriptorVector& a, const DescriptorVector& b);

// Squared Euclidean distance; throws DimensionMismatch.
double squared_distance(const DescriptorVector& a, const DescriptorVector& b);

// Cyclic Jacobi eigensolver for symmetric matrices. The input is symmetrized
// as (A + A^T) / 2 before iterating.
EigenDecomposition sym_eig(const DenseMatrix& a);

// V diag(max(l_i, floor))^{-1/2} V^T.
DenseMatrix inv_sqrt_psd(const DenseMatrix& a, double floor);
// Same with floor = 1e-10 * trace(A) / dim.
DenseMatrix inv_sqrt_psd(const DenseMatrix& a);
double default_eigen_floor(const DenseMatrix& a);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences, one coordinate at a time.
std::vector<double> finite_diff_grad(const ScalarFunction& fn,
                                     std::span<const double> point, double step);

// |a - n| / max(1e-6, |a| + |n|), the relative error used by gradient checks.
double relative_error(double analytic, double numeric);

}  // namespace gem
