#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace btar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Dense N-way array with column-major storage (first index fastest).
// Modes and multi-indices are 1-based at the API boundary so the index
// arithmetic matches the mode-n matricization maps used throughout; the
// linearization is fixed so that vec(X) == vec(unfold(X, 1)) exactly.
class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(std::vector<int> shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = Vector::Zero(size_from_shape());
  }

  DenseTensor(std::vector<int> shape, Vector data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != size_from_shape())
      throw std::invalid_argument("DenseTensor: data length does not match shape");
  }

  int order() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  // Size of the given mode (1-based).
  int dim(int mode) const {
    if (mode < 1 || mode > order()) throw std::out_of_range("DenseTensor::dim: mode out of range");
    return shape_[mode - 1];
  }

  Eigen::Index size() const { return data_.size(); }

  const Vector& vec() const { return data_; }
  Vector& vec() { return data_; }

  // Element access by 1-based multi-index.
  double at(const std::vector<int>& idx) const { return data_[linear_index(idx)]; }
  double& at(const std::vector<int>& idx) { return data_[linear_index(idx)]; }
  double at(std::initializer_list<int> idx) const { return at(std::vector<int>(idx)); }
  double& at(std::initializer_list<int> idx) { return at(std::vector<int>(idx)); }

  // Value of an order-0 or single-entry tensor.
  double scalar() const {
    if (data_.size() != 1) throw std::logic_error("DenseTensor::scalar: tensor has more than one entry");
    return data_[0];
  }

  Eigen::Index linear_index(const std::vector<int>& idx) const {
    if (static_cast<int>(idx.size()) != order())
      throw std::invalid_argument("DenseTensor: multi-index order mismatch");
    Eigen::Index lin = 0;
    Eigen::Index stride = 1;
    for (int k = 0; k < order(); ++k) {
      if (idx[k] < 1 || idx[k] > shape_[k]) throw std::out_of_range("DenseTensor: index out of range");
      lin += static_cast<Eigen::Index>(idx[k] - 1) * stride;
      stride *= shape_[k];
    }
    return lin;
  }

  DenseTensor& operator+=(const DenseTensor& o) {
    require_same_shape(o);
    data_ += o.data_;
    return *this;
  }
  DenseTensor& operator-=(const DenseTensor& o) {
    require_same_shape(o);
    data_ -= o.data_;
    return *this;
  }
  DenseTensor& operator*=(double s) {
    data_ *= s;
    return *this;
  }
  friend DenseTensor operator+(DenseTensor a, const DenseTensor& b) { return a += b; }
  friend DenseTensor operator-(DenseTensor a, const DenseTensor& b) { return a -= b; }
  friend DenseTensor operator*(DenseTensor a, double s) { return a *= s; }
  friend DenseTensor operator*(double s, DenseTensor a) { return a *= s; }

 private:
  Eigen::Index size_from_shape() const {
    Eigen::Index n = 1;
    for (int d : shape_) n *= d;
    return n;
  }
  void check_shape() const {
    for (int d : shape_)
      if (d < 1) throw std::invalid_argument("DenseTensor: dimensions must be positive");
  }
  void require_same_shape(const DenseTensor& o) const {
    if (shape_ != o.shape_) throw std::invalid_argument("DenseTensor: shape mismatch");
  }

  std::vector<int> shape_;
  Vector data_;
};

// Mode-n matricization: I_n rows, prod_{i != n} I_i columns, with column order
// j = 1 + sum_{k != n} (i_k - 1) J_k, J_k = prod_{m < k, m != n} I_m.
Matrix unfold(const DenseTensor& t, int mode);

// Inverse of unfold for the given mode and target shape.
DenseTensor fold(const Matrix& m, int mode, const std::vector<int>& shape);

// Generalized inner product: contracts the trailing order(y) modes of x
// against y. Order-0 result carries the scalar value.
DenseTensor gen_inner(const DenseTensor& x, const DenseTensor& y);

// n-mode product: unfold(result, mode) = m * unfold(t, mode).
DenseTensor mode_multiply(const DenseTensor& t, const Matrix& m, int mode);

// Kronecker product; satisfies kron(A,B) vec(X) = vec(B X A').
Matrix kron(const Matrix& a, const Matrix& b);

double frobenius_norm(const DenseTensor& t);

}  // namespace btar
