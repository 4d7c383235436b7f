#include "btar/tensor.hpp"

#include <cmath>

namespace btar {

namespace {

// Sizes of the index blocks below and above the given mode (1-based).
// Viewing the column-major data as (left, I_mode, right), the unfold column
// for fixed (l, r) is l + r*left, which reproduces the J_k column ordering.
std::pair<Eigen::Index, Eigen::Index> split_sizes(const std::vector<int>& shape, int mode) {
  Eigen::Index left = 1, right = 1;
  for (int k = 0; k < mode - 1; ++k) left *= shape[k];
  for (int k = mode; k < static_cast<int>(shape.size()); ++k) right *= shape[k];
  return {left, right};
}

}  // namespace

Matrix unfold(const DenseTensor& t, int mode) {
  if (mode < 1 || mode > t.order()) throw std::out_of_range("unfold: mode out of range");
  const auto [left, right] = split_sizes(t.shape(), mode);
  const Eigen::Index in = t.dim(mode);
  Matrix out(in, left * right);
  const Vector& v = t.vec();
  for (Eigen::Index r = 0; r < right; ++r)
    for (Eigen::Index i = 0; i < in; ++i)
      for (Eigen::Index l = 0; l < left; ++l)
        out(i, l + r * left) = v[l + i * left + r * left * in];
  return out;
}

DenseTensor fold(const Matrix& m, int mode, const std::vector<int>& shape) {
  const int order = static_cast<int>(shape.size());
  if (mode < 1 || mode > order) throw std::out_of_range("fold: mode out of range");
  const auto [left, right] = split_sizes(shape, mode);
  const Eigen::Index in = shape[mode - 1];
  if (m.rows() != in || m.cols() != left * right)
    throw std::invalid_argument("fold: matrix size does not match target shape");
  DenseTensor t(shape);
  Vector& v = t.vec();
  for (Eigen::Index r = 0; r < right; ++r)
    for (Eigen::Index i = 0; i < in; ++i)
      for (Eigen::Index l = 0; l < left; ++l)
        v[l + i * left + r * left * in] = m(i, l + r * left);
  return t;
}

DenseTensor gen_inner(const DenseTensor& x, const DenseTensor& y) {
  const int nx = x.order(), ny = y.order();
  if (ny > nx) throw std::invalid_argument("gen_inner: y has higher order than x");
  const int lead = nx - ny;
  for (int k = 0; k < ny; ++k)
    if (x.shape()[lead + k] != y.shape()[k])
      throw std::invalid_argument("gen_inner: trailing dimensions of x do not match y");

  Eigen::Index lead_size = 1;
  for (int k = 0; k < lead; ++k) lead_size *= x.shape()[k];
  const Eigen::Index rest = x.size() / lead_size;

  // Column-major layout makes the contraction a matrix-vector product.
  Eigen::Map<const Matrix> xm(x.vec().data(), lead_size, rest);
  Vector out = xm * y.vec();
  std::vector<int> shape(x.shape().begin(), x.shape().begin() + lead);
  return DenseTensor(std::move(shape), std::move(out));
}

DenseTensor mode_multiply(const DenseTensor& t, const Matrix& m, int mode) {
  if (mode < 1 || mode > t.order()) throw std::out_of_range("mode_multiply: mode out of range");
  if (m.cols() != t.dim(mode))
    throw std::invalid_argument("mode_multiply: matrix columns must equal the mode dimension");
  std::vector<int> shape = t.shape();
  shape[mode - 1] = static_cast<int>(m.rows());
  return fold(m * unfold(t, mode), mode, shape);
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

double frobenius_norm(const DenseTensor& t) { return t.vec().norm(); }

}  // namespace btar
