#include "btar/decomp.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace btar {

void validate(const TuckerFactors& f) {
  if (f.core.order() != 6) throw std::invalid_argument("TuckerFactors: core must be sixth-order");
  for (int i = 0; i < 6; ++i) {
    if (f.factors[i].cols() != f.core.shape()[i])
      throw std::invalid_argument("TuckerFactors: factor columns must match core rank");
    if (f.factors[i].cols() > f.factors[i].rows())
      throw std::invalid_argument("TuckerFactors: rank exceeds dimension");
  }
  const auto d = f.dims();
  for (int i = 0; i < 3; ++i)
    if (d[i] != d[i + 3])
      throw std::invalid_argument("TuckerFactors: predictor dims must mirror response dims");
}

DenseTensor tucker_reconstruct(const TuckerFactors& f) {
  validate(f);
  DenseTensor t = f.core;
  for (int i = 0; i < 6; ++i) t = mode_multiply(t, f.factors[i], i + 1);
  return t;
}

TuckerFactors embed_cp(const CPFactors& f) {
  if (f.rank < 1) throw std::invalid_argument("CPFactors: rank must be positive");
  TuckerFactors out;
  std::vector<int> cshape(6, f.rank);
  out.core = DenseTensor(cshape);
  std::vector<int> idx(6);
  for (int r = 1; r <= f.rank; ++r) {
    idx.assign(6, r);
    out.core.at(idx) = 1.0;
  }
  out.factors = f.factors;
  return out;
}

DenseTensor cp_reconstruct(const CPFactors& f) { return tucker_reconstruct(embed_cp(f)); }

Matrix kron_skip(const std::array<Matrix, 6>& factors, int i) {
  Matrix out;
  bool first = true;
  for (int k = 6; k >= 1; --k) {
    if (k == i) continue;
    out = first ? factors[k - 1] : kron(out, factors[k - 1]);
    first = false;
  }
  return out;
}

Matrix coeff_unfold(const TuckerFactors& f, int i) {
  if (i < 1 || i > 6) throw std::out_of_range("coeff_unfold: mode out of range");
  validate(f);
  return f.factors[i - 1] * unfold(f.core, i) * kron_skip(f.factors, i).transpose();
}

TuckerFactors hosvd(const DenseTensor& t, const std::array<int, 6>& ranks) {
  if (t.order() != 6) throw std::invalid_argument("hosvd: tensor must be sixth-order");
  TuckerFactors out;
  for (int i = 0; i < 6; ++i) {
    if (ranks[i] < 1 || ranks[i] > t.shape()[i])
      throw std::invalid_argument("hosvd: rank exceeds dimension");
    Matrix u = unfold(t, i + 1);
    Eigen::BDCSVD<Matrix> svd(u, Eigen::ComputeThinU);
    out.factors[i] = svd.matrixU().leftCols(ranks[i]);
  }
  out.core = t;
  for (int i = 0; i < 6; ++i)
    out.core = mode_multiply(out.core, out.factors[i].transpose(), i + 1);
  return out;
}

TuckerFactors sign_normalize(const TuckerFactors& f) {
  validate(f);
  TuckerFactors out = f;
  for (int i = 0; i < 6; ++i) {
    Matrix& b = out.factors[i];
    for (Eigen::Index r = 0; r < b.cols(); ++r) {
      Eigen::Index arg = 0;
      double best = std::abs(b(0, r));
      for (Eigen::Index a = 1; a < b.rows(); ++a) {
        if (std::abs(b(a, r)) > best) {
          best = std::abs(b(a, r));
          arg = a;
        }
      }
      if (b(arg, r) < 0.0) {
        b.col(r) *= -1.0;
        // Flip the matching core slice so the reconstruction is unchanged.
        Matrix g = unfold(out.core, i + 1);
        g.row(r) *= -1.0;
        out.core = fold(g, i + 1, out.core.shape());
      }
    }
  }
  return out;
}

Matrix projection_matrix(const Matrix& b) { return b * b.transpose(); }

std::int64_t param_count(const std::array<int, 3>& dims, const std::array<int, 6>& ranks,
                         DecompKind kind) {
  const std::int64_t I = static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  switch (kind) {
    case DecompKind::Dense:
      return I * I;
    case DecompKind::Cp: {
      const std::int64_t R = ranks[0];
      return 2 * R * (dims[0] + dims[1] + dims[2]);
    }
    case DecompKind::Tucker: {
      std::int64_t core = 1, margins = 0;
      for (int i = 0; i < 6; ++i) {
        core *= ranks[i];
        margins += static_cast<std::int64_t>(dims[i % 3]) * ranks[i];
      }
      return core + margins;
    }
  }
  throw std::logic_error("param_count: unknown kind");
}

}  // namespace btar
