#pragma once

#include "btar/tensor.hpp"

#include <array>
#include <cstdint>

namespace btar {

// Tucker representation of the sixth-order coefficient tensor: core of shape
// R1 x ... x R6 plus factor matrices B_i of shape I_i x R_i, with (I4,I5,I6)
// mirroring the data dims (I1,I2,I3).
struct TuckerFactors {
  DenseTensor core;
  std::array<Matrix, 6> factors;

  std::array<int, 6> ranks() const {
    std::array<int, 6> r{};
    for (int i = 0; i < 6; ++i) r[i] = static_cast<int>(factors[i].cols());
    return r;
  }
  std::array<int, 6> dims() const {
    std::array<int, 6> d{};
    for (int i = 0; i < 6; ++i) d[i] = static_cast<int>(factors[i].rows());
    return d;
  }
};

// CP representation: rank-R sum of outer products; equivalent to Tucker with
// a superdiagonal core of ones and equal ranks.
struct CPFactors {
  int rank = 0;
  std::array<Matrix, 6> factors;
};

void validate(const TuckerFactors& f);

DenseTensor tucker_reconstruct(const TuckerFactors& f);
DenseTensor cp_reconstruct(const CPFactors& f);
TuckerFactors embed_cp(const CPFactors& f);

// Mode-i matricization of the reconstructed tensor without forming it:
// B_(i) = B_i G_(i) B_{-i}', with B_{-i} the Kronecker product of the other
// factors in descending mode order.
Matrix coeff_unfold(const TuckerFactors& f, int i);

// Kronecker product of all factors except mode i, descending order
// (B6 x ... x B_{i+1} x B_{i-1} x ... x B1).
Matrix kron_skip(const std::array<Matrix, 6>& factors, int i);

// Classical truncated HOSVD: per-mode top-R_i left singular vectors give
// column-orthonormal factors; the core is all-orthogonal up to tolerance.
TuckerFactors hosvd(const DenseTensor& t, const std::array<int, 6>& ranks);

// Flip any factor column whose largest-magnitude entry is negative (ties
// resolved by lowest row index) and compensate in the core slice, leaving the
// reconstruction unchanged.
TuckerFactors sign_normalize(const TuckerFactors& f);

// B B': symmetric PSD, invariant to orthogonal right-rotations of B.
Matrix projection_matrix(const Matrix& b);

enum class DecompKind { Tucker, Cp, Dense };

// Free-parameter count of the coefficient tensor under the given
// representation; Dense is the unrestricted (prod I_i)^2 count.
std::int64_t param_count(const std::array<int, 3>& dims, const std::array<int, 6>& ranks,
                         DecompKind kind);

}  // namespace btar
