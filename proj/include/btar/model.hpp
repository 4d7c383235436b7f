#pragma once

#include "btar/decomp.hpp"
#include "btar/rng.hpp"
#include "btar/tensor.hpp"

#include <array>
#include <vector>

namespace btar {

enum class VolRegime { Homoskedastic, Outlier, Csv };

// Deterministic component A_t = A0 + A1 * t.
struct InterceptTrend {
  DenseTensor a0;
  DenseTensor a1;
  bool has_trend = false;
};

// Kronecker error covariance Sigma3 (x) Sigma2 (x) Sigma1.
struct ErrorCov {
  Matrix s1, s2, s3;
};

struct VolatilityState {
  VolRegime regime = VolRegime::Homoskedastic;
  Vector omega;  // length T, positive; 1 / o_t^2 / exp(h_t) by regime

  // common stochastic volatility block
  Vector h;
  double phi = 0.9;
  double sigma2 = 0.01;

  // outlier block: o_t = 1 (normal state) or a grid point on (2, 10)
  Vector o;
  double p_out = 0.02;
};

// Multiway stick-breaking shrinkage state, one block per tensor mode.
struct ShrinkageState {
  std::array<double, 6> tau{1, 1, 1, 1, 1, 1};
  std::array<Vector, 6> eta;       // length R_i - 1, entries in (0,1)
  std::array<Vector, 6> phi;       // length R_i, simplex weights
  std::array<double, 6> alpha{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
};

struct ModelState {
  TuckerFactors factors;
  InterceptTrend intercept;
  ErrorCov cov;
  VolatilityState vol;
  ShrinkageState shrink;
};

// Prior hyperparameters shared by log_prior, the prior simulator, and the
// Gibbs conditionals.
struct PriorSpec {
  double alpha_tau = 1.0, beta_tau = 1.0;  // tau_i ~ Gamma(alpha_tau, beta_tau)
  double margin_var = 1.0;                 // margin variance when shrinkage off
  double core_var = 10.0;                  // V_g = core_var * I
  double intercept_var = 10.0;             // vec(A) | Sigma ~ N(0, intercept_var * Sigma)
  double iw_dof_offset = 2.0;              // nu_i = I_i + iw_dof_offset, scale = I
  int alpha_grid = 100;                    // grid points on (0, 1] for alpha_i

  // CSV block: phi ~ N(phi_mean, phi_var) truncated to (-1,1), sigma2 ~ IG
  double phi_mean = 0.9, phi_var = 0.04;
  double sigma2_shape = 5.0, sigma2_scale = 0.04;

  // outlier block
  double outlier_a = 2.0, outlier_b = 100.0;  // p_out ~ Beta(a, b)
  int outlier_grid = 20;                      // grid points on (2, 10)
};

// Third-order tensor series; y[0] is the presample observation used only as
// a regressor, y[1..T] enter the likelihood.
struct TensorSeries {
  std::array<int, 3> dims{};
  std::vector<DenseTensor> y;

  int T() const { return static_cast<int>(y.size()) - 1; }
  Eigen::Index cells() const {
    return static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2];
  }
};

DenseTensor intercept_at(const InterceptTrend& a, int t);

// Lower Cholesky factors of the three covariance blocks; throws on non-PD.
std::array<Matrix, 3> chol_factors(const ErrorCov& cov);

// t x_1 L1 x_2 L2 x_3 L3 (maps iid normals to Sigma-distributed errors).
DenseTensor colorize(const DenseTensor& t, const std::array<Matrix, 3>& chol);

// t x_1 L1^{-1} x_2 L2^{-1} x_3 L3^{-1}; the squared Frobenius norm of the
// result is the Mahalanobis form vec(t)' Sigma^{-1} vec(t).
DenseTensor whiten(const DenseTensor& t, const std::array<Matrix, 3>& chol);

// Enforces the regime invariant omega_t = 1 / o_t^2 / exp(h_t).
void refresh_omega(VolatilityState& vol);

// Grid of n points on (2, 10) used to discretize the outlier state.
Vector outlier_support(int n);

double spectral_radius(const Matrix& m);

// VAR-form coefficient matrix: vec(Bhat) = vec(coeff tensor).
Matrix var_form(const DenseTensor& coeff);
Matrix var_form(const TuckerFactors& f);

// Simulates y_1..y_T given the state and presample y0, never materializing
// the full Kronecker covariance. state.vol.omega must have length T. Warns
// (once) when the VAR-form spectral radius is >= 1.
TensorSeries simulate(const ModelState& state, int T, const DenseTensor& y0, Rng& rng);

// Residual tensors E_t = Y_t - A_t - <B, Y_{t-1}>, t = 1..T.
std::vector<DenseTensor> residuals(const TensorSeries& data, const ModelState& state);

// Log of the Kronecker-structured Gaussian likelihood, computed through the
// per-mode Cholesky factors.
double log_likelihood(const TensorSeries& data, const ModelState& state);

// Stick-breaking transform of eta (length R-1) into R simplex weights.
Vector stick_breaking(const Vector& eta, int R);

// Joint log prior density of the state under the given hyperparameters.
double log_prior(const ModelState& state, const PriorSpec& prior, bool shrinkage_on);

// Draws a volatility block from its prior (used by simulators and tests).
VolatilityState draw_volatility_prior(VolRegime regime, int T, const PriorSpec& prior, Rng& rng);

}  // namespace btar
