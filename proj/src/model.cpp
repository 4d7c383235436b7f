#include "btar/model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

namespace btar {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_gamma_density(double x, double shape, double rate) {
  if (x <= 0.0) throw std::domain_error("log_prior: gamma variate out of support");
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_inv_gamma_density(double x, double shape, double scale) {
  if (x <= 0.0) throw std::domain_error("log_prior: inverse-gamma variate out of support");
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double log_beta_density(double x, double a, double b) {
  if (x <= 0.0 || x >= 1.0) throw std::domain_error("log_prior: beta variate out of support");
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) +
         (b - 1.0) * std::log(1.0 - x);
}

double log_multi_gamma(int p, double a) {
  double out = 0.25 * p * (p - 1) * std::log(std::numbers::pi);
  for (int j = 0; j < p; ++j) out += std::lgamma(a - 0.5 * j);
  return out;
}

// log IW(x; nu, S) with S the scale matrix.
double log_inv_wishart_density(const Matrix& x, double nu, const Matrix& scale) {
  const int p = static_cast<int>(x.rows());
  Eigen::LLT<Matrix> lx(x), ls(scale);
  if (lx.info() != Eigen::Success) throw std::domain_error("log_prior: covariance not PD");
  double logdet_x = 0.0, logdet_s = 0.0;
  for (int i = 0; i < p; ++i) {
    logdet_x += 2.0 * std::log(lx.matrixL()(i, i));
    logdet_s += 2.0 * std::log(ls.matrixL()(i, i));
  }
  const double tr = lx.solve(scale).trace();
  return 0.5 * nu * logdet_s - 0.5 * nu * p * std::numbers::ln2 - log_multi_gamma(p, 0.5 * nu) -
         0.5 * (nu + p + 1.0) * logdet_x - 0.5 * tr;
}

double log_normal_vec(const Vector& x, double var) {
  return -0.5 * x.size() * (kLog2Pi + std::log(var)) - 0.5 * x.squaredNorm() / var;
}

}  // namespace

DenseTensor intercept_at(const InterceptTrend& a, int t) {
  if (!a.has_trend) return a.a0;
  return a.a0 + a.a1 * static_cast<double>(t);
}

std::array<Matrix, 3> chol_factors(const ErrorCov& cov) {
  std::array<Matrix, 3> out;
  const Matrix* s[3] = {&cov.s1, &cov.s2, &cov.s3};
  for (int i = 0; i < 3; ++i) {
    Eigen::LLT<Matrix> llt(*s[i]);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("covariance factor " + std::to_string(i + 1) +
                               " is not positive definite");
    out[i] = llt.matrixL();
  }
  return out;
}

DenseTensor colorize(const DenseTensor& t, const std::array<Matrix, 3>& chol) {
  DenseTensor out = t;
  for (int i = 0; i < 3; ++i) out = mode_multiply(out, chol[i], i + 1);
  return out;
}

DenseTensor whiten(const DenseTensor& t, const std::array<Matrix, 3>& chol) {
  DenseTensor out = t;
  for (int i = 0; i < 3; ++i) {
    Matrix u = unfold(out, i + 1);
    chol[i].triangularView<Eigen::Lower>().solveInPlace(u);
    std::vector<int> shape = out.shape();
    out = fold(u, i + 1, shape);
  }
  return out;
}

void refresh_omega(VolatilityState& vol) {
  const int T = static_cast<int>(vol.omega.size());
  switch (vol.regime) {
    case VolRegime::Homoskedastic:
      vol.omega.setOnes();
      break;
    case VolRegime::Outlier:
      for (int t = 0; t < T; ++t) vol.omega[t] = vol.o[t] * vol.o[t];
      break;
    case VolRegime::Csv:
      for (int t = 0; t < T; ++t) vol.omega[t] = std::exp(vol.h[t]);
      break;
  }
}

Vector outlier_support(int n) {
  Vector g(n);
  for (int j = 0; j < n; ++j) g[j] = 2.0 + (j + 0.5) * 8.0 / n;
  return g;
}

double spectral_radius(const Matrix& m) {
  Eigen::EigenSolver<Matrix> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix var_form(const DenseTensor& coeff) {
  if (coeff.order() != 6) throw std::invalid_argument("var_form: coefficient tensor must be sixth-order");
  const auto& s = coeff.shape();
  for (int i = 0; i < 3; ++i)
    if (s[i] != s[i + 3]) throw std::invalid_argument("var_form: predictor dims must mirror response dims");
  const Eigen::Index I = static_cast<Eigen::Index>(s[0]) * s[1] * s[2];
  return Eigen::Map<const Matrix>(coeff.vec().data(), I, I);
}

Matrix var_form(const TuckerFactors& f) { return var_form(tucker_reconstruct(f)); }

TensorSeries simulate(const ModelState& state, int T, const DenseTensor& y0, Rng& rng) {
  if (T < 1) throw std::invalid_argument("simulate: T must be positive");
  if (state.vol.omega.size() != T)
    throw std::invalid_argument("simulate: omega path length must equal T");
  const auto dims = state.factors.dims();
  if (y0.order() != 3 || y0.shape() != std::vector<int>{dims[0], dims[1], dims[2]})
    throw std::invalid_argument("simulate: presample shape mismatch");

  const DenseTensor coeff = tucker_reconstruct(state.factors);
  const Matrix bhat = var_form(coeff);
  if (spectral_radius(bhat) >= 1.0)
    std::cerr << "warning: VAR-form spectral radius >= 1; simulated series may be explosive\n";

  const auto chol = chol_factors(state.cov);
  TensorSeries out;
  out.dims = {dims[0], dims[1], dims[2]};
  out.y.reserve(T + 1);
  out.y.push_back(y0);

  const std::vector<int> shape3 = y0.shape();
  for (int t = 1; t <= T; ++t) {
    DenseTensor z(shape3, rng.normal_vector(y0.size()));
    DenseTensor e = colorize(z, chol);
    e *= std::sqrt(state.vol.omega[t - 1]);
    DenseTensor yt = intercept_at(state.intercept, t) + gen_inner(coeff, out.y.back()) + e;
    out.y.push_back(std::move(yt));
  }
  return out;
}

std::vector<DenseTensor> residuals(const TensorSeries& data, const ModelState& state) {
  if (data.T() < 1) throw std::invalid_argument("residuals: series needs a presample and T >= 1");
  const DenseTensor coeff = tucker_reconstruct(state.factors);
  std::vector<DenseTensor> out;
  out.reserve(data.T());
  for (int t = 1; t <= data.T(); ++t)
    out.push_back(data.y[t] - intercept_at(state.intercept, t) - gen_inner(coeff, data.y[t - 1]));
  return out;
}

double log_likelihood(const TensorSeries& data, const ModelState& state) {
  const int T = data.T();
  if (state.vol.omega.size() != T)
    throw std::invalid_argument("log_likelihood: omega path length must equal T");
  const double I1 = data.dims[0], I2 = data.dims[1], I3 = data.dims[2];
  const double I = I1 * I2 * I3;

  const auto chol = chol_factors(state.cov);
  double logdet1 = 0.0, logdet2 = 0.0, logdet3 = 0.0;
  for (Eigen::Index i = 0; i < chol[0].rows(); ++i) logdet1 += 2.0 * std::log(chol[0](i, i));
  for (Eigen::Index i = 0; i < chol[1].rows(); ++i) logdet2 += 2.0 * std::log(chol[1](i, i));
  for (Eigen::Index i = 0; i < chol[2].rows(); ++i) logdet3 += 2.0 * std::log(chol[2](i, i));

  double out = -0.5 * T * I * kLog2Pi -
               0.5 * T * (I2 * I3 * logdet1 + I1 * I3 * logdet2 + I1 * I2 * logdet3);

  const auto res = residuals(data, state);
  for (int t = 1; t <= T; ++t) {
    const double omega = state.vol.omega[t - 1];
    if (omega <= 0.0) throw std::domain_error("log_likelihood: omega must be positive");
    const double s = whiten(res[t - 1], chol).vec().squaredNorm();
    out += -0.5 * I * std::log(omega) - 0.5 * s / omega;
  }
  return out;
}

Vector stick_breaking(const Vector& eta, int R) {
  if (R < 1) throw std::invalid_argument("stick_breaking: rank must be positive");
  if (eta.size() != R - 1) throw std::invalid_argument("stick_breaking: eta must have length R-1");
  Vector phi(R);
  double stick = 1.0;
  for (int r = 0; r < R - 1; ++r) {
    if (eta[r] <= 0.0 || eta[r] >= 1.0)
      throw std::domain_error("stick_breaking: eta entries must lie in (0,1)");
    phi[r] = eta[r] * stick;
    stick *= 1.0 - eta[r];
  }
  phi[R - 1] = stick;
  return phi;
}

double log_prior(const ModelState& state, const PriorSpec& prior, bool shrinkage_on) {
  double out = 0.0;
  const auto ranks = state.factors.ranks();

  for (int i = 0; i < 6; ++i) {
    const Matrix& b = state.factors.factors[i];
    if (shrinkage_on) {
      const double tau = state.shrink.tau[i];
      out += log_gamma_density(tau, prior.alpha_tau, prior.beta_tau);
      const Vector phi = stick_breaking(state.shrink.eta[i], ranks[i]);
      for (int r = 0; r < ranks[i]; ++r) out += log_normal_vec(b.col(r), tau * phi[r]);
      const double alpha = state.shrink.alpha[i];
      for (int r = 0; r < ranks[i] - 1; ++r)
        out += log_beta_density(state.shrink.eta[i][r], 1.0, alpha);
      // alpha_i lives on a discrete grid with pmf proportional to alpha,
      // matching the griddy-Gibbs conditional weights.
      double grid_total = 0.0;
      for (int j = 1; j <= prior.alpha_grid; ++j) grid_total += static_cast<double>(j) / prior.alpha_grid;
      out += std::log(alpha) - std::log(grid_total);
    } else {
      out += log_normal_vec(Eigen::Map<const Vector>(b.data(), b.size()), prior.margin_var);
    }
  }

  out += log_normal_vec(state.factors.core.vec(), prior.core_var);

  const Matrix* s[3] = {&state.cov.s1, &state.cov.s2, &state.cov.s3};
  for (int i = 0; i < 3; ++i) {
    const int p = static_cast<int>(s[i]->rows());
    out += log_inv_wishart_density(*s[i], p + prior.iw_dof_offset, Matrix::Identity(p, p));
  }

  // Intercept (and trend): vec(A) | Sigma ~ N(0, c_a * Sigma).
  {
    const auto chol = chol_factors(state.cov);
    double logdet = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double reps = state.intercept.a0.size() / chol[i].rows();
      for (Eigen::Index k = 0; k < chol[i].rows(); ++k)
        logdet += 2.0 * reps * std::log(chol[i](k, k));
    }
    auto gaussian_kron = [&](const DenseTensor& a) {
      const double quad = whiten(a, chol).vec().squaredNorm() / prior.intercept_var;
      return -0.5 * a.size() * (kLog2Pi + std::log(prior.intercept_var)) - 0.5 * logdet -
             0.5 * quad;
    };
    out += gaussian_kron(state.intercept.a0);
    if (state.intercept.has_trend) out += gaussian_kron(state.intercept.a1);
  }

  const VolatilityState& vol = state.vol;
  switch (vol.regime) {
    case VolRegime::Homoskedastic:
      break;
    case VolRegime::Csv: {
      if (std::abs(vol.phi) >= 1.0) throw std::domain_error("log_prior: |phi| must be < 1");
      const double zphi = normal_cdf((1.0 - prior.phi_mean) / std::sqrt(prior.phi_var)) -
                          normal_cdf((-1.0 - prior.phi_mean) / std::sqrt(prior.phi_var));
      out += -0.5 * (kLog2Pi + std::log(prior.phi_var)) -
             0.5 * (vol.phi - prior.phi_mean) * (vol.phi - prior.phi_mean) / prior.phi_var -
             std::log(zphi);
      out += log_inv_gamma_density(vol.sigma2, prior.sigma2_shape, prior.sigma2_scale);
      const double v1 = vol.sigma2 / (1.0 - vol.phi * vol.phi);
      out += -0.5 * (kLog2Pi + std::log(v1)) - 0.5 * vol.h[0] * vol.h[0] / v1;
      for (Eigen::Index t = 1; t < vol.h.size(); ++t) {
        const double d = vol.h[t] - vol.phi * vol.h[t - 1];
        out += -0.5 * (kLog2Pi + std::log(vol.sigma2)) - 0.5 * d * d / vol.sigma2;
      }
      break;
    }
    case VolRegime::Outlier: {
      out += log_beta_density(vol.p_out, prior.outlier_a, prior.outlier_b);
      for (Eigen::Index t = 0; t < vol.o.size(); ++t) {
        if (vol.o[t] == 1.0)
          out += std::log(1.0 - vol.p_out);
        else
          out += std::log(vol.p_out) - std::log(static_cast<double>(prior.outlier_grid));
      }
      break;
    }
  }
  return out;
}

VolatilityState draw_volatility_prior(VolRegime regime, int T, const PriorSpec& prior, Rng& rng) {
  VolatilityState vol;
  vol.regime = regime;
  vol.omega = Vector::Ones(T);
  switch (regime) {
    case VolRegime::Homoskedastic:
      break;
    case VolRegime::Csv: {
      vol.phi = rng.trunc_normal(prior.phi_mean, std::sqrt(prior.phi_var), -1.0, 1.0);
      vol.sigma2 = rng.inv_gamma(prior.sigma2_shape, prior.sigma2_scale);
      vol.h = Vector(T);
      vol.h[0] = rng.normal(0.0, std::sqrt(vol.sigma2 / (1.0 - vol.phi * vol.phi)));
      for (int t = 1; t < T; ++t)
        vol.h[t] = vol.phi * vol.h[t - 1] + rng.normal(0.0, std::sqrt(vol.sigma2));
      break;
    }
    case VolRegime::Outlier: {
      vol.p_out = rng.beta(prior.outlier_a, prior.outlier_b);
      vol.o = Vector::Ones(T);
      const Vector grid = outlier_support(prior.outlier_grid);
      for (int t = 0; t < T; ++t)
        if (rng.uniform() < vol.p_out) vol.o[t] = grid[rng.categorical(Vector::Ones(grid.size()))];
      break;
    }
  }
  refresh_omega(vol);
  return vol;
}

}  // namespace btar
