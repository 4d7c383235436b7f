#include "btar/rng.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace btar {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double Rng::trunc_normal(double mean, double sd, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("trunc_normal: empty interval");
  for (int it = 0; it < 10000; ++it) {
    const double x = normal(mean, sd);
    if (x > lo && x < hi) return x;
  }
  // Interval mass is vanishing under the proposal; fall back to inverse-CDF
  // on the uniform part of the interval.
  const double plo = normal_cdf((lo - mean) / sd);
  const double phi = normal_cdf((hi - mean) / sd);
  const double u = plo + (phi - plo) * uniform();
  // Bisection invert; adequate for the rare fallback path.
  double a = lo, b = hi;
  for (int k = 0; k < 200; ++k) {
    const double m = 0.5 * (a + b);
    (normal_cdf((m - mean) / sd) < u ? a : b) = m;
  }
  return 0.5 * (a + b);
}

int Rng::categorical(const Eigen::VectorXd& weights) {
  const double total = weights.sum();
  if (!(total > 0.0)) throw std::invalid_argument("categorical: weights must have positive sum");
  double u = uniform() * total;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u <= 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size() - 1);
}

namespace {

// log of the two-parameter GIG quasi-density x^{lambda-1} exp(-omega(x+1/x)/2).
inline double gig2_logq(double x, double lambda, double omega) {
  return (lambda - 1.0) * std::log(x) - 0.5 * omega * (x + 1.0 / x);
}

inline double gig2_mode(double lambda, double omega) {
  if (lambda >= 1.0)
    return (std::sqrt((lambda - 1.0) * (lambda - 1.0) + omega * omega) + (lambda - 1.0)) / omega;
  return omega / (std::sqrt((1.0 - lambda) * (1.0 - lambda) + omega * omega) + (1.0 - lambda));
}

// Ratio-of-uniforms without mode shift; valid for all lambda >= 0, omega > 0.
double gig2_rou_noshift(Rng& rng, double lambda, double omega) {
  const double m = gig2_mode(lambda, omega);
  const double lqm = gig2_logq(m, lambda, omega);
  const double xplus =
      ((lambda + 1.0) + std::sqrt((lambda + 1.0) * (lambda + 1.0) + omega * omega)) / omega;
  const double vplus = xplus * std::exp(0.5 * (gig2_logq(xplus, lambda, omega) - lqm));
  while (true) {
    const double u = rng.uniform();
    const double v = rng.uniform(0.0, vplus);
    const double x = v / u;
    if (2.0 * std::log(u) <= gig2_logq(x, lambda, omega) - lqm) return x;
  }
}

// Ratio-of-uniforms with shift by the mode; efficient for lambda >= 1 or
// omega > 1. The v-bounds come from the two positive roots of the cubic
// stationarity condition of (x-m)^2 q(x).
double gig2_rou_shift(Rng& rng, double lambda, double omega) {
  const double m = gig2_mode(lambda, omega);
  const double lqm = gig2_logq(m, lambda, omega);
  const double a = -2.0 * (lambda + 1.0) / omega - m;
  const double b = 2.0 * (lambda - 1.0) * m / omega - 1.0;
  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + m;
  const double phi = std::acos(std::clamp(-q / (2.0 * std::sqrt(-p * p * p / 27.0)), -1.0, 1.0));
  const double fak = 2.0 * std::sqrt(-p / 3.0);
  const double y1 = fak * std::cos(phi / 3.0) - a / 3.0;
  const double y2 = fak * std::cos(phi / 3.0 + 4.0 * std::numbers::pi / 3.0) - a / 3.0;
  const double vplus = (y1 - m) * std::exp(0.5 * (gig2_logq(y1, lambda, omega) - lqm));
  const double vminus = (y2 - m) * std::exp(0.5 * (gig2_logq(y2, lambda, omega) - lqm));
  while (true) {
    const double u = rng.uniform();
    const double v = rng.uniform(vminus, vplus);
    const double x = v / u + m;
    if (x <= 0.0) continue;
    if (2.0 * std::log(u) <= gig2_logq(x, lambda, omega) - lqm) return x;
  }
}

// Gamma envelope: q(x) = x^{lambda-1} e^{-omega x/2} * e^{-omega/(2x)} with the
// last factor <= 1. Efficient for small omega and lambda not too close to 0.
double gig2_gamma_reject(Rng& rng, double lambda, double omega) {
  while (true) {
    const double x = rng.gamma(lambda, 0.5 * omega);
    if (x <= 0.0) continue;
    if (std::log(rng.uniform()) <= -0.5 * omega / x) return x;
  }
}

double gig2(Rng& rng, double lambda, double omega) {
  if (lambda >= 1.0 || omega > 1.0) return gig2_rou_shift(rng, lambda, omega);
  if (omega <= 0.5 && lambda >= 0.05) return gig2_gamma_reject(rng, lambda, omega);
  return gig2_rou_noshift(rng, lambda, omega);
}

}  // namespace

double Rng::gig(double lambda, double chi, double psi) {
  if (!std::isfinite(lambda) || !std::isfinite(chi) || !std::isfinite(psi))
    throw std::invalid_argument("gig: non-finite parameter");
  if (chi < 0.0 || psi < 0.0) throw std::invalid_argument("gig: chi and psi must be non-negative");
  if (lambda < 0.0) return 1.0 / gig(-lambda, psi, chi);

  // Gamma limit: chi -> 0 with lambda > 0.
  constexpr double kTiny = 1e-300;
  if (chi <= kTiny) {
    if (lambda <= 0.0 || psi <= kTiny) throw std::invalid_argument("gig: degenerate parameters");
    return gamma(lambda, 0.5 * psi);
  }
  if (psi <= kTiny) throw std::invalid_argument("gig: psi must be positive when lambda >= 0");

  const double omega = std::sqrt(chi * psi);
  const double scale = std::sqrt(chi / psi);
  return scale * gig2(*this, lambda, omega);
}

Eigen::MatrixXd Rng::wishart(double dof, const Eigen::MatrixXd& scale) {
  const Eigen::Index p = scale.rows();
  if (dof <= p - 1) throw std::invalid_argument("wishart: dof too small");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw std::runtime_error("wishart: scale not positive definite");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    A(i, i) = std::sqrt(chi_squared(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = normal();
  }
  Eigen::MatrixXd LA = llt.matrixL() * A;
  return LA * LA.transpose();
}

Eigen::MatrixXd Rng::inv_wishart(double dof, const Eigen::MatrixXd& scale) {
  const Eigen::Index p = scale.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("inv_wishart: scale not positive definite");
  Eigen::MatrixXd scale_inv =
      llt.solve(Eigen::MatrixXd::Identity(p, p));
  // Symmetrize against round-off before the Bartlett draw.
  scale_inv = 0.5 * (scale_inv + scale_inv.transpose()).eval();
  Eigen::MatrixXd w = wishart(dof, scale_inv);
  Eigen::LLT<Eigen::MatrixXd> lltw(w);
  Eigen::MatrixXd out = lltw.solve(Eigen::MatrixXd::Identity(p, p));
  return 0.5 * (out + out.transpose()).eval();
}

}  // namespace btar
