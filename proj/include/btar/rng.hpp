#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace btar {

// Seeded random stream plus the distributions the samplers need. One stream
// per chain; draws are reproducible for a fixed seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return unif_(gen_); }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  double normal() { return norm_(gen_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Gamma(shape, rate) with mean shape/rate.
  double gamma(double shape, double rate) {
    std::gamma_distribution<double> d(shape, 1.0 / rate);
    return d(gen_);
  }

  // Inverse-gamma(shape, scale): 1/x ~ Gamma(shape, rate = scale).
  double inv_gamma(double shape, double scale) { return 1.0 / gamma(shape, scale); }

  double beta(double a, double b) {
    const double x = gamma(a, 1.0);
    const double y = gamma(b, 1.0);
    return x / (x + y);
  }

  double chi_squared(double dof) { return gamma(0.5 * dof, 0.5); }

  double exponential(double rate) {
    std::exponential_distribution<double> d(rate);
    return d(gen_);
  }

  // Normal restricted to (lo, hi) by rejection; intended for proposal draws
  // where the interval keeps a non-negligible mass.
  double trunc_normal(double mean, double sd, double lo, double hi);

  // Index draw from non-negative (unnormalized) weights.
  int categorical(const Eigen::VectorXd& weights);

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  // Generalized inverse Gaussian with density
  //   p(x) ~ x^{lambda-1} exp(-(chi/x + psi*x)/2),  x > 0.
  // Rejection sampling with ratio-of-uniforms (with and without mode shift)
  // and a gamma envelope for the small-omega regime; negative lambda handled
  // through the reciprocal identity.
  double gig(double lambda, double chi, double psi);

  // Wishart(dof, scale) via the Bartlett factorization.
  Eigen::MatrixXd wishart(double dof, const Eigen::MatrixXd& scale);

  // Inverse-Wishart(dof, scale): inverse of Wishart(dof, scale^{-1}).
  Eigen::MatrixXd inv_wishart(double dof, const Eigen::MatrixXd& scale);

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> norm_{0.0, 1.0};
};

// log of the standard normal CDF complement helpers used by the truncated
// normal proposal correction.
double normal_cdf(double x);

}  // namespace btar
