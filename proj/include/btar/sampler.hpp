#pragma once

#include "btar/model.hpp"

#include <cstdint>
#include <utility>

namespace btar {

struct SamplerConfig {
  int n_iter = 4000;
  int n_burn = 2000;
  int thin = 2;
  std::uint64_t seed = 1;
  std::array<int, 6> ranks{1, 1, 1, 1, 1, 1};
  VolRegime regime = VolRegime::Homoskedastic;
  DecompKind decomp = DecompKind::Tucker;  // Cp locks the core superdiagonal
  bool shrinkage = true;
  bool trend = false;
  // Rescale Sigma2/Sigma3 to unit average diagonal after each Sigma update,
  // absorbing the scale into Sigma1. Identification device; switched off for
  // joint-distribution (Geweke) validation of the raw kernel.
  bool normalize_sigma = true;

  double mh_scale_eta = 0.01;  // random-walk sd for the eta updates
  double mh_scale_h = 0.5;     // random-walk sd for the log-volatility sites
  double mh_scale_phi = 0.1;   // truncated-normal proposal sd for phi

  PriorSpec prior;

  void validate(const std::array<int, 3>& dims) const;
};

struct McmcRates {
  long eta_accept = 0, eta_total = 0;
  long h_accept = 0, h_total = 0;
  long phi_accept = 0, phi_total = 0;
  static double rate(long a, long n) { return n > 0 ? static_cast<double>(a) / n : 0.0; }
};

// Thinned post-burn chain output. Factors are stored per draw; the
// reconstructed coefficient tensor is formed on demand.
struct PosteriorDraws {
  std::array<int, 3> dims{};
  std::array<int, 6> ranks{};
  VolRegime regime = VolRegime::Homoskedastic;
  bool has_trend = false;

  std::vector<TuckerFactors> factors;
  std::vector<DenseTensor> a0;
  std::vector<DenseTensor> a1;  // empty unless trend
  std::vector<ErrorCov> cov;
  std::vector<Vector> omega;
  std::vector<std::array<double, 6>> tau;
  std::vector<std::array<double, 6>> alpha;
  std::vector<double> loglik;
  McmcRates rates;

  int count() const { return static_cast<int>(factors.size()); }
};

struct GaussianConditional {
  Vector mean;
  Matrix precision;
};

// Commutation matrix P with P_{k,q} = 1 iff k = (r5-1)R6 + r6 and
// q = (r6-1)R5 + r5 (1-based); orthogonal 0/1 permutation.
Matrix commutation_matrix(int r5, int r6);

// One MCMC chain over the TAR(1) posterior. Blocks are exposed individually
// so the conditionals can be validated against dense oracles.
class GibbsSampler {
 public:
  GibbsSampler(TensorSeries data, SamplerConfig cfg);

  const ModelState& state() const { return state_; }
  ModelState& state() { return state_; }
  void set_state(ModelState s);
  void set_data(TensorSeries data);
  const TensorSeries& data() const { return data_; }
  const SamplerConfig& config() const { return cfg_; }

  // Default initialization: HOSVD of the least-squares VAR(1) estimate when
  // the data supports it, small random factors otherwise.
  void init_default(Rng& rng);

  // Independent draw of the full state from the prior.
  ModelState draw_prior_state(Rng& rng) const;

  // One full sweep: intercept, B1..B6, core, Sigma1..3, shrinkage, volatility.
  void sweep(Rng& rng);

  void draw_intercept(Rng& rng);
  void draw_factor(int mode, Rng& rng);  // mode in 1..6
  void draw_core(Rng& rng);
  void draw_sigma(int i, Rng& rng);      // i in 1..3
  void draw_shrinkage(Rng& rng);
  void draw_volatility(Rng& rng);

  // Conditional moments of the Gaussian blocks given the current state
  // (posterior of vec(B_mode), vec(B4') etc. in the block's own layout).
  GaussianConditional factor_conditional(int mode) const;
  GaussianConditional core_conditional() const;

  // Inverse-Wishart parameters of the Sigma_i conditional.
  std::pair<double, Matrix> sigma_conditional(int i) const;

  // Residual vectors under the current state, t = 1..T.
  Matrix residual_matrix() const;

  double fast_log_likelihood() const;

  const McmcRates& rates() const { return rates_; }

 private:
  std::pair<Matrix, Vector> factor_normal_equations(int mode) const;
  std::pair<Matrix, Vector> core_normal_equations() const;
  Vector factor_prior_variance(int mode) const;
  Vector predictor_projection(int t) const;  // Btilde' y_{t-1}
  Matrix design_z(int mode, int t) const;    // modes 4..6
  Matrix design_z_with(int mode, int t, const Matrix& pair_t) const;
  void rebuild_cache();

  TensorSeries data_;
  SamplerConfig cfg_;
  ModelState state_;
  McmcRates rates_;

  int T_ = 0;
  Eigen::Index I_ = 0;
  Matrix yv_;  // I x (T+1), columns vec(y_t)
  std::array<std::vector<Matrix>, 3> unf_;  // per-mode unfoldings of y_t
};

PosteriorDraws run_gibbs(const TensorSeries& data, const SamplerConfig& cfg);

// Posterior mean of the reconstructed coefficient tensor.
DenseTensor posterior_mean_coeff(const PosteriorDraws& draws);

// HOSVD of the posterior-mean coefficient tensor at the requested ranks,
// sign-normalized.
TuckerFactors identify(const PosteriorDraws& draws, const std::array<int, 6>& ranks);

}  // namespace btar
