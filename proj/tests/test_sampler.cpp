#include "btar/sampler.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace btar;

namespace {

TensorSeries random_series(const std::array<int, 3>& dims, int T, std::mt19937& gen) {
  TensorSeries s;
  s.dims = dims;
  for (int t = 0; t <= T; ++t)
    s.y.push_back(oracle::random_tensor({dims[0], dims[1], dims[2]}, gen));
  return s;
}

ModelState random_state(const std::array<int, 3>& dims, const std::array<int, 6>& ranks, int T,
                        std::mt19937& gen, bool trend = false) {
  ModelState s;
  s.factors.core = oracle::random_tensor(std::vector<int>(ranks.begin(), ranks.end()), gen);
  for (int i = 0; i < 6; ++i)
    s.factors.factors[i] = oracle::random_matrix(dims[i % 3], ranks[i], gen);
  const std::vector<int> shape{dims[0], dims[1], dims[2]};
  s.intercept.a0 = oracle::random_tensor(shape, gen, 0.4);
  s.intercept.a1 = trend ? oracle::random_tensor(shape, gen, 0.05) : DenseTensor(shape);
  s.intercept.has_trend = trend;
  s.cov.s1 = oracle::random_spd(dims[0], gen);
  s.cov.s2 = oracle::random_spd(dims[1], gen);
  s.cov.s3 = oracle::random_spd(dims[2], gen);
  s.vol.regime = VolRegime::Homoskedastic;
  s.vol.omega = Vector(T);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int t = 0; t < T; ++t) s.vol.omega[t] = u(gen);
  s.vol.h = Vector::Zero(T);
  s.vol.o = Vector::Ones(T);
  for (int i = 0; i < 6; ++i) {
    s.shrink.eta[i] = Vector::Constant(ranks[i] - 1, 0.5);
    s.shrink.phi[i] = stick_breaking(s.shrink.eta[i], ranks[i]);
  }
  return s;
}

SamplerConfig flat_config(const std::array<int, 6>& ranks, VolRegime regime) {
  SamplerConfig cfg;
  cfg.ranks = ranks;
  cfg.regime = regime;
  cfg.shrinkage = false;
  cfg.normalize_sigma = false;
  cfg.prior.margin_var = 1e10;
  cfg.prior.core_var = 1e10;
  cfg.n_iter = 2;
  cfg.n_burn = 1;
  cfg.thin = 1;
  return cfg;
}

// Basis state for the GLS design: block `mode` replaced by the unit vector
// e_j in the block's own vectorization layout.
ModelState basis_state(const ModelState& s, int mode, int j, const std::array<int, 3>& dims,
                       const std::array<int, 6>& ranks) {
  ModelState b = s;
  const int Ii = dims[(mode - 1) % 3];
  const int Ri = ranks[mode - 1];
  Matrix unit = Matrix::Zero(Ii, Ri);
  if (mode == 4)
    unit(j / Ri, j % Ri) = 1.0;  // vec(B4'): rank index fastest
  else
    unit(j % Ii, j / Ii) = 1.0;  // vec(B_i): within-column index fastest
  b.factors.factors[mode - 1] = unit;
  return b;
}

Matrix dense_sigma(const ErrorCov& cov) { return kron(cov.s3, kron(cov.s2, cov.s1)); }

Matrix predictor_kron(const TuckerFactors& f) {
  return kron(f.factors[5], kron(f.factors[4], f.factors[3]));
}

}  // namespace

TEST_CASE("commutation matrix") {
  CHECK(commutation_matrix(1, 1)(0, 0) == 1.0);

  const Matrix p = commutation_matrix(2, 2);
  Matrix want(4, 4);
  want << 1, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 1;
  CHECK((p - want).cwiseAbs().maxCoeff() == 0.0);

  const Matrix p32 = commutation_matrix(3, 2);
  CHECK((p32.transpose() * p32 - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() == 0.0);
  for (Eigen::Index r = 0; r < 6; ++r) CHECK(p32.row(r).sum() == 1.0);
}

TEST_CASE("predictor-side design identities reproduce Btilde' y") {
  std::mt19937 gen(51);
  const std::array<int, 3> dims{3, 2, 2};
  const std::array<int, 6> ranks{2, 2, 1, 2, 2, 2};
  const ModelState s = random_state(dims, ranks, 4, gen);
  const DenseTensor y = oracle::random_tensor({3, 2, 2}, gen);
  const Matrix y1 = unfold(y, 1), y2 = unfold(y, 2), y3 = unfold(y, 3);
  const Matrix& b4 = s.factors.factors[3];
  const Matrix& b5 = s.factors.factors[4];
  const Matrix& b6 = s.factors.factors[5];
  const Vector want = predictor_kron(s.factors).transpose() * y.vec();

  // Lemma 2 display: ((B6' x B5') Y_(1)' x I_{R4}) vec(B4')
  {
    const Matrix design = kron(kron(b6, b5).transpose() * y1.transpose(),
                               Matrix::Identity(ranks[3], ranks[3]));
    const Matrix b4t = b4.transpose();
    const Vector got = design * Eigen::Map<const Vector>(b4t.data(), b4t.size());
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12 * want.cwiseAbs().maxCoeff());
  }

  // Lemma 3: (P'(B5' x B6') x B4') vec(Y_(2)')
  {
    const Matrix p = commutation_matrix(ranks[4], ranks[5]);
    const Matrix y2t = y2.transpose();
    const Vector got = kron(p.transpose() * kron(b5, b6).transpose(), b4.transpose()) *
                       Eigen::Map<const Vector>(y2t.data(), y2t.size());
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12 * want.cwiseAbs().maxCoeff());
  }

  // Proposition 2: (P'(I x B6') x B4')(I x Y_(2)') vec(B5)
  {
    const Matrix p = commutation_matrix(ranks[4], ranks[5]);
    const Matrix design =
        kron(p.transpose() * kron(Matrix::Identity(ranks[4], ranks[4]), b6.transpose()),
             b4.transpose()) *
        kron(Matrix::Identity(ranks[4], ranks[4]), y2.transpose());
    const Vector got = design * Eigen::Map<const Vector>(b5.data(), b5.size());
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12 * want.cwiseAbs().maxCoeff());
  }

  // B6 display: (I_{R6} x (B5' x B4') Y_(3)') vec(B6)
  {
    const Matrix design = kron(Matrix::Identity(ranks[5], ranks[5]),
                               kron(b5, b4).transpose() * y3.transpose());
    const Vector got = design * Eigen::Map<const Vector>(b6.data(), b6.size());
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12 * want.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("factor conditionals match the dense flat-prior GLS oracle") {
  std::mt19937 gen(52);
  const std::array<int, 3> dims{2, 2, 2};
  const std::array<int, 6> ranks{2, 1, 2, 2, 1, 2};
  const int T = 15;
  const TensorSeries data = random_series(dims, T, gen);
  const ModelState s = random_state(dims, ranks, T, gen, /*trend=*/true);

  SamplerConfig cfg = flat_config(ranks, VolRegime::Homoskedastic);
  cfg.trend = true;
  GibbsSampler sampler(data, cfg);
  sampler.set_state(s);

  const Matrix sigma = dense_sigma(s.cov);
  for (int mode = 1; mode <= 6; ++mode) {
    CAPTURE(mode);
    const int nparams = dims[(mode - 1) % 3] * ranks[mode - 1];
    std::vector<Matrix> xs;
    std::vector<Vector> ys;
    std::vector<double> ws;
    for (int t = 1; t <= T; ++t) {
      Matrix x(static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2], nparams);
      for (int j = 0; j < nparams; ++j) {
        const ModelState b = basis_state(s, mode, j, dims, ranks);
        x.col(j) = gen_inner(tucker_reconstruct(b.factors), data.y[t - 1]).vec();
      }
      xs.push_back(x);
      ys.push_back(data.y[t].vec() - intercept_at(s.intercept, t).vec());
      ws.push_back(s.vol.omega[t - 1]);
    }
    Matrix normal;
    const Vector want = oracle::dense_gls(xs, ys, ws, sigma, &normal, 1e-10);
    const GaussianConditional got = sampler.factor_conditional(mode);
    CHECK((got.mean - want).cwiseAbs().maxCoeff() <= 1e-8 * want.cwiseAbs().maxCoeff());
    // likelihood part of the precision agrees with the GLS normal matrix
    Matrix k_lik = got.precision;
    k_lik.diagonal().array() -= 1e-10;
    CHECK((k_lik - normal).cwiseAbs().maxCoeff() <= 1e-6 * normal.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("core conditional matches the dense flat-prior GLS oracle") {
  std::mt19937 gen(53);
  const std::array<int, 3> dims{2, 2, 2};
  const std::array<int, 6> ranks{2, 1, 2, 1, 2, 1};
  const int T = 14;
  const TensorSeries data = random_series(dims, T, gen);
  const ModelState s = random_state(dims, ranks, T, gen);

  SamplerConfig cfg = flat_config(ranks, VolRegime::Homoskedastic);
  GibbsSampler sampler(data, cfg);
  sampler.set_state(s);

  const Matrix sigma = dense_sigma(s.cov);
  const Eigen::Index ncore = s.factors.core.size();
  std::vector<Matrix> xs;
  std::vector<Vector> ys;
  std::vector<double> ws;
  for (int t = 1; t <= T; ++t) {
    Matrix x(static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2], ncore);
    for (Eigen::Index j = 0; j < ncore; ++j) {
      ModelState b = s;
      b.factors.core.vec().setZero();
      b.factors.core.vec()[j] = 1.0;
      x.col(j) = gen_inner(tucker_reconstruct(b.factors), data.y[t - 1]).vec();
    }
    xs.push_back(x);
    ys.push_back(data.y[t].vec() - intercept_at(s.intercept, t).vec());
    ws.push_back(s.vol.omega[t - 1]);
  }
  const Vector want = oracle::dense_gls(xs, ys, ws, sigma, nullptr, 1e-10);
  const GaussianConditional got = sampler.core_conditional();
  CHECK((got.mean - want).cwiseAbs().maxCoeff() <= 1e-8 * want.cwiseAbs().maxCoeff());
}

TEST_CASE("CP-locked core gives the CP conditional for the margins") {
  std::mt19937 gen(54);
  const std::array<int, 3> dims{2, 2, 2};
  const std::array<int, 6> ranks{2, 2, 2, 2, 2, 2};
  const int T = 16;
  const TensorSeries data = random_series(dims, T, gen);
  ModelState s = random_state(dims, ranks, T, gen);
  // superdiagonal core of ones: the Tucker sweep conditional becomes the CP one
  s.factors.core.vec().setZero();
  std::vector<int> idx(6);
  for (int k = 1; k <= 2; ++k) {
    idx.assign(6, k);
    s.factors.core.at(idx) = 1.0;
  }

  SamplerConfig cfg = flat_config(ranks, VolRegime::Homoskedastic);
  cfg.decomp = DecompKind::Cp;
  GibbsSampler sampler(data, cfg);
  sampler.set_state(s);

  const Matrix sigma = dense_sigma(s.cov);
  for (int mode : {1, 4}) {
    const int nparams = dims[(mode - 1) % 3] * ranks[mode - 1];
    std::vector<Matrix> xs;
    std::vector<Vector> ys;
    std::vector<double> ws;
    for (int t = 1; t <= T; ++t) {
      Matrix x(8, nparams);
      for (int j = 0; j < nparams; ++j) {
        const ModelState b = basis_state(s, mode, j, dims, ranks);
        x.col(j) = gen_inner(tucker_reconstruct(b.factors), data.y[t - 1]).vec();
      }
      xs.push_back(x);
      ys.push_back(data.y[t].vec() - intercept_at(s.intercept, t).vec());
      ws.push_back(s.vol.omega[t - 1]);
    }
    const Vector want = oracle::dense_gls(xs, ys, ws, sigma, nullptr, 1e-10);
    const GaussianConditional got = sampler.factor_conditional(mode);
    CHECK((got.mean - want).cwiseAbs().maxCoeff() <= 1e-8 * want.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("zero data pulls the factor means to the prior mean") {
  std::mt19937 gen(55);
  const std::array<int, 3> dims{2, 2, 2};
  const std::array<int, 6> ranks{1, 1, 1, 1, 1, 1};
  TensorSeries data;
  data.dims = dims;
  for (int t = 0; t <= 6; ++t) data.y.emplace_back(std::vector<int>{2, 2, 2});
  ModelState s = random_state(dims, ranks, 6, gen);
  s.intercept.a0.vec().setZero();

  SamplerConfig cfg = flat_config(ranks, VolRegime::Homoskedastic);
  cfg.prior.margin_var = 1.0;
  cfg.prior.core_var = 1.0;
  GibbsSampler sampler(data, cfg);
  sampler.set_state(s);
  for (int mode = 1; mode <= 6; ++mode)
    CHECK(sampler.factor_conditional(mode).mean.cwiseAbs().maxCoeff() == 0.0);
  CHECK(sampler.core_conditional().mean.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("factor draws match their conditional moments") {
  std::mt19937 gen(56);
  const std::array<int, 3> dims{2, 1, 1};
  const std::array<int, 6> ranks{1, 1, 1, 1, 1, 1};
  const int T = 10;
  const TensorSeries data = random_series(dims, T, gen);
  const ModelState s = random_state(dims, ranks, T, gen);

  SamplerConfig cfg = flat_config(ranks, VolRegime::Homoskedastic);
  cfg.prior.margin_var = 2.0;
  GibbsSampler sampler(data, cfg);
  sampler.set_state(s);
  const GaussianConditional cond = sampler.factor_conditional(1);
  const Matrix cov = cond.precision.inverse();

  Rng rng(77);
  const int n = 20000;
  Matrix draws(n, 2);
  for (int k = 0; k < n; ++k) {
    sampler.set_state(s);
    sampler.draw_factor(1, rng);
    draws.row(k) = Eigen::Map<const Vector>(sampler.state().factors.factors[0].data(), 2)
                       .transpose();
  }
  for (int j = 0; j < 2; ++j) {
    const double se = std::sqrt(cov(j, j) / n);
    CHECK(std::abs(draws.col(j).mean() - cond.mean[j]) <= 4.0 * se);
  }
  const Matrix centered = draws.rowwise() - draws.colwise().mean();
  const Matrix scov = centered.transpose() * centered / (n - 1);
  CHECK((scov - cov).cwiseAbs().maxCoeff() <= 0.05 * cov.cwiseAbs().maxCoeff());
}

TEST_CASE("intercept draw matches the GLS mean in the flat-prior limit") {
  std::mt19937 gen(57);
  const std::array<int, 3> dims{2, 2, 2};
  const std::array<int, 6> ranks{1, 1, 1, 1, 1, 1};
  const int T = 12;
  const TensorSeries data = random_series(dims, T, gen);
  const ModelState s = random_state(dims, ranks, T, gen);

  SamplerConfig cfg = flat_config(ranks, VolRegime::Homoskedastic);
  cfg.prior.intercept_var = 1e10;
  GibbsSampler sampler(data, cfg);
  sampler.set_state(s);

  // GLS with design I (intercept only, no trend)
  const DenseTensor coeff = tucker_reconstruct(s.factors);
  std::vector<Matrix> xs;
  std::vector<Vector> ys;
  std::vector<double> ws;
  for (int t = 1; t <= T; ++t) {
    xs.push_back(Matrix::Identity(8, 8));
    ys.push_back(data.y[t].vec() - gen_inner(coeff, data.y[t - 1]).vec());
    ws.push_back(s.vol.omega[t - 1]);
  }
  const Vector want = oracle::dense_gls(xs, ys, ws, dense_sigma(s.cov));

  Rng rng(5);
  const int n = 4000;
  Vector mean = Vector::Zero(8);
  for (int k = 0; k < n; ++k) {
    sampler.set_state(s);
    sampler.draw_intercept(rng);
    mean += sampler.state().intercept.a0.vec();
  }
  mean /= n;
  // sampling noise: cov ~ sigma / sum(1/w); bound loosely via 4 sd
  const double c0 = std::accumulate(ws.begin(), ws.end(), 0.0,
                                    [](double acc, double w) { return acc + 1.0 / w; });
  const Matrix sigma = dense_sigma(s.cov);
  for (int j = 0; j < 8; ++j)
    CHECK(std::abs(mean[j] - want[j]) <= 4.0 * std::sqrt(sigma(j, j) / c0 / n));
}

TEST_CASE("sigma conditional: scalar inverse-gamma case and simulation consistency") {
  std::mt19937 gen(58);
  // scalar case
  {
    const std::array<int, 3> dims{1, 1, 1};
    const std::array<int, 6> ranks{1, 1, 1, 1, 1, 1};
    const int T = 9;
    const TensorSeries data = random_series(dims, T, gen);
    ModelState s = random_state(dims, ranks, T, gen);
    s.cov.s1(0, 0) = 1.0;
    s.cov.s2(0, 0) = 1.0;
    s.cov.s3(0, 0) = 1.0;
    SamplerConfig cfg = flat_config(ranks, VolRegime::Homoskedastic);
    GibbsSampler sampler(data, cfg);
    sampler.set_state(s);
    const auto [dof, scale] = sampler.sigma_conditional(1);
    CHECK(dof == doctest::Approx(1.0 + cfg.prior.iw_dof_offset + T));
    // scale = prior I + sum residual^2 / omega
    const auto res = residuals(data, s);
    double want = 1.0;
    for (int t = 0; t < T; ++t)
      want += res[t].vec()[0] * res[t].vec()[0] / s.vol.omega[t];
    CHECK(scale(0, 0) == doctest::Approx(want).epsilon(1e-10));

    // repeated draws match the inverse-gamma(dof/2, scale/2) moments
    Rng rng(17);
    const int n = 20000;
    double sum = 0;
    for (int k = 0; k < n; ++k) {
      sampler.set_state(s);
      sampler.draw_sigma(1, rng);
      sum += sampler.state().cov.s1(0, 0);
    }
    const double mean_want = scale(0, 0) / (dof - 2.0);
    CHECK(std::abs(sum / n - mean_want) <= 0.03 * mean_want);
  }

  // simulation consistency at T = 2000 with normalization on
  {
    const std::array<int, 3> dims{2, 2, 2};
    const std::array<int, 6> ranks{1, 1, 1, 1, 1, 1};
    ModelState truth = random_state(dims, ranks, 2000, gen);
    truth.factors.core.vec().setZero();
    truth.intercept.a0.vec().setZero();
    truth.vol.omega.setOnes();
    // normalize the true factors the same way the sampler reports them
    const double s2 = truth.cov.s2.diagonal().mean();
    const double s3 = truth.cov.s3.diagonal().mean();
    truth.cov.s2 /= s2;
    truth.cov.s3 /= s3;
    truth.cov.s1 *= s2 * s3;
    Rng rng(23);
    const TensorSeries data = simulate(truth, 2000, DenseTensor({2, 2, 2}), rng);

    SamplerConfig cfg = flat_config(ranks, VolRegime::Homoskedastic);
    cfg.normalize_sigma = true;
    GibbsSampler sampler(data, cfg);
    ModelState st = truth;
    st.cov.s1 = Matrix::Identity(2, 2);
    st.cov.s2 = Matrix::Identity(2, 2);
    st.cov.s3 = Matrix::Identity(2, 2);
    sampler.set_state(st);
    Matrix m1 = Matrix::Zero(2, 2), m2 = Matrix::Zero(2, 2), m3 = Matrix::Zero(2, 2);
    const int burn = 20, keep = 80;
    for (int k = 0; k < burn + keep; ++k) {
      sampler.draw_sigma(1, rng);
      sampler.draw_sigma(2, rng);
      sampler.draw_sigma(3, rng);
      if (k >= burn) {
        m1 += sampler.state().cov.s1;
        m2 += sampler.state().cov.s2;
        m3 += sampler.state().cov.s3;
      }
    }
    m1 /= keep;
    m2 /= keep;
    m3 /= keep;
    CHECK((m1 - truth.cov.s1).norm() <= 0.10 * truth.cov.s1.norm());
    CHECK((m2 - truth.cov.s2).norm() <= 0.10 * truth.cov.s2.norm());
    CHECK((m3 - truth.cov.s3).norm() <= 0.10 * truth.cov.s3.norm());
  }
}

TEST_CASE("shrinkage block leaves its prior invariant") {
  std::mt19937 gen(59);
  const std::array<int, 3> dims{2, 2, 2};
  const std::array<int, 6> ranks{2, 1, 1, 1, 1, 1};
  TensorSeries data = random_series(dims, 4, gen);
  SamplerConfig cfg;
  cfg.ranks = ranks;
  cfg.shrinkage = true;
  cfg.n_iter = 2;
  cfg.n_burn = 1;
  // a well-mixing proposal scale for the invariance check; the production
  // default 0.01 is deliberately small and would need far longer chains
  cfg.mh_scale_eta = 0.35;
  GibbsSampler sampler(data, cfg);
  ModelState s = sampler.state();

  Rng rng(71);
  const int n = 50000;
  std::vector<double> etas, taus;
  etas.reserve(n);
  for (int k = 0; k < n; ++k) {
    // Gibbs pair: margins from their prior given the shrinkage state, then
    // the shrinkage conditionals given the margins.
    for (int i = 0; i < 6; ++i) {
      const Vector phi = stick_breaking(s.shrink.eta[i], ranks[i]);
      for (int r = 0; r < ranks[i]; ++r)
        s.shrink.phi[i][r] = phi[r];
      Matrix b(dims[i % 3], ranks[i]);
      for (int r = 0; r < ranks[i]; ++r)
        b.col(r) = std::sqrt(s.shrink.tau[i] * phi[r]) * rng.normal_vector(dims[i % 3]);
      s.factors.factors[i] = b;
    }
    sampler.set_state(s);
    for (int rep = 0; rep < 20; ++rep) sampler.draw_shrinkage(rng);
    s = sampler.state();
    etas.push_back(s.shrink.eta[0][0]);
    taus.push_back(s.shrink.tau[0]);
  }

  // eta's marginal prior: Beta(1, alpha) mixed over the alpha grid (pmf ~ alpha)
  const int G = cfg.prior.alpha_grid;
  double norm = 0;
  for (int j = 1; j <= G; ++j) norm += j;
  auto eta_cdf = [&](double x) {
    double f = 0;
    for (int j = 1; j <= G; ++j) {
      const double a = static_cast<double>(j) / G;
      f += (j / norm) * (1.0 - std::pow(1.0 - x, a));
    }
    return f;
  };
  CHECK(oracle::ks_distance(etas, eta_cdf) < 0.02);

  auto tau_cdf = [&](double x) { return 1.0 - std::exp(-x); };  // Gamma(1,1)
  CHECK(oracle::ks_distance(taus, tau_cdf) < 0.02);
}

TEST_CASE("griddy draw of alpha reproduces the normalized grid weights") {
  std::mt19937 gen(60);
  const std::array<int, 3> dims{2, 2, 2};
  const std::array<int, 6> ranks{1, 1, 1, 1, 1, 1};
  TensorSeries data = random_series(dims, 4, gen);
  SamplerConfig cfg;
  cfg.ranks = ranks;
  cfg.shrinkage = true;
  cfg.n_iter = 2;
  cfg.n_burn = 1;
  cfg.prior.alpha_grid = 10;
  GibbsSampler sampler(data, cfg);
  ModelState s = sampler.state();
  for (int i = 0; i < 6; ++i) s.factors.factors[i].setConstant(0.5);  // nonzero margins

  Rng rng(81);
  const int n = 50000;
  std::vector<int> counts(10, 0);
  for (int k = 0; k < n; ++k) {
    sampler.set_state(s);
    sampler.draw_shrinkage(rng);
    counts[static_cast<int>(sampler.state().shrink.alpha[0] * 10 + 0.5) - 1]++;
  }
  // with R = 1 the weights are proportional to alpha itself
  const double norm = 55.0;
  for (int j = 1; j <= 10; ++j) {
    const double w = j / norm;
    const double se = std::sqrt(w * (1 - w) / n);
    CHECK(std::abs(counts[j - 1] / double(n) - w) <= 5.0 * se);
  }
}

TEST_CASE("homoskedastic volatility step is a no-op") {
  std::mt19937 gen(61);
  const TensorSeries data = random_series({2, 2, 2}, 6, gen);
  SamplerConfig cfg = flat_config({1, 1, 1, 1, 1, 1}, VolRegime::Homoskedastic);
  GibbsSampler sampler(data, cfg);
  Rng rng(3);
  sampler.draw_volatility(rng);
  CHECK((sampler.state().vol.omega.array() == 1.0).all());
}

TEST_CASE("csv recovery: posterior volatility tracks an injected spike") {
  std::mt19937 gen(62);
  const std::array<int, 3> dims{3, 3, 2};
  const std::array<int, 6> ranks{1, 1, 1, 1, 1, 1};
  const int T = 200;
  ModelState truth = random_state(dims, ranks, T, gen);
  truth.cov.s1 = Matrix::Identity(3, 3);
  truth.cov.s2 = Matrix::Identity(3, 3);
  truth.cov.s3 = Matrix::Identity(2, 2);
  truth.factors.core.vec()[0] = 0.5;
  for (int i = 0; i < 6; ++i) truth.factors.factors[i] *= 0.5;
  truth.intercept.a0.vec().setZero();
  truth.vol.regime = VolRegime::Csv;
  truth.vol.h = Vector::Zero(T);
  for (int t = 0; t < T; ++t) {
    const double d1 = (t - T / 2.0) / 6.0;
    truth.vol.h[t] = 2.2 * std::exp(-0.5 * d1 * d1);
  }
  refresh_omega(truth.vol);
  Rng rng(9);
  const TensorSeries data = simulate(truth, T, oracle::random_tensor({3, 3, 2}, gen), rng);

  SamplerConfig cfg;
  cfg.ranks = ranks;
  cfg.regime = VolRegime::Csv;
  cfg.shrinkage = true;
  cfg.n_iter = 1600;
  cfg.n_burn = 600;
  cfg.thin = 2;
  cfg.seed = 4;
  const PosteriorDraws draws = run_gibbs(data, cfg);

  Vector mean_sd = Vector::Zero(T);
  for (int k = 0; k < draws.count(); ++k)
    for (int t = 0; t < T; ++t) mean_sd[t] += std::sqrt(draws.omega[k][t]);
  mean_sd /= draws.count();
  Vector truth_sd(T);
  for (int t = 0; t < T; ++t) truth_sd[t] = std::exp(truth.vol.h[t] / 2.0);
  const double corr =
      ((mean_sd.array() - mean_sd.mean()) * (truth_sd.array() - truth_sd.mean())).sum() /
      (std::sqrt((mean_sd.array() - mean_sd.mean()).square().sum()) *
       std::sqrt((truth_sd.array() - truth_sd.mean()).square().sum()));
  CHECK(corr > 0.8);
}

TEST_CASE("outlier recovery: an injected shock is flagged") {
  std::mt19937 gen(63);
  const std::array<int, 3> dims{2, 2, 2};
  const std::array<int, 6> ranks{1, 1, 1, 1, 1, 1};
  const int T = 120;
  ModelState truth = random_state(dims, ranks, T, gen);
  truth.cov.s1 = Matrix::Identity(2, 2);
  truth.cov.s2 = Matrix::Identity(2, 2);
  truth.cov.s3 = Matrix::Identity(2, 2);
  for (int i = 0; i < 6; ++i) truth.factors.factors[i] *= 0.4;
  truth.intercept.a0.vec().setZero();
  truth.vol.omega.setOnes();
  const int shock_t = 60;
  truth.vol.omega[shock_t - 1] = 64.0;  // an 8-sigma scale at one period
  Rng rng(10);
  const TensorSeries data = simulate(truth, T, oracle::random_tensor({2, 2, 2}, gen), rng);

  SamplerConfig cfg;
  cfg.ranks = ranks;
  cfg.regime = VolRegime::Outlier;
  cfg.shrinkage = true;
  cfg.n_iter = 1200;
  cfg.n_burn = 400;
  cfg.thin = 2;
  cfg.seed = 5;
  const PosteriorDraws draws = run_gibbs(data, cfg);

  double p_shock = 0.0, p_elsewhere = 0.0;
  for (int k = 0; k < draws.count(); ++k) {
    p_shock += draws.omega[k][shock_t - 1] > 1.0 ? 1.0 : 0.0;
    double other = 0.0;
    for (int t = 0; t < T; ++t)
      if (t != shock_t - 1) other += draws.omega[k][t] > 1.0 ? 1.0 : 0.0;
    p_elsewhere += other / (T - 1);
  }
  p_shock /= draws.count();
  p_elsewhere /= draws.count();
  CHECK(p_shock > 0.9);
  CHECK(p_elsewhere < 0.2);
}

TEST_CASE("run_gibbs bookkeeping and determinism") {
  std::mt19937 gen(64);
  const TensorSeries data = random_series({2, 2, 2}, 12, gen);
  SamplerConfig cfg;
  cfg.ranks = {1, 1, 1, 1, 1, 1};
  cfg.n_iter = 6;
  cfg.n_burn = 5;
  cfg.thin = 1;
  cfg.seed = 2024;
  const PosteriorDraws one = run_gibbs(data, cfg);
  CHECK(one.count() == 1);

  cfg.n_iter = 40;
  cfg.n_burn = 10;
  cfg.thin = 3;
  const PosteriorDraws a = run_gibbs(data, cfg);
  const PosteriorDraws b = run_gibbs(data, cfg);
  CHECK(a.count() == 10);
  REQUIRE(a.count() == b.count());
  for (int k = 0; k < a.count(); ++k) {
    CHECK((a.factors[k].core.vec() - b.factors[k].core.vec()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.cov[k].s1 - b.cov[k].s1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.loglik[k] == b.loglik[k]);
  }

  SamplerConfig bad = cfg;
  bad.n_burn = 40;
  CHECK_THROWS_AS(run_gibbs(data, bad), std::invalid_argument);
  SamplerConfig badcp = cfg;
  badcp.decomp = DecompKind::Cp;
  badcp.ranks = {1, 2, 1, 1, 1, 1};
  CHECK_THROWS_AS(run_gibbs(data, badcp), std::invalid_argument);
}

TEST_CASE("identify recovers an exactly low-rank posterior mean") {
  std::mt19937 gen(65);
  const std::array<int, 3> dims{3, 2, 2};
  const std::array<int, 6> ranks{2, 2, 1, 2, 1, 2};
  ModelState s = random_state(dims, ranks, 4, gen);

  PosteriorDraws draws;
  draws.dims = dims;
  draws.ranks = ranks;
  for (int k = 0; k < 5; ++k) draws.factors.push_back(s.factors);

  const TuckerFactors ident = identify(draws, ranks);
  const DenseTensor want = tucker_reconstruct(s.factors);
  const DenseTensor got = tucker_reconstruct(ident);
  CHECK((got.vec() - want.vec()).cwiseAbs().maxCoeff() <=
        1e-10 * want.vec().cwiseAbs().maxCoeff());
  for (int i = 0; i < 6; ++i) {
    const Matrix& b = ident.factors[i];
    CHECK((b.transpose() * b - Matrix::Identity(b.cols(), b.cols())).cwiseAbs().maxCoeff() <=
          1e-10);
  }

  // reconstruction error is non-increasing as any rank grows
  const DenseTensor mean = posterior_mean_coeff(draws);
  double prev = 1e300;
  for (int r = 1; r <= 2; ++r) {
    const TuckerFactors h = hosvd(mean, {r, r, 1, r, 1, r});
    const double err = (tucker_reconstruct(h).vec() - mean.vec()).norm();
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
}
