#include "btar/sampler.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace btar {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Matrix inverse_pd(const Matrix& s, const char* what) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(std::string(what) + ": matrix not positive definite");
  Matrix inv = llt.solve(Matrix::Identity(s.rows(), s.cols()));
  return 0.5 * (inv + inv.transpose()).eval();
}

// Diagonal equilibration keeps the Cholesky stable when likelihood curvature
// dwarfs the prior in some directions.
struct ScaledChol {
  Vector dinv;
  Eigen::LLT<Matrix> llt;
};

ScaledChol scaled_chol(const Matrix& prec, const char* what) {
  ScaledChol out;
  out.dinv = prec.diagonal().cwiseMax(0.0).cwiseSqrt().cwiseInverse();
  for (Eigen::Index i = 0; i < out.dinv.size(); ++i)
    if (!std::isfinite(out.dinv[i]) || out.dinv[i] <= 0.0)
      throw std::runtime_error(std::string(what) + ": singular precision matrix");
  const Matrix scaled = out.dinv.asDiagonal() * prec * out.dinv.asDiagonal();
  out.llt.compute(scaled);
  if (out.llt.info() != Eigen::Success)
    throw std::runtime_error(std::string(what) + ": singular precision matrix");
  return out;
}

Vector precision_solve(const ScaledChol& c, const Vector& rhs) {
  return c.dinv.asDiagonal() * c.llt.solve(Vector(c.dinv.asDiagonal() * rhs));
}

// Draw from N(K^{-1} rhs, K^{-1}) through the Cholesky factor of K.
Vector gaussian_from_precision(const Matrix& prec, const Vector& rhs, Rng& rng,
                               const char* what) {
  const ScaledChol c = scaled_chol(prec, what);
  Vector mean = precision_solve(c, rhs);
  Vector z = rng.normal_vector(rhs.size());
  return mean + c.dinv.asDiagonal() * c.llt.matrixU().solve(z);
}

}  // namespace

void SamplerConfig::validate(const std::array<int, 3>& dims) const {
  if (n_iter < 1 || n_burn < 0 || n_burn >= n_iter)
    throw std::invalid_argument("SamplerConfig: require 0 <= n_burn < n_iter");
  if (thin < 1) throw std::invalid_argument("SamplerConfig: thin must be >= 1");
  for (int i = 0; i < 6; ++i) {
    if (ranks[i] < 1) throw std::invalid_argument("SamplerConfig: ranks must be positive");
    if (ranks[i] > dims[i % 3])
      throw std::invalid_argument("SamplerConfig: rank exceeds dimension");
  }
  if (decomp == DecompKind::Cp) {
    for (int i = 1; i < 6; ++i)
      if (ranks[i] != ranks[0])
        throw std::invalid_argument("SamplerConfig: CP requires equal ranks across modes");
  }
  if (decomp == DecompKind::Dense)
    throw std::invalid_argument("SamplerConfig: decomposition must be Tucker or CP");
  if (mh_scale_eta <= 0 || mh_scale_h <= 0 || mh_scale_phi <= 0)
    throw std::invalid_argument("SamplerConfig: MH proposal scales must be positive");
  if (prior.alpha_grid < 1 || prior.outlier_grid < 1)
    throw std::invalid_argument("SamplerConfig: grid sizes must be positive");
}

Matrix commutation_matrix(int r5, int r6) {
  if (r5 < 1 || r6 < 1) throw std::invalid_argument("commutation_matrix: ranks must be positive");
  Matrix p = Matrix::Zero(r5 * r6, r5 * r6);
  for (int a = 1; a <= r5; ++a)
    for (int b = 1; b <= r6; ++b) p((a - 1) * r6 + b - 1, (b - 1) * r5 + a - 1) = 1.0;
  return p;
}

GibbsSampler::GibbsSampler(TensorSeries data, SamplerConfig cfg)
    : data_(std::move(data)), cfg_(std::move(cfg)) {
  if (data_.T() < 2) throw std::invalid_argument("GibbsSampler: need a presample and T >= 2");
  cfg_.validate(data_.dims);
  rebuild_cache();

  // Shape a coherent (unit) state so block methods can run standalone.
  const auto& d = data_.dims;
  const auto& r = cfg_.ranks;
  state_.factors.core = DenseTensor(std::vector<int>(r.begin(), r.end()));
  for (int i = 0; i < 6; ++i) state_.factors.factors[i] = Matrix::Zero(d[i % 3], r[i]);
  state_.intercept.a0 = DenseTensor({d[0], d[1], d[2]});
  state_.intercept.a1 = DenseTensor({d[0], d[1], d[2]});
  state_.intercept.has_trend = cfg_.trend;
  state_.cov.s1 = Matrix::Identity(d[0], d[0]);
  state_.cov.s2 = Matrix::Identity(d[1], d[1]);
  state_.cov.s3 = Matrix::Identity(d[2], d[2]);
  state_.vol.regime = cfg_.regime;
  state_.vol.omega = Vector::Ones(T_);
  state_.vol.h = Vector::Zero(T_);
  state_.vol.o = Vector::Ones(T_);
  state_.vol.p_out = cfg_.prior.outlier_a / (cfg_.prior.outlier_a + cfg_.prior.outlier_b);
  for (int i = 0; i < 6; ++i) {
    state_.shrink.tau[i] = 1.0;
    state_.shrink.eta[i] = Vector::Constant(r[i] - 1, 0.5);
    state_.shrink.phi[i] = stick_breaking(state_.shrink.eta[i], r[i]);
    state_.shrink.alpha[i] = 0.5;
  }
  if (cfg_.decomp == DecompKind::Cp) {
    std::vector<int> idx(6);
    for (int k = 1; k <= r[0]; ++k) {
      idx.assign(6, k);
      state_.factors.core.at(idx) = 1.0;
    }
  }
}

void GibbsSampler::rebuild_cache() {
  T_ = data_.T();
  I_ = data_.cells();
  yv_.resize(I_, T_ + 1);
  for (int t = 0; t <= T_; ++t) yv_.col(t) = data_.y[t].vec();
  for (int m = 0; m < 3; ++m) {
    unf_[m].clear();
    unf_[m].reserve(T_ + 1);
    for (int t = 0; t <= T_; ++t) unf_[m].push_back(unfold(data_.y[t], m + 1));
  }
}

void GibbsSampler::set_data(TensorSeries data) {
  if (data.dims != data_.dims || data.T() != T_)
    throw std::invalid_argument("set_data: dims and length must match the original series");
  data_ = std::move(data);
  rebuild_cache();
}

void GibbsSampler::set_state(ModelState s) {
  if (s.factors.ranks() != cfg_.ranks)
    throw std::invalid_argument("set_state: rank mismatch with configuration");
  if (s.vol.omega.size() != T_) throw std::invalid_argument("set_state: omega length mismatch");
  state_ = std::move(s);
}

// vec(Y x1 M1 x2 M2 x3 M3) computed as M1 Y_(1) right with right = (M3 kron
// M2)'; the caller hoists the Kronecker factor out of per-t loops.
static Vector project_modes(const Eigen::Ref<const Matrix>& y1, const Matrix& m1,
                            const Matrix& right) {
  const Matrix out = m1 * y1 * right;
  return Eigen::Map<const Vector>(out.data(), out.size());
}

Vector GibbsSampler::predictor_projection(int t) const {
  const Matrix k65 = kron(state_.factors.factors[5], state_.factors.factors[4]);
  return project_modes(unf_[0][t - 1], state_.factors.factors[3].transpose(), k65);
}

Matrix GibbsSampler::residual_matrix() const {
  const auto& r = cfg_.ranks;
  const Eigen::Index rm = static_cast<Eigen::Index>(r[0]) * r[1] * r[2];
  const Eigen::Index rp = static_cast<Eigen::Index>(r[3]) * r[4] * r[5];
  Eigen::Map<const Matrix> gt(state_.factors.core.vec().data(), rm, rp);
  const Matrix k65 = kron(state_.factors.factors[5], state_.factors.factors[4]);
  const Matrix b4t = state_.factors.factors[3].transpose();
  const Matrix k32 = kron(state_.factors.factors[2], state_.factors.factors[1]);
  const Matrix& b1 = state_.factors.factors[0];
  const Vector& a0 = state_.intercept.a0.vec();
  const Vector& a1 = state_.intercept.a1.vec();

  Matrix out(I_, T_);
  for (int t = 1; t <= T_; ++t) {
    const Vector u = project_modes(unf_[0][t - 1], b4t, k65);
    const Vector gu = gt * u;
    Eigen::Map<const Matrix> w1(gu.data(), r[0], static_cast<Eigen::Index>(r[1]) * r[2]);
    const Matrix pred = b1 * w1 * k32.transpose();
    out.col(t - 1) = yv_.col(t) - a0 - Eigen::Map<const Vector>(pred.data(), pred.size());
    if (state_.intercept.has_trend) out.col(t - 1) -= static_cast<double>(t) * a1;
  }
  return out;
}

double GibbsSampler::fast_log_likelihood() const {
  const auto chol = chol_factors(state_.cov);
  const double I1 = data_.dims[0], I2 = data_.dims[1], I3 = data_.dims[2];
  double ld1 = 0, ld2 = 0, ld3 = 0;
  for (Eigen::Index i = 0; i < chol[0].rows(); ++i) ld1 += 2.0 * std::log(chol[0](i, i));
  for (Eigen::Index i = 0; i < chol[1].rows(); ++i) ld2 += 2.0 * std::log(chol[1](i, i));
  for (Eigen::Index i = 0; i < chol[2].rows(); ++i) ld3 += 2.0 * std::log(chol[2](i, i));
  const double I = static_cast<double>(I_);
  double out = -0.5 * T_ * I * kLog2Pi -
               0.5 * T_ * (I2 * I3 * ld1 + I1 * I3 * ld2 + I1 * I2 * ld3);
  const Matrix res = residual_matrix();
  const std::vector<int> shape{data_.dims[0], data_.dims[1], data_.dims[2]};
  for (int t = 0; t < T_; ++t) {
    const double omega = state_.vol.omega[t];
    const double s = whiten(DenseTensor(shape, res.col(t)), chol).vec().squaredNorm();
    out += -0.5 * I * std::log(omega) - 0.5 * s / omega;
  }
  return out;
}

Vector GibbsSampler::factor_prior_variance(int mode) const {
  const int i = mode - 1;
  const int Ii = data_.dims[i % 3];
  const int Ri = cfg_.ranks[i];
  Vector v(static_cast<Eigen::Index>(Ii) * Ri);
  auto rank_var = [&](int r) {
    return cfg_.shrinkage ? state_.shrink.tau[i] * state_.shrink.phi[i][r]
                          : cfg_.prior.margin_var;
  };
  if (mode == 4) {
    // layout vec(B4'): rank index fastest
    for (int a = 0; a < Ii; ++a)
      for (int r = 0; r < Ri; ++r) v[a * Ri + r] = rank_var(r);
  } else {
    // layout vec(B_i): within-column index fastest
    for (int r = 0; r < Ri; ++r)
      for (int a = 0; a < Ii; ++a) v[r * Ii + a] = rank_var(r);
  }
  return v;
}

Matrix GibbsSampler::design_z(int mode, int t) const {
  const Matrix* pair = nullptr;
  Matrix local;
  if (mode == 4)
    local = kron(state_.factors.factors[5], state_.factors.factors[4]).transpose();
  else if (mode == 5)
    local = kron(state_.factors.factors[5], state_.factors.factors[3]).transpose();
  else
    local = kron(state_.factors.factors[4], state_.factors.factors[3]).transpose();
  pair = &local;
  return design_z_with(mode, t, *pair);
}

Matrix GibbsSampler::design_z_with(int mode, int t, const Matrix& pair_t) const {
  const auto& r = cfg_.ranks;
  const auto& d = data_.dims;
  const Eigen::Index rp = static_cast<Eigen::Index>(r[3]) * r[4] * r[5];

  if (mode == 4) {
    // Btilde' y_{t-1} = (N_t kron I_{R4}) vec(B4'), N_t = (B6' x B5') Y_{t-1,(1)}'
    const Matrix n = pair_t * unf_[0][t - 1].transpose();  // (R5R6) x I1
    Matrix z = Matrix::Zero(rp, static_cast<Eigen::Index>(d[0]) * r[3]);
    for (int c = 0; c < r[4] * r[5]; ++c)
      for (int i1 = 0; i1 < d[0]; ++i1)
        for (int r4 = 0; r4 < r[3]; ++r4)
          z(c * r[3] + r4, i1 * r[3] + r4) = n(c, i1);
    return z;
  }
  if (mode == 5) {
    // Btilde' y_{t-1} = (P'(I x B6') x B4')(I x Y_{t-1,(2)}') vec(B5)
    const Matrix v = pair_t * unf_[1][t - 1].transpose();  // (R4R6) x I2
    Matrix z = Matrix::Zero(rp, static_cast<Eigen::Index>(d[1]) * r[4]);
    for (int r6 = 0; r6 < r[5]; ++r6)
      for (int r5 = 0; r5 < r[4]; ++r5)
        for (int r4 = 0; r4 < r[3]; ++r4)
          for (int i2 = 0; i2 < d[1]; ++i2)
            z(r6 * r[3] * r[4] + r5 * r[3] + r4, r5 * d[1] + i2) = v(r6 * r[3] + r4, i2);
    return z;
  }
  // mode 6: Btilde' y_{t-1} = (I_{R6} x (B5' x B4') Y_{t-1,(3)}') vec(B6)
  const Matrix w = pair_t * unf_[2][t - 1].transpose();  // (R4R5) x I3
  Matrix z = Matrix::Zero(rp, static_cast<Eigen::Index>(d[2]) * r[5]);
  for (int r6 = 0; r6 < r[5]; ++r6)
    for (int c = 0; c < r[3] * r[4]; ++c)
      for (int i3 = 0; i3 < d[2]; ++i3)
        z(r6 * r[3] * r[4] + c, r6 * d[2] + i3) = w(c, i3);
  return z;
}

std::pair<Matrix, Vector> GibbsSampler::factor_normal_equations(int mode) const {
  const auto& d = data_.dims;
  const auto& r = cfg_.ranks;
  const std::array<const Matrix*, 3> sig{&state_.cov.s1, &state_.cov.s2, &state_.cov.s3};
  std::array<Matrix, 3> siginv;
  for (int i = 0; i < 3; ++i) siginv[i] = inverse_pd(*sig[i], "factor conditional");

  if (mode >= 1 && mode <= 3) {
    const int i = mode - 1;
    const int a = (mode == 1) ? 1 : 0;  // the two remaining response modes, ascending
    const int b = (mode == 3) ? 1 : 2;
    const Matrix stilde_inv = kron(siginv[b], siginv[a]);
    const Matrix cfac = kron(state_.factors.factors[b], state_.factors.factors[a]);
    const Matrix gi = unfold(state_.factors.core, mode);
    const Matrix a0u = unfold(state_.intercept.a0, mode);
    const Matrix a1u = unfold(state_.intercept.a1, mode);
    const Matrix k65 = kron(state_.factors.factors[5], state_.factors.factors[4]);
    const Matrix b4t = state_.factors.factors[3].transpose();
    const int Ri = r[i];
    const int Ii = d[i];
    const Eigen::Index rab = cfac.cols();
    // columns of G_(i) grouped by the predictor-rank index: column p of this
    // view is the vectorized R_i x (R_a R_b) block for predictor tuple p
    Eigen::Map<const Matrix> gview(gi.data(), static_cast<Eigen::Index>(Ri) * rab,
                                   gi.cols() / rab);

    Matrix q = Matrix::Zero(Ri, Ri);
    Matrix mlin_inner = Matrix::Zero(Ii, Ri);
    for (int t = 1; t <= T_; ++t) {
      const double w = 1.0 / state_.vol.omega[t - 1];
      const Vector u = project_modes(unf_[0][t - 1], b4t, k65);
      const Vector gu = gview * u;  // G_(i) (u kron I)
      Eigen::Map<const Matrix> gum(gu.data(), Ri, rab);
      const Matrix m = gum * cfac.transpose();  // M_t = G_(i) (u kron C')
      const Matrix ws = m * stilde_inv;         // R_i x k_i
      q.noalias() += w * ws * m.transpose();
      Matrix e0 = unf_[i][t];
      e0 -= a0u;
      if (state_.intercept.has_trend) e0 -= static_cast<double>(t) * a1u;
      mlin_inner.noalias() += w * e0 * ws.transpose();
    }
    const Matrix mlin = siginv[i] * mlin_inner;
    q = 0.5 * (q + q.transpose()).eval();
    Matrix prec = kron(q, siginv[i]);
    const Vector pv = factor_prior_variance(mode);
    for (Eigen::Index k = 0; k < prec.rows(); ++k) prec(k, k) += 1.0 / pv[k];
    return {prec, Eigen::Map<const Vector>(mlin.data(), mlin.size())};
  }

  // Predictor modes: regression of y_t - a_t on the mode's design through
  // the core matricization Gtilde and the response projection Btilde_m.
  const Eigen::Index rm = static_cast<Eigen::Index>(r[0]) * r[1] * r[2];
  const Eigen::Index rp = static_cast<Eigen::Index>(r[3]) * r[4] * r[5];
  Eigen::Map<const Matrix> gt(state_.factors.core.vec().data(), rm, rp);
  const Matrix sm = kron(
      state_.factors.factors[2].transpose() * siginv[2] * state_.factors.factors[2],
      kron(state_.factors.factors[1].transpose() * siginv[1] * state_.factors.factors[1],
           state_.factors.factors[0].transpose() * siginv[0] * state_.factors.factors[0]));

  Matrix pair_t;
  if (mode == 4)
    pair_t = kron(state_.factors.factors[5], state_.factors.factors[4]).transpose();
  else if (mode == 5)
    pair_t = kron(state_.factors.factors[5], state_.factors.factors[3]).transpose();
  else
    pair_t = kron(state_.factors.factors[4], state_.factors.factors[3]).transpose();
  const Matrix m1 = state_.factors.factors[0].transpose() * siginv[0];
  const Matrix k32 = kron(state_.factors.factors[2].transpose() * siginv[2],
                          state_.factors.factors[1].transpose() * siginv[1])
                         .transpose();
  const Vector& a0 = state_.intercept.a0.vec();
  const Vector& a1 = state_.intercept.a1.vec();
  const std::vector<int> shape{d[0], d[1], d[2]};

  const int ncoef = d[(mode - 1) % 3] * r[mode - 1];
  Matrix prec = Matrix::Zero(ncoef, ncoef);
  Vector rhs = Vector::Zero(ncoef);
  Vector centered(I_);
  for (int t = 1; t <= T_; ++t) {
    const double w = 1.0 / state_.vol.omega[t - 1];
    const Matrix dt = gt * design_z_with(mode, t, pair_t);  // Rm x ncoef
    centered = yv_.col(t) - a0;
    if (state_.intercept.has_trend) centered -= static_cast<double>(t) * a1;
    Eigen::Map<const Matrix> c1(centered.data(), d[0], I_ / d[0]);
    const Vector wt = project_modes(c1, m1, k32);
    const Matrix smdt = sm * dt;
    prec.noalias() += w * dt.transpose() * smdt;
    rhs.noalias() += w * dt.transpose() * wt;
  }
  prec = 0.5 * (prec + prec.transpose()).eval();
  const Vector pv = factor_prior_variance(mode);
  for (Eigen::Index k = 0; k < prec.rows(); ++k) prec(k, k) += 1.0 / pv[k];
  return {prec, rhs};
}

GaussianConditional GibbsSampler::factor_conditional(int mode) const {
  if (mode < 1 || mode > 6) throw std::out_of_range("factor_conditional: mode out of range");
  auto [prec, rhs] = factor_normal_equations(mode);
  const ScaledChol c = scaled_chol(prec, "factor conditional");
  return {precision_solve(c, rhs), prec};
}

void GibbsSampler::draw_factor(int mode, Rng& rng) {
  if (mode < 1 || mode > 6) throw std::out_of_range("draw_factor: mode out of range");
  auto [prec, rhs] = factor_normal_equations(mode);
  const Vector beta = gaussian_from_precision(prec, rhs, rng, "draw_factor");
  const int Ii = data_.dims[(mode - 1) % 3];
  const int Ri = cfg_.ranks[mode - 1];
  if (mode == 4) {
    Eigen::Map<const Matrix> b4t(beta.data(), Ri, Ii);
    state_.factors.factors[3] = b4t.transpose();
  } else {
    state_.factors.factors[mode - 1] = Eigen::Map<const Matrix>(beta.data(), Ii, Ri);
  }
}

std::pair<Matrix, Vector> GibbsSampler::core_normal_equations() const {
  const auto& d = data_.dims;
  const auto& r = cfg_.ranks;
  std::array<Matrix, 3> siginv{inverse_pd(state_.cov.s1, "core conditional"),
                               inverse_pd(state_.cov.s2, "core conditional"),
                               inverse_pd(state_.cov.s3, "core conditional")};
  const Eigen::Index rm = static_cast<Eigen::Index>(r[0]) * r[1] * r[2];
  const Eigen::Index rp = static_cast<Eigen::Index>(r[3]) * r[4] * r[5];
  const Matrix sm = kron(
      state_.factors.factors[2].transpose() * siginv[2] * state_.factors.factors[2],
      kron(state_.factors.factors[1].transpose() * siginv[1] * state_.factors.factors[1],
           state_.factors.factors[0].transpose() * siginv[0] * state_.factors.factors[0]));

  const Matrix k65 = kron(state_.factors.factors[5], state_.factors.factors[4]);
  const Matrix b4t = state_.factors.factors[3].transpose();
  const Matrix m1 = state_.factors.factors[0].transpose() * siginv[0];
  const Matrix k32 = kron(state_.factors.factors[2].transpose() * siginv[2],
                          state_.factors.factors[1].transpose() * siginv[1])
                         .transpose();
  const Vector& a0 = state_.intercept.a0.vec();
  const Vector& a1 = state_.intercept.a1.vec();
  Matrix u(rp, T_);
  Matrix f(rm, T_);
  Vector winv(T_);
  Vector centered(I_);
  for (int t = 1; t <= T_; ++t) {
    winv[t - 1] = 1.0 / state_.vol.omega[t - 1];
    u.col(t - 1) = project_modes(unf_[0][t - 1], b4t, k65);
    centered = yv_.col(t) - a0;
    if (state_.intercept.has_trend) centered -= static_cast<double>(t) * a1;
    Eigen::Map<const Matrix> c1(centered.data(), d[0], I_ / d[0]);
    f.col(t - 1) = project_modes(c1, m1, k32);
  }
  const Matrix uwu = u * winv.asDiagonal() * u.transpose();
  Matrix prec = kron(0.5 * (uwu + uwu.transpose()), sm);
  prec.diagonal().array() += 1.0 / cfg_.prior.core_var;
  const Matrix fwu = f * winv.asDiagonal() * u.transpose();
  return {prec, Eigen::Map<const Vector>(fwu.data(), fwu.size())};
}

GaussianConditional GibbsSampler::core_conditional() const {
  auto [prec, rhs] = core_normal_equations();
  const ScaledChol c = scaled_chol(prec, "core conditional");
  return {precision_solve(c, rhs), prec};
}

void GibbsSampler::draw_core(Rng& rng) {
  if (cfg_.decomp == DecompKind::Cp) return;  // superdiagonal core stays fixed
  auto [prec, rhs] = core_normal_equations();
  state_.factors.core.vec() = gaussian_from_precision(prec, rhs, rng, "draw_core");
}

std::pair<double, Matrix> GibbsSampler::sigma_conditional(int i) const {
  if (i < 1 || i > 3) throw std::out_of_range("sigma_conditional: index out of range");
  const auto& d = data_.dims;
  std::array<Matrix, 3> siginv{inverse_pd(state_.cov.s1, "sigma conditional"),
                               inverse_pd(state_.cov.s2, "sigma conditional"),
                               inverse_pd(state_.cov.s3, "sigma conditional")};
  const int a = (i == 1) ? 1 : 0;  // remaining modes, ascending: pair scale is
  const int b = (i == 3) ? 1 : 2;  // kron(larger mode, smaller mode) inverses
  const Matrix pair_inv = kron(siginv[b], siginv[a]);

  const Matrix res = residual_matrix();
  const std::vector<int> shape{d[0], d[1], d[2]};
  Matrix shat = Matrix::Identity(d[i - 1], d[i - 1]);
  for (int t = 0; t < T_; ++t) {
    const Matrix e = unfold(DenseTensor(shape, res.col(t)), i);
    shat.noalias() += (1.0 / state_.vol.omega[t]) * e * pair_inv * e.transpose();
  }
  shat = 0.5 * (shat + shat.transpose()).eval();
  const double dof = d[i - 1] + cfg_.prior.iw_dof_offset +
                     static_cast<double>(T_) * d[a] * d[b];
  return {dof, shat};
}

void GibbsSampler::draw_sigma(int i, Rng& rng) {
  auto [dof, shat] = sigma_conditional(i);
  Matrix draw = rng.inv_wishart(dof, shat);
  if (cfg_.normalize_sigma && i >= 2) {
    const double s = draw.diagonal().mean();
    draw /= s;
    state_.cov.s1 *= s;
  }
  if (i == 1)
    state_.cov.s1 = draw;
  else if (i == 2)
    state_.cov.s2 = draw;
  else
    state_.cov.s3 = draw;
}

void GibbsSampler::draw_shrinkage(Rng& rng) {
  if (!cfg_.shrinkage) return;
  const auto& d = data_.dims;
  for (int i = 0; i < 6; ++i) {
    const int Ri = cfg_.ranks[i];
    const int Ii = d[i % 3];
    const Matrix& b = state_.factors.factors[i];
    Vector ssq(Ri);
    for (int r = 0; r < Ri; ++r) ssq[r] = b.col(r).squaredNorm();

    // tau_i | B_i, phi_i ~ GIG(alpha_tau - R_i I_i / 2, sum_r ||b^r||^2/phi^r, 2 beta_tau)
    const Vector& phi = state_.shrink.phi[i];
    double chi = 0.0;
    for (int r = 0; r < Ri; ++r) chi += ssq[r] / phi[r];
    const double lambda = cfg_.prior.alpha_tau - 0.5 * Ri * Ii;
    if (chi <= 0.0 && lambda <= 0.0)
      throw std::runtime_error("draw_shrinkage: degenerate margins (all zero)");
    state_.shrink.tau[i] = rng.gig(lambda, chi, 2.0 * cfg_.prior.beta_tau);

    // Single-site random-walk MH on each eta, proposals outside (0,1) rejected.
    const double tau = state_.shrink.tau[i];
    const double alpha = state_.shrink.alpha[i];
    auto log_target = [&](const Vector& eta) {
      const Vector ph = stick_breaking(eta, Ri);
      double lp = 0.0;
      for (int r = 0; r < Ri - 1; ++r) lp += (alpha - 1.0) * std::log(1.0 - eta[r]);
      for (int r = 0; r < Ri; ++r)
        lp += -0.5 * Ii * std::log(tau * ph[r]) - 0.5 * ssq[r] / (tau * ph[r]);
      return lp;
    };
    Vector eta = state_.shrink.eta[i];
    for (int r = 0; r < Ri - 1; ++r) {
      rates_.eta_total++;
      const double prop = eta[r] + rng.normal(0.0, cfg_.mh_scale_eta);
      if (prop <= 0.0 || prop >= 1.0) continue;
      Vector cand = eta;
      cand[r] = prop;
      if (std::log(rng.uniform()) < log_target(cand) - log_target(eta)) {
        eta = cand;
        rates_.eta_accept++;
      }
    }
    state_.shrink.eta[i] = eta;
    state_.shrink.phi[i] = stick_breaking(eta, Ri);

    // Griddy Gibbs for alpha_i on the grid j/G, j = 1..G.
    const int G = cfg_.prior.alpha_grid;
    double logsum_1me = 0.0;
    for (int r = 0; r < Ri - 1; ++r) logsum_1me += std::log(1.0 - eta[r]);
    Vector logw(G);
    for (int j = 0; j < G; ++j) {
      const double a = static_cast<double>(j + 1) / G;
      logw[j] = Ri * std::log(a) + (a - 1.0) * logsum_1me;
    }
    const Vector w = (logw.array() - logw.maxCoeff()).exp();
    state_.shrink.alpha[i] = static_cast<double>(rng.categorical(w) + 1) / G;
  }
}

void GibbsSampler::draw_volatility(Rng& rng) {
  VolatilityState& vol = state_.vol;
  if (vol.regime == VolRegime::Homoskedastic) {
    vol.omega.setOnes();
    return;
  }
  const auto chol = chol_factors(state_.cov);
  const Matrix res = residual_matrix();
  const std::vector<int> shape{data_.dims[0], data_.dims[1], data_.dims[2]};
  Vector s(T_);
  for (int t = 0; t < T_; ++t)
    s[t] = whiten(DenseTensor(shape, res.col(t)), chol).vec().squaredNorm();
  const double I = static_cast<double>(I_);

  if (vol.regime == VolRegime::Outlier) {
    const Vector grid = outlier_support(cfg_.prior.outlier_grid);
    int n_out = 0;
    for (int t = 0; t < T_; ++t) {
      Vector logw(grid.size() + 1);
      logw[0] = std::log(1.0 - vol.p_out) - 0.5 * s[t];
      for (Eigen::Index j = 0; j < grid.size(); ++j)
        logw[j + 1] = std::log(vol.p_out) - std::log(static_cast<double>(grid.size())) -
                      I * std::log(grid[j]) - 0.5 * s[t] / (grid[j] * grid[j]);
      const Vector w = (logw.array() - logw.maxCoeff()).exp();
      const int pick = rng.categorical(w);
      vol.o[t] = pick == 0 ? 1.0 : grid[pick - 1];
      if (pick > 0) ++n_out;
    }
    vol.p_out = rng.beta(cfg_.prior.outlier_a + n_out, cfg_.prior.outlier_b + (T_ - n_out));
    refresh_omega(vol);
    return;
  }

  // CSV: single-site random-walk MH on h_t against the exact conditional.
  const double sig2 = vol.sigma2;
  for (int t = 0; t < T_; ++t) {
    auto log_target = [&](double ht) {
      double lp = -0.5 * I * ht - 0.5 * s[t] * std::exp(-ht);
      if (t == 0) {
        lp += -0.5 * ht * ht * (1.0 - vol.phi * vol.phi) / sig2;
      } else {
        const double dprev = ht - vol.phi * vol.h[t - 1];
        lp += -0.5 * dprev * dprev / sig2;
      }
      if (t + 1 < T_) {
        const double dnext = vol.h[t + 1] - vol.phi * ht;
        lp += -0.5 * dnext * dnext / sig2;
      }
      return lp;
    };
    rates_.h_total++;
    const double prop = vol.h[t] + rng.normal(0.0, cfg_.mh_scale_h);
    if (std::log(rng.uniform()) < log_target(prop) - log_target(vol.h[t])) {
      vol.h[t] = prop;
      rates_.h_accept++;
    }
  }

  // phi: truncated-normal random walk on (-1, 1) with normalizer correction.
  {
    auto log_target = [&](double phi) {
      double lp = 0.5 * std::log(1.0 - phi * phi) -
                  0.5 * vol.h[0] * vol.h[0] * (1.0 - phi * phi) / sig2;
      for (int t = 1; t < T_; ++t) {
        const double dd = vol.h[t] - phi * vol.h[t - 1];
        lp += -0.5 * dd * dd / sig2;
      }
      lp += -0.5 * (phi - cfg_.prior.phi_mean) * (phi - cfg_.prior.phi_mean) / cfg_.prior.phi_var;
      return lp;
    };
    auto trunc_mass = [&](double center) {
      return normal_cdf((1.0 - center) / cfg_.mh_scale_phi) -
             normal_cdf((-1.0 - center) / cfg_.mh_scale_phi);
    };
    rates_.phi_total++;
    const double prop = rng.trunc_normal(vol.phi, cfg_.mh_scale_phi, -1.0, 1.0);
    const double delta = log_target(prop) - log_target(vol.phi) +
                         std::log(trunc_mass(vol.phi)) - std::log(trunc_mass(prop));
    if (std::log(rng.uniform()) < delta) {
      vol.phi = prop;
      rates_.phi_accept++;
    }
  }

  // sigma2: conjugate inverse-gamma including the stationary initial condition.
  {
    double ss = vol.h[0] * vol.h[0] * (1.0 - vol.phi * vol.phi);
    for (int t = 1; t < T_; ++t) {
      const double dd = vol.h[t] - vol.phi * vol.h[t - 1];
      ss += dd * dd;
    }
    vol.sigma2 = rng.inv_gamma(cfg_.prior.sigma2_shape + 0.5 * T_,
                               cfg_.prior.sigma2_scale + 0.5 * ss);
  }
  refresh_omega(vol);
}

void GibbsSampler::draw_intercept(Rng& rng) {
  const auto& r = cfg_.ranks;
  const Eigen::Index rm = static_cast<Eigen::Index>(r[0]) * r[1] * r[2];
  const Eigen::Index rp = static_cast<Eigen::Index>(r[3]) * r[4] * r[5];
  Eigen::Map<const Matrix> gt(state_.factors.core.vec().data(), rm, rp);
  const std::vector<int> shape{data_.dims[0], data_.dims[1], data_.dims[2]};
  const double ca = cfg_.prior.intercept_var;

  const Matrix k65 = kron(state_.factors.factors[5], state_.factors.factors[4]);
  const Matrix b4t = state_.factors.factors[3].transpose();
  const Matrix k32 = kron(state_.factors.factors[2], state_.factors.factors[1]).transpose();
  const Matrix& b1 = state_.factors.factors[0];

  double c0 = 0, c1 = 0, c2 = 0;
  Vector u0 = Vector::Zero(I_), u1 = Vector::Zero(I_);
  for (int t = 1; t <= T_; ++t) {
    const double w = 1.0 / state_.vol.omega[t - 1];
    const Vector gu = gt * project_modes(unf_[0][t - 1], b4t, k65);
    Eigen::Map<const Matrix> w1(gu.data(), r[0], static_cast<Eigen::Index>(r[1]) * r[2]);
    const Vector rt = yv_.col(t) - project_modes(w1, b1, k32);
    c0 += w;
    c1 += w * t;
    c2 += w * t * t;
    u0 += w * rt;
    u1 += w * t * rt;
  }
  const auto chol = chol_factors(state_.cov);
  auto sigma_draw = [&]() {
    DenseTensor z(shape, rng.normal_vector(I_));
    return colorize(z, chol).vec();
  };
  if (!state_.intercept.has_trend) {
    const double q = c0 + 1.0 / ca;
    state_.intercept.a0 = DenseTensor(shape, (u0 / q + sigma_draw() / std::sqrt(q)).eval());
    return;
  }
  Matrix q(2, 2);
  q << c0 + 1.0 / ca, c1, c1, c2 + 1.0 / ca;
  const Matrix qinv = q.inverse();
  const Vector m0 = qinv(0, 0) * u0 + qinv(0, 1) * u1;
  const Vector m1 = qinv(1, 0) * u0 + qinv(1, 1) * u1;
  const Matrix lq = Eigen::LLT<Matrix>(q).matrixL();
  const Matrix linv_t = lq.transpose().inverse();  // 2x2 upper; L^{-T} L^{-1} = Q^{-1}
  const Vector w0 = sigma_draw(), w1 = sigma_draw();
  state_.intercept.a0 = DenseTensor(shape, (m0 + linv_t(0, 0) * w0 + linv_t(0, 1) * w1).eval());
  state_.intercept.a1 = DenseTensor(shape, (m1 + linv_t(1, 1) * w1).eval());
}

void GibbsSampler::sweep(Rng& rng) {
  draw_intercept(rng);
  for (int mode = 1; mode <= 6; ++mode) draw_factor(mode, rng);
  draw_core(rng);
  for (int i = 1; i <= 3; ++i) draw_sigma(i, rng);
  draw_shrinkage(rng);
  draw_volatility(rng);
}

ModelState GibbsSampler::draw_prior_state(Rng& rng) const {
  const auto& d = data_.dims;
  const auto& r = cfg_.ranks;
  const PriorSpec& pr = cfg_.prior;
  ModelState s;

  for (int i = 0; i < 6; ++i) {
    // Discrete grid prior on alpha_i with pmf proportional to alpha, matching
    // the griddy-Gibbs conditional weights.
    Vector gridw(pr.alpha_grid);
    for (int j = 0; j < pr.alpha_grid; ++j) gridw[j] = static_cast<double>(j + 1);
    s.shrink.alpha[i] = static_cast<double>(rng.categorical(gridw) + 1) / pr.alpha_grid;
    s.shrink.tau[i] = rng.gamma(pr.alpha_tau, pr.beta_tau);
    s.shrink.eta[i] = Vector(r[i] - 1);
    for (int k = 0; k < r[i] - 1; ++k) s.shrink.eta[i][k] = rng.beta(1.0, s.shrink.alpha[i]);
    s.shrink.phi[i] = stick_breaking(s.shrink.eta[i], r[i]);
  }

  for (int i = 0; i < 6; ++i) {
    Matrix b(d[i % 3], r[i]);
    for (int c = 0; c < r[i]; ++c) {
      const double v = cfg_.shrinkage ? s.shrink.tau[i] * s.shrink.phi[i][c] : pr.margin_var;
      b.col(c) = std::sqrt(v) * rng.normal_vector(d[i % 3]);
    }
    s.factors.factors[i] = b;
  }
  s.factors.core = DenseTensor(std::vector<int>(r.begin(), r.end()));
  if (cfg_.decomp == DecompKind::Cp) {
    std::vector<int> idx(6);
    for (int k = 1; k <= r[0]; ++k) {
      idx.assign(6, k);
      s.factors.core.at(idx) = 1.0;
    }
  } else {
    s.factors.core.vec() = std::sqrt(pr.core_var) * rng.normal_vector(s.factors.core.size());
  }

  s.cov.s1 = rng.inv_wishart(d[0] + pr.iw_dof_offset, Matrix::Identity(d[0], d[0]));
  s.cov.s2 = rng.inv_wishart(d[1] + pr.iw_dof_offset, Matrix::Identity(d[1], d[1]));
  s.cov.s3 = rng.inv_wishart(d[2] + pr.iw_dof_offset, Matrix::Identity(d[2], d[2]));

  const auto chol = chol_factors(s.cov);
  const std::vector<int> shape{d[0], d[1], d[2]};
  DenseTensor z0(shape, rng.normal_vector(I_));
  s.intercept.a0 = colorize(z0, chol) * std::sqrt(pr.intercept_var);
  s.intercept.has_trend = cfg_.trend;
  if (cfg_.trend) {
    DenseTensor z1(shape, rng.normal_vector(I_));
    s.intercept.a1 = colorize(z1, chol) * std::sqrt(pr.intercept_var);
  } else {
    s.intercept.a1 = DenseTensor(shape);
  }

  s.vol = draw_volatility_prior(cfg_.regime, T_, pr, rng);
  return s;
}

void GibbsSampler::init_default(Rng& rng) {
  const auto& d = data_.dims;
  const int ncols = 1 + static_cast<int>(I_) + (cfg_.trend ? 1 : 0);
  DenseTensor coeff({d[0], d[1], d[2], d[0], d[1], d[2]});
  Vector a0 = Vector::Zero(I_);
  Vector a1 = Vector::Zero(I_);

  if (T_ >= ncols + 1) {
    // Least-squares VAR(1) with intercept (and trend when enabled).
    Matrix z(ncols, T_);
    Matrix yy(I_, T_);
    for (int t = 1; t <= T_; ++t) {
      z(0, t - 1) = 1.0;
      z.block(1, t - 1, I_, 1) = yv_.col(t - 1);
      if (cfg_.trend) z(ncols - 1, t - 1) = static_cast<double>(t);
      yy.col(t - 1) = yv_.col(t);
    }
    const Matrix zzt = z * z.transpose();
    Eigen::LDLT<Matrix> ldlt(zzt);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      const Matrix chat = yy * z.transpose() * ldlt.solve(Matrix::Identity(ncols, ncols));
      a0 = chat.col(0);
      if (cfg_.trend) a1 = chat.col(ncols - 1);
      const Matrix bhat = chat.middleCols(1, I_);
      coeff.vec() = Eigen::Map<const Vector>(bhat.data(), bhat.size());
    } else {
      coeff.vec() = 0.1 * rng.normal_vector(coeff.size());
    }
  } else {
    coeff.vec() = 0.1 * rng.normal_vector(coeff.size());
    a0 = yv_.rightCols(T_).rowwise().mean();
  }

  TuckerFactors f = hosvd(coeff, cfg_.ranks);
  if (cfg_.decomp == DecompKind::Cp) {
    // Force the superdiagonal-ones core, moving the superdiagonal scale onto B1.
    const int R = cfg_.ranks[0];
    Matrix b1 = f.factors[0];
    std::vector<int> idx(6);
    for (int k = 1; k <= R; ++k) {
      idx.assign(6, k);
      b1.col(k - 1) *= f.core.at(idx);
    }
    f.factors[0] = b1;
    f.core = DenseTensor(std::vector<int>(cfg_.ranks.begin(), cfg_.ranks.end()));
    for (int k = 1; k <= R; ++k) {
      idx.assign(6, k);
      f.core.at(idx) = 1.0;
    }
  }
  state_.factors = f;
  const std::vector<int> shape{d[0], d[1], d[2]};
  state_.intercept.a0 = DenseTensor(shape, a0);
  state_.intercept.a1 = DenseTensor(shape, a1);
  state_.intercept.has_trend = cfg_.trend;
}

PosteriorDraws run_gibbs(const TensorSeries& data, const SamplerConfig& cfg) {
  GibbsSampler sampler(data, cfg);
  Rng rng(cfg.seed);
  sampler.init_default(rng);

  PosteriorDraws out;
  out.dims = data.dims;
  out.ranks = cfg.ranks;
  out.regime = cfg.regime;
  out.has_trend = cfg.trend;
  const int keep = (cfg.n_iter - cfg.n_burn) / cfg.thin;
  out.factors.reserve(keep);

  for (int it = 1; it <= cfg.n_iter; ++it) {
    sampler.sweep(rng);
    if (it > cfg.n_burn && (it - cfg.n_burn) % cfg.thin == 0) {
      const ModelState& s = sampler.state();
      out.factors.push_back(s.factors);
      out.a0.push_back(s.intercept.a0);
      if (cfg.trend) out.a1.push_back(s.intercept.a1);
      out.cov.push_back(s.cov);
      out.omega.push_back(s.vol.omega);
      out.tau.push_back(s.shrink.tau);
      out.alpha.push_back(s.shrink.alpha);
      out.loglik.push_back(sampler.fast_log_likelihood());
    }
  }
  out.rates = sampler.rates();
  auto flag_rate = [](const char* name, long acc, long tot) {
    if (tot == 0) return;
    const double r = McmcRates::rate(acc, tot);
    if (r < 0.1 || r > 0.9)
      std::cerr << "warning: MH acceptance rate for " << name << " is " << r
                << " (outside [0.1, 0.9]); consider retuning the proposal scale\n";
  };
  flag_rate("eta", out.rates.eta_accept, out.rates.eta_total);
  flag_rate("h", out.rates.h_accept, out.rates.h_total);
  flag_rate("phi", out.rates.phi_accept, out.rates.phi_total);
  return out;
}

DenseTensor posterior_mean_coeff(const PosteriorDraws& draws) {
  if (draws.count() == 0) throw std::invalid_argument("posterior_mean_coeff: no draws");
  DenseTensor mean = tucker_reconstruct(draws.factors[0]);
  for (int k = 1; k < draws.count(); ++k) mean += tucker_reconstruct(draws.factors[k]);
  mean *= 1.0 / draws.count();
  return mean;
}

TuckerFactors identify(const PosteriorDraws& draws, const std::array<int, 6>& ranks) {
  return sign_normalize(hosvd(posterior_mean_coeff(draws), ranks));
}

}  // namespace btar
