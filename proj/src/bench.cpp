#include "btar/bench.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace btar {

namespace {

// Simulates y_0..y_T from the VAR form with scalar intercept value, identity
// covariance factors and unit volatility, warming up from zero so the
// presample is drawn near the stationary distribution.
TensorSeries simulate_var(const Matrix& bhat, const std::array<int, 3>& dims, double intercept,
                          int T, Rng& rng) {
  const Eigen::Index I = bhat.rows();
  Vector y = Vector::Zero(I);
  const Vector a = Vector::Constant(I, intercept);
  constexpr int kWarmup = 50;
  TensorSeries out;
  out.dims = dims;
  const std::vector<int> shape{dims[0], dims[1], dims[2]};
  for (int t = 0; t < kWarmup + T + 1; ++t) {
    y = a + bhat * y + rng.normal_vector(I);
    if (t >= kWarmup) out.y.emplace_back(shape, y);
  }
  return out;
}

std::uint64_t cell_seed(std::uint64_t seed0, int cell_index) {
  // splitmix64 step keeps cell streams well separated.
  std::uint64_t z = seed0 + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(cell_index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

DgpResult dgp_lowrank(const DgpSpec& spec, Rng& rng) {
  const auto& d = spec.dims;
  const auto& r = spec.ranks;
  TuckerFactors f;
  f.core = DenseTensor(std::vector<int>(r.begin(), r.end()));
  for (Eigen::Index k = 0; k < f.core.size(); ++k) f.core.vec()[k] = rng.uniform();
  for (int i = 0; i < 6; ++i) {
    Matrix b(d[i % 3], r[i]);
    for (Eigen::Index k = 0; k < b.size(); ++k) b(k) = rng.normal(0.3, 0.5);
    f.factors[i] = b;
  }
  if (spec.kind == DgpKind::LowrankSparse) {
    if (r[1] < 2 || r[4] < 2)
      throw std::invalid_argument("sparse DGP needs rank >= 2 on modes 2 and 5");
    f.factors[1].col(1).setZero();
    f.factors[4].col(1).setZero();
  }

  DgpResult out;
  out.coeff = tucker_reconstruct(f);
  const double norm = frobenius_norm(out.coeff);
  if (norm <= 0.0) throw std::runtime_error("dgp_lowrank: degenerate coefficient draw");
  double scale = spec.target_frob / norm;
  out.coeff *= scale;
  out.frob_pre_guard = frobenius_norm(out.coeff);

  out.bhat = var_form(out.coeff);
  const double rho = spectral_radius(out.bhat);
  if (rho >= spec.stability_radius) {
    out.guard_scale = spec.stability_radius / rho;
    out.coeff *= out.guard_scale;
    out.bhat *= out.guard_scale;
    scale *= out.guard_scale;
  }
  // Absorb the overall scale into the core so the factor state matches coeff.
  f.core *= scale;
  out.applied_scale = scale;
  out.factors = f;
  out.has_factors = true;

  ModelState state;
  state.factors = f;
  const std::vector<int> shape{d[0], d[1], d[2]};
  state.intercept.a0 = DenseTensor(shape, Vector::Constant(spec.dims[0] * spec.dims[1] * spec.dims[2],
                                                           spec.intercept));
  state.intercept.a1 = DenseTensor(shape);
  state.cov.s1 = Matrix::Identity(d[0], d[0]);
  state.cov.s2 = Matrix::Identity(d[1], d[1]);
  state.cov.s3 = Matrix::Identity(d[2], d[2]);
  PriorSpec prior;
  state.vol = draw_volatility_prior(spec.regime, spec.T, prior, rng);

  // Warm up from zero so the presample is near the stationary law.
  DenseTensor y0(shape);
  {
    VolatilityState warm = draw_volatility_prior(VolRegime::Homoskedastic, 50, prior, rng);
    ModelState wstate = state;
    wstate.vol = warm;
    TensorSeries ws = simulate(wstate, 50, y0, rng);
    y0 = ws.y.back();
  }
  out.series = simulate(state, spec.T, y0, rng);
  return out;
}

DgpResult dgp_dense_var(const DgpSpec& spec, Rng& rng) {
  const auto& d = spec.dims;
  const Eigen::Index I = static_cast<Eigen::Index>(d[0]) * d[1] * d[2];
  Matrix bhat(I, I);
  for (Eigen::Index i = 0; i < I; ++i)
    for (Eigen::Index j = 0; j < I; ++j)
      bhat(i, j) = (i == j) ? rng.uniform(0.1, 0.4) : rng.normal(0.0, 0.3);

  DgpResult out;
  double scale = spec.target_frob / bhat.norm();
  bhat *= scale;
  out.frob_pre_guard = bhat.norm();
  const double rho = spectral_radius(bhat);
  if (rho >= spec.stability_radius) {
    out.guard_scale = spec.stability_radius / rho;
    bhat *= out.guard_scale;
    scale *= out.guard_scale;
  }
  out.applied_scale = scale;
  out.bhat = bhat;
  out.coeff = DenseTensor({d[0], d[1], d[2], d[0], d[1], d[2]},
                          Eigen::Map<const Vector>(bhat.data(), bhat.size()));
  out.series = simulate_var(bhat, d, spec.intercept, spec.T, rng);
  return out;
}

DgpResult make_dgp(const DgpSpec& spec, Rng& rng) {
  return spec.kind == DgpKind::DenseVar ? dgp_dense_var(spec, rng) : dgp_lowrank(spec, rng);
}

Matrix bvar_minnesota(const TensorSeries& data, const MinnesotaHyper& hyper) {
  const int T = data.T();
  const Eigen::Index I = data.cells();
  if (T < 2) throw std::invalid_argument("bvar_minnesota: need T >= 2");
  Matrix y(I, T), x(I + 1, T);
  for (int t = 1; t <= T; ++t) {
    y.col(t - 1) = data.y[t].vec();
    x(0, t - 1) = 1.0;
    x.block(1, t - 1, I, 1) = data.y[t - 1].vec();
  }

  // Residual scales from univariate AR(1) pre-fits; unit fallback for tiny T.
  Vector sig2 = Vector::Ones(I);
  if (T >= 8) {
    for (Eigen::Index j = 0; j < I; ++j) {
      double sxx = 0, sx = 0, sy = 0, sxy = 0;
      for (int t = 1; t <= T; ++t) {
        const double xv = x(1 + j, t - 1), yv = y(j, t - 1);
        sxx += xv * xv;
        sx += xv;
        sy += yv;
        sxy += xv * yv;
      }
      const double det = T * sxx - sx * sx;
      double rho = 0, c = sy / T;
      if (std::abs(det) > 1e-12) {
        rho = (T * sxy - sx * sy) / det;
        c = (sy - rho * sx) / T;
      }
      double ss = 0;
      for (int t = 1; t <= T; ++t) {
        const double e = y(j, t - 1) - c - rho * x(1 + j, t - 1);
        ss += e * e;
      }
      sig2[j] = std::max(ss / std::max(T - 2, 1), 1e-12);
    }
  }

  const Matrix xxt = x * x.transpose();
  const Matrix xyt = x * y.transpose();  // (I+1) x I
  Matrix a(I, I);
  for (Eigen::Index i = 0; i < I; ++i) {
    Matrix k = xxt / sig2[i];
    k(0, 0) += 1.0 / hyper.intercept_var;
    for (Eigen::Index j = 0; j < I; ++j) {
      const double v = (i == j) ? hyper.kappa1 : hyper.kappa1 * hyper.kappa2 * sig2[i] / sig2[j];
      k(1 + j, 1 + j) += 1.0 / v;
    }
    Eigen::LLT<Matrix> llt(k);
    if (llt.info() != Eigen::Success) throw std::runtime_error("bvar_minnesota: singular system");
    const Vector theta = llt.solve(xyt.col(i) / sig2[i]);
    a.row(i) = theta.tail(I).transpose();
  }
  return a;
}

double rmse(const Matrix& estimate, const Matrix& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw std::invalid_argument("rmse: size mismatch");
  return (estimate - truth).norm() / std::sqrt(static_cast<double>(truth.size()));
}

double rmse(const DenseTensor& estimate, const DenseTensor& truth) {
  if (estimate.shape() != truth.shape()) throw std::invalid_argument("rmse: shape mismatch");
  return (estimate.vec() - truth.vec()).norm() / std::sqrt(static_cast<double>(truth.size()));
}

double relative_rmse(double model, double baseline) {
  if (baseline <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return model / baseline;
}

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::BvarMinn: return "bvar-minn";
    case Estimator::BtarCp: return "btar-cp";
    case Estimator::BtarTk: return "btar-tk";
    case Estimator::BtarTkMsb: return "btar-tk-msb";
  }
  return "?";
}

std::string to_string(DgpKind k) {
  switch (k) {
    case DgpKind::Lowrank: return "lowrank";
    case DgpKind::LowrankSparse: return "lowrank_sparse";
    case DgpKind::DenseVar: return "dense_var";
  }
  return "?";
}

Estimator estimator_from_string(const std::string& s) {
  if (s == "bvar-minn") return Estimator::BvarMinn;
  if (s == "btar-cp") return Estimator::BtarCp;
  if (s == "btar-tk") return Estimator::BtarTk;
  if (s == "btar-tk-msb") return Estimator::BtarTkMsb;
  throw std::invalid_argument("unknown estimator: " + s);
}

DgpKind dgp_from_string(const std::string& s) {
  if (s == "lowrank") return DgpKind::Lowrank;
  if (s == "lowrank_sparse") return DgpKind::LowrankSparse;
  if (s == "dense_var") return DgpKind::DenseVar;
  throw std::invalid_argument("unknown dgp: " + s);
}

namespace {

SamplerConfig estimator_config(const SuiteSpec& suite, Estimator est, std::uint64_t seed) {
  SamplerConfig cfg = suite.fit;
  cfg.seed = seed;
  cfg.ranks = suite.ranks;
  switch (est) {
    case Estimator::BtarCp: {
      cfg.decomp = DecompKind::Cp;
      cfg.shrinkage = false;
      int rmax = 1;
      for (int v : suite.ranks) rmax = std::max(rmax, v);
      for (int i = 0; i < 6; ++i) cfg.ranks[i] = std::min(rmax, suite.dims[i % 3]);
      break;
    }
    case Estimator::BtarTk:
      cfg.decomp = DecompKind::Tucker;
      cfg.shrinkage = false;
      break;
    case Estimator::BtarTkMsb:
      cfg.decomp = DecompKind::Tucker;
      cfg.shrinkage = true;
      break;
    case Estimator::BvarMinn:
      break;
  }
  return cfg;
}

}  // namespace

std::vector<BenchRow> run_experiment(const SuiteSpec& suite) {
  const int n_cells = static_cast<int>(suite.Ts.size()) * suite.n_seeds;
  const int n_est = static_cast<int>(suite.estimators.size());
  std::vector<BenchRow> rows(static_cast<std::size_t>(n_cells) * n_est);

  auto run_cell = [&](int cell) {
    const int t_idx = cell / suite.n_seeds;
    const int s_idx = cell % suite.n_seeds;
    const std::uint64_t seed = cell_seed(suite.seed0, cell);

    DgpSpec dspec;
    dspec.kind = suite.dgp;
    dspec.dims = suite.dims;
    dspec.ranks = suite.ranks;
    dspec.T = suite.Ts[t_idx];
    dspec.seed = seed;
    Rng rng(seed);
    DgpResult dgp = make_dgp(dspec, rng);

    for (int e = 0; e < n_est; ++e) {
      BenchRow& row = rows[static_cast<std::size_t>(cell) * n_est + e];
      row.dgp = suite.dgp;
      row.dims = suite.dims;
      row.ranks = suite.ranks;
      row.T = dspec.T;
      row.estimator = suite.estimators[e];
      row.seed = seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        if (row.estimator == Estimator::BvarMinn) {
          const Matrix est = bvar_minnesota(dgp.series, suite.minnesota);
          row.rmse = rmse(est, dgp.bhat);
        } else {
          const SamplerConfig cfg = estimator_config(suite, row.estimator, seed + 17 * (e + 1));
          const PosteriorDraws draws = run_gibbs(dgp.series, cfg);
          row.rmse = rmse(posterior_mean_coeff(draws), dgp.coeff);
        }
      } catch (const std::exception& ex) {
        row.failed = true;
        row.error = ex.what();
      }
      row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    }
  };

  if (suite.threads <= 1) {
    for (int c = 0; c < n_cells; ++c) run_cell(c);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int nt = std::min(suite.threads, n_cells);
    pool.reserve(nt);
    for (int k = 0; k < nt; ++k)
      pool.emplace_back([&] {
        for (int c = next.fetch_add(1); c < n_cells; c = next.fetch_add(1)) run_cell(c);
      });
    for (auto& th : pool) th.join();
  }

  // Same-cell baseline and largest-T mean baseline normalizations.
  double ref_baseline = std::numeric_limits<double>::quiet_NaN();
  {
    const int t_max = *std::max_element(suite.Ts.begin(), suite.Ts.end());
    double sum = 0;
    int n = 0;
    for (const auto& r : rows)
      if (!r.failed && r.estimator == Estimator::BvarMinn && r.T == t_max) {
        sum += r.rmse;
        ++n;
      }
    if (n > 0) ref_baseline = sum / n;
  }
  for (int cell = 0; cell < n_cells; ++cell) {
    double base = std::numeric_limits<double>::quiet_NaN();
    for (int e = 0; e < n_est; ++e) {
      const BenchRow& r = rows[static_cast<std::size_t>(cell) * n_est + e];
      if (!r.failed && r.estimator == Estimator::BvarMinn) base = r.rmse;
    }
    for (int e = 0; e < n_est; ++e) {
      BenchRow& r = rows[static_cast<std::size_t>(cell) * n_est + e];
      r.relative_rmse = relative_rmse(r.rmse, base);
      r.relative_rmse_ref = relative_rmse(r.rmse, ref_baseline);
    }
  }
  return rows;
}

namespace {

std::string dims_str(const std::array<int, 3>& d) {
  std::ostringstream os;
  os << d[0] << 'x' << d[1] << 'x' << d[2];
  return os.str();
}

std::string ranks_str(const std::array<int, 6>& r) {
  std::ostringstream os;
  for (int i = 0; i < 6; ++i) os << (i ? "-" : "") << r[i];
  return os.str();
}

void append_row(std::ostringstream& os, const BenchRow& r, bool full) {
  char buf[64];
  os << to_string(r.dgp) << ',' << dims_str(r.dims) << ',' << ranks_str(r.ranks) << ',' << r.T
     << ',' << to_string(r.estimator) << ',' << r.seed << ',';
  std::snprintf(buf, sizeof buf, "%.17g", r.rmse);
  os << (r.failed ? "nan" : buf) << ',';
  std::snprintf(buf, sizeof buf, "%.17g", r.relative_rmse);
  os << (r.failed ? "nan" : buf) << ',';
  if (full) {
    std::snprintf(buf, sizeof buf, "%.17g", r.relative_rmse_ref);
    os << (r.failed ? "nan" : buf) << ',';
  }
  os << r.wall_ms;
  if (full) os << ',' << (r.failed ? r.error : "");
  os << '\n';
}

}  // namespace

std::string bench_rows_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "dgp,dims,ranks,T,estimator,seed,rmse,relative_rmse,wall_ms\n";
  for (const auto& r : rows) append_row(os, r, false);
  return os.str();
}

std::string bench_rows_csv_full(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "dgp,dims,ranks,T,estimator,seed,rmse,relative_rmse,relative_rmse_ref,wall_ms,error\n";
  for (const auto& r : rows) append_row(os, r, true);
  return os.str();
}

}  // namespace btar
