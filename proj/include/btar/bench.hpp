#pragma once

#include "btar/sampler.hpp"

#include <string>
#include <vector>

namespace btar {

enum class DgpKind { Lowrank, LowrankSparse, DenseVar };

struct DgpSpec {
  DgpKind kind = DgpKind::Lowrank;
  std::array<int, 3> dims{5, 5, 5};
  std::array<int, 6> ranks{2, 2, 2, 2, 2, 2};
  int T = 200;
  std::uint64_t seed = 1;
  double target_frob = 5.0;
  double intercept = 0.1;
  double stability_radius = 0.95;
  VolRegime regime = VolRegime::Homoskedastic;
};

struct DgpResult {
  DenseTensor coeff;      // true coefficient tensor after the stability guard
  Matrix bhat;            // its VAR form
  TensorSeries series;    // y_0..y_T
  double frob_pre_guard = 0.0;
  double guard_scale = 1.0;    // 1 when the guard was inactive
  double applied_scale = 1.0;  // total rescaling applied to the raw draw
  TuckerFactors factors;       // true factors (lowrank kinds only)
  bool has_factors = false;
};

DgpResult dgp_lowrank(const DgpSpec& spec, Rng& rng);
DgpResult dgp_dense_var(const DgpSpec& spec, Rng& rng);
DgpResult make_dgp(const DgpSpec& spec, Rng& rng);

struct MinnesotaHyper {
  double kappa1 = 0.04;       // own-lag prior variance
  double kappa2 = 0.25;       // extra cross-lag shrinkage factor
  double intercept_var = 1e6; // diffuse intercept
};

// Posterior-mean VAR(1) coefficient matrix under a Minnesota-style Gaussian
// prior with equation-wise residual scales from univariate AR(1) pre-fits
// (unit scales when T is too small for the pre-fits).
Matrix bvar_minnesota(const TensorSeries& data, const MinnesotaHyper& hyper);

double rmse(const Matrix& estimate, const Matrix& truth);
double rmse(const DenseTensor& estimate, const DenseTensor& truth);
double relative_rmse(double model, double baseline);

enum class Estimator { BvarMinn, BtarCp, BtarTk, BtarTkMsb };
std::string to_string(Estimator e);
std::string to_string(DgpKind k);
Estimator estimator_from_string(const std::string& s);
DgpKind dgp_from_string(const std::string& s);

struct SuiteSpec {
  DgpKind dgp = DgpKind::Lowrank;
  std::array<int, 3> dims{5, 5, 5};
  std::array<int, 6> ranks{2, 2, 2, 2, 2, 2};
  std::vector<int> Ts{200, 400};
  int n_seeds = 10;
  std::uint64_t seed0 = 1;
  std::vector<Estimator> estimators{Estimator::BvarMinn, Estimator::BtarCp, Estimator::BtarTk,
                                    Estimator::BtarTkMsb};
  SamplerConfig fit;  // iteration counts and priors; ranks/flags set per estimator
  MinnesotaHyper minnesota;
  int threads = 1;
};

struct BenchRow {
  DgpKind dgp;
  std::array<int, 3> dims;
  std::array<int, 6> ranks;
  int T = 0;
  Estimator estimator;
  std::uint64_t seed = 0;
  double rmse = 0.0;
  double relative_rmse = 0.0;  // vs same-cell BVAR-Minn
  double relative_rmse_ref = 0.0;  // vs BVAR-Minn mean at the largest T
  long wall_ms = 0;
  bool failed = false;
  std::string error;
};

// Runs every (T, seed) cell of the suite; estimators within a cell share the
// same simulated data. Cells run in parallel when threads > 1; the row order
// is deterministic regardless of scheduling.
std::vector<BenchRow> run_experiment(const SuiteSpec& suite);

// CSV with header dgp,dims,ranks,T,estimator,seed,rmse,relative_rmse,wall_ms.
std::string bench_rows_csv(const std::vector<BenchRow>& rows);

// Companion table carrying both relative-RMSE normalizations per row.
std::string bench_rows_csv_full(const std::vector<BenchRow>& rows);

}  // namespace btar
