#include "btar/bench.hpp"
#include "btar/io.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace {

using namespace btar;

std::array<int, 3> parse_dims(const std::string& s) {
  std::array<int, 3> d{};
  if (std::sscanf(s.c_str(), "%d,%d,%d", &d[0], &d[1], &d[2]) != 3)
    throw std::invalid_argument("--dims expects I1,I2,I3");
  for (int v : d)
    if (v < 1) throw std::invalid_argument("--dims entries must be positive");
  return d;
}

std::array<int, 6> parse_ranks(const std::string& s) {
  std::array<int, 6> r{};
  const int got6 =
      std::sscanf(s.c_str(), "%d,%d,%d,%d,%d,%d", &r[0], &r[1], &r[2], &r[3], &r[4], &r[5]);
  if (got6 == 6) return r;
  int single = 0;
  if (std::sscanf(s.c_str(), "%d", &single) == 1 && s.find(',') == std::string::npos) {
    r.fill(single);
    return r;
  }
  throw std::invalid_argument("--ranks expects R or R1,R2,R3,R4,R5,R6");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  if (out.empty()) throw std::invalid_argument("expected a comma-separated integer list");
  return out;
}

VolRegime parse_regime(const std::string& s) {
  if (s == "homo" || s == "homoskedastic") return VolRegime::Homoskedastic;
  if (s == "outlier") return VolRegime::Outlier;
  if (s == "csv") return VolRegime::Csv;
  throw std::invalid_argument("--regime must be homo, outlier or csv");
}

std::string regime_name(VolRegime r) {
  switch (r) {
    case VolRegime::Homoskedastic: return "homo";
    case VolRegime::Outlier: return "outlier";
    case VolRegime::Csv: return "csv";
  }
  return "?";
}

void write_meta(const std::string& dir, const std::map<std::string, std::string>& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  write_text_atomic(dir + "/run_meta.txt", os.str());
}

struct FitOptions {
  std::string data_path;
  std::string config_path;
  std::string out = "btar_out";
  std::string ranks = "1";
  std::string regime = "homo";
  std::string decomp = "tucker";
  bool no_shrinkage = false;
  bool trend = false;
  bool preprocess = false;
  int ma_window = 3;
  int yoy_lag = 12;
  int iters = 4000, burn = 2000, thin = 2;
  std::uint64_t seed = 1;
  bool dump_draws = false;
};

const std::vector<std::string> kConfigKeys = {
    "data",        "out",          "ranks",        "regime",       "decomp",
    "shrinkage",   "trend",        "preprocess",   "ma_window",    "yoy_lag",
    "iters",       "burn",         "thin",         "seed",         "dump_draws",
    "alpha_tau",   "beta_tau",     "margin_var",   "core_var",     "intercept_var",
    "phi_mean",    "phi_var",      "sigma2_shape", "sigma2_scale", "outlier_a",
    "outlier_b",   "outlier_grid", "alpha_grid",   "mh_scale_eta", "mh_scale_h",
    "mh_scale_phi", "normalize_sigma"};

void apply_config_file(FitOptions& opt, SamplerConfig& cfg, const std::string& path) {
  const RunConfig rc = RunConfig::from_file(path);
  rc.require_known(kConfigKeys);
  auto getd = [&](const std::string& k, double fb) {
    return rc.has(k) ? std::stod(rc.get(k, "")) : fb;
  };
  auto geti = [&](const std::string& k, int fb) {
    return rc.has(k) ? std::stoi(rc.get(k, "")) : fb;
  };
  auto getb = [&](const std::string& k, bool fb) {
    if (!rc.has(k)) return fb;
    const std::string v = rc.get(k, "");
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw std::invalid_argument("config: boolean expected for '" + k + "'");
  };
  if (rc.has("data")) opt.data_path = rc.get("data", "");
  if (rc.has("out")) opt.out = rc.get("out", "");
  if (rc.has("ranks")) opt.ranks = rc.get("ranks", "");
  if (rc.has("regime")) opt.regime = rc.get("regime", "");
  if (rc.has("decomp")) opt.decomp = rc.get("decomp", "");
  opt.no_shrinkage = !getb("shrinkage", !opt.no_shrinkage);
  opt.trend = getb("trend", opt.trend);
  opt.preprocess = getb("preprocess", opt.preprocess);
  opt.ma_window = geti("ma_window", opt.ma_window);
  opt.yoy_lag = geti("yoy_lag", opt.yoy_lag);
  opt.iters = geti("iters", opt.iters);
  opt.burn = geti("burn", opt.burn);
  opt.thin = geti("thin", opt.thin);
  if (rc.has("seed")) opt.seed = std::stoull(rc.get("seed", "1"));
  opt.dump_draws = getb("dump_draws", opt.dump_draws);

  cfg.prior.alpha_tau = getd("alpha_tau", cfg.prior.alpha_tau);
  cfg.prior.beta_tau = getd("beta_tau", cfg.prior.beta_tau);
  cfg.prior.margin_var = getd("margin_var", cfg.prior.margin_var);
  cfg.prior.core_var = getd("core_var", cfg.prior.core_var);
  cfg.prior.intercept_var = getd("intercept_var", cfg.prior.intercept_var);
  cfg.prior.phi_mean = getd("phi_mean", cfg.prior.phi_mean);
  cfg.prior.phi_var = getd("phi_var", cfg.prior.phi_var);
  cfg.prior.sigma2_shape = getd("sigma2_shape", cfg.prior.sigma2_shape);
  cfg.prior.sigma2_scale = getd("sigma2_scale", cfg.prior.sigma2_scale);
  cfg.prior.outlier_a = getd("outlier_a", cfg.prior.outlier_a);
  cfg.prior.outlier_b = getd("outlier_b", cfg.prior.outlier_b);
  cfg.prior.outlier_grid = geti("outlier_grid", cfg.prior.outlier_grid);
  cfg.prior.alpha_grid = geti("alpha_grid", cfg.prior.alpha_grid);
  cfg.mh_scale_eta = getd("mh_scale_eta", cfg.mh_scale_eta);
  cfg.mh_scale_h = getd("mh_scale_h", cfg.mh_scale_h);
  cfg.mh_scale_phi = getd("mh_scale_phi", cfg.mh_scale_phi);
  cfg.normalize_sigma = getb("normalize_sigma", cfg.normalize_sigma);
}

int cmd_simulate(const std::string& dgp, const std::string& dims_s, const std::string& ranks_s,
                 int T, double frob, double intercept, const std::string& regime,
                 std::uint64_t seed, const std::string& out) {
  DgpSpec spec;
  spec.kind = dgp_from_string(dgp);
  spec.dims = parse_dims(dims_s);
  spec.ranks = parse_ranks(ranks_s);
  spec.T = T;
  spec.seed = seed;
  spec.target_frob = frob;
  spec.intercept = intercept;
  spec.regime = parse_regime(regime);
  Rng rng(seed);
  const DgpResult res = make_dgp(spec, rng);

  write_tensor_series(out + "/series.csv", res.series, default_labels(spec.dims));
  {
    std::ostringstream os;
    os << "row,col,value\n";
    for (Eigen::Index i = 0; i < res.bhat.rows(); ++i)
      for (Eigen::Index j = 0; j < res.bhat.cols(); ++j)
        os << (i + 1) << ',' << (j + 1) << ',' << format_double(res.bhat(i, j)) << '\n';
    write_text_atomic(out + "/truth_varform.csv", os.str());
  }
  write_meta(out, {{"cmd", "simulate"},
                   {"dgp", dgp},
                   {"dims", dims_s},
                   {"ranks", ranks_s},
                   {"T", std::to_string(T)},
                   {"seed", std::to_string(seed)},
                   {"frob", format_double(frob)},
                   {"intercept", format_double(intercept)},
                   {"regime", regime},
                   {"guard_scale", format_double(res.guard_scale)}});
  std::cout << "wrote " << out << "/series.csv (T=" << res.series.y.size()
            << " points, guard scale " << res.guard_scale << ")\n";
  return 0;
}

int cmd_fit(FitOptions opt, SamplerConfig cfg) {
  if (opt.data_path.empty()) throw std::invalid_argument("fit: --data is required");
  TensorSeriesFile file = read_tensor_series(opt.data_path);
  long zero_dens = 0;
  if (opt.preprocess) {
    PreprocessSpec ps;
    ps.ma_window = opt.ma_window;
    ps.yoy_lag = opt.yoy_lag;
    PreprocessResult pp = preprocess(file.series, ps);
    file.series = std::move(pp.series);
    zero_dens = pp.zero_denominators;
    if (zero_dens > 0)
      std::cerr << "warning: " << zero_dens << " zero-denominator cells mapped to 0\n";
  }

  cfg.n_iter = opt.iters;
  cfg.n_burn = opt.burn;
  cfg.thin = opt.thin;
  cfg.seed = opt.seed;
  cfg.ranks = parse_ranks(opt.ranks);
  cfg.regime = parse_regime(opt.regime);
  cfg.trend = opt.trend;
  cfg.shrinkage = !opt.no_shrinkage;
  if (opt.decomp == "tucker")
    cfg.decomp = DecompKind::Tucker;
  else if (opt.decomp == "cp")
    cfg.decomp = DecompKind::Cp;
  else
    throw std::invalid_argument("fit: --decomp must be tucker or cp");

  const PosteriorDraws draws = run_gibbs(file.series, cfg);

  IdentifiedModel identified;
  identified.factors = identify(draws, cfg.ranks);
  const std::vector<int> shape{file.series.dims[0], file.series.dims[1], file.series.dims[2]};
  DenseTensor a0_mean(shape), a1_mean(shape);
  for (int k = 0; k < draws.count(); ++k) a0_mean += draws.a0[k];
  a0_mean *= 1.0 / draws.count();
  if (cfg.trend) {
    for (int k = 0; k < draws.count(); ++k) a1_mean += draws.a1[k];
    a1_mean *= 1.0 / draws.count();
  }
  identified.intercept.a0 = a0_mean;
  identified.intercept.a1 = a1_mean;
  identified.intercept.has_trend = cfg.trend;

  write_fit_outputs(opt.out, draws, identified);
  if (opt.dump_draws) write_draws_binary(opt.out + "/draws.bin", draws);
  write_meta(opt.out,
             {{"cmd", "fit"},
              {"data", opt.data_path},
              {"ranks", opt.ranks},
              {"regime", opt.regime},
              {"decomp", opt.decomp},
              {"shrinkage", opt.no_shrinkage ? "0" : "1"},
              {"trend", opt.trend ? "1" : "0"},
              {"preprocess", opt.preprocess ? "1" : "0"},
              {"ma_window", std::to_string(opt.ma_window)},
              {"yoy_lag", std::to_string(opt.yoy_lag)},
              {"iters", std::to_string(opt.iters)},
              {"burn", std::to_string(opt.burn)},
              {"thin", std::to_string(opt.thin)},
              {"seed", std::to_string(opt.seed)},
              {"zero_denominators", std::to_string(zero_dens)},
              {"draws", std::to_string(draws.count())}});
  std::cout << "fit: " << draws.count() << " retained draws -> " << opt.out << '\n';
  std::cout << "mh acceptance: eta " << McmcRates::rate(draws.rates.eta_accept, draws.rates.eta_total)
            << ", h " << McmcRates::rate(draws.rates.h_accept, draws.rates.h_total) << ", phi "
            << McmcRates::rate(draws.rates.phi_accept, draws.rates.phi_total) << '\n';
  return 0;
}

int cmd_factors(const std::string& fit_dir, const std::string& data_path, bool do_preprocess,
                int ma_window, int yoy_lag, const std::string& out) {
  IdentifiedModel identified = read_identified(fit_dir + "/identified.csv");
  TensorSeriesFile file = read_tensor_series(data_path);
  if (do_preprocess) {
    PreprocessSpec ps;
    ps.ma_window = ma_window;
    ps.yoy_lag = yoy_lag;
    file.series = preprocess(file.series, ps).series;
  }
  const FactorSeries fs = extract_factors(file.series, identified.factors, identified.intercept);
  write_factor_outputs(out, fs);
  std::cout << "factors: " << fs.response.cols() << " response + " << fs.predictor.cols()
            << " predictor series -> " << out << '\n';
  return 0;
}

int cmd_volatility(const std::string& fit_dir, const std::string& out) {
  std::ifstream is(fit_dir + "/volatility_summary.csv");
  if (!is) throw std::runtime_error("cannot open " + fit_dir + "/volatility_summary.csv");
  std::string line;
  std::getline(is, line);  // header
  std::ostringstream os;
  os << "t,exp_h_half\n";
  while (std::getline(is, line)) {
    int t;
    double mean;
    if (std::sscanf(line.c_str(), "%d,%lf", &t, &mean) == 2)
      os << t << ',' << format_double(mean) << '\n';
  }
  write_text_atomic(out + "/vol_series.csv", os.str());
  std::cout << "volatility series -> " << out << "/vol_series.csv\n";
  return 0;
}

int cmd_benchmark(const std::string& dgp, const std::string& dims_s, const std::string& ranks_s,
                  const std::string& ts, int seeds, const std::string& estimators, int iters,
                  int burn, int thin, double kappa1, double kappa2, std::uint64_t seed,
                  int threads, const std::string& out) {
  SuiteSpec suite;
  suite.dgp = dgp_from_string(dgp);
  suite.dims = parse_dims(dims_s);
  suite.ranks = parse_ranks(ranks_s);
  suite.Ts = parse_int_list(ts);
  suite.n_seeds = seeds;
  suite.seed0 = seed;
  suite.threads = threads;
  suite.fit.n_iter = iters;
  suite.fit.n_burn = burn;
  suite.fit.thin = thin;
  suite.minnesota.kappa1 = kappa1;
  suite.minnesota.kappa2 = kappa2;
  suite.estimators.clear();
  std::stringstream ss(estimators);
  std::string tok;
  while (std::getline(ss, tok, ',')) suite.estimators.push_back(estimator_from_string(tok));
  if (suite.estimators.empty()) throw std::invalid_argument("benchmark: no estimators given");

  const std::vector<BenchRow> rows = run_experiment(suite);
  write_text_atomic(out + "/benchmark.csv", bench_rows_csv(rows));
  write_text_atomic(out + "/benchmark_full.csv", bench_rows_csv_full(rows));
  int failed = 0;
  for (const auto& r : rows) failed += r.failed ? 1 : 0;
  std::cout << "benchmark: " << rows.size() << " rows (" << failed << " failed) -> " << out
            << "/benchmark.csv\n";
  return failed == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian tensor autoregressions with Tucker decomposition"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "btar_out";
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed");
  app.add_option("--threads", threads, "worker threads for benchmark cells");
  auto* out_opt = app.add_option("--out", out, "output directory");

  // simulate
  auto* sim = app.add_subcommand("simulate", "simulate a DGP and write a tensor series file");
  std::string sim_dgp = "lowrank", sim_dims = "5,5,5", sim_ranks = "2", sim_regime = "homo";
  int sim_T = 200;
  double sim_frob = 5.0, sim_intercept = 0.1;
  sim->add_option("--dgp", sim_dgp, "lowrank | lowrank_sparse | dense_var");
  sim->add_option("--dims", sim_dims, "I1,I2,I3");
  sim->add_option("--ranks", sim_ranks, "R or R1..R6");
  sim->add_option("--T", sim_T, "series length (excluding the presample)");
  sim->add_option("--frob", sim_frob, "target Frobenius norm of the coefficient tensor");
  sim->add_option("--intercept", sim_intercept, "intercept value");
  sim->add_option("--regime", sim_regime, "homo | outlier | csv");

  // fit
  auto* fit = app.add_subcommand("fit", "run the Gibbs sampler on a tensor series file");
  FitOptions fopt;
  std::string fit_config;
  std::map<std::string, CLI::Option*> fit_opts;
  fit_opts["data"] = fit->add_option("--data", fopt.data_path, "tensor series CSV");
  fit->add_option("--config", fit_config, "key=value run configuration file");
  fit_opts["ranks"] = fit->add_option("--ranks", fopt.ranks, "R or R1..R6");
  fit_opts["regime"] = fit->add_option("--regime", fopt.regime, "homo | outlier | csv");
  fit_opts["decomp"] = fit->add_option("--decomp", fopt.decomp, "tucker | cp");
  fit_opts["no_shrinkage"] =
      fit->add_flag("--no-shrinkage", fopt.no_shrinkage, "disable the stick-breaking prior");
  fit_opts["trend"] = fit->add_flag("--trend", fopt.trend, "include a linear trend");
  fit_opts["preprocess"] =
      fit->add_flag("--preprocess", fopt.preprocess, "moving average + change + standardize");
  fit_opts["ma_window"] = fit->add_option("--ma-window", fopt.ma_window, "moving-average window");
  fit_opts["yoy_lag"] = fit->add_option("--yoy-lag", fopt.yoy_lag, "seasonal change lag");
  fit_opts["iters"] = fit->add_option("--iters", fopt.iters, "total sweeps");
  fit_opts["burn"] = fit->add_option("--burn", fopt.burn, "burn-in sweeps");
  fit_opts["thin"] = fit->add_option("--thin", fopt.thin, "thinning interval");
  fit_opts["dump_draws"] =
      fit->add_flag("--dump-draws", fopt.dump_draws, "write raw coefficient draws (binary)");

  // benchmark
  auto* ben = app.add_subcommand("benchmark", "run a simulation suite and emit RMSE tables");
  std::string ben_dgp = "lowrank", ben_dims = "5,5,5", ben_ranks = "2", ben_ts = "200,400";
  std::string ben_est = "bvar-minn,btar-cp,btar-tk,btar-tk-msb";
  int ben_seeds = 10, ben_iters = 4000, ben_burn = 2000, ben_thin = 2;
  double ben_k1 = 0.04, ben_k2 = 0.25;
  ben->add_option("--dgp", ben_dgp, "lowrank | lowrank_sparse | dense_var");
  ben->add_option("--dims", ben_dims, "I1,I2,I3");
  ben->add_option("--ranks", ben_ranks, "R or R1..R6");
  ben->add_option("--T", ben_ts, "comma-separated series lengths");
  ben->add_option("--seeds", ben_seeds, "replications per cell");
  ben->add_option("--estimators", ben_est, "comma-separated estimator list");
  ben->add_option("--iters", ben_iters, "sweeps per fit");
  ben->add_option("--burn", ben_burn, "burn-in per fit");
  ben->add_option("--thin", ben_thin, "thinning per fit");
  ben->add_option("--kappa1", ben_k1, "Minnesota own-lag variance");
  ben->add_option("--kappa2", ben_k2, "Minnesota cross-lag factor");

  // factors
  auto* fac = app.add_subcommand("factors", "extract response/predictor factor series from a fit");
  std::string fac_fit, fac_data;
  bool fac_pre = false;
  int fac_ma = 3, fac_yoy = 12;
  fac->add_option("--fit", fac_fit, "fit output directory")->required();
  fac->add_option("--data", fac_data, "tensor series CSV used for the fit")->required();
  fac->add_flag("--preprocess", fac_pre, "apply the same preprocessing as the fit");
  fac->add_option("--ma-window", fac_ma, "moving-average window");
  fac->add_option("--yoy-lag", fac_yoy, "seasonal change lag");

  // volatility
  auto* vol = app.add_subcommand("volatility", "emit the posterior-mean exp(h_t/2) series");
  std::string vol_fit;
  vol->add_option("--fit", vol_fit, "fit output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(sim_dgp, sim_dims, sim_ranks, sim_T, sim_frob, sim_intercept, sim_regime,
                          seed, out);
    if (fit->parsed()) {
      SamplerConfig cfg;
      const FitOptions cli_vals = fopt;
      fopt.seed = seed;
      fopt.out = out;
      if (!fit_config.empty()) {
        apply_config_file(fopt, cfg, fit_config);
        // Explicit command-line flags override the config file.
        if (seed_opt->count() > 0) fopt.seed = seed;
        if (out_opt->count() > 0) fopt.out = out;
        auto passed = [&](const char* k) { return fit_opts.at(k)->count() > 0; };
        if (passed("data")) fopt.data_path = cli_vals.data_path;
        if (passed("ranks")) fopt.ranks = cli_vals.ranks;
        if (passed("regime")) fopt.regime = cli_vals.regime;
        if (passed("decomp")) fopt.decomp = cli_vals.decomp;
        if (passed("no_shrinkage")) fopt.no_shrinkage = cli_vals.no_shrinkage;
        if (passed("trend")) fopt.trend = cli_vals.trend;
        if (passed("preprocess")) fopt.preprocess = cli_vals.preprocess;
        if (passed("ma_window")) fopt.ma_window = cli_vals.ma_window;
        if (passed("yoy_lag")) fopt.yoy_lag = cli_vals.yoy_lag;
        if (passed("iters")) fopt.iters = cli_vals.iters;
        if (passed("burn")) fopt.burn = cli_vals.burn;
        if (passed("thin")) fopt.thin = cli_vals.thin;
        if (passed("dump_draws")) fopt.dump_draws = cli_vals.dump_draws;
      }
      return cmd_fit(fopt, cfg);
    }
    if (ben->parsed())
      return cmd_benchmark(ben_dgp, ben_dims, ben_ranks, ben_ts, ben_seeds, ben_est, ben_iters,
                           ben_burn, ben_thin, ben_k1, ben_k2, seed, threads, out);
    if (fac->parsed()) return cmd_factors(fac_fit, fac_data, fac_pre, fac_ma, fac_yoy, out);
    if (vol->parsed()) return cmd_volatility(vol_fit, out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
