#pragma once

#include "btar/sampler.hpp"

#include <map>
#include <string>
#include <vector>

namespace btar {

using AxisLabels = std::array<std::vector<std::string>, 3>;

struct TensorSeriesFile {
  TensorSeries series;
  AxisLabels labels;
};

// Long-format CSV: header "# dims=I1,I2,I3 T=N", optional "# labelsK=..."
// lines, a column header, then dense t,i1,i2,i3,value rows (1-based).
TensorSeriesFile read_tensor_series(const std::string& path);
void write_tensor_series(const std::string& path, const TensorSeries& series,
                         const AxisLabels& labels);
AxisLabels default_labels(const std::array<int, 3>& dims);

struct PreprocessSpec {
  int ma_window = 3;   // trailing moving average
  int yoy_lag = 12;    // seasonal difference lag
  bool standardize = true;
};

struct PreprocessResult {
  TensorSeries series;
  long zero_denominators = 0;  // cells mapped to 0 in the change transform
};

// Moving average, then relative change at the seasonal lag, then per-series
// standardization. Output length is T_in - (ma_window - 1) - yoy_lag.
PreprocessResult preprocess(const TensorSeries& input, const PreprocessSpec& spec);

struct FactorSeries {
  Matrix response;   // T x (R1 R2 R3), standardized columns
  Matrix predictor;  // T x (R4 R5 R6), standardized columns
  std::vector<std::string> response_labels;
  std::vector<std::string> predictor_labels;
  Matrix proj_mode3;  // B3 B3'
  Matrix proj_mode6;  // B6 B6'
};

// Response factors Bm'(y_t - a_t) and predictor factors B'y_{t-1} under the
// identified loadings, plus the goods-mode projection matrices.
FactorSeries extract_factors(const TensorSeries& data, const TuckerFactors& identified,
                             const InterceptTrend& intercept);

// Returns +factor or -factor, whichever has the smaller RMSE against the
// reference; ties keep the positive orientation.
Vector align_sign(const Vector& factor, const Vector& reference);

// Flat key=value run configuration; unknown keys are rejected.
struct RunConfig {
  std::map<std::string, std::string> values;

  static RunConfig from_file(const std::string& path);
  bool has(const std::string& key) const { return values.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback) const;

  // Throws when a stored key is not in the known set.
  void require_known(const std::vector<std::string>& known) const;
};

// Identified-loadings bundle persisted by `fit` and consumed by `factors`.
struct IdentifiedModel {
  TuckerFactors factors;
  InterceptTrend intercept;
};

void write_identified(const std::string& path, const IdentifiedModel& model);
IdentifiedModel read_identified(const std::string& path);

// Posterior summary files (means and 5/50/95 quantiles) for the coefficient
// tensor, covariance factors and the volatility path, plus the log-likelihood
// trace. Deterministic byte-for-byte for a fixed chain.
void write_fit_outputs(const std::string& dir, const PosteriorDraws& draws,
                       const IdentifiedModel& identified);

// Optional raw dump: magic line, then little-endian int64 draw count and
// parameter count followed by vec(B) per draw.
void write_draws_binary(const std::string& path, const PosteriorDraws& draws);

void write_factor_outputs(const std::string& dir, const FactorSeries& factors);

// Atomic text write (temp file + rename).
void write_text_atomic(const std::string& path, const std::string& content);

std::string format_double(double v);

}  // namespace btar
