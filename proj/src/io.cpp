#include "btar/io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace btar {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
  }
  fs::rename(tmp, target);
}

AxisLabels default_labels(const std::array<int, 3>& dims) {
  AxisLabels labels;
  for (int m = 0; m < 3; ++m)
    for (int i = 1; i <= dims[m]; ++i) labels[m].push_back(std::to_string(i));
  return labels;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void write_tensor_series(const std::string& path, const TensorSeries& series,
                         const AxisLabels& labels) {
  std::ostringstream os;
  os << "# dims=" << series.dims[0] << ',' << series.dims[1] << ',' << series.dims[2]
     << " T=" << series.y.size() << '\n';
  for (int m = 0; m < 3; ++m) {
    os << "# labels" << (m + 1) << '=';
    for (std::size_t i = 0; i < labels[m].size(); ++i) os << (i ? "," : "") << labels[m][i];
    os << '\n';
  }
  os << "t,i1,i2,i3,value\n";
  for (std::size_t t = 0; t < series.y.size(); ++t)
    for (int k3 = 1; k3 <= series.dims[2]; ++k3)
      for (int k2 = 1; k2 <= series.dims[1]; ++k2)
        for (int k1 = 1; k1 <= series.dims[0]; ++k1)
          os << (t + 1) << ',' << k1 << ',' << k2 << ',' << k3 << ','
             << format_double(series.y[t].at({k1, k2, k3})) << '\n';
  write_text_atomic(path, os.str());
}

TensorSeriesFile read_tensor_series(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");

  std::array<int, 3> dims{};
  std::size_t n_time = 0;
  {
    int got = std::sscanf(line.c_str(), "# dims=%d,%d,%d T=%zu", &dims[0], &dims[1], &dims[2],
                          &n_time);
    if (got != 4) throw std::runtime_error(path + ": malformed header line: " + line);
    for (int d : dims)
      if (d < 1) throw std::runtime_error(path + ": non-positive dimension in header");
    if (n_time < 1) throw std::runtime_error(path + ": non-positive T in header");
  }

  TensorSeriesFile out;
  out.series.dims = dims;
  out.labels = default_labels(dims);

  const Eigen::Index cells = static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2];
  out.series.y.assign(n_time, DenseTensor({dims[0], dims[1], dims[2]}));
  std::vector<char> seen(n_time * cells, 0);

  while (std::getline(is, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      for (int m = 0; m < 3; ++m) {
        const std::string prefix = "# labels" + std::to_string(m + 1) + "=";
        if (line.rfind(prefix, 0) == 0) {
          auto parts = split(trim(line.substr(prefix.size())), ',');
          if (static_cast<int>(parts.size()) != dims[m])
            throw std::runtime_error(path + ": labels" + std::to_string(m + 1) +
                                     " count does not match dims");
          out.labels[m] = parts;
        }
      }
      continue;
    }
    if (t.rfind("t,", 0) == 0) continue;  // column header

    int tt, i1, i2, i3;
    double v;
    if (std::sscanf(t.c_str(), "%d,%d,%d,%d,%lf", &tt, &i1, &i2, &i3, &v) != 5)
      throw std::runtime_error(path + ": malformed row: " + t);
    if (tt < 1 || tt > static_cast<int>(n_time) || i1 < 1 || i1 > dims[0] || i2 < 1 ||
        i2 > dims[1] || i3 < 1 || i3 > dims[2])
      throw std::runtime_error(path + ": index out of range in row: " + t);
    const Eigen::Index cell = out.series.y[0].linear_index({i1, i2, i3});
    char& flag = seen[(tt - 1) * cells + cell];
    if (flag)
      throw std::runtime_error(path + ": duplicate cell (t,i1,i2,i3)=(" + std::to_string(tt) +
                               "," + std::to_string(i1) + "," + std::to_string(i2) + "," +
                               std::to_string(i3) + ")");
    flag = 1;
    out.series.y[tt - 1].at({i1, i2, i3}) = v;
  }

  std::vector<std::string> missing;
  for (std::size_t t = 0; t < n_time && missing.size() < 10; ++t)
    for (int k3 = 1; k3 <= dims[2] && missing.size() < 10; ++k3)
      for (int k2 = 1; k2 <= dims[1] && missing.size() < 10; ++k2)
        for (int k1 = 1; k1 <= dims[0] && missing.size() < 10; ++k1) {
          const Eigen::Index cell = out.series.y[0].linear_index({k1, k2, k3});
          if (!seen[t * cells + cell])
            missing.push_back("(" + std::to_string(t + 1) + "," + std::to_string(k1) + "," +
                              std::to_string(k2) + "," + std::to_string(k3) + ")");
        }
  if (!missing.empty()) {
    std::string msg = path + ": missing cells (t,i1,i2,i3):";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  return out;
}

PreprocessResult preprocess(const TensorSeries& input, const PreprocessSpec& spec) {
  if (spec.ma_window < 1 || spec.yoy_lag < 0)
    throw std::invalid_argument("preprocess: invalid window or lag");
  const int n = static_cast<int>(input.y.size());
  const int n_out = n - (spec.ma_window - 1) - spec.yoy_lag;
  if (n_out < 1)
    throw std::invalid_argument("preprocess: series too short for the requested window and lag");
  const Eigen::Index cells = input.cells();

  Matrix x(cells, n);
  for (int t = 0; t < n; ++t) x.col(t) = input.y[t].vec();

  // Trailing moving average: output index t covers inputs [t, t + w - 1].
  const int n_ma = n - (spec.ma_window - 1);
  Matrix ma(cells, n_ma);
  for (int t = 0; t < n_ma; ++t) {
    ma.col(t) = x.col(t);
    for (int k = 1; k < spec.ma_window; ++k) ma.col(t) += x.col(t + k);
    ma.col(t) /= spec.ma_window;
  }

  // Relative change at the seasonal lag.
  PreprocessResult out;
  Matrix ch(cells, n_out);
  for (int t = 0; t < n_out; ++t) {
    for (Eigen::Index c = 0; c < cells; ++c) {
      const double den = ma(c, t);
      const double num = ma(c, t + spec.yoy_lag) - den;
      if (std::abs(den) < 1e-12) {
        ch(c, t) = 0.0;
        ++out.zero_denominators;
      } else {
        ch(c, t) = num / den;
      }
    }
  }

  if (spec.standardize) {
    for (Eigen::Index c = 0; c < cells; ++c) {
      const double mean = ch.row(c).mean();
      ch.row(c).array() -= mean;
      if (n_out > 1) {
        const double sd = std::sqrt(ch.row(c).squaredNorm() / (n_out - 1));
        if (sd > 0.0) ch.row(c) /= sd;
      }
    }
  }

  out.series.dims = input.dims;
  const std::vector<int> shape{input.dims[0], input.dims[1], input.dims[2]};
  for (int t = 0; t < n_out; ++t) out.series.y.emplace_back(shape, Vector(ch.col(t)));
  return out;
}

FactorSeries extract_factors(const TensorSeries& data, const TuckerFactors& identified,
                             const InterceptTrend& intercept) {
  validate(identified);
  const auto fdims = identified.dims();
  if (fdims[0] != data.dims[0] || fdims[1] != data.dims[1] || fdims[2] != data.dims[2])
    throw std::invalid_argument("extract_factors: loading dims do not match the data");
  const auto r = identified.ranks();
  const int T = data.T();
  if (T < 1) throw std::invalid_argument("extract_factors: need at least two observations");

  const Matrix& b1 = identified.factors[0];
  const Matrix& b2 = identified.factors[1];
  const Matrix& b3 = identified.factors[2];
  const Matrix& b4 = identified.factors[3];
  const Matrix& b5 = identified.factors[4];
  const Matrix& b6 = identified.factors[5];
  const Matrix k32 = kron(b3, b2);
  const Matrix k65 = kron(b6, b5);

  FactorSeries out;
  out.response.resize(T, static_cast<Eigen::Index>(r[0]) * r[1] * r[2]);
  out.predictor.resize(T, static_cast<Eigen::Index>(r[3]) * r[4] * r[5]);
  for (int t = 1; t <= T; ++t) {
    const DenseTensor centered = data.y[t] - intercept_at(intercept, t);
    const Matrix resp = b1.transpose() * unfold(centered, 1) * k32;
    out.response.row(t - 1) = Eigen::Map<const Vector>(resp.data(), resp.size()).transpose();
    const Matrix pred = b4.transpose() * unfold(data.y[t - 1], 1) * k65;
    out.predictor.row(t - 1) = Eigen::Map<const Vector>(pred.data(), pred.size()).transpose();
  }

  auto standardize = [T](Matrix& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m.col(c).array() -= m.col(c).mean();
      if (T > 1) {
        const double sd = std::sqrt(m.col(c).squaredNorm() / (T - 1));
        if (sd > 0.0) m.col(c) /= sd;
      }
    }
  };
  standardize(out.response);
  standardize(out.predictor);

  for (int r3 = 1; r3 <= r[2]; ++r3)
    for (int r2 = 1; r2 <= r[1]; ++r2)
      for (int r1 = 1; r1 <= r[0]; ++r1)
        out.response_labels.push_back("resp_" + std::to_string(r1) + "_" + std::to_string(r2) +
                                      "_" + std::to_string(r3));
  for (int r6 = 1; r6 <= r[5]; ++r6)
    for (int r5 = 1; r5 <= r[4]; ++r5)
      for (int r4 = 1; r4 <= r[3]; ++r4)
        out.predictor_labels.push_back("pred_" + std::to_string(r4) + "_" + std::to_string(r5) +
                                       "_" + std::to_string(r6));

  out.proj_mode3 = projection_matrix(b3);
  out.proj_mode6 = projection_matrix(b6);
  return out;
}

Vector align_sign(const Vector& factor, const Vector& reference) {
  if (factor.size() != reference.size())
    throw std::invalid_argument("align_sign: length mismatch");
  const double plus = (factor - reference).norm();
  const double minus = (-factor - reference).norm();
  return minus < plus ? Vector(-factor) : factor;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  RunConfig rc;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty key");
    rc.values[key] = trim(t.substr(eq + 1));
  }
  return rc;
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
  const auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

void RunConfig::require_known(const std::vector<std::string>& known) const {
  for (const auto& [k, v] : values)
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::invalid_argument("unknown config key '" + k + "'");
}

void write_identified(const std::string& path, const IdentifiedModel& model) {
  const auto d = model.factors.dims();
  const auto r = model.factors.ranks();
  std::ostringstream os;
  os << "# dims=" << d[0] << ',' << d[1] << ',' << d[2] << " ranks=";
  for (int i = 0; i < 6; ++i) os << (i ? "," : "") << r[i];
  os << " trend=" << (model.intercept.has_trend ? 1 : 0) << '\n';
  os << "block,idx1,idx2,idx3,idx4,idx5,idx6,value\n";
  for (int i = 0; i < 6; ++i) {
    const Matrix& b = model.factors.factors[i];
    for (Eigen::Index row = 0; row < b.rows(); ++row)
      for (Eigen::Index col = 0; col < b.cols(); ++col)
        os << 'B' << (i + 1) << ',' << (row + 1) << ',' << (col + 1) << ",,,,,"
           << format_double(b(row, col)) << '\n';
  }
  {
    const DenseTensor& core = model.factors.core;
    std::vector<int> idx(6, 1);
    for (Eigen::Index p = 0; p < core.size(); ++p) {
      os << "core";
      for (int k = 0; k < 6; ++k) os << ',' << idx[k];
      os << ',' << format_double(core.vec()[p]) << '\n';
      for (int k = 0; k < 6; ++k) {
        if (++idx[k] <= core.shape()[k]) break;
        idx[k] = 1;
      }
    }
  }
  auto dump3 = [&](const char* tag, const DenseTensor& a) {
    std::vector<int> idx(3, 1);
    for (Eigen::Index p = 0; p < a.size(); ++p) {
      os << tag << ',' << idx[0] << ',' << idx[1] << ',' << idx[2] << ",,,,"
         << format_double(a.vec()[p]) << '\n';
      for (int k = 0; k < 3; ++k) {
        if (++idx[k] <= a.shape()[k]) break;
        idx[k] = 1;
      }
    }
  };
  dump3("A0", model.intercept.a0);
  if (model.intercept.has_trend) dump3("A1", model.intercept.a1);
  write_text_atomic(path, os.str());
}

IdentifiedModel read_identified(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");
  std::array<int, 3> d{};
  std::array<int, 6> r{};
  int trend = 0;
  if (std::sscanf(line.c_str(), "# dims=%d,%d,%d ranks=%d,%d,%d,%d,%d,%d trend=%d", &d[0], &d[1],
                  &d[2], &r[0], &r[1], &r[2], &r[3], &r[4], &r[5], &trend) != 10)
    throw std::runtime_error(path + ": malformed header");

  IdentifiedModel out;
  out.factors.core = DenseTensor(std::vector<int>(r.begin(), r.end()));
  for (int i = 0; i < 6; ++i) out.factors.factors[i] = Matrix::Zero(d[i % 3], r[i]);
  out.intercept.a0 = DenseTensor({d[0], d[1], d[2]});
  out.intercept.a1 = DenseTensor({d[0], d[1], d[2]});
  out.intercept.has_trend = trend != 0;

  while (std::getline(is, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t.rfind("block,", 0) == 0) continue;
    const auto parts = split(t, ',');
    if (parts.size() != 8) throw std::runtime_error(path + ": malformed row: " + t);
    const std::string& tag = parts[0];
    const double v = std::stod(parts[7]);
    if (tag.size() == 2 && tag[0] == 'B') {
      const int i = tag[1] - '1';
      out.factors.factors[i](std::stoi(parts[1]) - 1, std::stoi(parts[2]) - 1) = v;
    } else if (tag == "core") {
      std::vector<int> idx(6);
      for (int k = 0; k < 6; ++k) idx[k] = std::stoi(parts[1 + k]);
      out.factors.core.at(idx) = v;
    } else if (tag == "A0") {
      out.intercept.a0.at({std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3])}) = v;
    } else if (tag == "A1") {
      out.intercept.a1.at({std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3])}) = v;
    } else {
      throw std::runtime_error(path + ": unknown block tag: " + tag);
    }
  }
  return out;
}

namespace {

// Type-7 quantile (linear interpolation between order statistics).
double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double w = pos - lo;
  return (1.0 - w) * v[lo] + w * v[hi];
}

}  // namespace

void write_fit_outputs(const std::string& dir, const PosteriorDraws& draws,
                       const IdentifiedModel& identified) {
  if (draws.count() == 0) throw std::invalid_argument("write_fit_outputs: no draws");
  const int n = draws.count();
  fs::create_directories(dir);

  // Coefficient summary, processed in entry chunks to bound memory.
  {
    const auto& d = draws.dims;
    const Eigen::Index I = static_cast<Eigen::Index>(d[0]) * d[1] * d[2];
    const Eigen::Index total = I * I;
    const Eigen::Index chunk = std::max<Eigen::Index>(1, 4000000 / n);
    std::ostringstream os;
    os << "i1,i2,i3,j1,j2,j3,mean,q05,q50,q95\n";
    const std::array<int, 6> shape6{d[0], d[1], d[2], d[0], d[1], d[2]};
    std::vector<double> buf;
    for (Eigen::Index start = 0; start < total; start += chunk) {
      const Eigen::Index len = std::min(chunk, total - start);
      Matrix block(len, n);
      for (int k = 0; k < n; ++k) {
        const DenseTensor coeff = tucker_reconstruct(draws.factors[k]);
        block.col(k) = coeff.vec().segment(start, len);
      }
      for (Eigen::Index off = 0; off < len; ++off) {
        Eigen::Index p = start + off;
        int idx[6];
        for (int k = 0; k < 6; ++k) {
          idx[k] = static_cast<int>(p % shape6[k]) + 1;
          p /= shape6[k];
        }
        buf.assign(block.row(off).begin(), block.row(off).end());
        os << idx[0] << ',' << idx[1] << ',' << idx[2] << ',' << idx[3] << ',' << idx[4] << ','
           << idx[5] << ',' << format_double(block.row(off).mean()) << ','
           << format_double(quantile(buf, 0.05)) << ',' << format_double(quantile(buf, 0.50))
           << ',' << format_double(quantile(buf, 0.95)) << '\n';
      }
    }
    write_text_atomic(dir + "/coeff_summary.csv", os.str());
  }

  // Covariance factor summary.
  {
    std::ostringstream os;
    os << "block,row,col,mean,q05,q50,q95\n";
    std::vector<double> buf(n);
    for (int b = 1; b <= 3; ++b) {
      const Matrix& first =
          (b == 1) ? draws.cov[0].s1 : (b == 2) ? draws.cov[0].s2 : draws.cov[0].s3;
      for (Eigen::Index i = 0; i < first.rows(); ++i)
        for (Eigen::Index j = 0; j < first.cols(); ++j) {
          double mean = 0;
          for (int k = 0; k < n; ++k) {
            const Matrix& m =
                (b == 1) ? draws.cov[k].s1 : (b == 2) ? draws.cov[k].s2 : draws.cov[k].s3;
            buf[k] = m(i, j);
            mean += m(i, j);
          }
          os << b << ',' << (i + 1) << ',' << (j + 1) << ',' << format_double(mean / n) << ','
             << format_double(quantile(buf, 0.05)) << ',' << format_double(quantile(buf, 0.50))
             << ',' << format_double(quantile(buf, 0.95)) << '\n';
        }
    }
    write_text_atomic(dir + "/sigma_summary.csv", os.str());
  }

  // Volatility path on the standard-deviation scale exp(h_t/2) = sqrt(omega_t).
  {
    std::ostringstream os;
    os << "t,mean,q05,q50,q95\n";
    const Eigen::Index T = draws.omega[0].size();
    std::vector<double> buf(n);
    for (Eigen::Index t = 0; t < T; ++t) {
      double mean = 0;
      for (int k = 0; k < n; ++k) {
        buf[k] = std::sqrt(draws.omega[k][t]);
        mean += buf[k];
      }
      os << (t + 1) << ',' << format_double(mean / n) << ',' << format_double(quantile(buf, 0.05))
         << ',' << format_double(quantile(buf, 0.50)) << ',' << format_double(quantile(buf, 0.95))
         << '\n';
    }
    write_text_atomic(dir + "/volatility_summary.csv", os.str());
  }

  {
    std::ostringstream os;
    os << "draw,loglik\n";
    for (int k = 0; k < n; ++k) os << (k + 1) << ',' << format_double(draws.loglik[k]) << '\n';
    write_text_atomic(dir + "/loglik.csv", os.str());
  }

  {
    std::ostringstream os;
    os << "mode,tau_mean,alpha_mean\n";
    for (int i = 0; i < 6; ++i) {
      double tmean = 0, amean = 0;
      for (int k = 0; k < n; ++k) {
        tmean += draws.tau[k][i];
        amean += draws.alpha[k][i];
      }
      os << (i + 1) << ',' << format_double(tmean / n) << ',' << format_double(amean / n) << '\n';
    }
    write_text_atomic(dir + "/shrinkage_summary.csv", os.str());
  }

  write_identified(dir + "/identified.csv", identified);
}

void write_draws_binary(const std::string& path, const PosteriorDraws& draws) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "BTAR-DRAWS v1\n";
  const std::int64_t n = draws.count();
  const auto& d = draws.dims;
  const Eigen::Index I = static_cast<Eigen::Index>(d[0]) * d[1] * d[2];
  const std::int64_t p = static_cast<std::int64_t>(I) * I;
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(&p), sizeof p);
  for (int k = 0; k < n; ++k) {
    const DenseTensor coeff = tucker_reconstruct(draws.factors[k]);
    os.write(reinterpret_cast<const char*>(coeff.vec().data()),
             static_cast<std::streamsize>(sizeof(double) * coeff.size()));
  }
}

void write_factor_outputs(const std::string& dir, const FactorSeries& factors) {
  fs::create_directories(dir);
  auto dump = [&](const std::string& name, const Matrix& m,
                  const std::vector<std::string>& labels) {
    std::ostringstream os;
    os << "t";
    for (const auto& l : labels) os << ',' << l;
    os << '\n';
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      os << (t + 1);
      for (Eigen::Index c = 0; c < m.cols(); ++c) os << ',' << format_double(m(t, c));
      os << '\n';
    }
    write_text_atomic(dir + "/" + name, os.str());
  };
  dump("factors_response.csv", factors.response, factors.response_labels);
  dump("factors_predictor.csv", factors.predictor, factors.predictor_labels);

  auto dump_proj = [&](const std::string& name, const Matrix& p) {
    std::ostringstream os;
    os << "row,col,value\n";
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = 0; j < p.cols(); ++j)
        os << (i + 1) << ',' << (j + 1) << ',' << format_double(p(i, j)) << '\n';
    write_text_atomic(dir + "/" + name, os.str());
  };
  dump_proj("projection_mode3.csv", factors.proj_mode3);
  dump_proj("projection_mode6.csv", factors.proj_mode6);
}

}  // namespace btar
