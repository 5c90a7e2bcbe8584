#include "staci/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <tuple>

#include "staci/common.hpp"

namespace staci {

namespace {

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": inputs differ in length");
  if (a == 0) throw ParameterError(std::string(what) + ": empty input");
}

void check_sd(std::span<const double> sd) {
  for (std::size_t i = 0; i < sd.size(); ++i)
    if (!(sd[i] > 0.0)) throw ParameterError("sd must be positive (index " + std::to_string(i) + ")");
}

void check_bounds(std::span<const double> lower, std::span<const double> upper) {
  for (std::size_t i = 0; i < lower.size(); ++i)
    if (lower[i] > upper[i])
      throw ParameterError("crossed interval bounds at index " + std::to_string(i));
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double rmse(std::span<const double> y, std::span<const double> yhat) {
  check_same(y.size(), yhat.size(), "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

std::string to_string(NllMode mode) { return mode == NllMode::PerPoint ? "per_point" : "pooled"; }

NllMode parse_nll_mode(const std::string& name) {
  if (name == "per_point") return NllMode::PerPoint;
  if (name == "pooled") return NllMode::Pooled;
  throw ConfigError("unknown NLL mode '" + name + "' (expected per_point or pooled)");
}

double gaussian_nll(std::span<const double> y, std::span<const double> yhat,
                    std::span<const double> sd, NllMode mode) {
  check_same(y.size(), yhat.size(), "gaussian_nll");
  check_same(y.size(), sd.size(), "gaussian_nll");
  check_sd(sd);
  const auto n = static_cast<double>(y.size());
  if (mode == NllMode::PerPoint) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double r = y[i] - yhat[i];
      s += 0.5 * std::log(sd[i] * sd[i]) + r * r / (2.0 * sd[i] * sd[i]);
    }
    return s / n;
  }
  double var = 0.0, rss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    var += sd[i] * sd[i];
    rss += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  }
  const double pooled = std::sqrt(var / n);
  return (0.5 * n * std::log(pooled) + rss / (2.0 * pooled)) / n;
}

double crps_gaussian(std::span<const double> y, std::span<const double> yhat,
                     std::span<const double> sd) {
  check_same(y.size(), yhat.size(), "crps_gaussian");
  check_same(y.size(), sd.size(), "crps_gaussian");
  check_sd(sd);
  const double inv_sqrt_pi = 1.0 / std::sqrt(M_PI);
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double z = (y[i] - yhat[i]) / sd[i];
    const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
    s += sd[i] * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - inv_sqrt_pi);
  }
  return s / static_cast<double>(y.size());
}

double interval_score(std::span<const double> y, std::span<const double> lower,
                      std::span<const double> upper, double alpha) {
  check_same(y.size(), lower.size(), "interval_score");
  check_same(y.size(), upper.size(), "interval_score");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  check_bounds(lower, upper);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s += upper[i] - lower[i];
    if (y[i] < lower[i]) s += 2.0 / alpha * (lower[i] - y[i]);
    if (y[i] > upper[i]) s += 2.0 / alpha * (y[i] - upper[i]);
  }
  return s / static_cast<double>(y.size());
}

std::pair<double, double> coverage_and_width(std::span<const double> y,
                                             std::span<const double> lower,
                                             std::span<const double> upper) {
  check_same(y.size(), lower.size(), "coverage_and_width");
  check_same(y.size(), upper.size(), "coverage_and_width");
  check_bounds(lower, upper);
  std::size_t inside = 0;
  double width = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] >= lower[i] && y[i] <= upper[i]) ++inside;
    width += upper[i] - lower[i];
  }
  const auto n = static_cast<double>(y.size());
  return {static_cast<double>(inside) / n, width / n};
}

EvalReport evaluate(std::span<const double> y, std::span<const double> mean,
                    std::span<const double> sd, std::span<const double> lower,
                    std::span<const double> upper, double alpha, NllMode mode) {
  EvalReport r;
  r.n = y.size();
  r.alpha = alpha;
  r.nll_mode = mode;
  r.rmse = rmse(y, mean);
  r.nll = gaussian_nll(y, mean, sd, mode);
  r.crps = crps_gaussian(y, mean, sd);
  r.interval_score = interval_score(y, lower, upper, alpha);
  std::tie(r.coverage, r.mean_width) = coverage_and_width(y, lower, upper);
  return r;
}

void write_report_csv_header(std::ostream& os) {
  os << "interval,n,alpha,rmse,nll,nll_mode,crps,coverage,interval_score,mean_width\n";
}

void write_report_csv_row(std::ostream& os, const EvalReport& r) {
  os << r.interval << ',' << r.n << ',' << fmt(r.alpha) << ',' << fmt(r.rmse) << ','
     << fmt(r.nll) << ',' << to_string(r.nll_mode) << ',' << fmt(r.crps) << ','
     << fmt(r.coverage) << ',' << fmt(r.interval_score) << ',' << fmt(r.mean_width) << '\n';
}

void write_report_csv(std::ostream& os, const EvalReport& report) {
  write_report_csv_header(os);
  write_report_csv_row(os, report);
}

void write_report_text(std::ostream& os, const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "interval        %s\n"
                "n               %zu\n"
                "alpha           %.4g\n"
                "rmse            %.6f\n"
                "nll (%s)%*s%.6f\n"
                "crps            %.6f\n"
                "coverage        %.4f\n"
                "interval score  %.6f\n"
                "mean width      %.6f\n",
                r.interval.c_str(), r.n, r.alpha, r.rmse, to_string(r.nll_mode).c_str(),
                static_cast<int>(10 - to_string(r.nll_mode).size()), "", r.nll, r.crps,
                r.coverage, r.interval_score, r.mean_width);
  os << buf;
}

}  // namespace staci
