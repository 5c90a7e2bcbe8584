#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <utility>

namespace staci {

double rmse(std::span<const double> y, std::span<const double> yhat);

enum class NllMode {
  PerPoint,  // mean of 0.5 log sd_i^2 + r_i^2 / (2 sd_i^2)
  Pooled,    // pooled sd = sqrt(mean sd_i^2), residuals divided by 2 sd as printed
};

std::string to_string(NllMode mode);
NllMode parse_nll_mode(const std::string& name);

/// Gaussian negative log likelihood without the 2 pi constant, averaged over points.
double gaussian_nll(std::span<const double> y, std::span<const double> yhat,
                    std::span<const double> sd, NllMode mode = NllMode::PerPoint);

/// Closed-form CRPS of Gaussian forecasts, averaged over points.
double crps_gaussian(std::span<const double> y, std::span<const double> yhat,
                     std::span<const double> sd);

/// Mean of (U - L) + (2/alpha)(L - y)_+ + (2/alpha)(y - U)_+.
double interval_score(std::span<const double> y, std::span<const double> lower,
                      std::span<const double> upper, double alpha);

/// Fraction of y inside the closed intervals and the mean width.
std::pair<double, double> coverage_and_width(std::span<const double> y,
                                             std::span<const double> lower,
                                             std::span<const double> upper);

struct EvalReport {
  double rmse = 0.0;
  double nll = 0.0;
  double crps = 0.0;
  double coverage = 0.0;
  double interval_score = 0.0;
  double mean_width = 0.0;
  std::size_t n = 0;
  double alpha = 0.05;
  NllMode nll_mode = NllMode::PerPoint;
  std::string interval = "conformal";  // which interval the coverage columns describe
};

/// Point and distributional metrics from (mean, sd); interval metrics from (lower, upper).
EvalReport evaluate(std::span<const double> y, std::span<const double> mean,
                    std::span<const double> sd, std::span<const double> lower,
                    std::span<const double> upper, double alpha,
                    NllMode mode = NllMode::PerPoint);

void write_report_csv_header(std::ostream& os);
void write_report_csv_row(std::ostream& os, const EvalReport& report);
/// Header plus one row.
void write_report_csv(std::ostream& os, const EvalReport& report);
void write_report_text(std::ostream& os, const EvalReport& report);

}  // namespace staci
