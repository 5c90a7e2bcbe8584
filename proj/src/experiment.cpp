#include "staci/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "staci/training.hpp"

namespace staci {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Re-throws with the stage name prefixed, keeping the error category.
template <typename Fn>
auto staged(const char* stage, Fn&& fn) -> decltype(fn()) {
  const std::string tag = std::string(stage) + ": ";
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError(tag + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(tag + e.what());
  } catch (const IoError& e) {
    throw IoError(tag + e.what());
  } catch (const SizeError& e) {
    throw SizeError(tag + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(tag + e.what());
  } catch (const ParameterError& e) {
    throw ParameterError(tag + e.what());
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

PointSet to_model_space(std::span<const STPoint> raw, const FittedModel& fitted) {
  PointSet out;
  out.reserve(raw.size());
  for (const auto& p : raw) {
    STPoint q = fitted.scaler.apply(p);
    if (q.y) q.y = fitted.norm.apply(*q.y);
    out.push_back(q);
  }
  return out;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_or_nan(const std::string& cell, const std::string& where) {
  if (cell.empty()) return kNaN;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size())
    throw IoError(where + ": '" + cell + "' is not a number");
  return v;
}

const char* kPredictionHeader = "s1,s2,t,y_true,mean,sd,bayes_lo,bayes_hi,conf_lo,conf_hi";

}  // namespace

PointSet PreparedData::model_points(SplitTag tag) const {
  PointSet out;
  for (std::size_t i : data.indices(tag)) out.push_back(scaler.apply(data.points[i]));
  return out;
}

PointSet PreparedData::original_points(SplitTag tag) const {
  PointSet out;
  for (std::size_t i : data.indices(tag)) {
    STPoint p = data.points[i];
    if (p.y) p.y = data.norm.invert(*p.y);
    out.push_back(p);
  }
  return out;
}

PointSet PreparedData::calibration_points(const ExperimentConfig& config) const {
  return original_points(config.calibration_pool == CalibrationPoolKind::Train ? SplitTag::Train
                                                                                : SplitTag::Val);
}

PreparedData prepare_data(const ExperimentConfig& config) {
  return staged("prepare", [&] {
    PreparedData out;
    out.data = config.data_path.empty() ? simulate_dataset(config.simulation, config.seed)
                                        : load_csv(config.data_path);
    response_vector(out.data.points);
    if (config.split == SplitKind::Random) {
      split_random(out.data, config.fractions, config.seed);
    } else {
      out.skipped_times = split_per_time(out.data, config.per_time_fraction, config.val_times,
                                         config.test_times, config.seed);
    }
    if (out.data.indices(SplitTag::Test).empty()) throw ParameterError("the split left no test rows");
    normalize(out.data);
    out.scaler = CoordinateScaler::fit(out.data.points);
    return out;
  });
}

bool PredictionTable::calibrated() const {
  return !conf_lo.empty() && std::none_of(conf_lo.begin(), conf_lo.end(), [](double v) { return std::isnan(v); });
}

void write_predictions_csv(std::ostream& os, const PredictionTable& t) {
  os << kPredictionHeader << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& p = t.points[i];
    os << fmt(p.s1) << ',' << fmt(p.s2) << ',' << fmt(p.t) << ',' << (p.y ? fmt(*p.y) : "") << ','
       << fmt(t.mean[i]) << ',' << fmt(t.sd[i]) << ',' << fmt(t.bayes_lo[i]) << ','
       << fmt(t.bayes_hi[i]) << ',' << fmt(t.conf_lo[i]) << ',' << fmt(t.conf_hi[i]) << '\n';
  }
}

void write_predictions_csv(const std::string& path, const PredictionTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_predictions_csv(out, table);
  if (!out) throw IoError("failed writing '" + path + "'");
}

PredictionTable read_predictions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPredictionHeader) throw IoError(path + ": unexpected header");
  PredictionTable t;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_row(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (cells.size() != 10) throw IoError(where + ": expected 10 cells");
    std::array<double, 10> v{};
    for (int k = 0; k < 10; ++k) v[k] = parse_or_nan(cells[k], where);
    if (std::isnan(v[0]) || std::isnan(v[1]) || std::isnan(v[2]) || std::isnan(v[4]) ||
        std::isnan(v[5]))
      throw IoError(where + ": coordinates, mean and sd are required");
    STPoint p{v[0], v[1], v[2], {}};
    if (!std::isnan(v[3])) p.y = v[3];
    t.points.push_back(p);
    t.mean.push_back(v[4]);
    t.sd.push_back(v[5]);
    t.bayes_lo.push_back(v[6]);
    t.bayes_hi.push_back(v[7]);
    t.conf_lo.push_back(v[8]);
    t.conf_hi.push_back(v[9]);
  }
  return t;
}

FitOutput fit_stage(const StaciModel& model, const PreparedData& data, const ExperimentConfig& config) {
  return staged("fit", [&] {
    const PointSet train = data.model_points(SplitTag::Train);
    SVGDConfig svgd = config.svgd;
    svgd.seed = config.seed;
    FitOutput out{FittedModel{model_config_hash(model.config()), data.scaler, data.data.norm, Ensemble{}},
                  fit_model(model, train, svgd)};
    out.fitted.ensemble = out.result.ensemble;
    return out;
  });
}

PredictionTable predict_stage(const StaciModel& model, const FittedModel& fitted,
                              std::span<const STPoint> points, double alpha) {
  return staged("predict", [&] {
    const PointSet scaled = to_model_space(points, fitted);
    const PredictiveMoments m = posterior_mean_var(model, fitted.ensemble, scaled);
    PredictionTable t;
    t.points.assign(points.begin(), points.end());
    const std::size_t n = points.size();
    t.mean.resize(n);
    t.sd.resize(n);
    t.bayes_lo.resize(n);
    t.bayes_hi.resize(n);
    t.conf_lo.assign(n, kNaN);
    t.conf_hi.assign(n, kNaN);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      t.mean[i] = fitted.norm.invert(m.mean(r));
      t.sd[i] = std::sqrt(m.var(r)) * fitted.norm.sd;
      std::tie(t.bayes_lo[i], t.bayes_hi[i]) = credible_interval(t.mean[i], t.sd[i], alpha);
    }
    return t;
  });
}

std::size_t calibrate_stage(const StaciModel& model, const FittedModel& fitted,
                            std::span<const STPoint> pool_original, PredictionTable& table,
                            const ExperimentConfig& config) {
  return staged("calibrate", [&] {
    const PointSet train = to_model_space(pool_original, fitted);
    const PredictiveMoments m = posterior_mean_var(model, fitted.ensemble, train);
    const HyperValues h = posterior_mean_hypers(model, fitted.ensemble);
    const ConformalCalibrator cal(make_calibration_pool(train, m), h.rho_s, h.rho_t);

    std::vector<std::size_t> candidates;
    for (std::size_t d : config.neighbor_candidates)
      if (d + 1 <= train.size()) candidates.push_back(d);
    if (candidates.empty()) throw ParameterError("every neighbor-count candidate exceeds the calibration pool");
    const std::size_t d = cal.choose_count(candidates, config.alpha, config.seed, config.choose_holdout);

    const PointSet queries = to_model_space(table.points, fitted);
    Eigen::VectorXd mean(static_cast<Eigen::Index>(table.size())), sd(mean.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
      mean(static_cast<Eigen::Index>(i)) = fitted.norm.apply(table.mean[i]);
      sd(static_cast<Eigen::Index>(i)) = table.sd[i] / fitted.norm.sd;
    }
    const auto bands = cal.bands(queries, mean, sd, d, config.alpha);
    table.conf_lo.resize(table.size());
    table.conf_hi.resize(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
      table.conf_lo[i] = fitted.norm.invert(bands[i].lower);
      table.conf_hi[i] = fitted.norm.invert(bands[i].upper);
    }
    return d;
  });
}

EvalReport evaluate_table(const PredictionTable& t, double alpha, NllMode mode, bool conformal) {
  return staged("evaluate", [&] {
    std::vector<double> y, mean, sd, lo, hi;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!t.points[i].y) continue;
      y.push_back(*t.points[i].y);
      mean.push_back(t.mean[i]);
      sd.push_back(t.sd[i]);
      lo.push_back(conformal ? t.conf_lo[i] : t.bayes_lo[i]);
      hi.push_back(conformal ? t.conf_hi[i] : t.bayes_hi[i]);
    }
    if (y.empty()) throw ParameterError("no rows with a response to evaluate");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (std::isnan(lo[i]) || std::isnan(hi[i]))
        throw ParameterError(std::string(conformal ? "conformal" : "credible") +
                             " intervals are missing; run calibrate first");
    EvalReport r = evaluate(y, mean, sd, lo, hi, alpha, mode);
    r.interval = conformal ? "conformal" : "bayes";
    return r;
  });
}

void export_grid(std::ostream& os, const StaciModel& model, const FittedModel& fitted,
                 const ExperimentConfig& config) {
  staged("export-grid", [&] {
    const std::size_t g = config.grid_size;
    PointSet scaled;
    for (double t_raw : config.grid_times) {
      const double t = fitted.scaler.apply(STPoint{0.0, 0.0, t_raw, {}}).t;
      for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < g; ++j)
          scaled.push_back(STPoint{static_cast<double>(i) / static_cast<double>(g - 1),
                                   static_cast<double>(j) / static_cast<double>(g - 1), t, {}});
    }
    const PredictiveMoments m = posterior_mean_var(model, fitted.ensemble, scaled);
    const Eigen::MatrixXd coords = coordinate_matrix(scaled);
    const Eigen::Index p = model.latent_dim();
    Eigen::MatrixXd latent = Eigen::MatrixXd::Zero(coords.rows(), p);
    if (p > 0) {
      for (const auto& particle : fitted.ensemble.particles) latent += model.latent(particle, coords);
      latent /= static_cast<double>(fitted.ensemble.size());
    }
    os << "s1,s2,t,mean,sd";
    for (Eigen::Index k = 0; k < p; ++k) os << ",latent_" << k + 1;
    os << '\n';
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const STPoint raw = fitted.scaler.invert(scaled[i]);
      os << fmt(raw.s1) << ',' << fmt(raw.s2) << ',' << fmt(raw.t) << ','
         << fmt(fitted.norm.invert(m.mean(r))) << ',' << fmt(std::sqrt(m.var(r)) * fitted.norm.sd);
      for (Eigen::Index k = 0; k < p; ++k) os << ',' << fmt(latent(r, k));
      os << '\n';
    }
    return 0;
  });
}

ExperimentResult run_experiment(const ExperimentConfig& config, bool write_artifacts) {
  staged("config", [&] {
    config.validate();
    return 0;
  });
  const PreparedData data = prepare_data(config);
  const StaciModel model = staged("model", [&] { return StaciModel(config.model); });

  ExperimentResult out;
  FitOutput fit = fit_stage(model, data, config);
  out.fitted = std::move(fit.fitted);
  out.training = std::move(fit.result);
  out.posterior_hypers = posterior_mean_hypers(model, out.fitted.ensemble);

  const PointSet test = data.original_points(SplitTag::Test);
  out.predictions = predict_stage(model, out.fitted, test, config.alpha);
  out.neighbors = calibrate_stage(model, out.fitted, data.calibration_points(config),
                                  out.predictions, config);
  out.conformal = evaluate_table(out.predictions, config.alpha, config.nll_mode, true);
  out.bayes = evaluate_table(out.predictions, config.alpha, config.nll_mode, false);

  if (write_artifacts) {
    staged("write", [&] {
      namespace fs = std::filesystem;
      const fs::path dir(config.out_dir);
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
      save_fitted((dir / "ensemble.bin").string(), out.fitted);
      write_predictions_csv((dir / "predictions.csv").string(), out.predictions);
      auto open = [&](const char* name) {
        std::ofstream f(dir / name);
        if (!f) throw IoError("cannot open '" + (dir / name).string() + "' for writing");
        return f;
      };
      {
        auto f = open("report.csv");
        write_report_csv_header(f);
        write_report_csv_row(f, out.conformal);
        write_report_csv_row(f, out.bayes);
      }
      {
        auto f = open("report.txt");
        f << "neighbors (D)   " << out.neighbors << "\n\n";
        write_report_text(f, out.conformal);
        f << '\n';
        write_report_text(f, out.bayes);
      }
      {
        auto f = open("trace.csv");
        write_trace_csv(f, out.training);
      }
      {
        auto f = open("config.txt");
        write_config(f, config);
      }
      return 0;
    });
  }
  return out;
}

}  // namespace staci
