// Command-line front end: staci <subcommand> [options].
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "staci/config.hpp"
#include "staci/experiment.hpp"
#include "staci/rng.hpp"
#include "staci/spectral.hpp"
#include "staci/training.hpp"

namespace fs = std::filesystem;
using namespace staci;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonOptions {
  std::string config_path;
  std::optional<std::string> profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> alpha;
  std::vector<std::string> overrides;
  bool validate_only = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "key = value configuration file");
  cmd->add_option("--profile", o.profile, "base profile")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--alpha", o.alpha, "miscoverage level");
  cmd->add_option("--set", o.overrides, "extra key=value setting (repeatable)");
  cmd->add_flag("--validate-only", o.validate_only, "print the resolved configuration and exit");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    c = load_config(o.config_path, o.profile);
  } else {
    c = profile_config(o.profile.value_or("desk"));
  }
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_option(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.alpha) c.alpha = *o.alpha;
  c.validate();
  return c;
}

fs::path out_path(const ExperimentConfig& c, const char* name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

void print_report(const EvalReport& r) { write_report_text(std::cout, r); }

int run_guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal random-feature GP with SVGD and conformal intervals"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string ensemble_path, points_path, predictions_path;
  std::size_t check_features = 500, check_reps = 2000, check_lags = 20;
  double check_max_distance = 3.0;
  std::string check_form = "exact";

  auto* simulate = app.add_subcommand("simulate", "draw a synthetic dataset from the exact GP");
  auto* fit = app.add_subcommand("fit", "train an ensemble on the training split");
  auto* predict = app.add_subcommand("predict", "posterior predictive summaries");
  auto* calibrate = app.add_subcommand("calibrate", "add conformal intervals to a prediction file");
  auto* evaluate = app.add_subcommand("evaluate", "metrics of a prediction file");
  auto* check_cov = app.add_subcommand("verify-covariance",
                                     "Monte-Carlo check of the random-feature covariance and its variance");
  auto* grid = app.add_subcommand("export-grid", "predictions on a regular grid for plotting");
  auto* run = app.add_subcommand("run", "full pipeline: simulate or load, fit, predict, calibrate, evaluate");

  for (auto* cmd : {simulate, fit, predict, calibrate, evaluate, check_cov, grid, run}) add_common(cmd, opts);
  for (auto* cmd : {predict, calibrate, grid})
    cmd->add_option("--ensemble", ensemble_path, "trained ensemble (default <out>/ensemble.bin)");
  predict->add_option("--points", points_path, "CSV of query points (default: the test split)");
  for (auto* cmd : {calibrate, evaluate})
    cmd->add_option("--predictions", predictions_path, "prediction CSV (default <out>/predictions.csv)");
  check_cov->add_option("--features", check_features, "random features J");
  check_cov->add_option("--reps", check_reps, "Monte-Carlo replications");
  check_cov->add_option("--lags", check_lags, "number of lags");
  check_cov->add_option("--max-distance", check_max_distance, "largest scaled lag distance");
  check_cov->add_option("--variance-form", check_form, "closed form for the variance check")
      ->check(CLI::IsMember({"exact", "literal"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  return run_guarded([&]() -> int {
    const ExperimentConfig config = resolve(opts);
    if (opts.validate_only) {
      write_config(std::cout, config);
      return kExitOk;
    }
    auto ensemble_file = [&] {
      return ensemble_path.empty() ? (fs::path(config.out_dir) / "ensemble.bin").string() : ensemble_path;
    };
    auto predictions_file = [&] {
      return predictions_path.empty() ? (fs::path(config.out_dir) / "predictions.csv").string()
                                      : predictions_path;
    };

    if (simulate->parsed()) {
      const Dataset data = simulate_dataset(config.simulation, config.seed);
      const auto path = out_path(config, "data.csv");
      write_csv(path.string(), data.points);
      std::cout << "wrote " << data.size() << " points to " << path.string() << '\n';
      return kExitOk;
    }

    if (check_cov->parsed()) {
      CovarianceParams params = config.simulation.params;
      const auto lags = lag_grid(check_lags, check_max_distance, params, 0);
      const FeatureCovarianceReport report = verify_feature_covariance(
          lags, static_cast<Eigen::Index>(check_features), check_reps, params,
          derive_seed(config.seed, SeedStream::Verifier), config.model.df_multiplier, 0.15,
          check_form == "exact" ? VarianceForm::Exact : VarianceForm::Literal);
      const auto path = out_path(config, "covariance_check.csv");
      std::ofstream f(path);
      report.write_csv(f);
      std::cout << "features " << check_features << ", reps " << check_reps << ": mean "
                << (report.mean_ok() ? "ok" : "FAILED") << ", variance "
                << (report.var_ok() ? "ok" : "FAILED") << " (" << path.string() << ")\n";
      return report.mean_ok() && report.var_ok() ? kExitOk : kExitFailure;
    }

    const StaciModel model(config.model);

    if (run->parsed()) {
      const ExperimentResult r = run_experiment(config, true);
      std::cout << "neighbors (D)   " << r.neighbors << "\n\n";
      print_report(r.conformal);
      std::cout << '\n';
      print_report(r.bayes);
      std::cout << "\nartifacts in " << config.out_dir << '\n';
      return kExitOk;
    }

    if (fit->parsed()) {
      const PreparedData data = prepare_data(config);
      const FitOutput out = fit_stage(model, data, config);
      save_fitted(out_path(config, "ensemble.bin").string(), out.fitted);
      std::ofstream trace(out_path(config, "trace.csv"));
      write_trace_csv(trace, out.result);
      const HyperValues h = posterior_mean_hypers(model, out.fitted.ensemble);
      std::cout << "trained " << out.fitted.ensemble.size() << " particles on "
                << data.data.indices(SplitTag::Train).size() << " points\n";
      for (int k = 0; k < kHyperCount; ++k)
        std::cout << "  " << kHyperNames[static_cast<std::size_t>(k)] << " = " << h.get(static_cast<Hyper>(k)) << '\n';
      return kExitOk;
    }

    if (evaluate->parsed()) {
      const PredictionTable t = read_predictions_csv(predictions_file());
      const auto path = out_path(config, "report.csv");
      std::ofstream f(path);
      write_report_csv_header(f);
      if (t.calibrated()) {
        const EvalReport c = evaluate_table(t, config.alpha, config.nll_mode, true);
        write_report_csv_row(f, c);
        print_report(c);
        std::cout << '\n';
      }
      const EvalReport b = evaluate_table(t, config.alpha, config.nll_mode, false);
      write_report_csv_row(f, b);
      print_report(b);
      return kExitOk;
    }

    const FittedModel fitted = load_fitted(ensemble_file(), model_config_hash(config.model));

    if (predict->parsed()) {
      PointSet points;
      if (points_path.empty()) {
        points = prepare_data(config).original_points(SplitTag::Test);
      } else {
        points = load_csv(points_path).points;
      }
      const PredictionTable t = predict_stage(model, fitted, points, config.alpha);
      const auto path = predictions_path.empty() ? out_path(config, "predictions.csv") : fs::path(predictions_path);
      write_predictions_csv(path.string(), t);
      std::cout << "wrote " << t.size() << " predictions to " << path.string() << '\n';
      return kExitOk;
    }

    if (calibrate->parsed()) {
      PredictionTable t = read_predictions_csv(predictions_file());
      const PointSet pool = prepare_data(config).calibration_points(config);
      const std::size_t d = calibrate_stage(model, fitted, pool, t, config);
      write_predictions_csv(predictions_file(), t);
      std::cout << "calibrated " << t.size() << " rows with D = " << d << '\n';
      return kExitOk;
    }

    if (grid->parsed()) {
      const auto path = out_path(config, "grid.csv");
      std::ofstream f(path);
      export_grid(f, model, fitted, config);
      std::cout << "wrote " << path.string() << '\n';
      return kExitOk;
    }
    return kExitFailure;
  });
}
