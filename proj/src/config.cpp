#include "staci/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

namespace staci {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key + ": '" + v + "' is not a finite number");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + ": '" + v + "' is not a nonnegative integer");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  const std::uint64_t u = to_u64(key, v);
  if (u > 1u << 30) throw ConfigError(key + ": value too large");
  return static_cast<int>(u);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

template <typename T, typename Parse>
std::vector<T> to_list(const std::string& key, const std::string& v, Parse parse) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse(key, trim(item)));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) s += fmt(v[i]);
    else s += std::to_string(v[i]);
  }
  return s;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

struct Option {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define STACI_DOUBLE(name, field)                                                          \
  Option {                                                                                 \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = to_double(name, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.field); }                             \
  }
#define STACI_INT(name, field)                                                          \
  Option {                                                                              \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = to_int(name, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }               \
  }
#define STACI_SIZE(name, field)                                                         \
  Option {                                                                              \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = to_u64(name, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }               \
  }
#define STACI_BOOL(name, field)                                                          \
  Option {                                                                               \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = to_bool(name, v); }, \
        [](const ExperimentConfig& c) { return bool_str(c.field); }                      \
  }

const std::vector<Option>& options() {
  static const std::vector<Option> table = {
      Option{"profile", [](ExperimentConfig& c, const std::string& v) { c.profile = v; },
             [](const ExperimentConfig& c) { return c.profile; }},
      STACI_SIZE("seed", seed),
      Option{"out_dir", [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
             [](const ExperimentConfig& c) { return c.out_dir; }},
      Option{"data.path", [](ExperimentConfig& c, const std::string& v) { c.data_path = v; },
             [](const ExperimentConfig& c) { return c.data_path; }},

      Option{"sim.kind",
             [](ExperimentConfig& c, const std::string& v) { c.simulation.kind = parse_simulation_kind(v); },
             [](const ExperimentConfig& c) { return std::string(to_string(c.simulation.kind)); }},
      STACI_SIZE("sim.n", simulation.n),
      STACI_DOUBLE("sim.sigma2", simulation.params.sigma2),
      STACI_DOUBLE("sim.tau2", simulation.params.tau2),
      STACI_DOUBLE("sim.nu", simulation.params.nu),
      STACI_DOUBLE("sim.rho_s", simulation.params.rho_s),
      STACI_DOUBLE("sim.rho_t", simulation.params.rho_t),
      STACI_DOUBLE("sim.rho_l", simulation.params.rho_l),
      STACI_DOUBLE("sim.latent_amplitude", simulation.latent_amplitude),
      STACI_DOUBLE("sim.latent_frequency", simulation.latent_frequency),
      Option{"sim.layout",
             [](ExperimentConfig& c, const std::string& v) { c.simulation.layout = parse_layout(v); },
             [](const ExperimentConfig& c) { return std::string(to_string(c.simulation.layout)); }},
      STACI_SIZE("sim.time_steps", simulation.time_steps),

      Option{"split.kind",
             [](ExperimentConfig& c, const std::string& v) {
               if (v == "random") c.split = SplitKind::Random;
               else if (v == "per_time") c.split = SplitKind::PerTime;
               else throw ConfigError("split.kind: expected random or per_time, got '" + v + "'");
             },
             [](const ExperimentConfig& c) {
               return std::string(c.split == SplitKind::Random ? "random" : "per_time");
             }},
      STACI_DOUBLE("split.train", fractions.train),
      STACI_DOUBLE("split.val", fractions.val),
      STACI_DOUBLE("split.test", fractions.test),
      STACI_DOUBLE("split.per_time_fraction", per_time_fraction),
      Option{"split.val_times",
             [](ExperimentConfig& c, const std::string& v) { c.val_times = to_list<double>("split.val_times", v, to_double); },
             [](const ExperimentConfig& c) { return join(c.val_times); }},
      Option{"split.test_times",
             [](ExperimentConfig& c, const std::string& v) { c.test_times = to_list<double>("split.test_times", v, to_double); },
             [](const ExperimentConfig& c) { return join(c.test_times); }},

      Option{"inr.backbone",
             [](ExperimentConfig& c, const std::string& v) {
               try {
                 c.model.inr.backbone = parse_backbone(v);
               } catch (const Error& e) {
                 throw ConfigError(std::string("inr.backbone: ") + e.what());
               }
             },
             [](const ExperimentConfig& c) { return to_string(c.model.inr.backbone); }},
      STACI_INT("inr.layers", model.inr.layers),
      STACI_INT("inr.width", model.inr.width),
      STACI_INT("inr.latent_dim", model.inr.latent_dim),
      STACI_DOUBLE("inr.ffnp_freq_constant", model.inr.ffnp_freq_constant),
      STACI_INT("inr.ffnp_freq_count", model.inr.ffnp_freq_count),
      STACI_DOUBLE("inr.ffng_sigma", model.inr.ffng_sigma),
      STACI_INT("inr.ffng_encode_size", model.inr.ffng_encode_size),

      STACI_INT("model.features", model.num_features),
      STACI_DOUBLE("model.df_multiplier", model.df_multiplier),
      STACI_BOOL("model.train_frequencies", model.train_frequencies),
      STACI_BOOL("model.train_hypers", model.train_hypers),

      STACI_DOUBLE("init.alpha", model.init.alpha),
      STACI_DOUBLE("init.nu", model.init.nu),
      STACI_DOUBLE("init.rho_s", model.init.rho_s),
      STACI_DOUBLE("init.rho_t", model.init.rho_t),
      STACI_DOUBLE("init.rho_l", model.init.rho_l),
      STACI_DOUBLE("init.sigma2", model.init.sigma2),
      STACI_DOUBLE("init.tau2", model.init.tau2),

      STACI_DOUBLE("prior.alpha_shape", model.priors.alpha_shape),
      STACI_DOUBLE("prior.alpha_scale", model.priors.alpha_scale),
      STACI_DOUBLE("prior.log_nu_mean", model.priors.log_nu_mean),
      STACI_DOUBLE("prior.log_nu_var", model.priors.log_nu_var),
      STACI_DOUBLE("prior.log_rho_s_mean", model.priors.log_rho_s_mean),
      STACI_DOUBLE("prior.log_rho_s_var", model.priors.log_rho_s_var),
      STACI_DOUBLE("prior.log_rho_t_mean", model.priors.log_rho_t_mean),
      STACI_DOUBLE("prior.log_rho_t_var", model.priors.log_rho_t_var),
      STACI_DOUBLE("prior.log_rho_l_mean", model.priors.log_rho_l_mean),
      STACI_DOUBLE("prior.log_rho_l_var", model.priors.log_rho_l_var),
      STACI_DOUBLE("prior.sigma2_shape", model.priors.sigma2_shape),
      STACI_DOUBLE("prior.sigma2_scale", model.priors.sigma2_scale),
      STACI_DOUBLE("prior.tau2_shape", model.priors.tau2_shape),
      STACI_DOUBLE("prior.tau2_scale", model.priors.tau2_scale),

      STACI_SIZE("svgd.particles", svgd.particles),
      STACI_DOUBLE("svgd.step_size", svgd.step_size),
      STACI_SIZE("svgd.epochs", svgd.epochs),
      STACI_SIZE("svgd.batch_size", svgd.batch_size),
      Option{"svgd.bandwidth",
             [](ExperimentConfig& c, const std::string& v) {
               c.svgd.bandwidth = v == "median" ? Bandwidth::median()
                                                : Bandwidth::fixed(to_double("svgd.bandwidth", v));
             },
             [](const ExperimentConfig& c) {
               return c.svgd.bandwidth.kind == Bandwidth::Kind::Median ? std::string("median")
                                                                       : fmt(c.svgd.bandwidth.fixed_h2);
             }},
      Option{"svgd.optimizer",
             [](ExperimentConfig& c, const std::string& v) {
               if (v == "adam") c.svgd.optimizer = OptimizerKind::Adam;
               else if (v == "plain") c.svgd.optimizer = OptimizerKind::Plain;
               else throw ConfigError("svgd.optimizer: expected adam or plain, got '" + v + "'");
             },
             [](const ExperimentConfig& c) {
               return std::string(c.svgd.optimizer == OptimizerKind::Adam ? "adam" : "plain");
             }},
      STACI_DOUBLE("svgd.beta1", svgd.beta1),
      STACI_DOUBLE("svgd.beta2", svgd.beta2),
      STACI_DOUBLE("svgd.epsilon", svgd.epsilon),

      Option{"conformal.candidates",
             [](ExperimentConfig& c, const std::string& v) {
               c.neighbor_candidates = to_list<std::size_t>("conformal.candidates", v, to_u64);
             },
             [](const ExperimentConfig& c) { return join(c.neighbor_candidates); }},
      STACI_SIZE("conformal.holdout", choose_holdout),
      Option{"conformal.pool",
             [](ExperimentConfig& c, const std::string& v) {
               if (v == "train") c.calibration_pool = CalibrationPoolKind::Train;
               else if (v == "val") c.calibration_pool = CalibrationPoolKind::Val;
               else throw ConfigError("conformal.pool: expected train or val, got '" + v + "'");
             },
             [](const ExperimentConfig& c) {
               return std::string(c.calibration_pool == CalibrationPoolKind::Train ? "train" : "val");
             }},
      STACI_DOUBLE("alpha", alpha),
      Option{"metrics.nll_mode",
             [](ExperimentConfig& c, const std::string& v) { c.nll_mode = parse_nll_mode(v); },
             [](const ExperimentConfig& c) { return to_string(c.nll_mode); }},
      STACI_SIZE("grid.size", grid_size),
      Option{"grid.times",
             [](ExperimentConfig& c, const std::string& v) { c.grid_times = to_list<double>("grid.times", v, to_double); },
             [](const ExperimentConfig& c) { return join(c.grid_times); }},
  };
  return table;
}

#undef STACI_DOUBLE
#undef STACI_INT
#undef STACI_SIZE
#undef STACI_BOOL

}  // namespace

void ExperimentConfig::validate() const {
  try {
    model.validate();
    svgd.validate();
    simulation.params.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (neighbor_candidates.empty()) throw ConfigError("conformal.candidates must not be empty");
  for (std::size_t d : neighbor_candidates)
    if (d == 0) throw ConfigError("conformal.candidates must be >= 1");
  if (choose_holdout == 0) throw ConfigError("conformal.holdout must be >= 1");
  if (data_path.empty() && simulation.n == 0) throw ConfigError("sim.n must be >= 1");
  if (split == SplitKind::Random) {
    if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
        std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9)
      throw ConfigError("split fractions must be nonnegative and sum to 1");
    if (fractions.test <= 0.0) throw ConfigError("split.test must be positive");
    if (calibration_pool == CalibrationPoolKind::Val && fractions.val <= 0.0)
      throw ConfigError("conformal.pool = val needs split.val > 0");
  } else {
    if (!(per_time_fraction > 0.0 && per_time_fraction <= 1.0))
      throw ConfigError("split.per_time_fraction must lie in (0, 1]");
    if (test_times.empty()) throw ConfigError("per-time split needs split.test_times");
  }
  if (grid_size < 2) throw ConfigError("grid.size must be >= 2");
}

ExperimentConfig desk_profile() {
  ExperimentConfig c;
  c.profile = "desk";
  return c;
}

ExperimentConfig full_profile() {
  ExperimentConfig c;
  c.profile = "full";
  c.model.inr.layers = 5;
  c.model.inr.width = 1024;
  c.model.inr.latent_dim = 128;
  c.model.inr.ffnp_freq_constant = 30.0;
  c.model.inr.ffnp_freq_count = 1024;
  c.model.inr.ffng_encode_size = 1024;
  c.model.num_features = 5000;
  c.svgd.particles = 10;
  c.svgd.step_size = 1e-5;
  c.svgd.epochs = 15;
  c.svgd.batch_size = 1024;
  c.calibration_pool = CalibrationPoolKind::Train;
  return c;
}

ExperimentConfig profile_config(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "full") return full_profile();
  throw ConfigError("unknown profile '" + name + "' (expected desk or full)");
}

void set_option(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const auto& opt : options()) {
    if (key == opt.key) {
      try {
        opt.set(config, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(key + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

ExperimentConfig parse_config(std::istream& is, const std::optional<std::string>& profile_override,
                              const std::string& source) {
  std::vector<std::tuple<std::string, std::string, std::size_t>> entries;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::string> profile = profile_override;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "profile") {
      if (!profile_override) profile = value;
      continue;
    }
    entries.emplace_back(std::move(key), std::move(value), line_no);
  }
  ExperimentConfig config = profile_config(profile.value_or("desk"));
  for (const auto& [key, value, ln] : entries) {
    try {
      set_option(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(ln) + ": " + e.what());
    }
  }
  return config;
}

ExperimentConfig load_config(const std::string& path,
                             const std::optional<std::string>& profile_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, profile_override, path);
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& opt : options()) out.emplace_back(opt.key, opt.get(config));
  return out;
}

void write_config(std::ostream& os, const ExperimentConfig& config) {
  for (const auto& [k, v] : config_entries(config)) os << k << " = " << v << '\n';
}

std::uint64_t model_config_hash(const ModelConfig& model) {
  ExperimentConfig c;
  c.model = model;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [k, v] : config_entries(c)) {
    if (k.rfind("inr.", 0) == 0 || k.rfind("model.", 0) == 0 || k.rfind("prior.", 0) == 0 ||
        k.rfind("init.", 0) == 0) {
      feed(k);
      feed("=");
      feed(v);
      feed("\n");
    }
  }
  return h;
}

}  // namespace staci
