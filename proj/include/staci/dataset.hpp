#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "staci/common.hpp"
#include "staci/kernels.hpp"

namespace staci {

enum class SplitTag : std::uint8_t { Train, Val, Test, Unused };

const char* to_string(SplitTag tag);

struct Normalization {
  double mean = 0.0;
  double sd = 1.0;

  double apply(double y) const { return (y - mean) / sd; }
  double invert(double z) const { return z * sd + mean; }
};

/// Per-axis min-max map of (s1, s2, t) onto [0, 1]. Degenerate axes map to 0.
struct CoordinateScaler {
  std::array<double, 3> min{0.0, 0.0, 0.0};
  std::array<double, 3> max{1.0, 1.0, 1.0};

  static CoordinateScaler fit(std::span<const STPoint> points);
  STPoint apply(const STPoint& p) const;
  STPoint invert(const STPoint& p) const;
  double span_of(int axis) const;
};

struct Dataset {
  PointSet points;
  std::vector<SplitTag> tags;  // empty until split
  bool normalized = false;
  Normalization norm;

  std::size_t size() const { return points.size(); }
  std::vector<std::size_t> indices(SplitTag tag) const;
  PointSet subset(SplitTag tag) const;
};

/// Reads a CSV with header s1,s2,t,y (columns in any order, extra columns ignored).
/// The y column may be absent; cells must be finite numbers.
Dataset load_csv(const std::string& path);
Dataset read_csv(std::istream& is, const std::string& source = "<stream>");

/// Writes s1,s2,t,y (y column only if every point has one) at full precision.
void write_csv(std::ostream& os, std::span<const STPoint> points);
void write_csv(const std::string& path, std::span<const STPoint> points);

/// Fits mean/sd on the Train rows and applies it to every row's response.
void normalize(Dataset& data);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Val and test receive floor(f n) random rows each; train gets the rest.
void split_random(Dataset& data, const SplitFractions& fractions, std::uint64_t seed);

/// Samples round(train_fraction * n_t) rows per distinct time into Train. Rows at
/// val_times / test_times become Val / Test instead. Everything else is Unused.
/// Returns the distinct times that had no rows available for training.
std::vector<double> split_per_time(Dataset& data, double train_fraction,
                                   const std::vector<double>& val_times,
                                   const std::vector<double>& test_times, std::uint64_t seed);

enum class SimulationKind { Stationary, Expanded };
enum class Layout { Uniform, Grid };

struct SimulationSpec {
  SimulationKind kind = SimulationKind::Stationary;
  std::size_t n = 2000;
  CovarianceParams params;
  /// Latent preset L(s, t) = amplitude * sin(2 pi frequency s1); expanded kind only.
  double latent_amplitude = 1.0;
  double latent_frequency = 1.0;
  Layout layout = Layout::Uniform;
  /// 0 = continuous time; otherwise t takes values k / (time_steps - 1).
  std::size_t time_steps = 0;
  std::size_t oracle_cap = kDefaultOracleCap;

  /// The latent field as a LatentFn; empty for the stationary kind.
  LatentFn latent_fn() const;
};

const char* to_string(SimulationKind kind);
SimulationKind parse_simulation_kind(const std::string& name);
const char* to_string(Layout layout);
Layout parse_layout(const std::string& name);

/// Points (uniform or gridded on [0,1]^3) with responses from the exact GP.
/// Coordinates use one seed stream and responses another, so changing only the
/// latent amplitude leaves the coordinates and the Gaussian draws unchanged.
Dataset simulate_dataset(const SimulationSpec& spec, std::uint64_t seed);

}  // namespace staci
