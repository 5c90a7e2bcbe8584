#include "staci/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "staci/rng.hpp"

namespace staci {

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Test: return "test";
    case SplitTag::Unused: return "unused";
  }
  return "?";
}

CoordinateScaler CoordinateScaler::fit(std::span<const STPoint> points) {
  if (points.empty()) throw ParameterError("cannot fit a coordinate scaler to no points");
  CoordinateScaler s;
  s.min = {points[0].s1, points[0].s2, points[0].t};
  s.max = s.min;
  for (const auto& p : points) {
    const std::array<double, 3> v{p.s1, p.s2, p.t};
    for (int a = 0; a < 3; ++a) {
      s.min[a] = std::min(s.min[a], v[a]);
      s.max[a] = std::max(s.max[a], v[a]);
    }
  }
  return s;
}

double CoordinateScaler::span_of(int axis) const { return max[axis] - min[axis]; }

STPoint CoordinateScaler::apply(const STPoint& p) const {
  auto f = [&](double v, int a) {
    const double w = span_of(a);
    return w > 0.0 ? (v - min[a]) / w : 0.0;
  };
  return STPoint{f(p.s1, 0), f(p.s2, 1), f(p.t, 2), p.y};
}

STPoint CoordinateScaler::invert(const STPoint& p) const {
  auto f = [&](double v, int a) { return min[a] + v * span_of(a); };
  return STPoint{f(p.s1, 0), f(p.s2, 1), f(p.t, 2), p.y};
}

std::vector<std::size_t> Dataset::indices(SplitTag tag) const {
  if (tags.size() != points.size()) throw ParameterError("dataset has not been split");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (tags[i] == tag) out.push_back(i);
  return out;
}

PointSet Dataset::subset(SplitTag tag) const {
  PointSet out;
  for (std::size_t i : indices(tag)) out.push_back(points[i]);
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, const std::string& source, std::size_t line,
                  const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  const std::string where = source + ":" + std::to_string(line) + ": column " + column;
  if (cell.empty() || ec != std::errc() || ptr != last)
    throw IoError(where + ": '" + cell + "' is not a number");
  if (!std::isfinite(v)) throw IoError(where + ": non-finite value '" + cell + "'");
  return v;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset read_csv(std::istream& is, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_cells(trim(line));
      break;
    }
  }
  if (header.empty()) throw IoError(source + ": empty file");

  auto find = [&](const char* name) -> std::ptrdiff_t {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  const std::array<std::ptrdiff_t, 3> coord{find("s1"), find("s2"), find("t")};
  const std::array<const char*, 3> names{"s1", "s2", "t"};
  for (int a = 0; a < 3; ++a)
    if (coord[a] < 0) throw IoError(source + ": missing column '" + names[a] + "'");
  const std::ptrdiff_t ycol = find("y");

  Dataset data;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_cells(trim(line));
    if (cells.size() != header.size())
      throw IoError(source + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
    STPoint p;
    p.s1 = parse_cell(cells[coord[0]], source, line_no, "s1");
    p.s2 = parse_cell(cells[coord[1]], source, line_no, "s2");
    p.t = parse_cell(cells[coord[2]], source, line_no, "t");
    if (ycol >= 0) p.y = parse_cell(cells[ycol], source, line_no, "y");
    data.points.push_back(p);
  }
  if (data.points.empty()) throw IoError(source + ": no data rows");
  return data;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return read_csv(in, path);
}

void write_csv(std::ostream& os, std::span<const STPoint> points) {
  const bool with_y = std::all_of(points.begin(), points.end(), [](const STPoint& p) { return p.y.has_value(); });
  os << (with_y ? "s1,s2,t,y\n" : "s1,s2,t\n");
  for (const auto& p : points) {
    os << fmt(p.s1) << ',' << fmt(p.s2) << ',' << fmt(p.t);
    if (with_y) os << ',' << fmt(*p.y);
    os << '\n';
  }
}

void write_csv(const std::string& path, std::span<const STPoint> points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_csv(out, points);
  if (!out) throw IoError("failed writing '" + path + "'");
}

void normalize(Dataset& data) {
  if (data.normalized) throw ParameterError("dataset is already normalized");
  const auto train = data.indices(SplitTag::Train);
  if (train.size() < 2) throw ParameterError("normalization needs at least two training rows");
  double mean = 0.0;
  for (std::size_t i : train) mean += *data.points[i].y;
  mean /= static_cast<double>(train.size());
  double ss = 0.0;
  for (std::size_t i : train) ss += (*data.points[i].y - mean) * (*data.points[i].y - mean);
  const double sd = std::sqrt(ss / static_cast<double>(train.size() - 1));
  if (!(sd > 0.0)) throw NumericalError("training responses are constant");
  data.norm = Normalization{mean, sd};
  for (auto& p : data.points)
    if (p.y) p.y = data.norm.apply(*p.y);
  data.normalized = true;
}

void split_random(Dataset& data, const SplitFractions& f, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (n < 3) throw ParameterError("random split needs at least three rows");
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ParameterError("split fractions must be nonnegative and sum to 1");
  const auto n_val = static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(f.test * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, SeedStream::Split));
  std::shuffle(order.begin(), order.end(), rng);
  data.tags.assign(n, SplitTag::Train);
  for (std::size_t i = 0; i < n_val; ++i) data.tags[order[i]] = SplitTag::Val;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) data.tags[order[i]] = SplitTag::Test;
}

std::vector<double> split_per_time(Dataset& data, double train_fraction,
                                   const std::vector<double>& val_times,
                                   const std::vector<double>& test_times, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ParameterError("per-time training fraction must lie in (0, 1]");
  auto contains = [](const std::vector<double>& v, double t) {
    return std::find(v.begin(), v.end(), t) != v.end();
  };
  std::map<double, std::vector<std::size_t>> by_time;
  for (std::size_t i = 0; i < data.size(); ++i) by_time[data.points[i].t].push_back(i);

  data.tags.assign(data.size(), SplitTag::Unused);
  std::vector<double> skipped;
  Rng rng(derive_seed(seed, SeedStream::Split));
  for (auto& [t, rows] : by_time) {
    if (contains(test_times, t)) {
      for (std::size_t i : rows) data.tags[i] = SplitTag::Test;
      continue;
    }
    if (contains(val_times, t)) {
      for (std::size_t i : rows) data.tags[i] = SplitTag::Val;
      continue;
    }
    const auto take = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows.size())));
    if (take == 0) {
      skipped.push_back(t);
      continue;
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t k = 0; k < take; ++k) data.tags[rows[k]] = SplitTag::Train;
  }
  for (double t : val_times)
    if (!by_time.count(t)) skipped.push_back(t);
  for (double t : test_times)
    if (!by_time.count(t)) skipped.push_back(t);
  return skipped;
}

LatentFn SimulationSpec::latent_fn() const {
  if (kind == SimulationKind::Stationary) return {};
  const double amp = latent_amplitude, freq = latent_frequency;
  return [amp, freq](const STPoint& p) {
    Eigen::VectorXd l(1);
    l(0) = amp * std::sin(2.0 * M_PI * freq * p.s1);
    return l;
  };
}

const char* to_string(SimulationKind kind) {
  return kind == SimulationKind::Stationary ? "stationary" : "expanded";
}

SimulationKind parse_simulation_kind(const std::string& name) {
  if (name == "stationary") return SimulationKind::Stationary;
  if (name == "expanded") return SimulationKind::Expanded;
  throw ConfigError("unknown simulation kind '" + name + "' (expected stationary or expanded)");
}

const char* to_string(Layout layout) { return layout == Layout::Uniform ? "uniform" : "grid"; }

Layout parse_layout(const std::string& name) {
  if (name == "uniform") return Layout::Uniform;
  if (name == "grid") return Layout::Grid;
  throw ConfigError("unknown layout '" + name + "' (expected uniform or grid)");
}

Dataset simulate_dataset(const SimulationSpec& spec, std::uint64_t seed) {
  spec.params.validate();
  if (spec.n == 0) throw ParameterError("simulation needs n >= 1");
  if (spec.n > spec.oracle_cap)
    throw SizeError("simulation size " + std::to_string(spec.n) + " exceeds the oracle cap " +
                    std::to_string(spec.oracle_cap));
  const std::uint64_t base = derive_seed(seed, SeedStream::Simulation);
  auto time_value = [&](std::size_t k) {
    return spec.time_steps > 1 ? static_cast<double>(k) / static_cast<double>(spec.time_steps - 1)
                               : 0.0;
  };

  Dataset data;
  data.points.reserve(spec.n);
  if (spec.layout == Layout::Uniform) {
    Rng rng(derive_seed(base, 0));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < spec.n; ++i) {
      STPoint p;
      p.s1 = u(rng);
      p.s2 = u(rng);
      if (spec.time_steps == 0) {
        p.t = u(rng);
      } else {
        std::uniform_int_distribution<std::size_t> k(0, spec.time_steps - 1);
        p.t = time_value(k(rng));
      }
      data.points.push_back(p);
    }
  } else {
    const std::size_t steps = std::max<std::size_t>(spec.time_steps, 1);
    const auto side = static_cast<std::size_t>(
        std::llround(std::sqrt(static_cast<double>(spec.n) / static_cast<double>(steps))));
    if (side * side * steps != spec.n)
      throw ParameterError("grid layout needs n = side^2 * time_steps");
    auto grid = [&](std::size_t i) {
      return side > 1 ? static_cast<double>(i) / static_cast<double>(side - 1) : 0.5;
    };
    for (std::size_t k = 0; k < steps; ++k)
      for (std::size_t i = 0; i < side; ++i)
        for (std::size_t j = 0; j < side; ++j) data.points.push_back(STPoint{grid(i), grid(j), time_value(k), {}});
  }

  const Eigen::VectorXd y =
      exact_gp_simulate(data.points, spec.params, spec.latent_fn(), derive_seed(base, 1), spec.oracle_cap);
  for (std::size_t i = 0; i < spec.n; ++i) data.points[i].y = y(static_cast<Eigen::Index>(i));
  return data;
}

}  // namespace staci
