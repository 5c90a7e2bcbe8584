#include "staci/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace staci {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'T', 'A', 'C', 'I', 'E', 'N', 'S'};
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 40;

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated ensemble file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated ensemble file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
  return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

std::uint64_t get_count(std::istream& is) {
  const std::uint64_t v = get_u64(is);
  if (v > kMaxCount) throw IoError("corrupt ensemble file: implausible size");
  return v;
}

void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  put_u64(os, static_cast<std::uint64_t>(m.rows()));
  put_u64(os, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(os, m.data()[i]);
}

Eigen::MatrixXd get_matrix(std::istream& is) {
  const auto rows = static_cast<Eigen::Index>(get_count(is));
  const auto cols = static_cast<Eigen::Index>(get_count(is));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64(is);
  return m;
}

}  // namespace

void write_fitted(std::ostream& os, const FittedModel& f) {
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, kEnsembleFormatVersion);
  put_u64(os, f.model_hash);
  for (int a = 0; a < 3; ++a) {
    put_f64(os, f.scaler.min[a]);
    put_f64(os, f.scaler.max[a]);
  }
  put_f64(os, f.norm.mean);
  put_f64(os, f.norm.sd);

  const Ensemble& e = f.ensemble;
  put_u64(os, e.size());
  put_u64(os, static_cast<std::uint64_t>(e.dim()));
  put_u64(os, e.step);
  for (const auto& p : e.particles) {
    for (Eigen::Index i = 0; i < p.theta.size(); ++i) put_f64(os, p.theta(i));
    put_matrix(os, p.encoding);
  }
  put_matrix(os, e.first_moment);
  put_matrix(os, e.second_moment);
  if (!os) throw IoError("failed writing ensemble");
}

FittedModel read_fitted(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw IoError("not an ensemble file (bad magic)");
  const std::uint32_t version = get_u32(is);
  if (version != kEnsembleFormatVersion)
    throw IoError("unsupported ensemble format version " + std::to_string(version));

  FittedModel f;
  f.model_hash = get_u64(is);
  for (int a = 0; a < 3; ++a) {
    f.scaler.min[a] = get_f64(is);
    f.scaler.max[a] = get_f64(is);
  }
  f.norm.mean = get_f64(is);
  f.norm.sd = get_f64(is);

  const std::uint64_t m = get_count(is);
  const auto dim = static_cast<Eigen::Index>(get_count(is));
  const std::uint64_t step = get_u64(is);
  std::vector<Particle> ps(m);
  for (auto& p : ps) {
    p.theta.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) p.theta(i) = get_f64(is);
    p.encoding = get_matrix(is);
  }
  Ensemble e(std::move(ps));
  e.step = step;
  Eigen::MatrixXd m1 = get_matrix(is), m2 = get_matrix(is);
  if (m1.rows() != e.first_moment.rows() || m1.cols() != e.first_moment.cols() ||
      m2.rows() != m1.rows() || m2.cols() != m1.cols())
    throw IoError("corrupt ensemble file: optimizer state shape");
  e.first_moment = std::move(m1);
  e.second_moment = std::move(m2);
  f.ensemble = std::move(e);
  return f;
}

void save_fitted(const std::string& path, const FittedModel& fitted) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_fitted(out, fitted);
}

FittedModel load_fitted(const std::string& path, std::optional<std::uint64_t> expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  FittedModel f = read_fitted(in);
  if (expected_hash && *expected_hash != f.model_hash)
    throw ConfigError("ensemble '" + path + "' was trained with a different model configuration");
  return f;
}

}  // namespace staci
