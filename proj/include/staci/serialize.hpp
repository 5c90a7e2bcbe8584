#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "staci/dataset.hpp"
#include "staci/svgd.hpp"

namespace staci {

/// A trained ensemble with the preprocessing needed to apply it to raw data.
struct FittedModel {
  std::uint64_t model_hash = 0;  // model_config_hash of the configuration used
  CoordinateScaler scaler;
  Normalization norm;
  Ensemble ensemble;
};

inline constexpr std::uint32_t kEnsembleFormatVersion = 1;

/// Binary layout: magic "STACIENS", u32 version, u64 model hash, scaler and
/// normalization as f64, then per particle theta, encoding and optimizer moments.
/// All numbers little-endian; doubles are bit-exact.
void write_fitted(std::ostream& os, const FittedModel& fitted);
FittedModel read_fitted(std::istream& is);

void save_fitted(const std::string& path, const FittedModel& fitted);
/// Throws ConfigError when expected_hash is given and does not match.
FittedModel load_fitted(const std::string& path,
                        std::optional<std::uint64_t> expected_hash = std::nullopt);

}  // namespace staci
