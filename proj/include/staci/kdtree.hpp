#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

namespace staci {

using Point3 = std::array<double, 3>;

/// k nearest neighbors in Euclidean 3-space. Results are ordered by
/// (squared distance, index), so equal distances resolve to the lower index.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(std::vector<Point3> points);

  std::size_t size() const { return points_.size(); }
  const std::vector<Point3>& points() const { return points_; }

  /// Indices of the k nearest points, skipping `exclude` if given.
  std::vector<std::size_t> nearest(const Point3& query, std::size_t k,
                                   std::optional<std::size_t> exclude = std::nullopt) const;

 private:
  struct Node {
    std::size_t point = 0;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::size_t lo, std::size_t hi, int depth);

  std::vector<Point3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Exhaustive reference with the same ordering contract.
std::vector<std::size_t> brute_force_nearest(const std::vector<Point3>& points,
                                             const Point3& query, std::size_t k,
                                             std::optional<std::size_t> exclude = std::nullopt);

}  // namespace staci
