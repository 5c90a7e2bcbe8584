#include "staci/kdtree.hpp"

#include <algorithm>
#include <queue>
#include <utility>

#include "staci/common.hpp"

namespace staci {

namespace {

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index)

double sq_dist(const Point3& a, const Point3& b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

std::vector<std::size_t> drain(std::priority_queue<Candidate>& heap) {
  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top().second;
    heap.pop();
  }
  return out;
}

}  // namespace

KdTree3::KdTree3(std::vector<Point3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(points_.size());
  root_ = build(0, points_.size(), 0);
}

int KdTree3::build(std::size_t lo, std::size_t hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(hi),
                   [&](std::size_t a, std::size_t b) {
                     return std::pair(points_[a][axis], a) < std::pair(points_[b][axis], b);
                   });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{order_[mid], axis, -1, -1});
  const int left = build(lo, mid, depth + 1);
  const int right = build(mid + 1, hi, depth + 1);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

std::vector<std::size_t> KdTree3::nearest(const Point3& query, std::size_t k,
                                          std::optional<std::size_t> exclude) const {
  const std::size_t available = points_.size() - (exclude && *exclude < points_.size() ? 1 : 0);
  if (k > available) throw ParameterError("requested more neighbors than points");
  std::priority_queue<Candidate> heap;  // max-heap on (distance, index)
  if (k == 0) return {};

  // Far subtrees are pruned when their splitting plane lies strictly beyond the
  // current k-th distance.
  auto visit = [&](auto&& self, int id) -> void {
    if (id < 0) return;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    const Point3& p = points_[node.point];
    if (!exclude || node.point != *exclude) {
      const Candidate c{sq_dist(p, query), node.point};
      if (heap.size() < k) {
        heap.push(c);
      } else if (c < heap.top()) {
        heap.pop();
        heap.push(c);
      }
    }
    const double diff = query[node.axis] - p[node.axis];
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    self(self, near);
    // Ties on the plane can still hold lower-index candidates, hence <=.
    if (heap.size() < k || diff * diff <= heap.top().first) self(self, far);
  };
  visit(visit, root_);
  return drain(heap);
}

std::vector<std::size_t> brute_force_nearest(const std::vector<Point3>& points,
                                             const Point3& query, std::size_t k,
                                             std::optional<std::size_t> exclude) {
  std::vector<Candidate> all;
  all.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    if (!exclude || i != *exclude) all.emplace_back(sq_dist(points[i], query), i);
  if (k > all.size()) throw ParameterError("requested more neighbors than points");
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = all[i].second;
  return out;
}

}  // namespace staci
