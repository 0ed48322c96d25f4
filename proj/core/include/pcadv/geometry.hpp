#pragma once

// Point-cloud substrate: containers, neighborhoods, farthest point sampling
// and the distortion metrics (Chamfer, Hausdorff, curvature spread).

#include <cstdint>
#include <span>
#include <vector>

#include "pcadv/common.hpp"

namespace pcadv::geom {

// A cloud of 3D points with optional per-point RGB in [0,1] and an optional
// category label. Attack and model entry points additionally require at
// least 4 points; the container itself only demands nonempty & finite so
// that tiny hand-written fixtures and defended remnants stay representable.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;  // empty, or one RGB triple per point
  int label = -1;            // category id, -1 when unknown

  size_t size() const { return points.size(); }

  // Throws std::invalid_argument on empty cloud, non-finite coordinate,
  // color/point count mismatch or color channel outside [0,1].
  void validate() const;
};

// Centers the cloud on its centroid and scales the farthest point to radius
// 1. Colors and label are preserved. Degenerate clouds (all points equal)
// are only centered.
PointCloud normalized_unit_sphere(PointCloud cloud);

// k-nearest-neighbor table, row i = the k neighbors of point i, self
// excluded, ordered by increasing distance with ties broken by lower index.
struct NeighborIndex {
  int k = 0;
  std::vector<int32_t> table;  // size() == rows * k, row-major

  size_t rows() const { return k > 0 ? table.size() / static_cast<size_t>(k) : 0; }
  std::span<const int32_t> row(size_t i) const {
    return {table.data() + i * static_cast<size_t>(k), static_cast<size_t>(k)};
  }
};

// Exact brute-force kNN. Requires 1 <= k < cloud.size().
NeighborIndex knn(const PointCloud& cloud, int k);

// Farthest point sampling: returns m indices into `cloud`. The first pick is
// `seed_index`; every further pick maximizes the distance to the already
// picked set, ties broken by lower index. Requires 1 <= m <= cloud.size().
std::vector<int32_t> farthest_point_sample(const PointCloud& cloud, int m, int seed_index = 0);

// FPS restricted to `candidates` (indices into `points`, strictly
// increasing). Returned indices are a subset of `candidates`; the first pick
// is candidates[seed_pos].
std::vector<int32_t> farthest_point_sample(const std::vector<Vec3>& points,
                                           std::span<const int32_t> candidates, int m,
                                           int seed_pos = 0);

// Mean bidirectional squared nearest-neighbor distance:
//   CD(A,B) = 1/|A| sum_a min_b |a-b|^2  +  1/|B| sum_b min_a |a-b|^2
double chamfer_distance(const PointCloud& a, const PointCloud& b);

// Symmetric Hausdorff distance, un-squared:
//   HD(A,B) = max( max_a min_b |a-b|, max_b min_a |a-b| )
double hausdorff_distance(const PointCloud& a, const PointCloud& b);

// Surface variation per point: kappa_i = lambda_min / (l0+l1+l2) of the
// covariance of the k-neighborhood including the point itself; 0 when the
// covariance is rank-deficient or zero. Range [0, 1/3].
std::vector<double> curvature_profile(const PointCloud& cloud, const NeighborIndex& nn);

// Population standard deviation of kappa over each point's k neighbors
// (self excluded): the per-point curvature spread used by keypoint scoring
// and the CSD metric.
std::vector<double> curvature_spread(const PointCloud& cloud, const NeighborIndex& nn);

// Curvature spread distance between same-size clouds:
//   CSD = 1/N sum_i | spread_a[i] - spread_b[i] |
// Requires a.size() == b.size() and 3 <= k < size.
double csd_metric(const PointCloud& a, const PointCloud& b, int k = 16);

namespace detail {
// Eigenvalues of a symmetric 3x3 matrix (rows [a00,a01,a02,a11,a12,a22]),
// descending. Closed-form (trigonometric) solution.
std::array<double, 3> sym3_eigenvalues(const std::array<double, 6>& m);
}  // namespace detail

}  // namespace pcadv::geom
