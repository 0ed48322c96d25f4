#include "pcadv/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pcadv::geom {

void PointCloud::validate() const {
  if (points.empty()) throw std::invalid_argument("point cloud is empty");
  for (const Vec3& p : points) {
    if (!finite(p)) throw std::invalid_argument("point cloud contains non-finite coordinate");
  }
  if (!colors.empty()) {
    if (colors.size() != points.size())
      throw std::invalid_argument("color count does not match point count");
    for (const Vec3& c : colors) {
      if (!finite(c) || c.x < 0 || c.x > 1 || c.y < 0 || c.y > 1 || c.z < 0 || c.z > 1)
        throw std::invalid_argument("color channel outside [0,1]");
    }
  }
}

PointCloud normalized_unit_sphere(PointCloud cloud) {
  cloud.validate();
  Vec3 c{};
  for (const Vec3& p : cloud.points) c += p;
  c = c / static_cast<double>(cloud.size());
  double r2 = 0;
  for (Vec3& p : cloud.points) {
    p -= c;
    r2 = std::max(r2, norm2(p));
  }
  if (r2 > 0) {
    double inv = 1.0 / std::sqrt(r2);
    for (Vec3& p : cloud.points) p *= inv;
  }
  return cloud;
}

NeighborIndex knn(const PointCloud& cloud, int k) {
  cloud.validate();
  const size_t n = cloud.size();
  if (k < 1 || static_cast<size_t>(k) >= n)
    throw std::invalid_argument("knn: need 1 <= k < cloud size");

  NeighborIndex out;
  out.k = k;
  out.table.resize(n * static_cast<size_t>(k));

  std::vector<std::pair<double, int32_t>> cand(n - 1);
  for (size_t i = 0; i < n; ++i) {
    size_t w = 0;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cand[w++] = {dist2(cloud.points[i], cloud.points[j]), static_cast<int32_t>(j)};
    }
    // pair ordering on (distance, index) gives the lower-index tie-break
    std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end());
    std::sort(cand.begin(), cand.begin() + k);
    for (int j = 0; j < k; ++j) out.table[i * k + j] = cand[j].second;
  }
  return out;
}

static std::vector<int32_t> fps_impl(const std::vector<Vec3>& pts,
                                     std::span<const int32_t> candidates, int m, int seed_pos) {
  const size_t n = candidates.size();
  if (m < 1 || static_cast<size_t>(m) > n)
    throw std::invalid_argument("farthest_point_sample: need 1 <= m <= candidate count");
  if (seed_pos < 0 || static_cast<size_t>(seed_pos) >= n)
    throw std::invalid_argument("farthest_point_sample: seed out of range");

  std::vector<int32_t> picked;
  picked.reserve(m);
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  size_t last = static_cast<size_t>(seed_pos);
  picked.push_back(candidates[last]);
  while (picked.size() < static_cast<size_t>(m)) {
    const Vec3& lp = pts[candidates[last]];
    size_t best = 0;
    double bestd = -1;
    for (size_t i = 0; i < n; ++i) {
      double d = dist2(pts[candidates[i]], lp);
      if (d < mind[i]) mind[i] = d;
      if (mind[i] > bestd) {  // strict > keeps the lowest index on ties
        bestd = mind[i];
        best = i;
      }
    }
    last = best;
    picked.push_back(candidates[last]);
  }
  return picked;
}

std::vector<int32_t> farthest_point_sample(const PointCloud& cloud, int m, int seed_index) {
  cloud.validate();
  std::vector<int32_t> all(cloud.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int32_t>(i);
  return fps_impl(cloud.points, all, m, seed_index);
}

std::vector<int32_t> farthest_point_sample(const std::vector<Vec3>& points,
                                           std::span<const int32_t> candidates, int m,
                                           int seed_pos) {
  for (size_t i = 0; i + 1 < candidates.size(); ++i)
    if (candidates[i] >= candidates[i + 1])
      throw std::invalid_argument("farthest_point_sample: candidates must be strictly increasing");
  if (!candidates.empty() &&
      (candidates.front() < 0 || static_cast<size_t>(candidates.back()) >= points.size()))
    throw std::invalid_argument("farthest_point_sample: candidate index out of range");
  return fps_impl(points, candidates, m, seed_pos);
}

static double nearest2(const Vec3& p, const std::vector<Vec3>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& q : pts) best = std::min(best, dist2(p, q));
  return best;
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  a.validate();
  b.validate();
  double sa = 0, sb = 0;
  for (const Vec3& p : a.points) sa += nearest2(p, b.points);
  for (const Vec3& q : b.points) sb += nearest2(q, a.points);
  return sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size());
}

double hausdorff_distance(const PointCloud& a, const PointCloud& b) {
  a.validate();
  b.validate();
  double da = 0, db = 0;
  for (const Vec3& p : a.points) da = std::max(da, nearest2(p, b.points));
  for (const Vec3& q : b.points) db = std::max(db, nearest2(q, a.points));
  return std::sqrt(std::max(da, db));
}

namespace detail {

std::array<double, 3> sym3_eigenvalues(const std::array<double, 6>& m) {
  const double a00 = m[0], a01 = m[1], a02 = m[2], a11 = m[3], a12 = m[4], a22 = m[5];
  const double p1 = a01 * a01 + a02 * a02 + a12 * a12;
  if (p1 == 0.0) {
    std::array<double, 3> e{a00, a11, a22};
    std::sort(e.begin(), e.end(), std::greater<double>());
    return e;
  }
  const double q = (a00 + a11 + a22) / 3.0;
  const double b00 = a00 - q, b11 = a11 - q, b22 = a22 - q;
  const double p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  // r = det(B)/2 with B = (A - qI)/p
  const double det = b00 * (b11 * b22 - a12 * a12) - a01 * (a01 * b22 - a12 * a02) +
                     a02 * (a01 * a12 - b11 * a02);
  double r = det / (2.0 * p * p * p);
  r = std::clamp(r, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double l0 = q + 2.0 * p * std::cos(phi);
  const double l2 = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
  const double l1 = 3.0 * q - l0 - l2;
  return {l0, l1, l2};
}

}  // namespace detail

std::vector<double> curvature_profile(const PointCloud& cloud, const NeighborIndex& nn) {
  cloud.validate();
  const size_t n = cloud.size();
  if (nn.rows() != n) throw std::invalid_argument("curvature_profile: neighbor table size mismatch");
  if (nn.k < 3) throw std::invalid_argument("curvature_profile: need k >= 3");

  std::vector<double> kappa(n, 0.0);
  const double cnt = static_cast<double>(nn.k + 1);
  for (size_t i = 0; i < n; ++i) {
    auto row = nn.row(i);
    Vec3 mean = cloud.points[i];
    for (int32_t j : row) mean += cloud.points[j];
    mean = mean / cnt;

    std::array<double, 6> cov{};  // a00 a01 a02 a11 a12 a22
    auto accum = [&](const Vec3& p) {
      Vec3 d = p - mean;
      cov[0] += d.x * d.x;
      cov[1] += d.x * d.y;
      cov[2] += d.x * d.z;
      cov[3] += d.y * d.y;
      cov[4] += d.y * d.z;
      cov[5] += d.z * d.z;
    };
    accum(cloud.points[i]);
    for (int32_t j : row) accum(cloud.points[j]);
    for (double& c : cov) c /= cnt;

    const double trace = cov[0] + cov[3] + cov[5];
    if (!(trace > 1e-30)) continue;  // degenerate neighborhood -> kappa 0
    auto eig = detail::sym3_eigenvalues(cov);
    double lmin = std::clamp(eig[2], 0.0, trace / 3.0);
    kappa[i] = lmin / trace;
  }
  return kappa;
}

std::vector<double> curvature_spread(const PointCloud& cloud, const NeighborIndex& nn) {
  std::vector<double> kappa = curvature_profile(cloud, nn);
  const size_t n = kappa.size();
  std::vector<double> spread(n, 0.0);
  const double k = static_cast<double>(nn.k);
  for (size_t i = 0; i < n; ++i) {
    auto row = nn.row(i);
    double mean = 0;
    for (int32_t j : row) mean += kappa[j];
    mean /= k;
    double var = 0;
    for (int32_t j : row) {
      double d = kappa[j] - mean;
      var += d * d;
    }
    spread[i] = std::sqrt(var / k);
  }
  return spread;
}

double csd_metric(const PointCloud& a, const PointCloud& b, int k) {
  a.validate();
  b.validate();
  if (a.size() != b.size())
    throw std::invalid_argument("csd_metric: clouds must have the same size");
  if (k < 3 || static_cast<size_t>(k) >= a.size())
    throw std::invalid_argument("csd_metric: need 3 <= k < cloud size");
  std::vector<double> sa = curvature_spread(a, knn(a, k));
  std::vector<double> sb = curvature_spread(b, knn(b, k));
  double sum = 0;
  for (size_t i = 0; i < sa.size(); ++i) sum += std::abs(sa[i] - sb[i]);
  return sum / static_cast<double>(sa.size());
}

}  // namespace pcadv::geom
