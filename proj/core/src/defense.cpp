#include "pcadv/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pcadv::defense {

void DefenseSpec::validate() const {
  if (kind == Kind::srs && (srs_ratio <= 0 || srs_ratio > 1))
    throw std::invalid_argument("srs keep-ratio must be in (0,1]");
  if (kind == Kind::sor && (sor_k < 1 || sor_alpha <= 0))
    throw std::invalid_argument("sor needs k >= 1 and alpha > 0");
}

namespace {

geom::PointCloud subset(const geom::PointCloud& cloud, const std::vector<int32_t>& keep) {
  geom::PointCloud out;
  out.label = cloud.label;
  out.points.reserve(keep.size());
  for (int32_t i : keep) out.points.push_back(cloud.points[static_cast<size_t>(i)]);
  if (!cloud.colors.empty()) {
    out.colors.reserve(keep.size());
    for (int32_t i : keep) out.colors.push_back(cloud.colors[static_cast<size_t>(i)]);
  }
  return out;
}

}  // namespace

geom::PointCloud srs(const geom::PointCloud& cloud, double ratio, uint64_t seed) {
  cloud.validate();
  if (ratio <= 0 || ratio > 1) throw std::invalid_argument("srs: ratio must be in (0,1]");
  const size_t n = cloud.size();
  const size_t m = static_cast<size_t>(std::floor(ratio * static_cast<double>(n)));
  if (m < 4) throw std::invalid_argument("srs: keep count below 4 points");

  // partial Fisher-Yates: first m entries are a uniform sample w/o replacement
  std::vector<int32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  RandomStream rng(seed);
  for (size_t i = 0; i < m; ++i) {
    size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  std::vector<int32_t> keep(idx.begin(), idx.begin() + m);
  std::sort(keep.begin(), keep.end());  // original point order
  return subset(cloud, keep);
}

geom::PointCloud sor(const geom::PointCloud& cloud, int k, double alpha) {
  cloud.validate();
  const size_t n = cloud.size();
  if (k < 1 || static_cast<size_t>(k) >= n) throw std::invalid_argument("sor: need 1 <= k < N");
  if (alpha <= 0) throw std::invalid_argument("sor: alpha must be > 0");

  geom::NeighborIndex nn = geom::knn(cloud, k);
  std::vector<double> d(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (int32_t j : nn.row(i)) d[i] += dist(cloud.points[i], cloud.points[static_cast<size_t>(j)]);
    d[i] /= static_cast<double>(k);
  }
  double mean = 0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double v : d) var += (v - mean) * (v - mean);
  const double thr = mean + alpha * std::sqrt(var / static_cast<double>(n));

  std::vector<int32_t> keep;
  for (size_t i = 0; i < n; ++i)
    if (d[i] <= thr) keep.push_back(static_cast<int32_t>(i));

  if (keep.size() < 4) {  // retain the 4 closest-ranked points
    std::vector<int32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int32_t a, int32_t b) { return d[a] != d[b] ? d[a] < d[b] : a < b; });
    keep.assign(order.begin(), order.begin() + 4);
    std::sort(keep.begin(), keep.end());
  }
  return subset(cloud, keep);
}

geom::PointCloud apply(const geom::PointCloud& cloud, const DefenseSpec& spec, uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case DefenseSpec::Kind::srs: return srs(cloud, spec.srs_ratio, seed);
    case DefenseSpec::Kind::sor: return sor(cloud, spec.sor_k, spec.sor_alpha);
    case DefenseSpec::Kind::none: default: return cloud;
  }
}

}  // namespace pcadv::defense
