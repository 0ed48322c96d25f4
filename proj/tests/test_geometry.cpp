#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "pcadv/geometry.hpp"

using namespace pcadv;
using geom::PointCloud;

namespace {

PointCloud random_cloud(size_t n, uint64_t seed, double scale = 1.0) {
  RandomStream rng(seed);
  PointCloud c;
  c.points.reserve(n);
  for (size_t i = 0; i < n; ++i)
    c.points.push_back({rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                        rng.uniform(-scale, scale)});
  return c;
}

// independent O(N^2) neighbor oracle with the same (distance, index) ordering
std::vector<int32_t> brute_knn_row(const PointCloud& c, size_t i, int k) {
  std::vector<std::pair<double, int32_t>> d;
  for (size_t j = 0; j < c.size(); ++j) {
    if (j == i) continue;
    d.push_back({dist2(c.points[i], c.points[j]), static_cast<int32_t>(j)});
  }
  std::sort(d.begin(), d.end());
  std::vector<int32_t> row;
  for (int s = 0; s < k; ++s) row.push_back(d[static_cast<size_t>(s)].second);
  return row;
}

double brute_directed_mean_sq(const PointCloud& a, const PointCloud& b) {
  double acc = 0;
  for (const Vec3& p : a.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : b.points) best = std::min(best, dist2(p, q));
    acc += best;
  }
  return acc / static_cast<double>(a.size());
}

double brute_directed_max(const PointCloud& a, const PointCloud& b) {
  double worst = 0;
  for (const Vec3& p : a.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : b.points) best = std::min(best, dist(p, q));
    worst = std::max(worst, best);
  }
  return worst;
}

// cyclic Jacobi eigensolver for a symmetric 3x3, used as the closed-form
// solver's oracle
std::array<double, 3> jacobi_eigenvalues(const std::array<double, 6>& m) {
  double a[3][3] = {{m[0], m[1], m[2]}, {m[1], m[3], m[4]}, {m[2], m[4], m[5]}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    if (off < 1e-15) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a[p][q]) < 1e-30) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        double app = a[p][p], aqq = a[q][q], apq = a[p][q];
        a[p][p] = c * c * app - 2 * s * c * apq + s * s * aqq;
        a[q][q] = s * s * app + 2 * s * c * apq + c * c * aqq;
        a[p][q] = a[q][p] = 0;
        for (int r = 0; r < 3; ++r) {
          if (r == p || r == q) continue;
          double arp = a[r][p], arq = a[r][q];
          a[r][p] = a[p][r] = c * arp - s * arq;
          a[r][q] = a[q][r] = s * arp + c * arq;
        }
      }
  }
  std::array<double, 3> ev = {a[0][0], a[1][1], a[2][2]};
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

Vec3 rotate(const Vec3& p, const Vec3& axis_unit, double angle) {
  // Rodrigues' rotation formula
  const Vec3& k = axis_unit;
  Vec3 kxp{k.y * p.z - k.z * p.y, k.z * p.x - k.x * p.z, k.x * p.y - k.y * p.x};
  double kdp = dot(k, p);
  double c = std::cos(angle), s = std::sin(angle);
  return p * c + kxp * s + k * (kdp * (1 - c));
}

PointCloud rigid_motion(const PointCloud& c, uint64_t seed) {
  RandomStream rng(seed);
  Vec3 axis{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  axis = axis / norm(axis);
  double angle = rng.uniform(0.1, 3.0);
  Vec3 t{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
  PointCloud out = c;
  for (Vec3& p : out.points) p = rotate(p, axis, angle) + t;
  return out;
}

}  // namespace

TEST_CASE("PointCloud::validate rejects malformed clouds") {
  PointCloud c;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);  // empty

  c.points = {{0, 0, 0}, {1, 0, 0}};
  CHECK_NOTHROW(c.validate());

  c.points[1].y = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.points[1].y = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.points[1].y = 0;

  c.colors = {{0.5, 0.5, 0.5}};  // count mismatch
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.colors.push_back({0.1, 0.2, 0.3});
  CHECK_NOTHROW(c.validate());
  c.colors[0].x = 1.2;  // channel out of range
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.colors[0].x = -0.1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("normalized_unit_sphere centers and scales") {
  PointCloud c = random_cloud(64, 7, 5.0);
  for (Vec3& p : c.points) p += Vec3{3, -2, 10};
  c.colors.assign(64, Vec3{0.25, 0.5, 0.75});
  c.label = 3;

  PointCloud n = geom::normalized_unit_sphere(c);
  Vec3 centroid{};
  double radius = 0;
  for (const Vec3& p : n.points) centroid += p;
  centroid = centroid / static_cast<double>(n.size());
  for (const Vec3& p : n.points) radius = std::max(radius, norm(p));
  CHECK(norm(centroid) < 1e-12);
  CHECK(radius == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(n.label == 3);
  REQUIRE(n.colors.size() == 64);
  CHECK(n.colors[10].y == 0.5);

  // degenerate cloud: centered but not scaled (radius would be 0)
  PointCloud d;
  d.points.assign(5, Vec3{2, 2, 2});
  PointCloud dn = geom::normalized_unit_sphere(d);
  for (const Vec3& p : dn.points) CHECK(norm(p) < 1e-12);
}

TEST_CASE("knn matches the brute-force oracle") {
  RandomStream sizes(100);
  for (int trial = 0; trial < 40; ++trial) {
    size_t n = 8 + sizes.below(121);  // 8..128
    PointCloud c = random_cloud(n, 1000 + static_cast<uint64_t>(trial));
    for (int k : {1, 3, static_cast<int>(std::min<size_t>(16, n - 1))}) {
      geom::NeighborIndex nn = geom::knn(c, k);
      REQUIRE(nn.rows() == n);
      for (size_t i = 0; i < n; ++i) {
        std::vector<int32_t> expect = brute_knn_row(c, i, k);
        auto row = nn.row(i);
        for (int s = 0; s < k; ++s) CHECK(row[static_cast<size_t>(s)] == expect[static_cast<size_t>(s)]);
      }
    }
  }
}

TEST_CASE("knn breaks ties by lower index and validates k") {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {2, 0, 0}};
  geom::NeighborIndex nn = geom::knn(c, 2);
  CHECK(nn.row(0)[0] == 1);  // dist 1 tie between 1 and 2 -> lower index first
  CHECK(nn.row(0)[1] == 2);

  CHECK_THROWS_AS(geom::knn(c, 0), std::invalid_argument);
  CHECK_THROWS_AS(geom::knn(c, 4), std::invalid_argument);
}

TEST_CASE("farthest point sampling is greedy max-min") {
  PointCloud c = random_cloud(60, 42);
  const int m = 12;
  std::vector<int32_t> picked = geom::farthest_point_sample(c, m, 5);
  REQUIRE(picked.size() == static_cast<size_t>(m));
  CHECK(picked[0] == 5);

  std::vector<char> in(c.size(), 0);
  in[5] = 1;
  for (int step = 1; step < m; ++step) {
    // recompute the argmax of min-distance-to-picked over the remaining points
    double best = -1;
    int32_t arg = -1;
    for (size_t j = 0; j < c.size(); ++j) {
      if (in[j]) continue;
      double mind = std::numeric_limits<double>::infinity();
      for (size_t p = 0; p < c.size(); ++p)
        if (in[p]) mind = std::min(mind, dist2(c.points[j], c.points[p]));
      if (mind > best) {
        best = mind;
        arg = static_cast<int32_t>(j);
      }
    }
    CHECK(picked[static_cast<size_t>(step)] == arg);
    in[static_cast<size_t>(arg)] = 1;
  }
}

TEST_CASE("farthest point sampling edge cases") {
  PointCloud c = random_cloud(16, 9);
  std::vector<int32_t> all = geom::farthest_point_sample(c, 16);
  std::sort(all.begin(), all.end());
  for (size_t i = 0; i < 16; ++i) CHECK(all[i] == static_cast<int32_t>(i));

  CHECK(geom::farthest_point_sample(c, 1, 7) == std::vector<int32_t>{7});
  CHECK_THROWS_AS(geom::farthest_point_sample(c, 0), std::invalid_argument);
  CHECK_THROWS_AS(geom::farthest_point_sample(c, 17), std::invalid_argument);
}

TEST_CASE("restricted farthest point sampling stays inside the candidate set") {
  PointCloud c = random_cloud(50, 77);
  std::vector<int32_t> cand;
  for (int32_t i = 0; i < 50; i += 2) cand.push_back(i);  // even indices
  std::vector<int32_t> picked = geom::farthest_point_sample(c.points, cand, 10, 3);
  REQUIRE(picked.size() == 10);
  CHECK(picked[0] == cand[3]);
  for (int32_t idx : picked) {
    CHECK(idx % 2 == 0);
    CHECK(std::count(picked.begin(), picked.end(), idx) == 1);
  }
}

TEST_CASE("chamfer and hausdorff: hand values") {
  PointCloud a, b;
  a.points = {{0, 0, 0}};
  b.points = {{1, 0, 0}};
  CHECK(geom::chamfer_distance(a, b) == doctest::Approx(2.0));  // squared, both directions
  CHECK(geom::hausdorff_distance(a, b) == doctest::Approx(1.0));

  a.points = {{0, 0, 0}, {1, 0, 0}};
  b.points = {{0, 0, 0}};
  CHECK(geom::chamfer_distance(a, b) == doctest::Approx(0.5));  // (0+1)/2 + 0/1
  CHECK(geom::hausdorff_distance(a, b) == doctest::Approx(1.0));

  CHECK(geom::chamfer_distance(a, a) == 0.0);
  CHECK(geom::hausdorff_distance(a, a) == 0.0);
}

TEST_CASE("chamfer and hausdorff match brute force and are symmetric") {
  for (int trial = 0; trial < 30; ++trial) {
    uint64_t s = 500 + static_cast<uint64_t>(trial);
    PointCloud a = random_cloud(20 + (s % 40), s);
    PointCloud b = random_cloud(15 + (s % 25), s + 1);

    double cd = geom::chamfer_distance(a, b);
    double expect_cd = brute_directed_mean_sq(a, b) + brute_directed_mean_sq(b, a);
    CHECK(cd == doctest::Approx(expect_cd).epsilon(1e-12));
    CHECK(geom::chamfer_distance(b, a) == doctest::Approx(cd).epsilon(1e-12));

    double hd = geom::hausdorff_distance(a, b);
    double fwd = brute_directed_max(a, b), bwd = brute_directed_max(b, a);
    CHECK(hd == doctest::Approx(std::max(fwd, bwd)).epsilon(1e-12));
    CHECK(geom::hausdorff_distance(b, a) == doctest::Approx(hd).epsilon(1e-12));

    // symmetric HD dominates the directed mean (un-squared) in either direction
    double mean_fwd = 0, mean_bwd = 0;
    for (const Vec3& p : a.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : b.points) best = std::min(best, dist(p, q));
      mean_fwd += best;
    }
    mean_fwd /= static_cast<double>(a.size());
    for (const Vec3& p : b.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : a.points) best = std::min(best, dist(p, q));
      mean_bwd += best;
    }
    mean_bwd /= static_cast<double>(b.size());
    CHECK(hd >= mean_fwd - 1e-12);
    CHECK(hd >= mean_bwd - 1e-12);
  }
}

TEST_CASE("sym3 eigenvalues match a Jacobi oracle") {
  auto ident = geom::detail::sym3_eigenvalues({1, 0, 0, 1, 0, 1});
  for (double v : ident) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  auto diag = geom::detail::sym3_eigenvalues({3, 0, 0, 2, 0, 1});
  CHECK(diag[0] == doctest::Approx(3.0));
  CHECK(diag[1] == doctest::Approx(2.0));
  CHECK(diag[2] == doctest::Approx(1.0));

  RandomStream rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, 6> m;
    for (double& v : m) v = rng.uniform(-3, 3);
    auto got = geom::detail::sym3_eigenvalues(m);
    auto expect = jacobi_eigenvalues(m);
    double scale = std::max({1.0, std::abs(expect[0]), std::abs(expect[2])});
    for (int i = 0; i < 3; ++i) CHECK(std::abs(got[i] - expect[i]) / scale < 1e-9);
    CHECK(got[0] >= got[1]);
    CHECK(got[1] >= got[2]);
  }
}

TEST_CASE("curvature profile: flat patch is zero, range is [0, 1/3]") {
  PointCloud plane;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      plane.points.push_back({i * 0.2, j * 0.2, 0.0});
  geom::NeighborIndex nn = geom::knn(plane, 8);
  for (double k : geom::curvature_profile(plane, nn)) CHECK(std::abs(k) < 1e-12);

  // collinear: covariance rank 1 -> lambda_min = 0 -> kappa = 0
  PointCloud line;
  for (int i = 0; i < 10; ++i) line.points.push_back({i * 0.1, 0, 0});
  for (double k : geom::curvature_profile(line, geom::knn(line, 4))) CHECK(k == 0.0);

  PointCloud c = random_cloud(80, 31);
  for (double k : geom::curvature_profile(c, geom::knn(c, 16))) {
    CHECK(k >= 0.0);
    CHECK(k <= 1.0 / 3.0 + 1e-12);
  }
}

TEST_CASE("curvature spread matches a population-std oracle") {
  PointCloud c = random_cloud(48, 66);
  geom::NeighborIndex nn = geom::knn(c, 9);
  std::vector<double> kappa = geom::curvature_profile(c, nn);
  std::vector<double> spread = geom::curvature_spread(c, nn);
  REQUIRE(spread.size() == c.size());
  for (size_t i = 0; i < c.size(); ++i) {
    double mean = 0, sq = 0;
    for (int32_t j : nn.row(i)) {
      mean += kappa[static_cast<size_t>(j)];
      sq += kappa[static_cast<size_t>(j)] * kappa[static_cast<size_t>(j)];
    }
    mean /= nn.k;
    sq /= nn.k;
    double expect = std::sqrt(std::max(0.0, sq - mean * mean));
    CHECK(spread[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("csd metric: identity, symmetry, rigid invariance") {
  PointCloud a = random_cloud(64, 11);
  PointCloud b = a;
  RandomStream rng(12);
  for (Vec3& p : b.points) p += Vec3{rng.normal(), rng.normal(), rng.normal()} * 0.02;

  CHECK(geom::csd_metric(a, a) == 0.0);
  double d = geom::csd_metric(a, b);
  CHECK(d > 0.0);
  CHECK(geom::csd_metric(b, a) == doctest::Approx(d).epsilon(1e-12));

  // same rotation + translation applied to both clouds leaves CSD unchanged
  for (uint64_t s : {21ull, 22ull, 23ull}) {
    PointCloud ar = rigid_motion(a, s);
    PointCloud br = rigid_motion(b, s);
    CHECK(std::abs(geom::csd_metric(ar, br) - d) < 1e-9);
  }

  // curvature profile itself is rigid-invariant
  geom::NeighborIndex nn = geom::knn(a, 16);
  std::vector<double> k0 = geom::curvature_profile(a, nn);
  PointCloud am = rigid_motion(a, 33);
  std::vector<double> k1 = geom::curvature_profile(am, geom::knn(am, 16));
  for (size_t i = 0; i < k0.size(); ++i) CHECK(std::abs(k0[i] - k1[i]) < 1e-9);
}

TEST_CASE("csd metric argument checks") {
  PointCloud a = random_cloud(20, 1), b = random_cloud(21, 2);
  CHECK_THROWS_AS(geom::csd_metric(a, b), std::invalid_argument);  // size mismatch
  PointCloud c = random_cloud(20, 3);
  CHECK_THROWS_AS(geom::csd_metric(a, c, 2), std::invalid_argument);   // k < 3
  CHECK_THROWS_AS(geom::csd_metric(a, c, 20), std::invalid_argument);  // k >= N
  CHECK_NOTHROW(geom::csd_metric(a, c, 3));
}
