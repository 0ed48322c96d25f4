#pragma once

// Input-sanitization defenses applied to (adversarial) clouds before victim
// inference: simple random sampling and statistical outlier removal. Both
// return subsets of the input points.

#include <cstdint>

#include "pcadv/geometry.hpp"

namespace pcadv::defense {

struct DefenseSpec {
  enum class Kind { none, srs, sor };
  Kind kind = Kind::none;
  double srs_ratio = 0.9;  // keep ratio in (0,1]
  int sor_k = 2;
  double sor_alpha = 1.1;
  void validate() const;
};

// Keeps exactly floor(ratio*N) points, sampled uniformly without
// replacement, original order preserved; deterministic per seed.
// floor(ratio*N) < 4 -> invalid-argument.
geom::PointCloud srs(const geom::PointCloud& cloud, double ratio, uint64_t seed);

// Removes points whose mean kNN distance d_i exceeds mean(d) + alpha*std(d);
// never drops below 4 points (the closest-ranked survivors stay).
geom::PointCloud sor(const geom::PointCloud& cloud, int k, double alpha);

geom::PointCloud apply(const geom::PointCloud& cloud, const DefenseSpec& spec, uint64_t seed);

}  // namespace pcadv::defense
