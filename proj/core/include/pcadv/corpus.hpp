#pragma once

// Synthetic labeled corpus: 8 parametric shape families sampled on exact
// surfaces, lightly augmented, normalized, and paired with templated
// captions ("a 3d model of a <color> <category>"). Each category has a fixed
// color so the full caption is a function of geometry.

#include <cstdint>
#include <string>
#include <vector>

#include "pcadv/common.hpp"
#include "pcadv/geometry.hpp"
#include "pcadv/victim.hpp"

namespace pcadv::corpus {

enum class Category : int {
  sphere = 0,
  cube,
  cylinder,
  cone,
  torus,
  pyramid,
  plane,  // "plane-patch"
  helix,
};
inline constexpr int kCategoryCount = 8;

const char* category_word(Category c);
Category category_from_word(const std::string& word);  // throws std::invalid_argument

// Fixed palette index and RGB for a category (color = palette[category]).
int category_color(int category);
Vec3 color_rgb(int palette_index);
const char* color_word(int palette_index);

struct CorpusSpec {
  std::vector<Category> categories;  // default: all 8
  int clouds_per_category = 50;
  int points_per_cloud = 512;
  uint64_t seed = 1;
  double noise_stddev = 0.0;  // Gaussian jitter after surface sampling
  void validate() const;      // >= 2 categories, >= 4 points
};

struct LabeledCloud {
  std::string id;  // e.g. "torus_007"
  int category = -1;
  geom::PointCloud cloud;           // normalized, colored, label set
  victim::CaptionSeq caption;       // ground-truth template caption
};

struct Corpus {
  victim::Vocabulary vocab;
  std::vector<LabeledCloud> clouds;  // category-major, index order
};

// Points on the exact canonical surface (pre-augmentation, pre-normalization).
std::vector<Vec3> sample_shape(Category c, int n, RandomStream& rng);

// One augmented cloud: anisotropic scale jitter (preserves planarity),
// optional noise, unit-sphere normalization, per-point category color.
geom::PointCloud make_cloud(Category c, const CorpusSpec& spec, RandomStream rng);

victim::CaptionSeq category_caption(const victim::Vocabulary& vocab, int category);

// Deterministic per seed: same spec -> bitwise-identical corpus.
Corpus generate(const CorpusSpec& spec);

}  // namespace pcadv::corpus
