#include "pcadv/corpus.hpp"

#include <cmath>
#include <stdexcept>

namespace pcadv::corpus {

static const char* kWords[kCategoryCount] = {"sphere", "cube",    "cylinder", "cone",
                                             "torus",  "pyramid", "plane",    "helix"};
static const char* kColorWords[8] = {"red",    "green",  "blue",  "yellow",
                                     "purple", "orange", "white", "black"};
static const Vec3 kColorRgb[8] = {{1, 0, 0}, {0, 1, 0},     {0, 0, 1}, {1, 1, 0},
                                  {0.5, 0, 0.5}, {1, 0.5, 0}, {1, 1, 1}, {0, 0, 0}};

const char* category_word(Category c) { return kWords[static_cast<int>(c)]; }

Category category_from_word(const std::string& word) {
  for (int i = 0; i < kCategoryCount; ++i)
    if (word == kWords[i]) return static_cast<Category>(i);
  if (word == "plane-patch") return Category::plane;
  throw std::invalid_argument("unknown category: " + word);
}

int category_color(int category) { return category % 8; }
Vec3 color_rgb(int palette_index) { return kColorRgb[palette_index % 8]; }
const char* color_word(int palette_index) { return kColorWords[palette_index % 8]; }

void CorpusSpec::validate() const {
  if (categories.size() < 2) throw std::invalid_argument("corpus needs at least 2 categories");
  for (Category c : categories)
    if (static_cast<int>(c) < 0 || static_cast<int>(c) >= kCategoryCount)
      throw std::invalid_argument("unknown category id");
  if (clouds_per_category < 1) throw std::invalid_argument("clouds_per_category must be >= 1");
  if (points_per_cloud < 4) throw std::invalid_argument("points_per_cloud must be >= 4");
  if (noise_stddev < 0) throw std::invalid_argument("noise_stddev must be >= 0");
}

// ------------------------------------------------------------- shape samplers

static Vec3 sphere_point(RandomStream& rng) {
  for (;;) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    double n = norm(v);
    if (n > 1e-9) return v / n;
  }
}

static Vec3 cube_point(RandomStream& rng) {
  int face = static_cast<int>(rng.below(6));
  double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
  double s = face % 2 == 0 ? 1.0 : -1.0;
  switch (face / 2) {
    case 0: return {s, u, v};
    case 1: return {u, s, v};
    default: return {u, v, s};
  }
}

static Vec3 cylinder_point(RandomStream& rng) {
  // slim column: radius 0.55, z in [-1,1]; parts weighted by area
  const double R = 0.55;
  const double lateral = 2 * R * 2.0, cap = R * R;  // common pi factor dropped
  double pick = rng.uniform(0, lateral + 2 * cap);
  double th = rng.uniform(0, 2 * M_PI);
  if (pick < lateral) return {R * std::cos(th), R * std::sin(th), rng.uniform(-1, 1)};
  double r = R * std::sqrt(rng.uniform());
  return {r * std::cos(th), r * std::sin(th), pick < lateral + cap ? 1.0 : -1.0};
}

static Vec3 cone_point(RandomStream& rng) {
  // apex (0,0,1), base circle radius 1 at z=-1; lateral pi*sqrt(5), base pi
  double lateral = M_PI * std::sqrt(5.0), total = lateral + M_PI;
  double th = rng.uniform(0, 2 * M_PI);
  if (rng.uniform(0, total) < lateral) {
    double rho = std::sqrt(rng.uniform());  // area-uniform along the slant
    return {rho * std::cos(th), rho * std::sin(th), 1.0 - 2.0 * rho};
  }
  double r = std::sqrt(rng.uniform());
  return {r * std::cos(th), r * std::sin(th), -1.0};
}

static Vec3 torus_point(RandomStream& rng) {
  const double R = 1.0, r = 0.35;
  double th = rng.uniform(0, 2 * M_PI);
  for (;;) {  // rejection on the minor angle for area-uniformity
    double ph = rng.uniform(0, 2 * M_PI);
    if (rng.uniform() <= (R + r * std::cos(ph)) / (R + r)) {
      double w = R + r * std::cos(ph);
      return {w * std::cos(th), w * std::sin(th), r * std::sin(ph)};
    }
  }
}

static Vec3 triangle_point(const Vec3& a, const Vec3& b, const Vec3& c, RandomStream& rng) {
  double u = rng.uniform(), v = rng.uniform();
  double su = std::sqrt(u);
  double wa = 1.0 - su, wb = su * (1.0 - v), wc = su * v;
  return a * wa + b * wb + c * wc;
}

static Vec3 pyramid_point(RandomStream& rng) {
  // square base side 2 at z=0, apex (0,0,1.4)
  const Vec3 apex{0, 0, 1.4};
  const Vec3 c0{1, 1, 0}, c1{-1, 1, 0}, c2{-1, -1, 0}, c3{1, -1, 0};
  // triangle areas: 4 equal lateral faces + base split into two triangles
  auto tri_area = [](const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 u = b - a, v = c - a;
    Vec3 x{u.y * v.z - u.z * v.y, u.z * v.x - u.x * v.z, u.x * v.y - u.y * v.x};
    return 0.5 * norm(x);
  };
  const double lat = tri_area(c0, c1, apex);
  const double base = tri_area(c0, c1, c2);
  double pick = rng.uniform(0, 4 * lat + 2 * base);
  if (pick < lat) return triangle_point(c0, c1, apex, rng);
  if (pick < 2 * lat) return triangle_point(c1, c2, apex, rng);
  if (pick < 3 * lat) return triangle_point(c2, c3, apex, rng);
  if (pick < 4 * lat) return triangle_point(c3, c0, apex, rng);
  if (pick < 4 * lat + base) return triangle_point(c0, c1, c2, rng);
  return triangle_point(c0, c2, c3, rng);
}

static Vec3 plane_point(RandomStream& rng) {
  return {rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0};
}

static Vec3 helix_point(RandomStream& rng) {
  double t = rng.uniform();  // two full turns
  double th = t * 4 * M_PI;
  return {std::cos(th), std::sin(th), 2.0 * t - 1.0};
}

std::vector<Vec3> sample_shape(Category c, int n, RandomStream& rng) {
  std::vector<Vec3> pts;
  pts.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    switch (c) {
      case Category::sphere: pts.push_back(sphere_point(rng)); break;
      case Category::cube: pts.push_back(cube_point(rng)); break;
      case Category::cylinder: pts.push_back(cylinder_point(rng)); break;
      case Category::cone: pts.push_back(cone_point(rng)); break;
      case Category::torus: pts.push_back(torus_point(rng)); break;
      case Category::pyramid: pts.push_back(pyramid_point(rng)); break;
      case Category::plane: pts.push_back(plane_point(rng)); break;
      case Category::helix: pts.push_back(helix_point(rng)); break;
    }
  }
  return pts;
}

geom::PointCloud make_cloud(Category c, const CorpusSpec& spec, RandomStream rng) {
  geom::PointCloud cloud;
  cloud.points = sample_shape(c, spec.points_per_cloud, rng);

  // anisotropic scale jitter: keeps flats flat and spheres ellipsoidal
  double sx = rng.uniform(0.9, 1.1), sy = rng.uniform(0.9, 1.1), sz = rng.uniform(0.9, 1.1);
  for (Vec3& p : cloud.points) {
    p.x *= sx;
    p.y *= sy;
    p.z *= sz;
  }
  if (spec.noise_stddev > 0)
    for (Vec3& p : cloud.points) {
      p.x += spec.noise_stddev * rng.normal();
      p.y += spec.noise_stddev * rng.normal();
      p.z += spec.noise_stddev * rng.normal();
    }

  cloud = geom::normalized_unit_sphere(std::move(cloud));
  int cat = static_cast<int>(c);
  cloud.label = cat;
  cloud.colors.assign(cloud.points.size(), color_rgb(category_color(cat)));
  return cloud;
}

victim::CaptionSeq category_caption(const victim::Vocabulary& vocab, int category) {
  victim::CaptionSeq seq;
  for (const char* w : {"a", "3d", "model", "of", "a"}) seq.ids.push_back(vocab.find(w));
  seq.ids.push_back(vocab.color_ids[static_cast<size_t>(category_color(category))]);
  seq.ids.push_back(vocab.category_ids[static_cast<size_t>(category)]);
  seq.ids.push_back(vocab.end_id);
  return seq;
}

Corpus generate(const CorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.vocab = victim::Vocabulary::standard();
  RandomStream root(spec.seed);

  for (Category c : spec.categories) {
    int cat = static_cast<int>(c);
    for (int i = 0; i < spec.clouds_per_category; ++i) {
      LabeledCloud lc;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s_%03d", category_word(c), i);
      lc.id = buf;
      lc.category = cat;
      lc.cloud = make_cloud(c, spec, root.derive(static_cast<uint64_t>(cat) * 100000 + i));
      lc.caption = category_caption(corpus.vocab, cat);
      corpus.clouds.push_back(std::move(lc));
    }
  }
  return corpus;
}

}  // namespace pcadv::corpus
