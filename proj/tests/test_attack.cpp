#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "pcadv/attack.hpp"
#include "pcadv/corpus.hpp"
#include "pcadv/eval.hpp"
#include "pcadv/geometry.hpp"
#include "pcadv/victim.hpp"

using namespace pcadv;
using attack::AttackConfig;
using attack::AttackRefs;
using attack::AttackResult;
using attack::PerturbState;
using victim::CaptionSeq;
using victim::VictimModel;

namespace {

geom::PointCloud random_normalized_cloud(size_t n, uint64_t seed) {
  RandomStream rng(seed);
  geom::PointCloud c;
  c.points.reserve(n);
  for (size_t i = 0; i < n; ++i)
    c.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  return geom::normalized_unit_sphere(std::move(c));
}

VictimModel small_model(uint64_t seed, int groups = 4, int group_size = 4) {
  victim::ModelConfig cfg;
  cfg.groups = groups;
  cfg.group_size = group_size;
  VictimModel m = VictimModel::random_init(cfg, victim::Vocabulary::standard(), seed);
  m.set_holdout_accuracy(1.0);  // structural tests bypass the training gate
  return m;
}

PerturbState random_state(const geom::PointCloud& cloud, size_t m, uint64_t seed,
                          double sigma_cap = 0.1) {
  RandomStream rng(seed);
  PerturbState st;
  std::vector<int32_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  st.keypoints.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  st.delta.resize(m);
  st.sigma.resize(m);
  for (size_t s = 0; s < m; ++s) {
    st.delta[s] = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
    st.sigma[s] = rng.uniform(0.01, sigma_cap);
  }
  return st;
}

AttackRefs caption_refs(const VictimModel& m, int gt_cat, int target_cat = -1) {
  AttackRefs refs;
  refs.ground_truth = corpus::category_caption(m.vocab(), gt_cat);
  if (target_cat >= 0) refs.target_caption = corpus::category_caption(m.vocab(), target_cat);
  return refs;
}

}  // namespace

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  CHECK_NOTHROW(cfg.validate(64));
  CHECK_THROWS_AS(cfg.validate(3), std::invalid_argument);  // too few points

  AttackConfig bad = cfg;
  bad.eta = 0;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);
  bad = cfg;
  bad.lambda0 = -1;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);
  bad = cfg;
  bad.lambda_max = bad.lambda0 / 2;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);
  bad = cfg;
  bad.lambda2 = -0.5;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);
  bad = cfg;
  bad.steps = -1;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);
  bad = cfg;
  bad.rounds = 0;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);
  bad = cfg;
  bad.keypoints = 65;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);
  bad = cfg;
  bad.keypoints = 0;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);
  bad = cfg;
  bad.smooth_k = 0;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);
  bad = cfg;
  bad.sigma_cap = 0;
  CHECK_THROWS_AS(bad.validate(64), std::invalid_argument);

  // latent mode ignores the point-space knobs
  bad = cfg;
  bad.perturb_latent = true;
  bad.keypoints = 10000;
  CHECK_NOTHROW(bad.validate(64));
}

TEST_CASE("perturb state validation") {
  geom::PointCloud cloud = random_normalized_cloud(20, 1);
  PerturbState st = random_state(cloud, 5, 2);
  CHECK_NOTHROW(st.validate());

  PerturbState bad = st;
  bad.delta.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = st;
  bad.keypoints[1] = bad.keypoints[0];
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = st;
  bad.sigma[2] = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = st;
  bad.delta[0].x = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = st;
  bad.keypoints.clear();
  bad.delta.clear();
  bad.sigma.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("keypoint selection: shape, determinism, score pool") {
  VictimModel m = small_model(5);
  geom::PointCloud cloud = random_normalized_cloud(48, 9);
  AttackConfig cfg;
  cfg.family = Family::vision;
  cfg.setting = Setting::untargeted;
  cfg.keypoints = 8;
  AttackRefs refs;

  std::vector<int32_t> kp = attack::select_keypoints(cloud, m, cfg, refs);
  REQUIRE(kp.size() == 8);
  CHECK(std::is_sorted(kp.begin(), kp.end()));
  CHECK(std::adjacent_find(kp.begin(), kp.end()) == kp.end());
  for (int32_t i : kp) {
    CHECK(i >= 0);
    CHECK(i < 48);
  }
  CHECK(attack::select_keypoints(cloud, m, cfg, refs) == kp);  // deterministic

  // for the untargeted vision loss the gradient vanishes at the clean cloud,
  // so stage 1 ranks by curvature spread alone: every pick must come from
  // the top-2M spread scores
  std::vector<double> spread =
      geom::curvature_spread(cloud, geom::knn(cloud, 16));
  std::vector<int32_t> order(48);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    if (spread[static_cast<size_t>(a)] != spread[static_cast<size_t>(b)])
      return spread[static_cast<size_t>(a)] > spread[static_cast<size_t>(b)];
    return a < b;
  });
  std::vector<int32_t> pool(order.begin(), order.begin() + 16);  // 2M
  for (int32_t i : kp)
    CHECK(std::find(pool.begin(), pool.end(), i) != pool.end());

  // disabling the module or asking for every point returns the identity
  AttackConfig all = cfg;
  all.use_ksm = false;
  std::vector<int32_t> every = attack::select_keypoints(cloud, m, all, refs);
  REQUIRE(every.size() == 48);
  for (int32_t i = 0; i < 48; ++i) CHECK(every[static_cast<size_t>(i)] == i);

  AttackConfig full = cfg;
  full.keypoints = 48;
  CHECK(attack::select_keypoints(cloud, m, full, refs) == every);
}

TEST_CASE("smoothing weights: normalized rows over the nearest keypoints") {
  geom::PointCloud cloud = random_normalized_cloud(40, 3);
  PerturbState st = random_state(cloud, 6, 4);
  const int k = 3;
  attack::SmoothWeights w = attack::smoothing_weights(cloud, st, k);
  REQUIRE(w.k == 3);
  REQUIRE(w.slot.size() == 40 * 3);
  REQUIRE(w.w.size() == 40 * 3);

  std::vector<Vec3> kp;
  for (int32_t i : st.keypoints) kp.push_back(cloud.points[static_cast<size_t>(i)]);

  for (size_t j = 0; j < 40; ++j) {
    double row = 0;
    for (int s = 0; s < 3; ++s) {
      CHECK(w.w[j * 3 + static_cast<size_t>(s)] >= 0.0);
      row += w.w[j * 3 + static_cast<size_t>(s)];
    }
    CHECK(std::abs(row - 1.0) <= 1e-12);

    // slots are the three nearest keypoints of point j
    std::vector<std::pair<double, int32_t>> d;
    for (size_t s = 0; s < kp.size(); ++s)
      d.push_back({dist2(cloud.points[j], kp[s]), static_cast<int32_t>(s)});
    std::sort(d.begin(), d.end());
    for (int s = 0; s < 3; ++s) CHECK(w.slot[j * 3 + static_cast<size_t>(s)] == d[static_cast<size_t>(s)].second);

    // Gaussian weights: w_s proportional to exp(-d^2 / (2 sigma_slot^2))
    double denom = 0;
    std::array<double, 3> expect{};
    for (int s = 0; s < 3; ++s) {
      double sg = st.sigma[static_cast<size_t>(d[static_cast<size_t>(s)].second)];
      expect[static_cast<size_t>(s)] =
          std::exp(-d[static_cast<size_t>(s)].first / (2.0 * sg * sg));
      denom += expect[static_cast<size_t>(s)];
    }
    for (int s = 0; s < 3; ++s)
      CHECK(w.w[j * 3 + static_cast<size_t>(s)] ==
            doctest::Approx(expect[static_cast<size_t>(s)] / denom).epsilon(1e-9));
  }
}

TEST_CASE("smoothed offsets are certified convex combinations") {
  geom::PointCloud cloud = random_normalized_cloud(30, 13);
  PerturbState st = random_state(cloud, 5, 14);
  const int k = 4;
  attack::SmoothWeights w = attack::smoothing_weights(cloud, st, k);
  std::vector<Vec3> off = attack::smooth_perturbation(cloud, st, k);
  REQUIRE(off.size() == 30);

  for (size_t j = 0; j < 30; ++j) {
    Vec3 expect{};
    for (int s = 0; s < w.k; ++s) {
      const Vec3& d = st.delta[static_cast<size_t>(w.slot[j * static_cast<size_t>(w.k) + static_cast<size_t>(s)])];
      expect += d * w.w[j * static_cast<size_t>(w.k) + static_cast<size_t>(s)];
    }
    CHECK(std::abs(off[j].x - expect.x) < 1e-12);
    CHECK(std::abs(off[j].y - expect.y) < 1e-12);
    CHECK(std::abs(off[j].z - expect.z) < 1e-12);

    // inside the coordinatewise bounding box of the keypoint offsets
    for (int d = 0; d < 3; ++d) {
      double lo = st.delta[0][d], hi = st.delta[0][d];
      for (const Vec3& dd : st.delta) {
        lo = std::min(lo, dd[d]);
        hi = std::max(hi, dd[d]);
      }
      CHECK(off[j][d] >= lo - 1e-12);
      CHECK(off[j][d] <= hi + 1e-12);
    }
  }
}

TEST_CASE("smoothing edge cases: clamping, single keypoint, identity limit") {
  geom::PointCloud cloud = random_normalized_cloud(25, 21);

  PerturbState one = random_state(cloud, 1, 22);
  attack::SmoothWeights w1 = attack::smoothing_weights(cloud, one, 5);
  CHECK(w1.k == 1);  // k clamped to M
  std::vector<Vec3> off1 = attack::smooth_perturbation(cloud, one, 5);
  for (const Vec3& o : off1) {
    CHECK(o.x == doctest::Approx(one.delta[0].x));
    CHECK(o.y == doctest::Approx(one.delta[0].y));
    CHECK(o.z == doctest::Approx(one.delta[0].z));
  }

  // every point a keypoint with a collapsed bandwidth: the smoothing matrix
  // degenerates to the identity and each point receives exactly its own delta
  PerturbState all = random_state(cloud, 25, 23);
  for (double& s : all.sigma) s = 1e-4;
  std::vector<Vec3> off = attack::smooth_perturbation(cloud, all, 4);
  for (size_t j = 0; j < 25; ++j) {
    size_t slot = 0;
    while (all.keypoints[slot] != static_cast<int32_t>(j)) ++slot;
    CHECK(std::abs(off[j].x - all.delta[slot].x) < 1e-9);
    CHECK(std::abs(off[j].y - all.delta[slot].y) < 1e-9);
    CHECK(std::abs(off[j].z - all.delta[slot].z) < 1e-9);
  }

  PerturbState bad = random_state(cloud, 3, 24);
  bad.keypoints[0] = 25;  // out of range
  CHECK_THROWS_AS(attack::smoothing_weights(cloud, bad, 2), std::invalid_argument);
  CHECK_THROWS_AS(attack::smoothing_weights(cloud, random_state(cloud, 3, 25), 0),
                  std::invalid_argument);
}

TEST_CASE("vision loss over token features") {
  victim::TokenFeatures a, b;
  a.groups = b.groups = 1;
  a.dim = b.dim = 3;
  a.flat = {1, 0, 0};
  b.flat = {1, 0, 0};
  CHECK(attack::loss_vision(a, b, Setting::untargeted) == doctest::Approx(1.0));
  CHECK(attack::loss_vision(a, b, Setting::targeted) == doctest::Approx(0.0));

  b.flat = {0, 1, 0};
  CHECK(attack::loss_vision(a, b, Setting::untargeted) == doctest::Approx(0.0));
  CHECK(attack::loss_vision(a, b, Setting::targeted) == doctest::Approx(1.0));

  b.flat = {-2, 0, 0};
  CHECK(attack::loss_vision(a, b, Setting::untargeted) == doctest::Approx(-1.0));
  CHECK(attack::loss_vision(a, b, Setting::targeted) == doctest::Approx(2.0));

  victim::TokenFeatures short_one = b;
  short_one.flat = {1, 0};
  CHECK_THROWS_AS(attack::loss_vision(a, short_one, Setting::untargeted),
                  std::invalid_argument);
  victim::TokenFeatures zero = a;
  zero.flat = {0, 0, 0};
  CHECK_THROWS_AS(attack::loss_vision(a, zero, Setting::untargeted), std::domain_error);
}

TEST_CASE("caption loss is the signed teacher-forced logprob") {
  VictimModel m = small_model(31);
  geom::PointCloud cloud = random_normalized_cloud(16, 32);
  CaptionSeq prompt{{m.vocab().start_id}};
  CaptionSeq ref = corpus::category_caption(m.vocab(), 4);

  double lp = m.caption_logprob(cloud, prompt, ref);
  CHECK(attack::loss_caption(m, cloud, prompt, ref, Setting::untargeted) ==
        doctest::Approx(lp));
  CHECK(attack::loss_caption(m, cloud, prompt, ref, Setting::targeted) ==
        doctest::Approx(-lp));

  CaptionSeq empty;
  CHECK_THROWS_AS(attack::loss_caption(m, cloud, prompt, empty, Setting::untargeted),
                  std::invalid_argument);
}

TEST_CASE("regularization losses against hand oracles") {
  geom::PointCloud cloud = random_normalized_cloud(36, 41);
  AttackConfig cfg;
  cfg.lambda1 = 2.0;
  cfg.lambda2 = 0.5;
  cfg.lambda3 = 0.25;
  cfg.sigma_cap = 0.1;

  // resting state: no offsets, bandwidths at the cap, clean == adv
  PerturbState rest = random_state(cloud, 6, 42);
  for (Vec3& d : rest.delta) d = {0, 0, 0};
  for (double& s : rest.sigma) s = cfg.sigma_cap;
  attack::RegLosses r0 = attack::regularization_losses(cloud, cloud, rest, cfg);
  CHECK(r0.ker == doctest::Approx(0.0));
  CHECK(r0.cha == doctest::Approx(0.0));
  CHECK(r0.dis == doctest::Approx(cfg.lambda2 * r0.hid));

  // sigma proportional to the keypoint curvature spread maximizes alignment
  std::vector<double> spread = geom::curvature_spread(cloud, geom::knn(cloud, 16));
  PerturbState aligned = rest;
  bool nonzero = false;
  for (size_t s = 0; s < aligned.keypoints.size(); ++s) {
    double c = spread[static_cast<size_t>(aligned.keypoints[s])];
    aligned.sigma[s] = std::max(1e-6, 3.0 * c);
    if (c > 0) nonzero = true;
  }
  REQUIRE(nonzero);
  attack::RegLosses ra = attack::regularization_losses(cloud, cloud, aligned, cfg);
  CHECK(ra.hid == doctest::Approx(-1.0).epsilon(1e-6));

  // general state: recompute every term independently
  PerturbState st = random_state(cloud, 6, 43);
  geom::PointCloud adv = cloud;
  std::vector<Vec3> off = attack::smooth_perturbation(cloud, st, 4);
  for (size_t j = 0; j < adv.size(); ++j) adv.points[j] += off[j];
  attack::RegLosses r = attack::regularization_losses(cloud, adv, st, cfg);

  double d2 = 0, c2 = 0;
  for (const Vec3& d : st.delta) d2 += norm2(d);
  for (double s : st.sigma) c2 += (cfg.sigma_cap - s) * (cfg.sigma_cap - s);
  CHECK(r.ker == doctest::Approx(std::sqrt(d2) + std::sqrt(c2)).epsilon(1e-12));

  double num = 0, ss = 0, cc = 0;
  for (size_t s = 0; s < st.keypoints.size(); ++s) {
    double c = spread[static_cast<size_t>(st.keypoints[s])];
    num += st.sigma[s] * c;
    ss += st.sigma[s] * st.sigma[s];
    cc += c * c;
  }
  CHECK(r.hid == doctest::Approx(-num / (std::sqrt(ss) * std::sqrt(cc))).epsilon(1e-12));
  CHECK(r.cha == doctest::Approx(geom::chamfer_distance(cloud, adv)).epsilon(1e-12));
  CHECK(r.dis ==
        doctest::Approx(cfg.lambda1 * r.ker + cfg.lambda2 * r.hid + cfg.lambda3 * r.cha)
            .epsilon(1e-12));

  // flat geometry: the spread vector vanishes and the alignment term is zero
  geom::PointCloud plane;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) plane.points.push_back({i * 0.2 - 0.5, j * 0.2 - 0.5, 0.0});
  PerturbState pst = random_state(plane, 4, 44);
  CHECK(attack::regularization_losses(plane, plane, pst, cfg).hid == 0.0);
}

TEST_CASE("attack objective gradients match finite differences") {
  VictimModel m = small_model(51);
  geom::PointCloud cloud = random_normalized_cloud(16, 52);
  geom::PointCloud target_cloud = random_normalized_cloud(16, 53);

  AttackConfig base;
  base.keypoints = 6;
  base.smooth_k = 3;

  auto check = [&](Family family, Setting setting, bool latent, double tol) {
    AttackConfig cfg = base;
    cfg.family = family;
    cfg.setting = setting;
    cfg.perturb_latent = latent;
    AttackRefs refs = caption_refs(m, 2, 5);
    refs.target_cloud = target_cloud;
    attack::AttackProblem problem(m, cloud, refs, cfg);

    RandomStream rng(54);
    std::vector<double> x = problem.initial_x(rng);
    problem.clamp(x);

    grad::ScalarFn f = [&](grad::Tape& tape, std::span<const grad::Var> vars) {
      return problem.loss(tape, vars, 0.7);
    };
    double err = grad::finite_diff_check(f, x, 1e-5);
    CAPTURE(static_cast<int>(family));
    CAPTURE(static_cast<int>(setting));
    CAPTURE(latent);
    CHECK(err < tol);
  };

  check(Family::vision, Setting::untargeted, false, 1e-4);
  check(Family::vision, Setting::targeted, false, 1e-4);
  check(Family::caption, Setting::untargeted, false, 1e-4);
  check(Family::caption, Setting::targeted, false, 1e-4);
  check(Family::caption, Setting::targeted, true, 1e-4);  // latent ablation

  // the distance term alone
  AttackConfig cfg = base;
  cfg.family = Family::caption;
  cfg.setting = Setting::untargeted;
  AttackRefs refs = caption_refs(m, 2);
  attack::AttackProblem problem(m, cloud, refs, cfg);
  RandomStream rng(55);
  std::vector<double> x = problem.initial_x(rng);
  problem.clamp(x);
  grad::ScalarFn dis = [&](grad::Tape& tape, std::span<const grad::Var> vars) {
    return problem.dis_loss(tape, vars);
  };
  CHECK(grad::finite_diff_check(dis, x, 1e-5) < 1e-4);
}

TEST_CASE("run_attack requires an attack-eligible victim") {
  victim::ModelConfig cfg;
  cfg.groups = 4;
  cfg.group_size = 4;
  VictimModel m = VictimModel::random_init(cfg, victim::Vocabulary::standard(), 61);
  CHECK(m.holdout_accuracy() < 0.95);

  geom::PointCloud cloud = random_normalized_cloud(16, 62);
  AttackConfig acfg;
  acfg.keypoints = 4;
  CHECK_THROWS_AS(attack::run_attack(m, cloud, caption_refs(m, 0), acfg, 1),
                  std::invalid_argument);
}

TEST_CASE("run_attack: structure, determinism, trace length") {
  VictimModel m = small_model(63);
  geom::PointCloud cloud = random_normalized_cloud(20, 64);
  AttackConfig cfg;
  cfg.family = Family::caption;
  cfg.setting = Setting::untargeted;
  cfg.keypoints = 6;
  cfg.smooth_k = 3;
  cfg.steps = 5;
  cfg.eta = 0.01;
  AttackRefs refs = caption_refs(m, 3);

  AttackResult r1 = attack::run_attack(m, cloud, refs, cfg, 7);
  CHECK(r1.loss_trace.size() == 5);
  CHECK(r1.rounds_run == 1);
  CHECK(r1.final_lambda == cfg.lambda0);
  CHECK_FALSE(r1.aborted);
  CHECK(r1.adversarial.size() == cloud.size());
  CHECK_NOTHROW(r1.adv_caption.validate(m.vocab(), true));
  CHECK(r1.csd >= 0.0);
  CHECK(r1.cd > 0.0);
  CHECK(r1.hd > 0.0);

  AttackResult r2 = attack::run_attack(m, cloud, refs, cfg, 7);
  for (size_t j = 0; j < cloud.size(); ++j) {
    CHECK(r1.adversarial.points[j].x == r2.adversarial.points[j].x);
    CHECK(r1.adversarial.points[j].y == r2.adversarial.points[j].y);
    CHECK(r1.adversarial.points[j].z == r2.adversarial.points[j].z);
  }
  CHECK(r1.loss_trace == r2.loss_trace);

  AttackResult r3 = attack::run_attack(m, cloud, refs, cfg, 8);
  bool moved = false;
  for (size_t j = 0; j < cloud.size(); ++j)
    if (r3.adversarial.points[j].x != r1.adversarial.points[j].x) moved = true;
  CHECK(moved);  // different seed, different init
}

TEST_CASE("run_attack with zero steps stays at the initial perturbation") {
  VictimModel m = small_model(65);
  geom::PointCloud cloud = random_normalized_cloud(16, 66);
  AttackConfig cfg;
  cfg.family = Family::vision;
  cfg.setting = Setting::untargeted;
  cfg.keypoints = 5;
  cfg.steps = 0;
  AttackRefs refs;
  refs.gt_category = 2;

  AttackResult r = attack::run_attack(m, cloud, refs, cfg, 3);
  CHECK(r.loss_trace.empty());
  CHECK_FALSE(r.aborted);
  CHECK(r.cd < 1e-4);   // init offsets are U(-1e-3, 1e-3)
  CHECK(r.hd < 5e-3);
  CHECK(r.final_cosine > 0.99);
}

TEST_CASE("run_attack aborts on exploding losses with diagnostics") {
  VictimModel m = small_model(67);
  geom::PointCloud cloud = random_normalized_cloud(16, 68);
  AttackConfig cfg;
  cfg.family = Family::caption;
  cfg.setting = Setting::untargeted;
  cfg.keypoints = 5;
  cfg.steps = 12;
  cfg.eta = 1e300;  // guaranteed blow-up
  AttackRefs refs = caption_refs(m, 1);

  AttackResult r = attack::run_attack(m, cloud, refs, cfg, 5);
  CHECK(r.aborted);
  CHECK_FALSE(r.success);
  CHECK(r.diagnostics.find("aborted at step") != std::string::npos);
  CHECK(r.loss_trace.size() < 12);  // stopped early
}

TEST_CASE("dynamic constraint follows the scripted bisection schedule") {
  VictimModel m = small_model(71);
  geom::PointCloud cloud = random_normalized_cloud(16, 72);
  AttackConfig cfg;
  cfg.family = Family::vision;
  cfg.setting = Setting::untargeted;
  cfg.keypoints = 5;
  cfg.steps = 0;  // the judge alone drives the schedule
  cfg.lambda0 = 1.0;
  cfg.lambda_max = 64.0;
  AttackRefs refs;
  refs.gt_category = 0;

  auto scripted = [](std::vector<char> script, int* calls) {
    return [script = std::move(script), calls](const CaptionSeq&) {
      size_t i = std::min(static_cast<size_t>(*calls), script.size() - 1);
      ++*calls;
      return script[i] != 0;
    };
  };

  {
    // every round succeeds: lambda climbs 1 -> 32.5 -> 48.25, bracket
    // [lo, 64] halving after round 1
    int calls = 0;
    cfg.rounds = 3;
    AttackResult r =
        attack::dynamic_constraint(m, cloud, refs, cfg, 1, scripted({1, 1, 1, 1}, &calls));
    CHECK(r.rounds_run == 3);
    CHECK(r.final_lambda == doctest::Approx(48.25));
    CHECK(r.success);
    CHECK(calls == 4);  // one per round plus the final re-judging
  }
  {
    int calls = 0;
    cfg.rounds = 4;
    AttackResult r =
        attack::dynamic_constraint(m, cloud, refs, cfg, 1, scripted({1, 1, 1, 1, 1}, &calls));
    CHECK(r.rounds_run == 4);
    CHECK(r.final_lambda == doctest::Approx(56.125));  // (48.25 + 64) / 2
  }
  {
    // every round fails: lambda collapses 1 -> 0.5 -> 0.25, keeping the
    // final (still unsuccessful) weight
    int calls = 0;
    cfg.rounds = 3;
    AttackResult r =
        attack::dynamic_constraint(m, cloud, refs, cfg, 1, scripted({0, 0, 0, 0}, &calls));
    CHECK(r.rounds_run == 3);
    CHECK(r.final_lambda == doctest::Approx(0.25));
    CHECK_FALSE(r.success);
    CHECK(calls == 4);
  }
  {
    // success only in round 1: later failures must not discard the snapshot
    int calls = 0;
    cfg.rounds = 3;
    AttackResult r =
        attack::dynamic_constraint(m, cloud, refs, cfg, 1, scripted({1, 0, 0, 1}, &calls));
    CHECK(r.rounds_run == 3);
    CHECK(r.final_lambda == doctest::Approx(1.0));
    CHECK(r.success);
  }
  {
    // trace length counts executed steps across every round
    int calls = 0;
    AttackConfig stepped = cfg;
    stepped.steps = 2;
    stepped.rounds = 3;
    stepped.eta = 1e-6;
    AttackResult r =
        attack::dynamic_constraint(m, cloud, refs, stepped, 1, scripted({1, 1, 1, 1}, &calls));
    CHECK(r.loss_trace.size() == 6);
  }
}

TEST_CASE("a heavier chamfer weight pulls the adversarial cloud home") {
  VictimModel m = small_model(81);
  geom::PointCloud cloud = random_normalized_cloud(24, 82);
  AttackRefs refs = caption_refs(m, 3);

  std::vector<double> cds;
  for (double l3 : {1e-3, 1e-1, 10.0}) {
    AttackConfig cfg;
    cfg.family = Family::caption;
    cfg.setting = Setting::untargeted;
    cfg.keypoints = 8;
    cfg.smooth_k = 4;
    cfg.steps = 60;
    cfg.eta = 0.05;
    cfg.lambda3 = l3;
    AttackResult r = attack::run_attack(m, cloud, refs, cfg, 11);
    REQUIRE_FALSE(r.aborted);
    cds.push_back(r.cd);
  }
  CHECK(cds[1] <= cds[0] + 1e-12);
  CHECK(cds[2] <= cds[1] + 1e-12);
  CHECK(cds[2] < cds[0]);
}
