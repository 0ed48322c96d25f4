#include "pcadv/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "pcadv/eval.hpp"

namespace pcadv::attack {

using geom::PointCloud;
using grad::Tape;
using grad::Var;
using victim::CaptionSeq;
using victim::TokenFeatures;
using victim::VictimModel;

// ------------------------------------------------------------ config & state

void AttackConfig::validate(size_t n_points) const {
  auto bad = [](double v) { return !std::isfinite(v); };
  if (n_points < 4) throw std::invalid_argument("attack: cloud needs at least 4 points");
  if (bad(lambda0) || lambda0 < 0) throw std::invalid_argument("attack: lambda0 must be >= 0");
  if (bad(lambda_max) || lambda_max < lambda0)
    throw std::invalid_argument("attack: lambda_max must be >= lambda0");
  if (bad(lambda1) || bad(lambda2) || bad(lambda3) || lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
    throw std::invalid_argument("attack: distance-term weights must be >= 0");
  if (bad(eta) || eta <= 0) throw std::invalid_argument("attack: step size must be positive");
  if (steps < 0) throw std::invalid_argument("attack: negative step count");
  if (rounds < 1) throw std::invalid_argument("attack: rounds must be >= 1");
  if (bad(sigma_cap) || sigma_cap <= 0)
    throw std::invalid_argument("attack: sigma cap must be positive");
  if (!perturb_latent) {
    if (use_ksm && (keypoints < 1 || static_cast<size_t>(keypoints) > n_points))
      throw std::invalid_argument("attack: keypoint count must be in [1, N]");
    if (smooth_k < 1) throw std::invalid_argument("attack: smooth_k must be >= 1");
  }
}

void PerturbState::validate() const {
  const size_t m = keypoints.size();
  if (m == 0) throw std::invalid_argument("perturb state: no keypoints");
  if (delta.size() != m || sigma.size() != m)
    throw std::invalid_argument("perturb state: delta/sigma size mismatch");
  std::vector<int32_t> sorted(keypoints);
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() < 0 || std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("perturb state: keypoint indices must be distinct and >= 0");
  for (const Vec3& d : delta)
    if (!finite(d)) throw std::invalid_argument("perturb state: non-finite delta");
  for (double s : sigma)
    if (!std::isfinite(s) || s <= 0)
      throw std::invalid_argument("perturb state: sigma must be positive and finite");
}

// ----------------------------------------------------------------- internals

namespace {

constexpr double kNormEps = 1e-12;  // smooths |.|_2 at the origin

std::vector<double> flatten(const PointCloud& c) {
  std::vector<double> f(3 * c.size());
  for (size_t i = 0; i < c.size(); ++i) {
    f[3 * i] = c.points[i].x;
    f[3 * i + 1] = c.points[i].y;
    f[3 * i + 2] = c.points[i].z;
  }
  return f;
}

double plain_cos(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("cosine: vector size mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) throw std::domain_error("cosine of zero-norm vector");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// sqrt(v.v + eps^2): differentiable at the origin, off by at most eps
Var taped_norm(Tape& tape, std::span<const Var> v) {
  return grad::sqrt(tape.dot(v, v) + kNormEps * kNormEps);
}

// cos(v, c) against a recording-time constant reference
Var taped_cos_const(Tape& tape, std::span<const Var> v, std::span<const double> c) {
  if (v.size() != c.size()) throw std::invalid_argument("cosine: vector size mismatch");
  double cn = 0;
  for (double x : c) cn += x * x;
  cn = std::sqrt(cn);
  if (cn == 0) throw std::domain_error("cosine of zero-norm reference");
  Var num = tape.affine(v, c, 0.0);
  return num / (taped_norm(tape, v) * cn);
}

CaptionSeq resolve_prompt(const victim::Vocabulary& vocab, const AttackRefs& refs) {
  if (refs.prompt.ids.empty()) return CaptionSeq{{vocab.start_id}};
  refs.prompt.validate(vocab, false);
  return refs.prompt;
}

const CaptionSeq& caption_reference(const AttackRefs& refs, Setting setting) {
  if (setting == Setting::untargeted) {
    if (refs.ground_truth.ids.empty())
      throw std::invalid_argument(
          "attack: untargeted caption attack needs the ground-truth caption");
    return refs.ground_truth;
  }
  if (!refs.target_caption)
    throw std::invalid_argument("attack: targeted caption attack needs a target caption");
  return *refs.target_caption;
}

int category_from_ids(const victim::Vocabulary& vocab, const CaptionSeq& cap) {
  auto c = eval::classify_from_caption(cap, vocab);
  return c ? *c : -1;
}

// nearest-keypoint tables shared by the plain and taped smoothing paths;
// rows ordered by (distance, slot) so both compute bit-identical weights
struct SmoothTables {
  int k = 0;
  std::vector<int32_t> slot;
  std::vector<double> d2;
};

SmoothTables build_tables(const std::vector<Vec3>& pts, const std::vector<Vec3>& kp, int k) {
  const size_t n = pts.size();
  SmoothTables t;
  t.k = k;
  t.slot.resize(n * k);
  t.d2.resize(n * k);
  std::vector<std::pair<double, int32_t>> d(kp.size());
  for (size_t j = 0; j < n; ++j) {
    for (size_t s = 0; s < kp.size(); ++s)
      d[s] = {dist2(pts[j], kp[s]), static_cast<int32_t>(s)};
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    for (int s = 0; s < k; ++s) {
      t.slot[j * k + s] = d[s].second;
      t.d2[j * k + s] = d[s].first;
    }
  }
  return t;
}

}  // namespace

// ----------------------------------------------------------- keypoints (KSM)

std::vector<int32_t> select_keypoints(const PointCloud& cloud, const VictimModel& model,
                                      const AttackConfig& cfg, const AttackRefs& refs) {
  cloud.validate();
  const size_t n = cloud.size();
  cfg.validate(n);

  std::vector<int32_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (!cfg.use_ksm || static_cast<size_t>(cfg.keypoints) == n) return all;
  const int m = cfg.keypoints;

  // stage 1: curvature spread plus the magnitude of the adversarial-loss
  // gradient at the unperturbed cloud
  const int kc = static_cast<int>(std::min<size_t>(16, n - 1));
  std::vector<double> spread = geom::curvature_spread(cloud, geom::knn(cloud, kc));

  victim::Grouping grouping = model.make_grouping(cloud);
  Tape tape;
  std::vector<double> flat = flatten(cloud);
  std::vector<Var> coords;
  coords.reserve(flat.size());
  for (double v : flat) coords.push_back(tape.input(v));
  std::vector<Var> feats = model.encode_taped(tape, coords, grouping);

  Var adv;
  if (cfg.family == Family::vision) {
    std::vector<double> ref;
    if (cfg.setting == Setting::targeted) {
      if (!refs.target_cloud)
        throw std::invalid_argument("attack: targeted vision attack needs a target cloud");
      ref = model.encode(*refs.target_cloud).flat;
    } else {
      ref = model.encode(cloud, grouping).flat;
    }
    Var c = taped_cos_const(tape, feats, ref);
    adv = cfg.setting == Setting::untargeted ? c : 1.0 - c;
  } else {
    CaptionSeq prompt = resolve_prompt(model.vocab(), refs);
    const CaptionSeq& ref = caption_reference(refs, cfg.setting);
    ref.validate(model.vocab(), true);
    Var lp = model.caption_logprob_taped(tape, feats, prompt, ref);
    adv = cfg.setting == Setting::untargeted ? lp : -lp;
  }
  std::vector<double> g = tape.gradient(adv, coords);

  std::vector<double> score(n);
  for (size_t i = 0; i < n; ++i) {
    double gx = g[3 * i], gy = g[3 * i + 1], gz = g[3 * i + 2];
    score[i] = spread[i] + std::sqrt(gx * gx + gy * gy + gz * gz);
  }

  // stage 2: farthest point sampling over the top-2M scores, seeded at the
  // best-scored candidate
  std::vector<int32_t> order(all);
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  const size_t pool = std::min<size_t>(2 * static_cast<size_t>(m), n);
  std::vector<int32_t> cand(order.begin(), order.begin() + pool);
  const int32_t best = cand.front();
  std::sort(cand.begin(), cand.end());
  const int seed_pos =
      static_cast<int>(std::lower_bound(cand.begin(), cand.end(), best) - cand.begin());

  std::vector<int32_t> picked = geom::farthest_point_sample(cloud.points, cand, m, seed_pos);
  std::sort(picked.begin(), picked.end());
  return picked;
}

// ------------------------------------------------------------ smoothing (GSM)

SmoothWeights smoothing_weights(const PointCloud& cloud, const PerturbState& state, int k) {
  cloud.validate();
  state.validate();
  const size_t n = cloud.size(), m = state.keypoints.size();
  for (int32_t idx : state.keypoints)
    if (static_cast<size_t>(idx) >= n)
      throw std::invalid_argument("smoothing: keypoint index out of range");
  if (k < 1) throw std::invalid_argument("smoothing: k must be >= 1");
  const int ke = static_cast<int>(std::min<size_t>(static_cast<size_t>(k), m));

  std::vector<Vec3> kp(m);
  for (size_t s = 0; s < m; ++s) kp[s] = cloud.points[static_cast<size_t>(state.keypoints[s])];
  SmoothTables t = build_tables(cloud.points, kp, ke);

  SmoothWeights out;
  out.k = ke;
  out.slot = std::move(t.slot);
  out.w.resize(n * ke);
  std::vector<double> e(ke);
  for (size_t j = 0; j < n; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < ke; ++s) {
      double sg = state.sigma[static_cast<size_t>(out.slot[j * ke + s])];
      e[s] = 0.5 / (sg * sg) * -t.d2[j * ke + s];
      mx = std::max(mx, e[s]);
    }
    double total = 0;
    for (int s = 0; s < ke; ++s) {
      e[s] = std::exp(e[s] - mx);
      total += e[s];
    }
    for (int s = 0; s < ke; ++s) out.w[j * ke + s] = e[s] / total;
  }
  return out;
}

std::vector<Vec3> smooth_perturbation(const PointCloud& cloud, const PerturbState& state, int k) {
  SmoothWeights w = smoothing_weights(cloud, state, k);
  std::vector<Vec3> off(cloud.size(), Vec3{});
  for (size_t j = 0; j < cloud.size(); ++j) {
    Vec3 o{};
    for (int s = 0; s < w.k; ++s) {
      const Vec3& d = state.delta[static_cast<size_t>(w.slot[j * w.k + s])];
      double ws = w.w[j * w.k + s];
      o.x += ws * d.x;
      o.y += ws * d.y;
      o.z += ws * d.z;
    }
    off[j] = o;
  }
  return off;
}

// ------------------------------------------------------------- plain losses

double loss_vision(const TokenFeatures& ref, const TokenFeatures& adv, Setting setting) {
  if (ref.flat.size() != adv.flat.size() || ref.flat.empty())
    throw std::invalid_argument("loss_vision: feature shape mismatch");
  double c = plain_cos(ref.flat, adv.flat);
  return setting == Setting::untargeted ? c : 1.0 - c;
}

double loss_caption(const VictimModel& model, const PointCloud& adv_cloud,
                    const CaptionSeq& prompt, const CaptionSeq& ref, Setting setting) {
  double lp = model.caption_logprob(adv_cloud, prompt, ref);
  return setting == Setting::untargeted ? lp : -lp;
}

RegLosses regularization_losses(const PointCloud& cloud, const PointCloud& adv_cloud,
                                const PerturbState& state, const AttackConfig& cfg) {
  cloud.validate();
  adv_cloud.validate();
  state.validate();
  const size_t n = cloud.size();
  if (n < 4) throw std::invalid_argument("regularization: cloud needs at least 4 points");
  for (int32_t idx : state.keypoints)
    if (static_cast<size_t>(idx) >= n)
      throw std::invalid_argument("regularization: keypoint index out of range");

  RegLosses r;
  double d2 = 0, c2 = 0;
  for (const Vec3& d : state.delta) d2 += norm2(d);
  for (double s : state.sigma) {
    double c = cfg.sigma_cap - s;
    c2 += c * c;
  }
  r.ker = std::sqrt(d2) + std::sqrt(c2);

  const int kc = static_cast<int>(std::min<size_t>(16, n - 1));
  std::vector<double> spread = geom::curvature_spread(cloud, geom::knn(cloud, kc));
  double num = 0, ss = 0, cc = 0;
  for (size_t s = 0; s < state.keypoints.size(); ++s) {
    double c = spread[static_cast<size_t>(state.keypoints[s])];
    num += state.sigma[s] * c;
    ss += state.sigma[s] * state.sigma[s];
    cc += c * c;
  }
  r.hid = cc > kNormEps * kNormEps ? -num / (std::sqrt(ss) * std::sqrt(cc)) : 0.0;
  r.cha = geom::chamfer_distance(cloud, adv_cloud);
  r.dis = cfg.lambda1 * r.ker + cfg.lambda2 * r.hid + cfg.lambda3 * r.cha;
  return r;
}

// ------------------------------------------------------------- AttackProblem

AttackProblem::AttackProblem(const VictimModel& model, const PointCloud& clean,
                             const AttackRefs& refs, const AttackConfig& cfg)
    : model_(&model), clean_(clean), refs_(refs), cfg_(cfg) {
  clean_.validate();
  cfg_.validate(clean_.size());
  prompt_ = resolve_prompt(model.vocab(), refs_);
  if (!refs_.ground_truth.ids.empty()) refs_.ground_truth.validate(model.vocab(), true);

  grouping_ = model.make_grouping(clean_);
  clean_feats_ = model.encode(clean_, grouping_);
  clean_flat_ = flatten(clean_);

  if (cfg_.family == Family::vision && cfg_.setting == Setting::targeted) {
    if (!refs_.target_cloud)
      throw std::invalid_argument("attack: targeted vision attack needs a target cloud");
    refs_.target_cloud->validate();
    target_feats_ = model.encode(*refs_.target_cloud);
  }
  if (cfg_.family == Family::caption)
    caption_reference(refs_, cfg_.setting).validate(model.vocab(), true);

  if (cfg_.perturb_latent) return;

  keypoints_ = select_keypoints(clean_, model, cfg_, refs_);
  const size_t m = keypoints_.size();
  k_ = static_cast<int>(std::min<size_t>(static_cast<size_t>(cfg_.smooth_k), m));
  if (cfg_.use_gsm) {
    std::vector<Vec3> kp(m);
    for (size_t s = 0; s < m; ++s) kp[s] = clean_.points[static_cast<size_t>(keypoints_[s])];
    SmoothTables t = build_tables(clean_.points, kp, k_);
    kp_slot_ = std::move(t.slot);
    kp_d2_ = std::move(t.d2);
  }
  const int kc = static_cast<int>(std::min<size_t>(16, clean_.size() - 1));
  std::vector<double> spread = geom::curvature_spread(clean_, geom::knn(clean_, kc));
  cstd_kp_.resize(m);
  double cc = 0;
  for (size_t s = 0; s < m; ++s) {
    cstd_kp_[s] = spread[static_cast<size_t>(keypoints_[s])];
    cc += cstd_kp_[s] * cstd_kp_[s];
  }
  cstd_norm_ = std::sqrt(cc);
}

size_t AttackProblem::dim() const {
  return latent() ? clean_feats_.flat.size() : 4 * keypoints_.size();
}

std::vector<double> AttackProblem::initial_x(RandomStream& rng) const {
  std::vector<double> x(dim());
  if (latent()) {
    for (double& v : x) v = rng.uniform(-1e-3, 1e-3);
    return x;
  }
  const size_t m = keypoints_.size();
  for (size_t i = 0; i < 3 * m; ++i) x[i] = rng.uniform(-1e-3, 1e-3);
  for (size_t s = 0; s < m; ++s) x[3 * m + s] = cfg_.sigma_cap / 2;
  return x;
}

void AttackProblem::clamp(std::vector<double>& x) const {
  if (latent()) return;
  const size_t m = keypoints_.size();
  for (size_t s = 0; s < m; ++s) x[3 * m + s] = std::clamp(x[3 * m + s], 1e-4, cfg_.sigma_cap);
}

AttackProblem::AdvVars AttackProblem::build_adv(Tape& tape, std::span<const Var> x) const {
  const size_t n = clean_.size(), m = keypoints_.size();
  AdvVars out;
  out.delta = x.subspan(0, 3 * m);
  out.sigma = x.subspan(3 * m, m);
  out.coords.reserve(3 * n);

  if (cfg_.use_gsm) {
    std::vector<Var> inv2s2;
    inv2s2.reserve(m);
    for (size_t s = 0; s < m; ++s) inv2s2.push_back(0.5 / (out.sigma[s] * out.sigma[s]));
    std::vector<Var> e(k_), wt(k_), ws(k_), dcol(k_);
    for (size_t j = 0; j < n; ++j) {
      const int32_t* slots = kp_slot_.data() + j * k_;
      const double* d2 = kp_d2_.data() + j * k_;
      for (int s = 0; s < k_; ++s) e[s] = inv2s2[static_cast<size_t>(slots[s])] * -d2[s];
      Var mx = e[0];
      for (int s = 1; s < k_; ++s) mx = grad::vmax(mx, e[s]);
      for (int s = 0; s < k_; ++s) wt[s] = grad::exp(e[s] - mx);
      Var total = grad::sum(wt);
      for (int s = 0; s < k_; ++s) ws[s] = wt[s] / total;
      for (int d = 0; d < 3; ++d) {
        for (int s = 0; s < k_; ++s) dcol[s] = out.delta[3 * static_cast<size_t>(slots[s]) + d];
        out.coords.push_back(tape.dot(ws, dcol) + clean_flat_[3 * j + d]);
      }
    }
  } else {
    std::vector<int32_t> slot_of(n, -1);
    for (size_t s = 0; s < m; ++s) slot_of[static_cast<size_t>(keypoints_[s])] =
        static_cast<int32_t>(s);
    for (size_t j = 0; j < n; ++j)
      for (int d = 0; d < 3; ++d) {
        int32_t s = slot_of[j];
        out.coords.push_back(s < 0 ? tape.constant(clean_flat_[3 * j + d])
                                   : out.delta[3 * static_cast<size_t>(s) + d] +
                                         clean_flat_[3 * j + d]);
      }
  }
  return out;
}

Var AttackProblem::feats_loss(Tape& tape, std::span<const Var> feats) const {
  if (cfg_.family == Family::vision) {
    const std::vector<double>& ref =
        cfg_.setting == Setting::targeted ? target_feats_.flat : clean_feats_.flat;
    Var c = taped_cos_const(tape, feats, ref);
    return cfg_.setting == Setting::untargeted ? c : 1.0 - c;
  }
  const CaptionSeq& ref =
      cfg_.setting == Setting::untargeted ? refs_.ground_truth : *refs_.target_caption;
  Var lp = model_->caption_logprob_taped(tape, feats, prompt_, ref);
  return cfg_.setting == Setting::untargeted ? lp : -lp;
}

Var AttackProblem::dis_from_adv(Tape& tape, const AdvVars& av) const {
  const size_t n = clean_.size(), m = keypoints_.size();

  Var nd = taped_norm(tape, av.delta);
  std::vector<Var> caps;
  caps.reserve(m);
  for (size_t s = 0; s < m; ++s) caps.push_back(cfg_.sigma_cap - av.sigma[s]);
  Var lker = nd + taped_norm(tape, caps);

  Var lhid = tape.constant(0.0);
  if (cstd_norm_ >= kNormEps) {
    Var num = tape.affine(av.sigma, cstd_kp_, 0.0);
    lhid = -(num / (taped_norm(tape, av.sigma) * cstd_norm_));
  }

  // Chamfer with nearest-neighbor correspondences fixed at the current
  // coordinates (a valid subgradient of the true min).
  std::vector<Vec3> adv(n);
  for (size_t j = 0; j < n; ++j)
    adv[j] = {av.coords[3 * j].value(), av.coords[3 * j + 1].value(),
              av.coords[3 * j + 2].value()};
  auto nearest = [](const Vec3& p, const std::vector<Vec3>& set) {
    size_t best = 0;
    double bd = dist2(p, set[0]);
    for (size_t i = 1; i < set.size(); ++i) {
      double d = dist2(p, set[i]);
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return best;
  };
  std::vector<Var> fwd(n), bwd(n);
  std::array<Var, 3> diff;
  for (size_t j = 0; j < n; ++j) {
    size_t c = nearest(adv[j], clean_.points);
    for (int d = 0; d < 3; ++d) diff[d] = av.coords[3 * j + d] - clean_flat_[3 * c + d];
    fwd[j] = tape.dot(diff, diff);
  }
  for (size_t i = 0; i < n; ++i) {
    size_t a = nearest(clean_.points[i], adv);
    for (int d = 0; d < 3; ++d) diff[d] = av.coords[3 * a + d] - clean_flat_[3 * i + d];
    bwd[i] = tape.dot(diff, diff);
  }
  std::vector<double> invn(n, 1.0 / static_cast<double>(n));
  Var lcha = tape.affine(fwd, invn, 0.0) + tape.affine(bwd, invn, 0.0);

  return cfg_.lambda1 * lker + cfg_.lambda2 * lhid + cfg_.lambda3 * lcha;
}

Var AttackProblem::adv_loss(Tape& tape, std::span<const Var> x) const {
  if (x.size() != dim()) throw std::invalid_argument("attack: wrong variable dimension");
  if (latent()) {
    std::vector<Var> feats;
    feats.reserve(x.size());
    for (size_t i = 0; i < x.size(); ++i) feats.push_back(x[i] + clean_feats_.flat[i]);
    return feats_loss(tape, feats);
  }
  AdvVars av = build_adv(tape, x);
  std::vector<Var> feats = model_->encode_taped(tape, av.coords, grouping_);
  return feats_loss(tape, feats);
}

Var AttackProblem::dis_loss(Tape& tape, std::span<const Var> x) const {
  if (latent()) throw std::logic_error("attack: latent mode has no distance term");
  if (x.size() != dim()) throw std::invalid_argument("attack: wrong variable dimension");
  AdvVars av = build_adv(tape, x);
  return dis_from_adv(tape, av);
}

Var AttackProblem::loss(Tape& tape, std::span<const Var> x, double lambda) const {
  if (latent()) return adv_loss(tape, x);
  if (x.size() != dim()) throw std::invalid_argument("attack: wrong variable dimension");
  AdvVars av = build_adv(tape, x);
  std::vector<Var> feats = model_->encode_taped(tape, av.coords, grouping_);
  return feats_loss(tape, feats) + lambda * dis_from_adv(tape, av);
}

PerturbState AttackProblem::state_from(std::span<const double> x) const {
  if (latent()) throw std::logic_error("attack: latent mode has no perturb state");
  const size_t m = keypoints_.size();
  if (x.size() != 4 * m) throw std::invalid_argument("attack: wrong variable dimension");
  PerturbState st;
  st.keypoints = keypoints_;
  st.delta.resize(m);
  for (size_t s = 0; s < m; ++s) st.delta[s] = {x[3 * s], x[3 * s + 1], x[3 * s + 2]};
  st.sigma.assign(x.begin() + static_cast<std::ptrdiff_t>(3 * m), x.end());
  return st;
}

PointCloud AttackProblem::apply(std::span<const double> x) const {
  if (latent()) throw std::logic_error("attack: latent mode does not move points");
  PerturbState st = state_from(x);
  PointCloud adv = clean_;
  if (cfg_.use_gsm) {
    std::vector<Vec3> off = smooth_perturbation(clean_, st, k_);
    for (size_t j = 0; j < adv.size(); ++j) adv.points[j] += off[j];
  } else {
    for (size_t s = 0; s < keypoints_.size(); ++s)
      adv.points[static_cast<size_t>(keypoints_[s])] += st.delta[s];
  }
  return adv;
}

TokenFeatures AttackProblem::apply_latent(std::span<const double> x) const {
  if (!latent()) throw std::logic_error("attack: point mode has no latent offset");
  if (x.size() != clean_feats_.flat.size())
    throw std::invalid_argument("attack: wrong variable dimension");
  TokenFeatures f = clean_feats_;
  for (size_t i = 0; i < x.size(); ++i) f.flat[i] += x[i];
  return f;
}

// ------------------------------------------------------------------ run loop

namespace {

struct StepOutcome {
  bool aborted = false;
  std::string diagnostics;
};

StepOutcome run_steps(const AttackProblem& problem, Tape& tape, std::vector<double>& x,
                      double lambda, int steps, double eta, std::vector<double>& trace) {
  std::vector<double> prev;
  std::vector<Var> vars;
  for (int t = 0; t < steps; ++t) {
    tape.clear();
    vars.clear();
    vars.reserve(x.size());
    for (double v : x) vars.push_back(tape.input(v));
    double lval = 0;
    std::vector<double> g;
    try {
      Var loss = problem.loss(tape, vars, lambda);
      lval = loss.value();
      g = tape.gradient(loss, vars);
    } catch (const grad::DomainError& e) {
      return {true, "aborted at step " + std::to_string(t) + ": " + e.what()};
    }
    trace.push_back(lval);
    prev = x;
    bool ok = true;
    for (size_t i = 0; i < x.size(); ++i) {
      x[i] -= eta * g[i];
      if (!std::isfinite(x[i])) ok = false;
    }
    if (!ok) {
      x = prev;
      return {true, "aborted at step " + std::to_string(t) + ": non-finite parameter update"};
    }
    problem.clamp(x);
  }
  return {};
}

void require_eligible(const VictimModel& model) {
  if (model.holdout_accuracy() < 0.95) {
    char buf[96];
    std::snprintf(buf, sizeof buf,
                  "attack: victim is not attack-eligible (holdout accuracy %.3f < 0.950)",
                  model.holdout_accuracy());
    throw std::invalid_argument(buf);
  }
}

struct Judging {
  SuccessJudge fn;
  int gt_category = -1;
  int target_category = -1;
};

Judging make_judging(const VictimModel& model, const AttackRefs& refs, const AttackConfig& cfg,
                     const SuccessJudge& custom) {
  Judging j;
  j.gt_category = refs.gt_category;
  if (j.gt_category < 0 && !refs.ground_truth.ids.empty())
    j.gt_category = category_from_ids(model.vocab(), refs.ground_truth);
  j.target_category = refs.target_category;
  if (j.target_category < 0 && refs.target_caption)
    j.target_category = category_from_ids(model.vocab(), *refs.target_caption);
  if (j.target_category < 0 && refs.target_cloud && refs.target_cloud->label >= 0)
    j.target_category = refs.target_cloud->label;

  if (custom) {
    j.fn = custom;
    return j;
  }
  if (cfg.setting == Setting::untargeted) {
    if (j.gt_category < 0)
      throw std::invalid_argument("attack: cannot judge success without a ground-truth category");
    const victim::Vocabulary& vocab = model.vocab();
    int gt = j.gt_category;
    j.fn = [&vocab, gt](const CaptionSeq& cap) { return category_from_ids(vocab, cap) != gt; };
  } else {
    if (j.target_category < 0)
      throw std::invalid_argument("attack: cannot judge success without a target category");
    const victim::Vocabulary& vocab = model.vocab();
    int tc = j.target_category;
    j.fn = [&vocab, tc](const CaptionSeq& cap) {
      int c = category_from_ids(vocab, cap);
      return c >= 0 && c == tc;
    };
  }
  return j;
}

AttackResult finalize(const VictimModel& model, const PointCloud& clean,
                      const AttackProblem& problem, const AttackConfig& cfg,
                      std::span<const double> x, double lambda, const SuccessJudge& judge,
                      std::vector<double> trace, int rounds_run, bool aborted,
                      std::string diagnostics) {
  AttackResult r;
  r.loss_trace = std::move(trace);
  r.final_lambda = lambda;
  r.rounds_run = rounds_run;
  r.aborted = aborted;
  r.diagnostics = std::move(diagnostics);
  r.clean_caption = model.caption_greedy(clean, problem.prompt());

  bool reeval_ok = true;
  try {
    if (problem.latent()) {
      r.adversarial = clean;
      r.latent_offset.assign(x.begin(), x.end());
      TokenFeatures f = problem.apply_latent(x);
      r.adv_caption = model.decode_greedy(f, problem.prompt());
      r.final_cosine = plain_cos(problem.clean_features().flat, f.flat);
      if (cfg.family == Family::vision) {
        const TokenFeatures ref = cfg.setting == Setting::targeted
                                      ? model.encode(*problem.refs().target_cloud)
                                      : problem.clean_features();
        r.final_adv_loss = loss_vision(ref, f, cfg.setting);
      } else {
        const CaptionSeq& ref = caption_reference(problem.refs(), cfg.setting);
        std::vector<double> lps = model.decode_step_logprobs(f, problem.prompt(), ref);
        double lp = std::accumulate(lps.begin(), lps.end(), 0.0);
        r.final_adv_loss = cfg.setting == Setting::untargeted ? lp : -lp;
      }
    } else {
      r.adversarial = problem.apply(x);
      r.adv_caption = model.caption_greedy(r.adversarial, problem.prompt());
      const int kc = static_cast<int>(std::min<size_t>(16, clean.size() - 1));
      r.csd = geom::csd_metric(clean, r.adversarial, kc);
      r.cd = geom::chamfer_distance(clean, r.adversarial);
      r.hd = geom::hausdorff_distance(clean, r.adversarial);
      TokenFeatures fa = model.encode(r.adversarial);  // fresh grouping
      r.final_cosine = plain_cos(problem.clean_features().flat, fa.flat);
      if (cfg.family == Family::vision) {
        const TokenFeatures ref = cfg.setting == Setting::targeted
                                      ? model.encode(*problem.refs().target_cloud)
                                      : problem.clean_features();
        r.final_adv_loss = loss_vision(ref, fa, cfg.setting);
      } else {
        const CaptionSeq& ref = caption_reference(problem.refs(), cfg.setting);
        r.final_adv_loss = loss_caption(model, r.adversarial, problem.prompt(), ref, cfg.setting);
      }
    }
  } catch (const std::invalid_argument& e) {
    // the perturbed cloud left the encoder's normalization band
    reeval_ok = false;
    r.aborted = true;
    r.diagnostics += std::string(r.diagnostics.empty() ? "" : "; ") + e.what();
  }
  r.success = reeval_ok && judge(r.adv_caption);
  return r;
}

}  // namespace

AttackResult run_attack(const VictimModel& model, const PointCloud& cloud, const AttackRefs& refs,
                        const AttackConfig& cfg, uint64_t seed, const SuccessJudge& judge) {
  require_eligible(model);
  AttackProblem problem(model, cloud, refs, cfg);
  Judging j = make_judging(model, refs, cfg, judge);

  RandomStream rng(seed);
  std::vector<double> x = problem.initial_x(rng);
  Tape tape;
  std::vector<double> trace;
  StepOutcome so = run_steps(problem, tape, x, cfg.lambda0, cfg.steps, cfg.eta, trace);
  return finalize(model, cloud, problem, cfg, x, cfg.lambda0, j.fn, std::move(trace), 1,
                  so.aborted, std::move(so.diagnostics));
}

AttackResult dynamic_constraint(const VictimModel& model, const PointCloud& cloud,
                                const AttackRefs& refs, const AttackConfig& cfg, uint64_t seed,
                                const SuccessJudge& judge) {
  require_eligible(model);
  AttackProblem problem(model, cloud, refs, cfg);
  Judging j = make_judging(model, refs, cfg, judge);

  RandomStream rng(seed);
  std::vector<double> x = problem.initial_x(rng);
  Tape tape;
  std::vector<double> trace;

  double lo = 0.0, hi = cfg.lambda_max, lambda = cfg.lambda0, last_lambda = cfg.lambda0;
  std::optional<std::pair<std::vector<double>, double>> snapshot;  // x, lambda
  bool aborted = false;
  std::string diagnostics;
  int rounds_run = 0;

  for (int r = 0; r < cfg.rounds; ++r) {
    last_lambda = lambda;
    StepOutcome so = run_steps(problem, tape, x, lambda, cfg.steps, cfg.eta, trace);
    ++rounds_run;
    if (so.aborted) {
      aborted = true;
      diagnostics = so.diagnostics + " (round " + std::to_string(r) + ")";
      break;
    }
    bool succeeded = false;
    try {
      CaptionSeq cap = problem.latent()
                           ? model.decode_greedy(problem.apply_latent(x), problem.prompt())
                           : model.caption_greedy(problem.apply(x), problem.prompt());
      succeeded = j.fn(cap);
    } catch (const std::invalid_argument&) {
      // the optimizer left the encoder's input band: an unsuccessful round,
      // not a run abort -- the bisection keeps the last successful snapshot
      succeeded = false;
    }
    if (succeeded) {
      lo = lambda;
      snapshot = {x, lambda};
    } else {
      hi = lambda;
    }
    lambda = 0.5 * (lo + hi);
  }

  std::span<const double> fx = snapshot ? std::span<const double>(snapshot->first)
                                        : std::span<const double>(x);
  double flam = snapshot ? snapshot->second : last_lambda;
  return finalize(model, cloud, problem, cfg, fx, flam, j.fn, std::move(trace), rounds_run,
                  aborted, std::move(diagnostics));
}

}  // namespace pcadv::attack
