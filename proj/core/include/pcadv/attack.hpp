#pragma once

// Both attack families (vision-feature, caption-likelihood) in both settings
// (untargeted, targeted), the keypoint-selection + Gaussian-smoothing
// perturbation stack, the distance regularizers, and the per-sample
// bisection schedule on the distance weight.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pcadv/common.hpp"
#include "pcadv/geometry.hpp"
#include "pcadv/grad.hpp"
#include "pcadv/victim.hpp"

namespace pcadv::attack {

struct AttackConfig {
  Family family = Family::vision;
  Setting setting = Setting::untargeted;
  double lambda0 = 1.0;      // initial distance weight
  double lambda_max = 64.0;  // bisection upper bracket
  double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 0.001;
  double eta = 0.01;         // step size
  int steps = 100;           // N gradient steps per round
  int rounds = 10;           // R bisection rounds
  int keypoints = 32;        // M
  int smooth_k = 4;          // neighbors receiving each offset
  double sigma_cap = 0.1;    // a: bandwidth cap at unit-sphere scale
  bool use_ksm = true;       // stage-wise keypoint selection
  bool use_gsm = true;       // Gaussian smoothing of keypoint offsets
  bool perturb_latent = false;  // ablation: optimize a token-feature offset

  void validate(size_t n_points) const;
};

// The optimized variables: M keypoints with offsets delta and bandwidths
// sigma in (0, a].
struct PerturbState {
  std::vector<int32_t> keypoints;
  std::vector<Vec3> delta;
  std::vector<double> sigma;

  void validate() const;  // sizes match, indices distinct, sigma > 0, finite
};

// References the objective is built against.
struct AttackRefs {
  victim::CaptionSeq prompt;        // defaults to [start] when empty
  victim::CaptionSeq ground_truth;  // clean caption (untargeted ref + judging)
  int gt_category = -1;             // derived from ground_truth when < 0
  std::optional<geom::PointCloud> target_cloud;      // targeted vision
  std::optional<victim::CaptionSeq> target_caption;  // targeted caption
  int target_category = -1;         // derived from target_caption when < 0
};

struct AttackResult {
  geom::PointCloud adversarial;
  bool success = false;
  bool aborted = false;          // non-finite loss; diagnostics explain
  std::string diagnostics;
  victim::CaptionSeq clean_caption, adv_caption;
  double final_lambda = 0;
  double csd = 0, cd = 0, hd = 0;
  std::vector<double> loss_trace;  // one entry per executed step
  int rounds_run = 1;
  double final_adv_loss = 0;       // plain re-evaluation at the final state
  double final_cosine = 1.0;       // cos(f(x), f(x+delta)), fresh groupings
  std::vector<double> latent_offset;  // perturb_latent only, else empty
};

// Two-stage keypoint selection: score s_i = curvature-spread_i +
// |grad_{x_i} adversarial loss| at the clean cloud, then farthest point
// sampling restricted to the top-2M scores. Deterministic. use_ksm=false
// returns every index.
std::vector<int32_t> select_keypoints(const geom::PointCloud& cloud,
                                      const victim::VictimModel& model, const AttackConfig& cfg,
                                      const AttackRefs& refs);

// Per-point normalized Gaussian weights over the k nearest keypoints.
struct SmoothWeights {
  int k = 0;                        // effective neighbor count (clamped to M)
  std::vector<int32_t> slot;        // N*k keypoint slots per point
  std::vector<double> w;            // N*k weights, each row sums to 1
};
SmoothWeights smoothing_weights(const geom::PointCloud& cloud, const PerturbState& state, int k);

// Offsets received by every cloud point: row j of the weight table applied
// to the keypoint deltas (a convex combination). k > M is clamped to M.
std::vector<Vec3> smooth_perturbation(const geom::PointCloud& cloud, const PerturbState& state,
                                      int k);

// untargeted: cos(ref, adv); targeted: 1 - cos(ref, adv). Both minimized.
double loss_vision(const victim::TokenFeatures& ref, const victim::TokenFeatures& adv,
                   Setting setting);

// untargeted: +sum log p(ref tokens) (minimization suppresses the ground
// truth); targeted: -sum log p(ref tokens) (minimization promotes it).
double loss_caption(const victim::VictimModel& model, const geom::PointCloud& adv_cloud,
                    const victim::CaptionSeq& prompt, const victim::CaptionSeq& ref,
                    Setting setting);

struct RegLosses {
  double ker = 0, hid = 0, cha = 0, dis = 0;
};
// L_ker = |delta|_2 + |a - sigma|_2; L_hid = -cos(sigma, curvature-spread at
// the keypoints), 0 when the spread vector vanishes; L_cha = chamfer;
// dis = lambda1*ker + lambda2*hid + lambda3*cha.
RegLosses regularization_losses(const geom::PointCloud& cloud, const geom::PointCloud& adv_cloud,
                                const PerturbState& state, const AttackConfig& cfg);

// Differentiable attack objective over x = [delta (3M), sigma (M)] (point
// mode) or x = token-feature offset (latent mode). Grouping, keypoints,
// smoothing tables and reference features are frozen at construction;
// chamfer correspondences follow the current x. Exposed so gradient-fidelity
// checks can difference the exact training objective.
class AttackProblem {
 public:
  AttackProblem(const victim::VictimModel& model, const geom::PointCloud& clean,
                const AttackRefs& refs, const AttackConfig& cfg);

  size_t dim() const;
  bool latent() const { return cfg_.perturb_latent; }
  const std::vector<int32_t>& keypoints() const { return keypoints_; }
  const victim::CaptionSeq& prompt() const { return prompt_; }
  const victim::TokenFeatures& clean_features() const { return clean_feats_; }
  const AttackRefs& refs() const { return refs_; }

  std::vector<double> initial_x(RandomStream& rng) const;
  void clamp(std::vector<double>& x) const;  // sigma into [1e-4, a]

  // adv_loss + lambda * dis_loss (latent mode: adv_loss only)
  grad::Var loss(grad::Tape& tape, std::span<const grad::Var> x, double lambda) const;
  grad::Var adv_loss(grad::Tape& tape, std::span<const grad::Var> x) const;
  grad::Var dis_loss(grad::Tape& tape, std::span<const grad::Var> x) const;  // point mode

  geom::PointCloud apply(std::span<const double> x) const;
  victim::TokenFeatures apply_latent(std::span<const double> x) const;
  PerturbState state_from(std::span<const double> x) const;

 private:
  struct AdvVars {
    std::vector<grad::Var> coords;           // 3N
    std::span<const grad::Var> delta, sigma;
  };
  AdvVars build_adv(grad::Tape& tape, std::span<const grad::Var> x) const;
  grad::Var feats_loss(grad::Tape& tape, std::span<const grad::Var> feats) const;
  grad::Var dis_from_adv(grad::Tape& tape, const AdvVars& av) const;

  const victim::VictimModel* model_;
  geom::PointCloud clean_;
  AttackRefs refs_;
  AttackConfig cfg_;
  victim::CaptionSeq prompt_;
  victim::Grouping grouping_;
  victim::TokenFeatures clean_feats_, target_feats_;
  std::vector<double> clean_flat_;  // 3N clean coordinates
  std::vector<int32_t> keypoints_;
  int k_ = 0;                        // effective smoothing neighbors
  std::vector<int32_t> kp_slot_;     // N*k nearest keypoint slots
  std::vector<double> kp_d2_;        // N*k squared distances to those slots
  std::vector<double> cstd_kp_;      // curvature spread at keypoints
  double cstd_norm_ = 0;
};

// Judges success from the adversarial caption; the default uses the eval
// rules (untargeted: category differs from gt; targeted: equals target).
// Tests inject scripted judges to drive the bisection schedule.
using SuccessJudge = std::function<bool(const victim::CaptionSeq& adv_caption)>;

// N gradient-descent steps at fixed lambda0. delta ~ U(-1e-3,1e-3), sigma =
// a/2. Requires an attack-eligible model (holdout >= 95%) and >= 4 points.
// Non-finite losses abort with diagnostics and the last finite state.
AttackResult run_attack(const victim::VictimModel& model, const geom::PointCloud& cloud,
                        const AttackRefs& refs, const AttackConfig& cfg, uint64_t seed,
                        const SuccessJudge& judge = nullptr);

// R rounds of N steps with bisection on lambda: success tightens (lambda_low
// = lambda), failure loosens (lambda_high = lambda), then lambda = midpoint;
// the perturbation persists across rounds and the last successful state is
// returned when any round succeeded.
AttackResult dynamic_constraint(const victim::VictimModel& model, const geom::PointCloud& cloud,
                                const AttackRefs& refs, const AttackConfig& cfg, uint64_t seed,
                                const SuccessJudge& judge = nullptr);

}  // namespace pcadv::attack
