#pragma once

// Surrogate point-cloud captioner: grouped per-point MLP encoder, linear
// projector to visual tokens, and a small recurrent greedy decoder. Small
// enough to train on one CPU core in under a minute, smooth everywhere
// (tanh + mean pooling), and differentiable with respect to the input
// coordinates through pcadv::grad.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcadv/common.hpp"
#include "pcadv/geometry.hpp"
#include "pcadv/grad.hpp"

namespace pcadv::victim {

struct Vocabulary {
  std::vector<std::string> tokens;    // id -> word
  int32_t start_id = 0, end_id = 0;
  std::vector<int32_t> category_ids;  // category index -> token id
  std::vector<int32_t> color_ids;     // palette index -> token id

  size_t size() const { return tokens.size(); }
  int32_t find(const std::string& word) const;  // -1 if absent
  // position in category_ids/color_ids, or -1
  int category_of_token(int32_t id) const;
  int color_of_token(int32_t id) const;

  // start/end + "a 3d model of" + 8 colors + 8 category words (22 tokens)
  static Vocabulary standard();
};

// Token id sequence. Model outputs and training targets end with exactly one
// end token; prompts are bare prefixes (no end token), usually just [start].
struct CaptionSeq {
  std::vector<int32_t> ids;

  size_t size() const { return ids.size(); }
  bool operator==(const CaptionSeq&) const = default;
  // id range + single trailing end token + length cap; `require_end`
  // distinguishes outputs/targets from prompts.
  void validate(const Vocabulary& vocab, bool require_end = true) const;
};

inline constexpr int kMaxCaptionLen = 16;

std::string caption_to_string(const Vocabulary& vocab, const CaptionSeq& seq);
// Inverse of caption_to_string for whitespace-separated known words.
CaptionSeq caption_from_string(const Vocabulary& vocab, const std::string& text);

// G x H projected visual tokens, flattened row-major by group.
struct TokenFeatures {
  int groups = 0, dim = 0;
  std::vector<double> flat;  // groups * dim
};

// Frozen encoder grouping: FPS centers plus the group_size nearest cloud
// points of each center (center included). Computed once per clean cloud and
// reused for every taped encode during an attack.
struct Grouping {
  int group_size = 0;
  std::vector<int32_t> centers;  // G
  std::vector<int32_t> members;  // G * group_size, row-major
};

struct ModelConfig {
  int groups = 32;
  int group_size = 16;
  void validate() const;
};

// Fixed layer widths; the parameter count (~29k for the standard vocabulary)
// stays well under the 100k budget for any grouping config.
inline constexpr int kEncH1 = 64;
inline constexpr int kEncH2 = 128;
inline constexpr int kFeatureDim = 64;   // H: projector output per token
inline constexpr int kEmbedDim = 32;
inline constexpr int kDecHidden = 64;

class VictimModel {
 public:
  VictimModel() = default;
  static VictimModel random_init(const ModelConfig& cfg, Vocabulary vocab, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  size_t param_count() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() { return params_; }
  double holdout_accuracy() const { return holdout_accuracy_; }
  void set_holdout_accuracy(double a) { holdout_accuracy_ = a; }

  // Grouping on a given cloud (used fresh at inference, frozen for attacks).
  // Requires cloud.size() >= groups; groups smaller than group_size are
  // filled with the nearest available points (min(s, N) members).
  Grouping make_grouping(const geom::PointCloud& cloud) const;

  // Deterministic forward pass; requires a normalized cloud (centroid ~0,
  // max radius ~1), otherwise invalid-argument.
  TokenFeatures encode(const geom::PointCloud& cloud) const;
  TokenFeatures encode(const geom::PointCloud& cloud, const Grouping& grouping) const;

  // Greedy argmax decoding from the prompt, hard cap kMaxCaptionLen tokens,
  // always end-terminated.
  CaptionSeq caption_greedy(const geom::PointCloud& cloud, const CaptionSeq& prompt) const;
  CaptionSeq decode_greedy(const TokenFeatures& features, const CaptionSeq& prompt) const;

  // Teacher-forced sum over target tokens of log p(token | prefix, cloud).
  double caption_logprob(const geom::PointCloud& cloud, const CaptionSeq& prompt,
                         const CaptionSeq& target) const;
  // Per-step terms of the same sum (sums to caption_logprob).
  std::vector<double> caption_step_logprobs(const geom::PointCloud& cloud,
                                            const CaptionSeq& prompt,
                                            const CaptionSeq& target) const;
  std::vector<double> decode_step_logprobs(const TokenFeatures& features,
                                           const CaptionSeq& prompt,
                                           const CaptionSeq& target) const;

  // --- taped twins (weights constant, argument differentiable) ---
  // coords: 3N flattened point coordinates recorded on `tape`.
  std::vector<grad::Var> encode_taped(grad::Tape& tape, std::span<const grad::Var> coords,
                                      const Grouping& grouping) const;
  // features: G*H flattened token features recorded on `tape`.
  grad::Var caption_logprob_taped(grad::Tape& tape, std::span<const grad::Var> features,
                                  const CaptionSeq& prompt, const CaptionSeq& target) const;

  // --- training-side access ---
  // Teacher-forced mean cross-entropy of `target` with all parameters as
  // tape inputs; `param_vars` must mirror params() order.
  grad::Var training_loss_taped(grad::Tape& tape, std::span<const grad::Var> param_vars,
                                const geom::PointCloud& cloud, const CaptionSeq& prompt,
                                const CaptionSeq& target) const;

 private:
  void check_normalized(const geom::PointCloud& cloud) const;

  ModelConfig cfg_;
  Vocabulary vocab_;
  std::vector<double> params_;
  double holdout_accuracy_ = 0.0;

  friend void save(const VictimModel&, const std::filesystem::path&);
  friend VictimModel load(const std::filesystem::path&);
};

// Parameter block offsets into VictimModel::params(), all row-major.
struct ParamLayout {
  explicit ParamLayout(int vocab_size);
  int V;
  size_t enc_w1, enc_b1;  // 64x3, 64
  size_t enc_w2, enc_b2;  // 128x64, 128
  size_t proj_w, proj_b;  // H x 128, H
  size_t embed;           // V x E
  size_t dec_wx, dec_wh, dec_wv, dec_b;  // 64xE, 64x64, 64xH, 64
  size_t dec_wo, dec_bo;  // V x 64, V
  size_t total;
};

// Binary checkpoint, magic "PCVLM1", little-endian, dims then weights in
// ParamLayout order. Corrupt/truncated/mismatching files -> CheckpointError.
void save(const VictimModel& model, const std::filesystem::path& path);
VictimModel load(const std::filesystem::path& path);

}  // namespace pcadv::victim
