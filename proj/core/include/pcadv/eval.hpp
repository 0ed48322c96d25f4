#pragma once

// Success judging, ASR, the deterministic caption-match score standing in
// for an LLM judge, and the distortion-efficiency ratio.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcadv/common.hpp"
#include "pcadv/victim.hpp"

namespace pcadv::eval {

struct EvalRecord {
  std::string cloud_id;
  Family family = Family::vision;
  Setting setting = Setting::untargeted;
  std::string clean_caption, adv_caption, reference_caption;
  std::string gt_category;               // ground-truth category word
  std::string target_category;           // targeted runs only, else ""
  std::string predicted_category;        // from adv caption; "" when ambiguous/absent
  std::string clean_predicted_category;  // from clean caption
  bool success = false;
  double csd = 0, cd = 0, hd = 0;
  double ags_clean = 0, ags_adv = 0;     // caption scores vs reference
  double final_lambda = 0;
  double cosine = 1.0;                   // cos(f(x), f(x+delta)) bookkeeping
};

// The unique category token in the caption, or nullopt when the caption
// contains zero or more than one category token (ambiguity rule).
std::optional<int> classify_from_caption(const victim::CaptionSeq& caption,
                                         const victim::Vocabulary& vocab);

// untargeted: predicted differs from gt (absent/ambiguous counts as differs);
// targeted: predicted equals the target category exactly.
bool judge(const EvalRecord& record, Setting setting);

// 100 * successes / records, over records whose clean caption classified to
// the ground truth (clean-misclassified clouds are dropped first). Empty
// after filtering -> invalid-argument.
double asr(std::span<const EvalRecord> records);

// Slot-matching score in [0,100] over the {color, category} slots of the
// reference: a slot matches when both captions resolve it to the same unique
// token; an ambiguous or missing slot in `generated` does not match.
double caption_score(const victim::CaptionSeq& generated, const victim::CaptionSeq& reference,
                     const victim::Vocabulary& vocab);

// |ags_adv - ags_clean| / csd; csd <= 0 -> domain-error.
double gamma(double ags_clean, double ags_adv, double csd);

// Fills predictions, scores and the success flag from raw captions.
EvalRecord make_record(const victim::Vocabulary& vocab, std::string cloud_id, Family family,
                       Setting setting, const victim::CaptionSeq& clean_cap,
                       const victim::CaptionSeq& adv_cap, const victim::CaptionSeq& reference,
                       int gt_category, int target_category, double csd, double cd, double hd);

// One row of the summary table (columns mirror the reported result tables).
struct Summary {
  std::string attack, setting;
  size_t count = 0;
  double asr = 0, ags = 0, csd = 0, cd_x1e2 = 0, hd_x1e2 = 0;
  double gamma = 0;  // NaN when mean csd is 0 (no distortion measured)
};

Summary summarize(std::span<const EvalRecord> records, const std::string& attack_name);

}  // namespace pcadv::eval
