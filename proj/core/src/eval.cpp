#include "pcadv/eval.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pcadv::eval {

std::optional<int> classify_from_caption(const victim::CaptionSeq& caption,
                                         const victim::Vocabulary& vocab) {
  std::optional<int> found;
  for (int32_t id : caption.ids) {
    int cat = vocab.category_of_token(id);
    if (cat < 0) continue;
    if (found && *found != cat) return std::nullopt;  // two different category tokens
    if (found && *found == cat) return std::nullopt;  // repeated category token
    found = cat;
  }
  return found;
}

bool judge(const EvalRecord& record, Setting setting) {
  if (setting == Setting::untargeted)
    return record.predicted_category.empty() || record.predicted_category != record.gt_category;
  return !record.predicted_category.empty() &&
         record.predicted_category == record.target_category;
}

double asr(std::span<const EvalRecord> records) {
  size_t total = 0, wins = 0;
  for (const EvalRecord& r : records) {
    if (r.clean_predicted_category.empty() || r.clean_predicted_category != r.gt_category)
      continue;  // clean model already wrong on this cloud
    ++total;
    if (r.success) ++wins;
  }
  if (total == 0)
    throw std::invalid_argument("asr: no records with a correctly classified clean caption");
  return 100.0 * static_cast<double>(wins) / static_cast<double>(total);
}

namespace {

// unique token of a slot family in a caption, or -1
int unique_slot(const victim::CaptionSeq& seq, const std::vector<int32_t>& family) {
  int found = -1;
  for (int32_t id : seq.ids) {
    for (int32_t fid : family) {
      if (id != fid) continue;
      if (found >= 0) return -1;
      found = id;
    }
  }
  return found;
}

}  // namespace

double caption_score(const victim::CaptionSeq& generated, const victim::CaptionSeq& reference,
                     const victim::Vocabulary& vocab) {
  int slots = 0, matched = 0;
  const int ref_color = unique_slot(reference, vocab.color_ids);
  const int ref_cat = unique_slot(reference, vocab.category_ids);
  if (ref_color >= 0) {
    ++slots;
    if (unique_slot(generated, vocab.color_ids) == ref_color) ++matched;
  }
  if (ref_cat >= 0) {
    ++slots;
    if (unique_slot(generated, vocab.category_ids) == ref_cat) ++matched;
  }
  if (slots == 0) return 0.0;
  return 100.0 * static_cast<double>(matched) / static_cast<double>(slots);
}

double gamma(double ags_clean, double ags_adv, double csd) {
  if (!(csd > 0)) throw std::domain_error("gamma undefined at csd = 0");
  return std::abs(ags_adv - ags_clean) / csd;
}

EvalRecord make_record(const victim::Vocabulary& vocab, std::string cloud_id, Family family,
                       Setting setting, const victim::CaptionSeq& clean_cap,
                       const victim::CaptionSeq& adv_cap, const victim::CaptionSeq& reference,
                       int gt_category, int target_category, double csd, double cd, double hd) {
  EvalRecord r;
  r.cloud_id = std::move(cloud_id);
  r.family = family;
  r.setting = setting;
  r.clean_caption = caption_to_string(vocab, clean_cap);
  r.adv_caption = caption_to_string(vocab, adv_cap);
  r.reference_caption = caption_to_string(vocab, reference);
  if (gt_category >= 0) r.gt_category = vocab.tokens[vocab.category_ids[gt_category]];
  if (target_category >= 0)
    r.target_category = vocab.tokens[vocab.category_ids[target_category]];
  if (auto p = classify_from_caption(adv_cap, vocab))
    r.predicted_category = vocab.tokens[vocab.category_ids[*p]];
  if (auto p = classify_from_caption(clean_cap, vocab))
    r.clean_predicted_category = vocab.tokens[vocab.category_ids[*p]];
  r.success = judge(r, setting);
  r.ags_clean = caption_score(clean_cap, reference, vocab);
  r.ags_adv = caption_score(adv_cap, reference, vocab);
  r.csd = csd;
  r.cd = cd;
  r.hd = hd;
  return r;
}

Summary summarize(std::span<const EvalRecord> records, const std::string& attack_name) {
  if (records.empty()) throw std::invalid_argument("summarize: no records");
  Summary s;
  s.attack = attack_name;
  s.setting = to_string(records.front().setting);
  s.count = records.size();
  s.asr = asr(records);
  double ags_c = 0;
  for (const EvalRecord& r : records) {
    s.ags += r.ags_adv;
    ags_c += r.ags_clean;
    s.csd += r.csd;
    s.cd_x1e2 += r.cd;
    s.hd_x1e2 += r.hd;
  }
  const double n = static_cast<double>(records.size());
  s.ags /= n;
  ags_c /= n;
  s.csd /= n;
  s.cd_x1e2 = s.cd_x1e2 / n * 1e2;
  s.hd_x1e2 = s.hd_x1e2 / n * 1e2;
  s.gamma = s.csd > 0 ? std::abs(s.ags - ags_c) / s.csd
                      : std::numeric_limits<double>::quiet_NaN();
  return s;
}

}  // namespace pcadv::eval
