#include "pcadv/victim.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace pcadv::victim {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// ---------------------------------------------------------------- vocabulary

static const char* kPalette[] = {"red",    "green",  "blue",  "yellow",
                                 "purple", "orange", "white", "black"};
static const char* kCategories[] = {"sphere", "cube",    "cylinder", "cone",
                                    "torus",  "pyramid", "plane",    "helix"};

Vocabulary Vocabulary::standard() {
  Vocabulary v;
  v.tokens = {"<start>", "<end>", "a", "3d", "model", "of"};
  v.start_id = 0;
  v.end_id = 1;
  for (const char* c : kPalette) {
    v.color_ids.push_back(static_cast<int32_t>(v.tokens.size()));
    v.tokens.emplace_back(c);
  }
  for (const char* c : kCategories) {
    v.category_ids.push_back(static_cast<int32_t>(v.tokens.size()));
    v.tokens.emplace_back(c);
  }
  return v;
}

int32_t Vocabulary::find(const std::string& word) const {
  for (size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == word) return static_cast<int32_t>(i);
  return -1;
}

int Vocabulary::category_of_token(int32_t id) const {
  for (size_t i = 0; i < category_ids.size(); ++i)
    if (category_ids[i] == id) return static_cast<int>(i);
  return -1;
}

int Vocabulary::color_of_token(int32_t id) const {
  for (size_t i = 0; i < color_ids.size(); ++i)
    if (color_ids[i] == id) return static_cast<int>(i);
  return -1;
}

void CaptionSeq::validate(const Vocabulary& vocab, bool require_end) const {
  if (ids.empty()) throw std::invalid_argument("caption is empty");
  if (ids.size() > static_cast<size_t>(kMaxCaptionLen))
    throw std::invalid_argument("caption longer than the 16-token cap");
  for (int32_t id : ids)
    if (id < 0 || static_cast<size_t>(id) >= vocab.size())
      throw std::invalid_argument("caption token id out of vocabulary");
  size_t ends = static_cast<size_t>(std::count(ids.begin(), ids.end(), vocab.end_id));
  if (require_end) {
    if (ids.back() != vocab.end_id || ends != 1)
      throw std::invalid_argument("caption must contain exactly one end token, at the tail");
  } else if (ends != 0) {
    throw std::invalid_argument("prompt must not contain the end token");
  }
}

std::string caption_to_string(const Vocabulary& vocab, const CaptionSeq& seq) {
  std::string out;
  for (int32_t id : seq.ids) {
    if (id == vocab.end_id || id == vocab.start_id) continue;
    if (!out.empty()) out += ' ';
    out += vocab.tokens[static_cast<size_t>(id)];
  }
  return out;
}

CaptionSeq caption_from_string(const Vocabulary& vocab, const std::string& text) {
  CaptionSeq seq;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    int32_t id = vocab.find(word);
    if (id < 0) throw std::invalid_argument("unknown caption word: " + word);
    seq.ids.push_back(id);
    word.clear();
  };
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n') flush();
    else word += c;
  }
  flush();
  seq.ids.push_back(vocab.end_id);
  return seq;
}

// ------------------------------------------------------------------- layout

void ModelConfig::validate() const {
  if (groups < 1 || group_size < 1)
    throw std::invalid_argument("model config: groups and group_size must be >= 1");
}

ParamLayout::ParamLayout(int vocab_size) : V(vocab_size) {
  size_t at = 0;
  auto block = [&at](size_t n) {
    size_t off = at;
    at += n;
    return off;
  };
  enc_w1 = block(size_t(kEncH1) * 3);
  enc_b1 = block(kEncH1);
  enc_w2 = block(size_t(kEncH2) * kEncH1);
  enc_b2 = block(kEncH2);
  proj_w = block(size_t(kFeatureDim) * kEncH2);
  proj_b = block(kFeatureDim);
  embed = block(size_t(V) * kEmbedDim);
  dec_wx = block(size_t(kDecHidden) * kEmbedDim);
  dec_wh = block(size_t(kDecHidden) * kDecHidden);
  dec_wv = block(size_t(kDecHidden) * kFeatureDim);
  dec_b = block(kDecHidden);
  dec_wo = block(size_t(V) * kDecHidden);
  dec_bo = block(V);
  total = at;
}

VictimModel VictimModel::random_init(const ModelConfig& cfg, Vocabulary vocab, uint64_t seed) {
  cfg.validate();
  if (vocab.size() > 64) throw std::invalid_argument("vocabulary larger than 64 tokens");
  VictimModel m;
  m.cfg_ = cfg;
  m.vocab_ = std::move(vocab);
  ParamLayout L(static_cast<int>(m.vocab_.size()));
  m.params_.assign(L.total, 0.0);

  RandomStream rng(seed);
  auto fill = [&](size_t off, size_t rows, size_t cols) {
    double r = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (size_t i = 0; i < rows * cols; ++i) m.params_[off + i] = rng.uniform(-r, r);
  };
  fill(L.enc_w1, kEncH1, 3);
  fill(L.enc_w2, kEncH2, kEncH1);
  fill(L.proj_w, kFeatureDim, kEncH2);
  // embedding rows roughly unit-norm
  {
    double r = std::sqrt(3.0 / kEmbedDim);
    for (size_t i = 0; i < size_t(L.V) * kEmbedDim; ++i)
      m.params_[L.embed + i] = rng.uniform(-r, r);
  }
  fill(L.dec_wx, kDecHidden, kEmbedDim);
  fill(L.dec_wh, kDecHidden, kDecHidden);
  fill(L.dec_wv, kDecHidden, kFeatureDim);
  fill(L.dec_wo, static_cast<size_t>(L.V), kDecHidden);
  return m;
}

// ----------------------------------------------------------------- grouping

Grouping VictimModel::make_grouping(const geom::PointCloud& cloud) const {
  cloud.validate();
  const size_t n = cloud.size();
  if (n < static_cast<size_t>(cfg_.groups))
    throw std::invalid_argument("encode: cloud smaller than group count");
  Grouping g;
  g.group_size = std::min<int>(cfg_.group_size, static_cast<int>(n));
  g.centers = geom::farthest_point_sample(cloud, cfg_.groups, 0);
  g.members.resize(static_cast<size_t>(cfg_.groups) * g.group_size);

  std::vector<std::pair<double, int32_t>> cand(n);
  for (int c = 0; c < cfg_.groups; ++c) {
    const Vec3& ctr = cloud.points[static_cast<size_t>(g.centers[c])];
    for (size_t j = 0; j < n; ++j) cand[j] = {dist2(ctr, cloud.points[j]), static_cast<int32_t>(j)};
    std::nth_element(cand.begin(), cand.begin() + (g.group_size - 1), cand.end());
    std::sort(cand.begin(), cand.begin() + g.group_size);
    for (int j = 0; j < g.group_size; ++j)
      g.members[static_cast<size_t>(c) * g.group_size + j] = cand[j].second;
  }
  return g;
}

void VictimModel::check_normalized(const geom::PointCloud& cloud) const {
  Vec3 c{};
  for (const Vec3& p : cloud.points) c += p;
  c = c / static_cast<double>(cloud.size());
  double r2 = 0;
  for (const Vec3& p : cloud.points) r2 = std::max(r2, norm2(p - c));
  double r = std::sqrt(r2);
  // generous band: perturbed clouds stay inside, raw mesh units do not
  if (norm(c) > 1.0 || r > 4.0 || r < 0.25)
    throw std::invalid_argument("encode: cloud is not normalized to the unit sphere");
}

// -------------------------------------------------------------- plain paths

namespace {

struct View {  // parameter block pointers for the plain forward pass
  const double* w1;
  const double* b1;
  const double* w2;
  const double* b2;
  const double* pw;
  const double* pb;
  const double* emb;
  const double* wx;
  const double* wh;
  const double* wv;
  const double* b;
  const double* wo;
  const double* bo;
  int V;
};

View view_of(std::span<const double> p, const ParamLayout& L) {
  return {p.data() + L.enc_w1, p.data() + L.enc_b1, p.data() + L.enc_w2, p.data() + L.enc_b2,
          p.data() + L.proj_w, p.data() + L.proj_b, p.data() + L.embed,  p.data() + L.dec_wx,
          p.data() + L.dec_wh, p.data() + L.dec_wv, p.data() + L.dec_b,  p.data() + L.dec_wo,
          p.data() + L.dec_bo, L.V};
}

double dotn(const double* a, const double* b, int n) {
  double s = 0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void point_mlp(const View& v, const Vec3& p, double* h2 /*kEncH2*/) {
  double h1[kEncH1];
  const double in[3] = {p.x, p.y, p.z};
  for (int u = 0; u < kEncH1; ++u) h1[u] = std::tanh(dotn(v.w1 + u * 3, in, 3) + v.b1[u]);
  for (int u = 0; u < kEncH2; ++u)
    h2[u] = std::tanh(dotn(v.w2 + u * kEncH1, h1, kEncH1) + v.b2[u]);
}

// one recurrent step: h <- tanh(Wx e + Wh h + Wv v + b); logits = Wo h + bo
void decode_step(const View& m, const double* vcond, int token, double* h, double* logits) {
  const double* e = m.emb + static_cast<size_t>(token) * kEmbedDim;
  double nh[kDecHidden];
  for (int u = 0; u < kDecHidden; ++u) {
    double pre = m.b[u] + dotn(m.wx + u * kEmbedDim, e, kEmbedDim) +
                 dotn(m.wh + u * kDecHidden, h, kDecHidden) +
                 dotn(m.wv + u * kFeatureDim, vcond, kFeatureDim);
    nh[u] = std::tanh(pre);
  }
  std::copy(nh, nh + kDecHidden, h);
  for (int t = 0; t < m.V; ++t) logits[t] = m.bo[t] + dotn(m.wo + t * kDecHidden, h, kDecHidden);
}

void mean_condition(const TokenFeatures& f, double* vcond) {
  std::fill(vcond, vcond + kFeatureDim, 0.0);
  for (int g = 0; g < f.groups; ++g)
    for (int u = 0; u < kFeatureDim; ++u) vcond[u] += f.flat[static_cast<size_t>(g) * f.dim + u];
  for (int u = 0; u < kFeatureDim; ++u) vcond[u] /= static_cast<double>(f.groups);
}

double log_softmax_value(const double* logits, int n, int target) {
  double m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double s = 0;
  for (int i = 0; i < n; ++i) s += std::exp(logits[i] - m);
  return logits[target] - (m + std::log(s));
}

}  // namespace

TokenFeatures VictimModel::encode(const geom::PointCloud& cloud, const Grouping& grouping) const {
  check_normalized(cloud);
  ParamLayout L(static_cast<int>(vocab_.size()));
  View v = view_of(params_, L);

  TokenFeatures out;
  out.groups = cfg_.groups;
  out.dim = kFeatureDim;
  out.flat.assign(static_cast<size_t>(cfg_.groups) * kFeatureDim, 0.0);

  // max-pool over group members (ties keep the earlier member, matching vmax)
  std::vector<double> pooled(kEncH2);
  double h2[kEncH2];
  for (int g = 0; g < cfg_.groups; ++g) {
    for (int j = 0; j < grouping.group_size; ++j) {
      int32_t m = grouping.members[static_cast<size_t>(g) * grouping.group_size + j];
      point_mlp(v, cloud.points[static_cast<size_t>(m)], h2);
      if (j == 0)
        for (int u = 0; u < kEncH2; ++u) pooled[u] = h2[u];
      else
        for (int u = 0; u < kEncH2; ++u) pooled[u] = h2[u] > pooled[u] ? h2[u] : pooled[u];
    }
    for (int u = 0; u < kFeatureDim; ++u)
      out.flat[static_cast<size_t>(g) * kFeatureDim + u] =
          dotn(v.pw + u * kEncH2, pooled.data(), kEncH2) + v.pb[u];
  }
  return out;
}

TokenFeatures VictimModel::encode(const geom::PointCloud& cloud) const {
  return encode(cloud, make_grouping(cloud));
}

CaptionSeq VictimModel::decode_greedy(const TokenFeatures& features, const CaptionSeq& prompt) const {
  prompt.validate(vocab_, false);
  ParamLayout L(static_cast<int>(vocab_.size()));
  View m = view_of(params_, L);
  double vcond[kFeatureDim], h[kDecHidden] = {0};
  std::vector<double> logits(vocab_.size());
  mean_condition(features, vcond);

  for (int32_t tok : prompt.ids) decode_step(m, vcond, tok, h, logits.data());

  CaptionSeq out;
  for (int step = 0; step < kMaxCaptionLen; ++step) {
    int best = 0;
    for (int t = 1; t < m.V; ++t)
      if (logits[t] > logits[best]) best = t;
    if (best == vocab_.end_id || step == kMaxCaptionLen - 1) {
      out.ids.push_back(vocab_.end_id);
      break;
    }
    out.ids.push_back(best);
    decode_step(m, vcond, best, h, logits.data());
  }
  return out;
}

CaptionSeq VictimModel::caption_greedy(const geom::PointCloud& cloud, const CaptionSeq& prompt) const {
  return decode_greedy(encode(cloud), prompt);
}

std::vector<double> VictimModel::decode_step_logprobs(const TokenFeatures& features,
                                                      const CaptionSeq& prompt,
                                                      const CaptionSeq& target) const {
  prompt.validate(vocab_, false);
  target.validate(vocab_, true);
  ParamLayout L(static_cast<int>(vocab_.size()));
  View m = view_of(params_, L);
  double vcond[kFeatureDim], h[kDecHidden] = {0};
  std::vector<double> logits(vocab_.size());
  mean_condition(features, vcond);

  for (int32_t tok : prompt.ids) decode_step(m, vcond, tok, h, logits.data());

  std::vector<double> lp;
  lp.reserve(target.size());
  for (size_t l = 0; l < target.size(); ++l) {
    lp.push_back(log_softmax_value(logits.data(), m.V, target.ids[l]));
    if (l + 1 < target.size()) decode_step(m, vcond, target.ids[l], h, logits.data());
  }
  return lp;
}

std::vector<double> VictimModel::caption_step_logprobs(const geom::PointCloud& cloud,
                                                       const CaptionSeq& prompt,
                                                       const CaptionSeq& target) const {
  return decode_step_logprobs(encode(cloud), prompt, target);
}

double VictimModel::caption_logprob(const geom::PointCloud& cloud, const CaptionSeq& prompt,
                                    const CaptionSeq& target) const {
  double s = 0;
  for (double v : caption_step_logprobs(cloud, prompt, target)) s += v;
  return s;
}

// -------------------------------------------------------------- taped paths

std::vector<grad::Var> VictimModel::encode_taped(grad::Tape& tape,
                                                 std::span<const grad::Var> coords,
                                                 const Grouping& grouping) const {
  if (coords.size() % 3 != 0) throw std::invalid_argument("encode_taped: coords not 3N");
  ParamLayout L(static_cast<int>(vocab_.size()));
  const double* P = params_.data();

  const int s = grouping.group_size;
  std::vector<grad::Var> h1(kEncH1), h2(static_cast<size_t>(s) * kEncH2);
  std::vector<grad::Var> pooled(kEncH2), feats;
  feats.reserve(static_cast<size_t>(cfg_.groups) * kFeatureDim);

  for (int g = 0; g < cfg_.groups; ++g) {
    for (int j = 0; j < s; ++j) {
      int32_t m = grouping.members[static_cast<size_t>(g) * s + j];
      std::span<const grad::Var> p = coords.subspan(static_cast<size_t>(m) * 3, 3);
      for (int u = 0; u < kEncH1; ++u)
        h1[u] = tanh(tape.affine(p, {P + L.enc_w1 + u * 3, 3}, P[L.enc_b1 + u]));
      for (int u = 0; u < kEncH2; ++u)
        h2[static_cast<size_t>(j) * kEncH2 + u] =
            tanh(tape.affine(h1, {P + L.enc_w2 + u * kEncH1, size_t(kEncH1)}, P[L.enc_b2 + u]));
    }
    for (int u = 0; u < kEncH2; ++u) {
      grad::Var m = h2[u];
      for (int j = 1; j < s; ++j) m = vmax(m, h2[static_cast<size_t>(j) * kEncH2 + u]);
      pooled[u] = m;
    }
    for (int u = 0; u < kFeatureDim; ++u)
      feats.push_back(
          tape.affine(pooled, {P + L.proj_w + u * kEncH2, size_t(kEncH2)}, P[L.proj_b + u]));
  }
  return feats;
}

grad::Var VictimModel::caption_logprob_taped(grad::Tape& tape,
                                             std::span<const grad::Var> features,
                                             const CaptionSeq& prompt,
                                             const CaptionSeq& target) const {
  prompt.validate(vocab_, false);
  target.validate(vocab_, true);
  ParamLayout L(static_cast<int>(vocab_.size()));
  const double* P = params_.data();
  const int G = cfg_.groups;
  if (features.size() != static_cast<size_t>(G) * kFeatureDim)
    throw std::invalid_argument("caption_logprob_taped: feature size mismatch");

  // conditioning vector: mean over groups per dim
  std::vector<grad::Var> vcond(kFeatureDim), gath(G);
  std::vector<double> inv_g(G, 1.0 / static_cast<double>(G));
  for (int u = 0; u < kFeatureDim; ++u) {
    for (int g = 0; g < G; ++g) gath[g] = features[static_cast<size_t>(g) * kFeatureDim + u];
    vcond[u] = tape.affine(gath, inv_g, 0.0);
  }

  std::vector<grad::Var> h(kDecHidden), nh(kDecHidden), hv(kDecHidden + kFeatureDim);
  std::vector<double> co(kDecHidden + kFeatureDim);
  for (int u = 0; u < kDecHidden; ++u) h[u] = tape.constant(0.0);
  std::vector<grad::Var> logits(vocab_.size());

  auto step = [&](int token) {
    const double* e = P + L.embed + static_cast<size_t>(token) * kEmbedDim;
    std::copy(h.begin(), h.end(), hv.begin());
    std::copy(vcond.begin(), vcond.end(), hv.begin() + kDecHidden);
    for (int u = 0; u < kDecHidden; ++u) {
      double bias = P[L.dec_b + u] + dotn(P + L.dec_wx + u * kEmbedDim, e, kEmbedDim);
      std::copy(P + L.dec_wh + u * kDecHidden, P + L.dec_wh + (u + 1) * kDecHidden, co.begin());
      std::copy(P + L.dec_wv + u * kFeatureDim, P + L.dec_wv + (u + 1) * kFeatureDim,
                co.begin() + kDecHidden);
      nh[u] = tanh(tape.affine(hv, co, bias));
    }
    h.swap(nh);
    for (int t = 0; t < L.V; ++t)
      logits[t] = tape.affine(h, {P + L.dec_wo + t * kDecHidden, size_t(kDecHidden)},
                              P[L.dec_bo + t]);
  };

  for (int32_t tok : prompt.ids) step(tok);
  grad::Var total = tape.constant(0.0);
  for (size_t l = 0; l < target.size(); ++l) {
    total = total + grad::log_softmax_at(logits, target.ids[l]);
    if (l + 1 < target.size()) step(target.ids[l]);
  }
  return total;
}

grad::Var VictimModel::training_loss_taped(grad::Tape& tape,
                                           std::span<const grad::Var> param_vars,
                                           const geom::PointCloud& cloud,
                                           const CaptionSeq& prompt,
                                           const CaptionSeq& target) const {
  prompt.validate(vocab_, false);
  target.validate(vocab_, true);
  ParamLayout L(static_cast<int>(vocab_.size()));
  if (param_vars.size() != L.total)
    throw std::invalid_argument("training_loss_taped: param var count mismatch");
  const grad::Var* W = param_vars.data();
  Grouping grouping = make_grouping(cloud);
  const int s = grouping.group_size, G = cfg_.groups;

  std::vector<grad::Var> h1(kEncH1), h2(static_cast<size_t>(s) * kEncH2);
  std::vector<grad::Var> pooled(kEncH2), feats(static_cast<size_t>(G) * kFeatureDim);
  std::vector<grad::Var> w1row(4);
  double co1[4];

  for (int g = 0; g < G; ++g) {
    for (int j = 0; j < s; ++j) {
      int32_t m = grouping.members[static_cast<size_t>(g) * s + j];
      const Vec3& p = cloud.points[static_cast<size_t>(m)];
      co1[0] = p.x;
      co1[1] = p.y;
      co1[2] = p.z;
      co1[3] = 1.0;
      for (int u = 0; u < kEncH1; ++u) {
        w1row[0] = W[L.enc_w1 + u * 3];
        w1row[1] = W[L.enc_w1 + u * 3 + 1];
        w1row[2] = W[L.enc_w1 + u * 3 + 2];
        w1row[3] = W[L.enc_b1 + u];
        h1[u] = tanh(tape.affine(w1row, {co1, 4}, 0.0));
      }
      for (int u = 0; u < kEncH2; ++u)
        h2[static_cast<size_t>(j) * kEncH2 + u] =
            tanh(tape.dot({W + L.enc_w2 + u * kEncH1, size_t(kEncH1)}, h1) + W[L.enc_b2 + u]);
    }
    for (int u = 0; u < kEncH2; ++u) {
      grad::Var m = h2[u];
      for (int j = 1; j < s; ++j) m = vmax(m, h2[static_cast<size_t>(j) * kEncH2 + u]);
      pooled[u] = m;
    }
    for (int u = 0; u < kFeatureDim; ++u)
      feats[static_cast<size_t>(g) * kFeatureDim + u] =
          tape.dot({W + L.proj_w + u * kEncH2, size_t(kEncH2)}, pooled) + W[L.proj_b + u];
  }

  std::vector<grad::Var> vcond(kFeatureDim), gath(G);
  std::vector<double> inv_g(G, 1.0 / static_cast<double>(G));
  for (int u = 0; u < kFeatureDim; ++u) {
    for (int g = 0; g < G; ++g) gath[g] = feats[static_cast<size_t>(g) * kFeatureDim + u];
    vcond[u] = tape.affine(gath, inv_g, 0.0);
  }

  std::vector<grad::Var> h(kDecHidden), nh(kDecHidden);
  for (int u = 0; u < kDecHidden; ++u) h[u] = tape.constant(0.0);
  std::vector<grad::Var> logits(vocab_.size());

  auto step = [&](int token) {
    std::span<const grad::Var> e{W + L.embed + static_cast<size_t>(token) * kEmbedDim,
                                 size_t(kEmbedDim)};
    for (int u = 0; u < kDecHidden; ++u) {
      grad::Var pre = tape.dot({W + L.dec_wx + u * kEmbedDim, size_t(kEmbedDim)}, e) +
                      tape.dot({W + L.dec_wh + u * kDecHidden, size_t(kDecHidden)}, h) +
                      tape.dot({W + L.dec_wv + u * kFeatureDim, size_t(kFeatureDim)}, vcond) +
                      W[L.dec_b + u];
      nh[u] = tanh(pre);
    }
    h.swap(nh);
    for (int t = 0; t < L.V; ++t)
      logits[t] = tape.dot({W + L.dec_wo + t * kDecHidden, size_t(kDecHidden)}, h) +
                  W[L.dec_bo + t];
  };

  for (int32_t tok : prompt.ids) step(tok);
  grad::Var total = tape.constant(0.0);
  for (size_t l = 0; l < target.size(); ++l) {
    total = total + grad::softmax_cross_entropy(logits, target.ids[l]);
    if (l + 1 < target.size()) step(target.ids[l]);
  }
  return total / static_cast<double>(target.size());
}

// ------------------------------------------------------------- checkpointing

namespace {

constexpr char kMagic[6] = {'P', 'C', 'V', 'L', 'M', '1'};

template <class T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint truncated");
  return v;
}

}  // namespace

void save(const VictimModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<uint32_t>(os, static_cast<uint32_t>(model.cfg_.groups));
  put<uint32_t>(os, static_cast<uint32_t>(model.cfg_.group_size));
  put<uint32_t>(os, kEncH1);
  put<uint32_t>(os, kEncH2);
  put<uint32_t>(os, kFeatureDim);
  put<uint32_t>(os, kEmbedDim);
  put<uint32_t>(os, kDecHidden);

  const Vocabulary& v = model.vocab_;
  put<uint32_t>(os, static_cast<uint32_t>(v.size()));
  put<uint32_t>(os, static_cast<uint32_t>(v.start_id));
  put<uint32_t>(os, static_cast<uint32_t>(v.end_id));
  put<uint32_t>(os, static_cast<uint32_t>(v.category_ids.size()));
  for (int32_t id : v.category_ids) put<uint32_t>(os, static_cast<uint32_t>(id));
  put<uint32_t>(os, static_cast<uint32_t>(v.color_ids.size()));
  for (int32_t id : v.color_ids) put<uint32_t>(os, static_cast<uint32_t>(id));
  for (const std::string& t : v.tokens) {
    put<uint32_t>(os, static_cast<uint32_t>(t.size()));
    os.write(t.data(), static_cast<std::streamsize>(t.size()));
  }

  put<double>(os, model.holdout_accuracy_);
  put<uint64_t>(os, model.params_.size());
  os.write(reinterpret_cast<const char*>(model.params_.data()),
           static_cast<std::streamsize>(model.params_.size() * sizeof(double)));
  if (!os) throw CheckpointError("checkpoint write failed: " + path.string());
}

VictimModel load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[6];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("bad checkpoint magic (expected PCVLM1): " + path.string());

  VictimModel m;
  m.cfg_.groups = static_cast<int>(get<uint32_t>(is));
  m.cfg_.group_size = static_cast<int>(get<uint32_t>(is));
  uint32_t dims[5];
  for (uint32_t& d : dims) d = get<uint32_t>(is);
  if (dims[0] != kEncH1 || dims[1] != kEncH2 || dims[2] != kFeatureDim || dims[3] != kEmbedDim ||
      dims[4] != kDecHidden)
    throw CheckpointError("checkpoint layer dims do not match this build");

  uint32_t vs = get<uint32_t>(is);
  if (vs == 0 || vs > 64) throw CheckpointError("checkpoint vocabulary size out of range");
  Vocabulary v;
  v.start_id = static_cast<int32_t>(get<uint32_t>(is));
  v.end_id = static_cast<int32_t>(get<uint32_t>(is));
  uint32_t ncat = get<uint32_t>(is);
  if (ncat > vs) throw CheckpointError("checkpoint category table corrupt");
  for (uint32_t i = 0; i < ncat; ++i) v.category_ids.push_back(static_cast<int32_t>(get<uint32_t>(is)));
  uint32_t ncol = get<uint32_t>(is);
  if (ncol > vs) throw CheckpointError("checkpoint color table corrupt");
  for (uint32_t i = 0; i < ncol; ++i) v.color_ids.push_back(static_cast<int32_t>(get<uint32_t>(is)));
  for (uint32_t i = 0; i < vs; ++i) {
    uint32_t len = get<uint32_t>(is);
    if (len > 64) throw CheckpointError("checkpoint token length corrupt");
    std::string t(len, '\0');
    is.read(t.data(), len);
    if (!is) throw CheckpointError("checkpoint truncated");
    v.tokens.push_back(std::move(t));
  }
  if (v.start_id < 0 || static_cast<size_t>(v.start_id) >= v.tokens.size() || v.end_id < 0 ||
      static_cast<size_t>(v.end_id) >= v.tokens.size())
    throw CheckpointError("checkpoint start/end ids corrupt");
  m.vocab_ = std::move(v);

  m.holdout_accuracy_ = get<double>(is);
  uint64_t count = get<uint64_t>(is);
  ParamLayout L(static_cast<int>(m.vocab_.size()));
  if (count != L.total) throw CheckpointError("checkpoint parameter count mismatch");
  m.params_.resize(count);
  is.read(reinterpret_cast<char*>(m.params_.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw CheckpointError("checkpoint truncated");
  for (double w : m.params_)
    if (!std::isfinite(w)) throw CheckpointError("checkpoint contains non-finite weight");
  return m;
}

}  // namespace pcadv::victim
