#include "pcadv/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "pcadv/eval.hpp"

namespace pcadv::victim {

namespace {

struct Split {
  std::vector<size_t> train, holdout;
};

Split split_corpus(const corpus::Corpus& corpus, double holdout_fraction) {
  std::map<int, std::vector<size_t>> by_cat;
  for (size_t i = 0; i < corpus.clouds.size(); ++i)
    by_cat[corpus.clouds[i].category].push_back(i);

  if (by_cat.size() < 8) throw std::invalid_argument("train: need at least 8 categories");
  for (auto& [cat, idx] : by_cat)
    if (idx.size() < 40)
      throw std::invalid_argument("train: need at least 40 clouds per category");

  Split s;
  for (auto& [cat, idx] : by_cat) {
    size_t keep = idx.size() - static_cast<size_t>(std::floor(
                                   holdout_fraction * static_cast<double>(idx.size())));
    keep = std::clamp<size_t>(keep, 1, idx.size() - 1);
    for (size_t j = 0; j < idx.size(); ++j)
      (j < keep ? s.train : s.holdout).push_back(idx[j]);
  }
  return s;
}

double holdout_accuracy(const VictimModel& model, const corpus::Corpus& corpus,
                        const std::vector<size_t>& holdout, const CaptionSeq& prompt) {
  if (holdout.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i : holdout) {
    CaptionSeq cap = model.caption_greedy(corpus.clouds[i].cloud, prompt);
    auto pred = eval::classify_from_caption(cap, model.vocab());
    if (pred && *pred == corpus.clouds[i].category) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(holdout.size());
}

}  // namespace

VictimModel train(const corpus::Corpus& corpus, int max_epochs, uint64_t seed,
                  const TrainOptions& opts, TrainReport* report) {
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
  if (opts.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  opts.model.validate();
  for (const auto& lc : corpus.clouds) {
    if (lc.cloud.size() < static_cast<size_t>(opts.model.groups) * opts.model.group_size)
      throw std::invalid_argument("train: cloud smaller than groups*group_size");
  }

  Split split = split_corpus(corpus, opts.holdout_fraction);
  VictimModel model = VictimModel::random_init(opts.model, corpus.vocab, seed);
  CaptionSeq prompt{{corpus.vocab.start_id}};

  const size_t P = model.param_count();
  std::vector<double> adam_m(P, 0.0), adam_v(P, 0.0), gbuf(P, 0.0);
  int64_t adam_t = 0;

  grad::Tape tape;
  std::vector<grad::Var> pvars(P);
  RandomStream shuffle_rng = RandomStream(seed).derive(0xBA7C4);

  TrainReport local;
  TrainReport& rep = report ? *report : local;
  rep = TrainReport{};

  std::vector<size_t> order = split.train;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;

    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(opts.batch_size)) {
      size_t bend = std::min(order.size(), at + static_cast<size_t>(opts.batch_size));
      std::fill(gbuf.begin(), gbuf.end(), 0.0);

      for (size_t b = at; b < bend; ++b) {
        const auto& sample = corpus.clouds[order[b]];
        tape.clear();
        std::span<const double> w = model.params();
        for (size_t i = 0; i < P; ++i) pvars[i] = tape.input(w[i]);
        grad::Var loss = model.training_loss_taped(tape, pvars, sample.cloud, prompt,
                                                   sample.caption);
        loss_sum += loss.value();
        std::vector<double> g = tape.gradient(loss, pvars);
        for (size_t i = 0; i < P; ++i) gbuf[i] += g[i];
      }

      const double inv_b = 1.0 / static_cast<double>(bend - at);
      ++adam_t;
      const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(adam_t));
      const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(adam_t));
      std::span<double> w = model.mutable_params();
      for (size_t i = 0; i < P; ++i) {
        const double g = gbuf[i] * inv_b;
        adam_m[i] = opts.beta1 * adam_m[i] + (1.0 - opts.beta1) * g;
        adam_v[i] = opts.beta2 * adam_v[i] + (1.0 - opts.beta2) * g * g;
        w[i] -= opts.lr * (adam_m[i] / c1) / (std::sqrt(adam_v[i] / c2) + opts.adam_eps);
      }
    }

    rep.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    double acc = holdout_accuracy(model, corpus, split.holdout, prompt);
    rep.epoch_holdout.push_back(acc);
    rep.epochs_run = epoch + 1;
    if (acc >= opts.early_stop_accuracy) break;
  }

  rep.holdout_accuracy = rep.epoch_holdout.back();
  rep.attack_eligible = rep.holdout_accuracy >= opts.target_accuracy;
  model.set_holdout_accuracy(rep.holdout_accuracy);

  if (rep.holdout_accuracy < opts.min_accuracy) {
    std::ostringstream os;
    os << "training failed: holdout caption-category accuracy "
       << rep.holdout_accuracy * 100.0 << "% after " << rep.epochs_run
       << " epochs (final loss " << rep.epoch_loss.back() << ", floor "
       << opts.min_accuracy * 100.0 << "%)";
    throw TrainingFailedError(os.str());
  }
  return model;
}

}  // namespace pcadv::victim
