#pragma once

// Victim training: teacher-forced cross-entropy with Adam, fully
// deterministic for a fixed seed (hand-rolled shuffling and RNG, sequential
// gradient accumulation).

#include <cstdint>
#include <vector>

#include "pcadv/corpus.hpp"
#include "pcadv/victim.hpp"

namespace pcadv::victim {

struct TrainOptions {
  ModelConfig model;              // grouping config; groups*group_size must fit every cloud
  int batch_size = 32;
  double lr = 0.01;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double holdout_fraction = 0.2;  // per-category tail split, deterministic
  double target_accuracy = 0.95;  // attack-eligibility bar
  double early_stop_accuracy = 0.995;
  double min_accuracy = 0.80;     // below this after max epochs -> TrainingFailedError
};

struct TrainReport {
  std::vector<double> epoch_loss;     // mean per-sample cross-entropy
  std::vector<double> epoch_holdout;  // caption-category accuracy
  int epochs_run = 0;
  double holdout_accuracy = 0.0;
  bool attack_eligible = false;       // holdout >= target_accuracy
};

// Requires >= 8 categories with >= 40 clouds each. Throws
// TrainingFailedError if the final held-out caption-category accuracy is
// below opts.min_accuracy.
VictimModel train(const corpus::Corpus& corpus, int max_epochs, uint64_t seed,
                  const TrainOptions& opts = {}, TrainReport* report = nullptr);

}  // namespace pcadv::victim
