// pcadv: corpus generation, victim training, attacks, defenses and reporting
// from one binary. Exit codes: 0 success, 2 configuration error, 3 runtime
// error. Progress goes to stdout as JSON lines; diagnostics to stderr.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcadv/attack.hpp"
#include "pcadv/common.hpp"
#include "pcadv/corpus.hpp"
#include "pcadv/defense.hpp"
#include "pcadv/eval.hpp"
#include "pcadv/geometry.hpp"
#include "pcadv/io.hpp"
#include "pcadv/train.hpp"
#include "pcadv/victim.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace pcadv;

namespace {

std::mutex g_out_mu;

void emit(const ojson& j) {
  std::lock_guard<std::mutex> lock(g_out_mu);
  std::cout << j.dump() << "\n" << std::flush;
}

void progress(const std::string& phase, size_t done, size_t total, const std::string& id = {}) {
  ojson j;
  j["event"] = "progress";
  j["phase"] = phase;
  j["done"] = done;
  j["total"] = total;
  if (!id.empty()) j["id"] = id;
  emit(j);
}

int fail_config(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return 2;
}

std::string fnum(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

// relative --out paths land under $PCADV_RUN_ROOT when it is set
fs::path resolve_out(const std::string& out) {
  fs::path p = out;
  if (p.is_relative())
    if (const char* root = std::getenv("PCADV_RUN_ROOT")) p = fs::path(root) / p;
  return p;
}

void write_run_manifest(const fs::path& out, const std::string& subcommand, uint64_t seed,
                        std::map<std::string, std::string> config) {
  io::Manifest m;
  m.tool = "pcadv";
  m.version = kVersion;
  m.subcommand = subcommand;
  m.seed = seed;
  m.config = std::move(config);
  io::write_manifest(m, out / "manifest.json");
}

uint64_t per_item_seed(uint64_t base, size_t i) {
  return base + 0x9e3779b97f4a7c15ull * (i + 1);  // splitmix64 stream
}

// ---------------------------------------------------------------- gen-corpus

struct GenOpts {
  std::string out;
  std::vector<std::string> categories;
  int per_category = 50;
  int points = 512;
  uint64_t seed = 1;
  double noise = 0.0;
};

int run_gen_corpus(const GenOpts& o) {
  corpus::CorpusSpec spec;
  spec.clouds_per_category = o.per_category;
  spec.points_per_cloud = o.points;
  spec.seed = o.seed;
  spec.noise_stddev = o.noise;
  if (o.categories.empty()) {
    for (int i = 0; i < corpus::kCategoryCount; ++i)
      spec.categories.push_back(static_cast<corpus::Category>(i));
  } else {
    for (const std::string& w : o.categories) {
      try {
        spec.categories.push_back(corpus::category_from_word(w));
      } catch (const std::invalid_argument& e) {
        return fail_config(e.what());
      }
    }
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    return fail_config(e.what());
  }

  fs::path out = resolve_out(o.out);
  fs::create_directories(out);
  corpus::Corpus c = corpus::generate(spec);
  progress("generate", c.clouds.size(), c.clouds.size());
  io::write_corpus(c, out);

  std::map<std::string, std::string> cfg;
  cfg["clouds_per_category"] = std::to_string(spec.clouds_per_category);
  cfg["points_per_cloud"] = std::to_string(spec.points_per_cloud);
  cfg["noise_stddev"] = fnum(spec.noise_stddev);
  std::string cats;
  for (corpus::Category cat : spec.categories)
    cats += std::string(cats.empty() ? "" : ",") + corpus::category_word(cat);
  cfg["categories"] = cats;
  cfg["seed"] = std::to_string(o.seed);
  write_run_manifest(out, "gen-corpus", o.seed, cfg);

  ojson done;
  done["event"] = "done";
  done["out"] = out.string();
  done["clouds"] = c.clouds.size();
  emit(done);
  return 0;
}

// --------------------------------------------------------------- train-victim

struct TrainOpts {
  std::string corpus_dir, out;
  int epochs = 40;
  uint64_t seed = 1;
  int groups = 32, group_size = 16;
  int batch = 32;
  double lr = 0.01;
  double holdout_fraction = 0.2;
  double early_stop = 0.995;
};

int run_train(const TrainOpts& o) {
  if (!fs::exists(fs::path(o.corpus_dir) / "corpus.json"))
    return fail_config("corpus not found: " + o.corpus_dir);
  corpus::Corpus c = io::read_corpus(o.corpus_dir);

  victim::TrainOptions topt;
  topt.model.groups = o.groups;
  topt.model.group_size = o.group_size;
  topt.batch_size = o.batch;
  topt.lr = o.lr;
  topt.holdout_fraction = o.holdout_fraction;
  topt.early_stop_accuracy = o.early_stop;

  fs::path out = resolve_out(o.out);
  fs::create_directories(out);

  victim::TrainReport report;
  victim::VictimModel model = victim::train(c, o.epochs, o.seed, topt, &report);
  for (size_t e = 0; e < report.epoch_holdout.size(); ++e) {
    ojson j;
    j["event"] = "epoch";
    j["epoch"] = e + 1;
    j["loss"] = report.epoch_loss[e];
    j["holdout_accuracy"] = report.epoch_holdout[e];
    emit(j);
  }
  victim::save(model, out / "victim.ckpt");

  std::map<std::string, std::string> cfg;
  cfg["epochs"] = std::to_string(o.epochs);
  cfg["groups"] = std::to_string(o.groups);
  cfg["group_size"] = std::to_string(o.group_size);
  cfg["batch_size"] = std::to_string(o.batch);
  cfg["lr"] = fnum(o.lr);
  cfg["holdout_fraction"] = fnum(o.holdout_fraction);
  cfg["early_stop_accuracy"] = fnum(o.early_stop);
  cfg["corpus"] = o.corpus_dir;
  cfg["seed"] = std::to_string(o.seed);
  write_run_manifest(out, "train-victim", o.seed, cfg);

  ojson done;
  done["event"] = "done";
  done["out"] = out.string();
  done["epochs_run"] = report.epochs_run;
  done["holdout_accuracy"] = report.holdout_accuracy;
  done["attack_eligible"] = report.attack_eligible;
  emit(done);
  return 0;
}

// -------------------------------------------------------------------- attack

struct AttackOpts {
  std::string corpus_dir, checkpoint, out;
  std::string family = "vision", setting = "untargeted";
  std::string target;  // category word; empty = cyclic next-present-category
  attack::AttackConfig base;
  bool no_ksm = false, no_gsm = false, latent = false;
  uint64_t seed = 1;
  int limit = 0;
  int threads = 0;
  bool dynamic = false;
};

std::map<std::string, std::string> attack_config_map(const AttackOpts& o) {
  std::map<std::string, std::string> cfg;
  cfg["family"] = o.family;
  cfg["setting"] = o.setting;
  cfg["eta"] = fnum(o.base.eta);
  cfg["steps"] = std::to_string(o.base.steps);
  cfg["rounds"] = std::to_string(o.base.rounds);
  cfg["lambda0"] = fnum(o.base.lambda0);
  cfg["lambda_max"] = fnum(o.base.lambda_max);
  cfg["lambda1"] = fnum(o.base.lambda1);
  cfg["lambda2"] = fnum(o.base.lambda2);
  cfg["lambda3"] = fnum(o.base.lambda3);
  cfg["keypoints"] = std::to_string(o.base.keypoints);
  cfg["smooth_k"] = std::to_string(o.base.smooth_k);
  cfg["sigma_cap"] = fnum(o.base.sigma_cap);
  cfg["use_ksm"] = o.no_ksm ? "false" : "true";
  cfg["use_gsm"] = o.no_gsm ? "false" : "true";
  cfg["perturb_latent"] = o.latent ? "true" : "false";
  cfg["target"] = o.target.empty() ? "cyclic" : o.target;
  cfg["corpus"] = o.corpus_dir;
  cfg["checkpoint"] = o.checkpoint;
  cfg["limit"] = std::to_string(o.limit);
  cfg["seed"] = std::to_string(o.seed);
  cfg["dynamic"] = o.dynamic ? "true" : "false";
  return cfg;
}

int run_attack_cmd(const AttackOpts& o) {
  if (!fs::exists(o.checkpoint)) return fail_config("checkpoint not found: " + o.checkpoint);
  if (!fs::exists(fs::path(o.corpus_dir) / "corpus.json"))
    return fail_config("corpus not found: " + o.corpus_dir);

  victim::VictimModel model;
  try {
    model = victim::load(o.checkpoint);
  } catch (const CheckpointError& e) {
    return fail_config(std::string("unusable checkpoint: ") + e.what());
  }
  if (model.holdout_accuracy() < 0.95) {
    char b[96];
    std::snprintf(b, sizeof b, "checkpoint is not attack-eligible (holdout accuracy %.3f)",
                  model.holdout_accuracy());
    return fail_config(b);
  }
  corpus::Corpus c = io::read_corpus(o.corpus_dir);
  const victim::Vocabulary& vocab = model.vocab();
  if (vocab.tokens != c.vocab.tokens)
    return fail_config("checkpoint vocabulary differs from the corpus vocabulary");

  attack::AttackConfig cfg = o.base;
  try {
    cfg.family = family_from_string(o.family);
    cfg.setting = setting_from_string(o.setting);
  } catch (const std::invalid_argument& e) {
    return fail_config(e.what());
  }
  cfg.use_ksm = !o.no_ksm;
  cfg.use_gsm = !o.no_gsm;
  cfg.perturb_latent = o.latent;

  const size_t n =
      o.limit > 0 ? std::min<size_t>(c.clouds.size(), static_cast<size_t>(o.limit))
                  : c.clouds.size();

  // categories present, for cyclic target selection; first cloud per category
  std::vector<int> present;
  std::map<int, size_t> first_of;
  for (size_t i = 0; i < c.clouds.size(); ++i)
    if (first_of.emplace(c.clouds[i].category, i).second)
      present.push_back(c.clouds[i].category);
  std::sort(present.begin(), present.end());

  int fixed_target = -1;
  if (!o.target.empty()) {
    int32_t tok = vocab.find(o.target);
    fixed_target = tok >= 0 ? vocab.category_of_token(tok) : -1;
    if (fixed_target < 0) return fail_config("unknown target category: " + o.target);
    if (!first_of.count(fixed_target) && cfg.family == Family::vision &&
        cfg.setting == Setting::targeted)
      return fail_config("target category not present in the corpus: " + o.target);
  }
  if (cfg.setting == Setting::targeted && present.size() < 2 && o.target.empty())
    return fail_config("cyclic targeting needs at least two categories in the corpus");

  auto next_present = [&present](int cat) {
    auto it = std::upper_bound(present.begin(), present.end(), cat);
    return it == present.end() ? present.front() : *it;
  };

  fs::path out = resolve_out(o.out);
  fs::create_directories(out / "adv");

  struct Task {
    std::optional<attack::AttackResult> result;
    int target_cat = -1;
    std::string error;
  };
  std::vector<Task> tasks(n);
  std::atomic<size_t> counter{0};
  const std::string phase = o.dynamic ? "attack-dynamic" : "attack";

  parallel_for(n, o.threads > 0 ? o.threads : default_thread_count(), [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) {
      const corpus::LabeledCloud& lc = c.clouds[i];
      try {
        attack::AttackConfig cc = cfg;
        cc.keypoints = std::min<int>(cc.keypoints, static_cast<int>(lc.cloud.size()));
        attack::AttackRefs refs;
        refs.ground_truth = lc.caption;
        refs.gt_category = lc.category;
        if (cc.setting == Setting::targeted) {
          int tcat = fixed_target >= 0 ? fixed_target : next_present(lc.category);
          tasks[i].target_cat = tcat;
          refs.target_category = tcat;
          refs.target_caption = corpus::category_caption(vocab, tcat);
          if (cc.family == Family::vision)
            refs.target_cloud = c.clouds[first_of.at(tcat)].cloud;
        }
        uint64_t seed = per_item_seed(o.seed, i);
        tasks[i].result = o.dynamic ? attack::dynamic_constraint(model, lc.cloud, refs, cc, seed)
                                    : attack::run_attack(model, lc.cloud, refs, cc, seed);
      } catch (const std::exception& ex) {
        tasks[i].error = ex.what();
      }
      progress(phase, ++counter, n, lc.id);
    }
  });

  // single writer for every artifact
  std::vector<eval::EvalRecord> records;
  size_t failures = 0;
  for (size_t i = 0; i < n; ++i) {
    const corpus::LabeledCloud& lc = c.clouds[i];
    Task& t = tasks[i];
    if (!t.result) {
      ++failures;
      ojson j;
      j["event"] = "cloud-error";
      j["id"] = lc.id;
      j["error"] = t.error;
      emit(j);
      continue;
    }
    const attack::AttackResult& r = *t.result;
    io::write_ply(r.adversarial, out / "adv" / (lc.id + ".ply"));
    victim::CaptionSeq reference = cfg.setting == Setting::targeted
                                       ? corpus::category_caption(vocab, t.target_cat)
                                       : lc.caption;
    eval::EvalRecord rec = eval::make_record(vocab, lc.id, cfg.family, cfg.setting,
                                             r.clean_caption, r.adv_caption, reference,
                                             lc.category, t.target_cat, r.csd, r.cd, r.hd);
    rec.final_lambda = r.final_lambda;
    rec.cosine = r.final_cosine;
    records.push_back(std::move(rec));
    if (r.aborted) {
      ojson j;
      j["event"] = "cloud-aborted";
      j["id"] = lc.id;
      j["diagnostics"] = r.diagnostics;
      emit(j);
    }
  }
  if (records.empty()) {
    std::cerr << "error: every attack failed (" << failures << " clouds)\n";
    return 3;
  }
  io::write_records(records, out / "records.jsonl");
  eval::Summary s = eval::summarize(records, to_string(cfg.family));
  std::vector<eval::Summary> summary_rows{s};
  io::write_summary_csv(summary_rows, out / "summary.csv");
  write_run_manifest(out, o.dynamic ? "attack-dynamic" : "attack", o.seed, attack_config_map(o));

  ojson done;
  done["event"] = "done";
  done["out"] = out.string();
  done["records"] = records.size();
  done["failures"] = failures;
  done["asr"] = s.asr;
  emit(done);
  return 0;
}

// -------------------------------------------------------------------- defend

struct DefendOpts {
  std::string run_dir, corpus_dir, checkpoint, out;
  std::string kind = "srs";
  double srs_ratio = 0.9;
  int sor_k = 2;
  double sor_alpha = 1.1;
  uint64_t seed = 1;
  int threads = 0;
};

int run_defend(const DefendOpts& o) {
  if (!fs::exists(o.checkpoint)) return fail_config("checkpoint not found: " + o.checkpoint);
  if (!fs::exists(fs::path(o.run_dir) / "records.jsonl"))
    return fail_config("attack run not found: " + o.run_dir);
  if (!fs::exists(fs::path(o.corpus_dir) / "corpus.json"))
    return fail_config("corpus not found: " + o.corpus_dir);

  defense::DefenseSpec spec;
  if (o.kind == "srs") spec.kind = defense::DefenseSpec::Kind::srs;
  else if (o.kind == "sor") spec.kind = defense::DefenseSpec::Kind::sor;
  else if (o.kind == "none") spec.kind = defense::DefenseSpec::Kind::none;
  else return fail_config("unknown defense: " + o.kind);
  spec.srs_ratio = o.srs_ratio;
  spec.sor_k = o.sor_k;
  spec.sor_alpha = o.sor_alpha;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    return fail_config(e.what());
  }

  victim::VictimModel model;
  try {
    model = victim::load(o.checkpoint);
  } catch (const CheckpointError& e) {
    return fail_config(std::string("unusable checkpoint: ") + e.what());
  }
  const victim::Vocabulary& vocab = model.vocab();
  corpus::Corpus c = io::read_corpus(o.corpus_dir);
  std::map<std::string, size_t> by_id;
  for (size_t i = 0; i < c.clouds.size(); ++i) by_id[c.clouds[i].id] = i;

  std::vector<eval::EvalRecord> in = io::read_records(fs::path(o.run_dir) / "records.jsonl");
  const size_t n = in.size();
  if (n == 0) return fail_config("attack run has no records: " + o.run_dir);

  fs::path out = resolve_out(o.out);
  fs::create_directories(out / "defended");

  auto word_to_cat = [&vocab](const std::string& w) {
    int32_t tok = w.empty() ? -1 : vocab.find(w);
    return tok >= 0 ? vocab.category_of_token(tok) : -1;
  };
  victim::CaptionSeq prompt{{vocab.start_id}};

  struct Task {
    std::optional<eval::EvalRecord> rec;
    std::optional<geom::PointCloud> cloud;
    std::string error;
  };
  std::vector<Task> tasks(n);
  std::atomic<size_t> counter{0};

  parallel_for(n, o.threads > 0 ? o.threads : default_thread_count(), [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) {
      const eval::EvalRecord& r0 = in[i];
      try {
        auto it = by_id.find(r0.cloud_id);
        if (it == by_id.end())
          throw std::runtime_error("cloud id not in corpus: " + r0.cloud_id);
        const corpus::LabeledCloud& lc = c.clouds[it->second];
        geom::PointCloud adv = io::read_ply(fs::path(o.run_dir) / "adv" / (r0.cloud_id + ".ply"));
        geom::PointCloud defended = defense::apply(adv, spec, per_item_seed(o.seed, i));
        // inference pipeline re-normalizes whatever survives the filter
        geom::PointCloud fed = geom::normalized_unit_sphere(defended);
        victim::CaptionSeq cap = model.caption_greedy(fed, prompt);
        victim::CaptionSeq clean_cap =
            victim::caption_from_string(vocab, r0.clean_caption);
        victim::CaptionSeq reference =
            victim::caption_from_string(vocab, r0.reference_caption);
        eval::EvalRecord rec = eval::make_record(
            vocab, r0.cloud_id, r0.family, r0.setting, clean_cap, cap, reference,
            word_to_cat(r0.gt_category), word_to_cat(r0.target_category),
            r0.csd,  // attacker-side distortion; defended cloud changes cardinality
            geom::chamfer_distance(lc.cloud, fed), geom::hausdorff_distance(lc.cloud, fed));
        rec.final_lambda = r0.final_lambda;
        rec.cosine = r0.cosine;
        tasks[i].rec = std::move(rec);
        tasks[i].cloud = std::move(fed);
      } catch (const std::exception& ex) {
        tasks[i].error = ex.what();
      }
      progress("defend", ++counter, n, r0.cloud_id);
    }
  });

  std::vector<eval::EvalRecord> records;
  size_t failures = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!tasks[i].rec) {
      ++failures;
      ojson j;
      j["event"] = "cloud-error";
      j["id"] = in[i].cloud_id;
      j["error"] = tasks[i].error;
      emit(j);
      continue;
    }
    io::write_ply(*tasks[i].cloud, out / "defended" / (in[i].cloud_id + ".ply"));
    records.push_back(std::move(*tasks[i].rec));
  }
  if (records.empty()) {
    std::cerr << "error: every defense application failed\n";
    return 3;
  }
  io::write_records(records, out / "records.jsonl");
  eval::Summary s =
      eval::summarize(records, std::string(to_string(records.front().family)) + "+" + o.kind);
  std::vector<eval::Summary> summary_rows{s};
  io::write_summary_csv(summary_rows, out / "summary.csv");

  std::map<std::string, std::string> cfg;
  cfg["defense"] = o.kind;
  cfg["srs_ratio"] = fnum(o.srs_ratio);
  cfg["sor_k"] = std::to_string(o.sor_k);
  cfg["sor_alpha"] = fnum(o.sor_alpha);
  cfg["run"] = o.run_dir;
  cfg["corpus"] = o.corpus_dir;
  cfg["checkpoint"] = o.checkpoint;
  cfg["seed"] = std::to_string(o.seed);
  write_run_manifest(out, "defend", o.seed, cfg);

  ojson done;
  done["event"] = "done";
  done["out"] = out.string();
  done["records"] = records.size();
  done["failures"] = failures;
  done["asr"] = s.asr;
  emit(done);
  return 0;
}

// ------------------------------------------------------------------ evaluate

struct EvalOpts {
  std::string records_path, out;
  std::string name;  // optional attack-name override
};

int run_evaluate(const EvalOpts& o) {
  if (!fs::exists(o.records_path)) return fail_config("records not found: " + o.records_path);
  std::vector<eval::EvalRecord> records = io::read_records(o.records_path);
  if (records.empty()) return fail_config("no records in " + o.records_path);

  std::map<std::pair<int, int>, std::vector<eval::EvalRecord>> groups;
  for (const eval::EvalRecord& r : records)
    groups[{static_cast<int>(r.family), static_cast<int>(r.setting)}].push_back(r);

  std::vector<eval::Summary> rows;
  for (const auto& [key, group] : groups) {
    std::string name = o.name.empty() ? to_string(group.front().family) : o.name;
    eval::Summary s = eval::summarize(group, name);
    ojson j;
    j["event"] = "summary";
    j["attack"] = s.attack;
    j["setting"] = s.setting;
    j["count"] = s.count;
    j["asr"] = s.asr;
    j["ags"] = s.ags;
    j["csd"] = s.csd;
    j["cd_x1e2"] = s.cd_x1e2;
    j["hd_x1e2"] = s.hd_x1e2;
    j["gamma"] = std::isnan(s.gamma) ? ojson(nullptr) : ojson(s.gamma);
    emit(j);
    rows.push_back(std::move(s));
  }
  fs::path out = resolve_out(o.out);
  fs::create_directories(out);
  io::write_summary_csv(rows, out / "summary.csv");

  std::map<std::string, std::string> cfg;
  cfg["records"] = o.records_path;
  write_run_manifest(out, "evaluate", 0, cfg);

  ojson done;
  done["event"] = "done";
  done["out"] = out.string();
  done["rows"] = rows.size();
  emit(done);
  return 0;
}

// -------------------------------------------------------------------- report

struct ReportOpts {
  std::string scores_path, out;
};

// scores CSV: model,attack,setting,ags_clean,ags_adv,csd
int run_report(const ReportOpts& o) {
  if (!fs::exists(o.scores_path)) return fail_config("scores file not found: " + o.scores_path);

  std::ifstream in(o.scores_path, std::ios::binary);
  if (!in) return fail_config("cannot open scores file: " + o.scores_path);
  std::string line;
  long line_no = 0;

  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        cells.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur += ch;
      }
    }
    cells.push_back(cur);
    return cells;
  };

  if (!std::getline(in, line))
    throw ParseError(o.scores_path, 1, "empty scores file");
  ++line_no;
  if (split(line) != std::vector<std::string>{"model", "attack", "setting", "ags_clean",
                                              "ags_adv", "csd"})
    throw ParseError(o.scores_path, line_no, "unexpected scores header");

  struct Row {
    std::string model, attack, setting;
    double ags_clean, ags_adv, csd, gamma;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells = split(line);
    if (cells.size() != 6) throw ParseError(o.scores_path, line_no, "expected 6 columns");
    Row r;
    r.model = cells[0];
    r.attack = cells[1];
    r.setting = cells[2];
    try {
      r.ags_clean = std::stod(cells[3]);
      r.ags_adv = std::stod(cells[4]);
      r.csd = std::stod(cells[5]);
      r.gamma = eval::gamma(r.ags_clean, r.ags_adv, r.csd);
    } catch (const std::logic_error& e) {
      throw ParseError(o.scores_path, line_no, e.what());
    }
    ojson j;
    j["event"] = "gamma";
    j["model"] = r.model;
    j["attack"] = r.attack;
    j["setting"] = r.setting;
    j["gamma"] = r.gamma;
    emit(j);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError(o.scores_path, line_no, "no score rows");

  fs::path out = resolve_out(o.out);
  fs::create_directories(out);
  {
    std::ofstream g(out / "gamma.csv", std::ios::binary);
    if (!g) throw std::runtime_error("cannot open for writing: " + (out / "gamma.csv").string());
    g << "model,attack,setting,ags_clean,ags_adv,csd,gamma\n";
    char buf[256];
    for (const Row& r : rows) {
      int k = std::snprintf(buf, sizeof buf, "%s,%s,%s,%.6g,%.6g,%.6g,%.6g\n", r.model.c_str(),
                            r.attack.c_str(), r.setting.c_str(), r.ags_clean, r.ags_adv, r.csd,
                            r.gamma);
      g.write(buf, k);
    }
  }
  std::map<std::string, std::string> cfg;
  cfg["scores"] = o.scores_path;
  write_run_manifest(out, "report", 0, cfg);

  ojson done;
  done["event"] = "done";
  done["out"] = out.string();
  done["rows"] = rows.size();
  emit(done);
  return 0;
}

// ---------------------------------------------------------------------- main

void add_attack_flags(CLI::App* sc, AttackOpts& o) {
  sc->add_option("--corpus", o.corpus_dir, "corpus directory")->required();
  sc->add_option("--checkpoint", o.checkpoint, "victim checkpoint")->required();
  sc->add_option("--out", o.out, "output run directory")->required();
  sc->add_option("--family", o.family, "attack family")
      ->check(CLI::IsMember({"vision", "caption"}));
  sc->add_option("--setting", o.setting, "attack setting")
      ->check(CLI::IsMember({"untargeted", "targeted"}));
  sc->add_option("--target", o.target, "target category word (default: cyclic)");
  sc->add_option("--eta", o.base.eta, "gradient step size");
  sc->add_option("--steps", o.base.steps, "steps per round");
  sc->add_option("--lambda0", o.base.lambda0, "initial distance weight");
  sc->add_option("--lambda-max", o.base.lambda_max, "bisection upper bracket");
  sc->add_option("--lambda1", o.base.lambda1, "kernel-loss weight");
  sc->add_option("--lambda2", o.base.lambda2, "hide-loss weight");
  sc->add_option("--lambda3", o.base.lambda3, "chamfer-loss weight");
  sc->add_option("--keypoints", o.base.keypoints, "keypoint count M (clamped to N)");
  sc->add_option("--smooth-k", o.base.smooth_k, "smoothing neighbors per point");
  sc->add_option("--sigma-cap", o.base.sigma_cap, "bandwidth cap a");
  sc->add_flag("--no-ksm", o.no_ksm, "perturb all points (skip keypoint selection)");
  sc->add_flag("--no-gsm", o.no_gsm, "apply offsets only at keypoints (skip smoothing)");
  sc->add_flag("--latent", o.latent, "perturb token features instead of points");
  sc->add_option("--seed", o.seed, "root seed");
  sc->add_option("--limit", o.limit, "attack only the first N clouds (0 = all)");
  sc->add_option("--threads", o.threads, "worker threads (0 = auto)");
  sc->set_config("--config", "", "key=value config file (flags take precedence)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"white-box adversarial attacks on a point-cloud captioner"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::function<int()> action;

  GenOpts gen;
  CLI::App* g = app.add_subcommand("gen-corpus", "generate the synthetic labeled corpus");
  g->add_option("--out", gen.out, "corpus output directory")->required();
  g->add_option("--categories", gen.categories, "category words (default: all 8)")
      ->delimiter(',');
  g->add_option("--clouds-per-category", gen.per_category, "clouds per category");
  g->add_option("--points", gen.points, "points per cloud");
  g->add_option("--noise", gen.noise, "surface noise stddev");
  g->add_option("--seed", gen.seed, "corpus seed");
  g->set_config("--config", "", "key=value config file (flags take precedence)");
  g->callback([&] { action = [&] { return run_gen_corpus(gen); }; });

  TrainOpts tr;
  CLI::App* t = app.add_subcommand("train-victim", "train the surrogate captioner");
  t->add_option("--corpus", tr.corpus_dir, "corpus directory")->required();
  t->add_option("--out", tr.out, "output run directory")->required();
  t->add_option("--epochs", tr.epochs, "max epochs");
  t->add_option("--groups", tr.groups, "encoder groups G");
  t->add_option("--group-size", tr.group_size, "points per group s");
  t->add_option("--batch", tr.batch, "batch size");
  t->add_option("--lr", tr.lr, "Adam learning rate");
  t->add_option("--holdout-fraction", tr.holdout_fraction, "held-out fraction per category");
  t->add_option("--early-stop-accuracy", tr.early_stop,
                "stop once holdout accuracy reaches this");
  t->add_option("--seed", tr.seed, "training seed");
  t->set_config("--config", "", "key=value config file (flags take precedence)");
  t->callback([&] { action = [&] { return run_train(tr); }; });

  AttackOpts atk;
  CLI::App* a = app.add_subcommand("attack", "run the fixed-weight attack over a corpus");
  add_attack_flags(a, atk);
  a->callback([&] {
    action = [&] {
      atk.dynamic = false;
      return run_attack_cmd(atk);
    };
  });

  AttackOpts dyn;
  CLI::App* d =
      app.add_subcommand("attack-dynamic", "run the bisection-scheduled attack over a corpus");
  add_attack_flags(d, dyn);
  d->add_option("--rounds", dyn.base.rounds, "bisection rounds");
  d->callback([&] {
    action = [&] {
      dyn.dynamic = true;
      return run_attack_cmd(dyn);
    };
  });

  DefendOpts def;
  CLI::App* f = app.add_subcommand("defend", "re-evaluate an attack run under a defense");
  f->add_option("--run", def.run_dir, "attack run directory")->required();
  f->add_option("--corpus", def.corpus_dir, "corpus directory")->required();
  f->add_option("--checkpoint", def.checkpoint, "victim checkpoint")->required();
  f->add_option("--out", def.out, "output run directory")->required();
  f->add_option("--defense", def.kind, "defense kind")
      ->check(CLI::IsMember({"srs", "sor", "none"}));
  f->add_option("--srs-ratio", def.srs_ratio, "SRS keep ratio");
  f->add_option("--sor-k", def.sor_k, "SOR neighbor count");
  f->add_option("--sor-alpha", def.sor_alpha, "SOR threshold multiplier");
  f->add_option("--seed", def.seed, "defense seed");
  f->add_option("--threads", def.threads, "worker threads (0 = auto)");
  f->set_config("--config", "", "key=value config file (flags take precedence)");
  f->callback([&] { action = [&] { return run_defend(def); }; });

  EvalOpts ev;
  CLI::App* e = app.add_subcommand("evaluate", "summarize a records file");
  e->add_option("--records", ev.records_path, "records.jsonl path")->required();
  e->add_option("--out", ev.out, "output directory")->required();
  e->add_option("--name", ev.name, "attack-name override for the summary rows");
  e->set_config("--config", "", "key=value config file (flags take precedence)");
  e->callback([&] { action = [&] { return run_evaluate(ev); }; });

  ReportOpts rep;
  CLI::App* r = app.add_subcommand("report", "compute distortion-efficiency from a scores CSV");
  r->add_option("--scores", rep.scores_path, "scores CSV (model,attack,setting,ags_clean,ags_adv,csd)")
      ->required();
  r->add_option("--out", rep.out, "output directory")->required();
  r->set_config("--config", "", "key=value config file (flags take precedence)");
  r->callback([&] { action = [&] { return run_report(rep); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }
  if (!action) return fail_config("no subcommand selected");
  try {
    return action();
  } catch (const ParseError& ex) {  // malformed input files are config errors
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const CheckpointError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 3;
  }
}
