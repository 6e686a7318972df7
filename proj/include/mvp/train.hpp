#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mvp/checkpoint.hpp"
#include "mvp/data.hpp"
#include "mvp/io_util.hpp"
#include "mvp/metrics.hpp"
#include "mvp/model.hpp"
#include "mvp/synthetic.hpp"

namespace mvp {

struct RunConfig {
  uint64_t seed = 7;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  DatasetTag dataset = DatasetTag::synthetic;
  LabelThresholds thresholds;  // valence, arousal
  ModelConfig model;
  BackboneConfig video_backbone = BackboneConfig::video_default();
  BackboneConfig physio_backbone = BackboneConfig::physio_default();
  std::size_t folds = 5;
  std::size_t early_stop_patience = 5;
  double early_stop_min_delta = 1e-4;

  void validate() const {
    if (batch_size < 1) throw ConfigError("run config: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("run config: epochs must be >= 1");
    if (folds < 2) throw ConfigError("run config: folds must be >= 2");
    for (double t : {thresholds.valence, thresholds.arousal})
      if (!(t >= 1.0 && t <= 9.0))
        throw ConfigError(str("run config: threshold ", t, " outside [1,9]"));
    model.validate();
  }

  // Fill auto (zero) time maxima from a corpus scan.
  void resolve_maxes(const CorpusMaxes& maxes) {
    if (video_backbone.input_time_max == 0) video_backbone.input_time_max = maxes.tv_max;
    if (physio_backbone.input_time_max == 0) physio_backbone.input_time_max = maxes.tp_max;
  }
};

struct FoldReport {
  std::size_t fold_index = 0;
  double f1w_valence = 0.0;
  double f1w_arousal = 0.0;
  std::array<std::size_t, 2> support_valence = {0, 0};  // targets per class
  std::array<std::size_t, 2> support_arousal = {0, 0};
  std::size_t test_count = 0;
  std::vector<double> epoch_losses;

  bool operator==(const FoldReport&) const = default;
};

struct AxisSummary {
  double mean = 0.0;
  double stddev = 0.0;
  bool operator==(const AxisSummary&) const = default;
};

struct CvSummary {
  std::string mode;
  uint64_t seed = 0;
  std::vector<FoldReport> folds;
  AxisSummary valence;
  AxisSummary arousal;
  bool operator==(const CvSummary&) const = default;
};

namespace detail {

struct NormalizedView {
  const ChannelStats* video_stats;
  const ChannelStats* physio_stats;
  const std::vector<const Trial*>* trials;

  // Normalization happens before padding; padded tails stay exactly zero.
  PaddedBatch batch(const std::vector<std::size_t>& idx, std::size_t tv_max, std::size_t tp_max,
                    const LabelThresholds& thresholds) const {
    std::vector<Trial> owned;
    owned.reserve(idx.size());
    for (std::size_t i : idx) {
      const Trial& src = *(*trials)[i];
      Trial t;
      t.subject_id = src.subject_id;
      t.trial_id = src.trial_id;
      t.valence_raw = src.valence_raw;
      t.arousal_raw = src.arousal_raw;
      t.dataset_tag = src.dataset_tag;
      t.video_feats = video_stats->transform(src.video_feats);
      t.physio = physio_stats->transform(src.physio);
      owned.push_back(std::move(t));
    }
    std::vector<const Trial*> ptrs;
    for (const Trial& t : owned) ptrs.push_back(&t);
    return pad_batch(ptrs, tv_max, tp_max, thresholds);
  }
};

inline void assert_subject_disjoint(const std::vector<const Trial*>& train,
                                    const std::vector<const Trial*>& test) {
  std::set<std::string> train_subjects;
  for (const Trial* t : train) train_subjects.insert(t->subject_id);
  for (const Trial* t : test)
    if (train_subjects.count(t->subject_id))
      throw ValidationError(str("subject ", t->subject_id, " appears in both train and test"));
}

}  // namespace detail

struct EvalResult {
  double f1_valence = 0.0;
  double f1_arousal = 0.0;
  std::array<std::size_t, 2> support_valence = {0, 0};
  std::array<std::size_t, 2> support_arousal = {0, 0};
  std::size_t count = 0;
};

// Evaluation runs on inference-only tapes: calling backward on that path is
// a contract error, so no gradient can ever flow here.
inline EvalResult evaluate_model(const MvpModel& model, const std::vector<const Trial*>& trials,
                                 const ChannelStats& video_stats,
                                 const ChannelStats& physio_stats, const RunConfig& cfg) {
  detail::NormalizedView view{&video_stats, &physio_stats, &trials};
  EvalResult r;
  std::vector<int> pred_v, pred_a, tgt_v, tgt_a;
  for (std::size_t start = 0; start < trials.size(); start += cfg.batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(trials.size(), start + cfg.batch_size); ++i)
      idx.push_back(i);
    const PaddedBatch batch = view.batch(idx, cfg.video_backbone.input_time_max,
                                         cfg.physio_backbone.input_time_max, cfg.thresholds);
    Tape tape(true);
    auto pv = model.params().push_all(tape);
    const Var logits = model.forward_batch(tape, pv, batch, false, nullptr);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      pred_v.push_back(logits.value().at(i, 0) > 0.0 ? 1 : 0);
      pred_a.push_back(logits.value().at(i, 1) > 0.0 ? 1 : 0);
      tgt_v.push_back(static_cast<int>(batch.labels.at(i, 0)));
      tgt_a.push_back(static_cast<int>(batch.labels.at(i, 1)));
    }
  }
  r.count = tgt_v.size();
  r.f1_valence = weighted_f1(pred_v, tgt_v);
  r.f1_arousal = weighted_f1(pred_a, tgt_a);
  for (int t : tgt_v) ++r.support_valence[static_cast<std::size_t>(t)];
  for (int t : tgt_a) ++r.support_arousal[static_cast<std::size_t>(t)];
  return r;
}

inline std::map<std::string, std::string> checkpoint_meta(const RunConfig& cfg, FusionMode mode);
inline std::pair<RunConfig, FusionMode> run_config_from_meta(
    const std::map<std::string, std::string>& m);

// Trains one subject-disjoint fold and evaluates on its held-out trials.
// Deterministic for a given config seed and fold index. Persists a model
// checkpoint when checkpoint_path is non-empty.
inline FoldReport train_fold(const std::vector<const Trial*>& train,
                             const std::vector<const Trial*>& test, const RunConfig& cfg,
                             FusionMode mode = FusionMode::fused, std::size_t fold_index = 0,
                             const std::string& checkpoint_path = "", bool verbose = false) {
  cfg.validate();
  if (train.empty() || test.empty()) throw ValidationError("train_fold: empty split");
  detail::assert_subject_disjoint(train, test);

  std::vector<const Mat*> video_mats, physio_mats;
  for (const Trial* t : train) {
    video_mats.push_back(&t->video_feats);
    physio_mats.push_back(&t->physio);
  }
  const ChannelStats video_stats = ChannelStats::fit(video_mats, kVideoFeatureWidth);
  const ChannelStats physio_stats = ChannelStats::fit(physio_mats, kPhysioWidth);
  detail::NormalizedView view{&video_stats, &physio_stats, &train};

  MvpModel model(cfg.model, cfg.video_backbone, cfg.physio_backbone, mode,
                 cfg.seed * 1000003 + fold_index);
  AdamConfig adam;
  adam.lr = cfg.learning_rate;

  Rng run_rng = Rng(cfg.seed).fork(97 + fold_index);
  Rng dropout_rng = run_rng.fork(11);

  FoldReport report;
  report.fold_index = fold_index;
  std::size_t step = 0;
  double best_loss = 1e300;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, run_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() +
              static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      const PaddedBatch batch = view.batch(idx, cfg.video_backbone.input_time_max,
                                           cfg.physio_backbone.input_time_max, cfg.thresholds);
      ++step;
      Tape tape;
      auto pv = model.params().push_all(tape);
      Var logits = model.forward_batch(tape, pv, batch, true, &dropout_rng);
      Var loss = bce_with_logits(logits, batch.labels);
      const double loss_value = loss.value().data[0];
      if (!std::isfinite(loss_value))
        throw NumericError(str("non-finite training loss at step ", step));
      tape.backward(loss);
      adam_step(model.params(), tape, pv, adam, step);
      epoch_loss += loss_value * static_cast<double>(idx.size());
    }
    epoch_loss /= static_cast<double>(train.size());
    report.epoch_losses.push_back(epoch_loss);
    if (verbose)
      std::fprintf(stderr, "fold %zu epoch %zu loss %.6f\n", fold_index, epoch + 1, epoch_loss);
    if (report.epoch_losses.size() == 3 &&
        report.epoch_losses[2] >= report.epoch_losses[0])
      std::fprintf(stderr,
                   "warning: fold %zu training loss non-decreasing over the first 3 epochs\n",
                   fold_index);
    if (epoch_loss < best_loss - cfg.early_stop_min_delta) {
      best_loss = epoch_loss;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;  // training loss plateau
    }
  }

  const EvalResult eval = evaluate_model(model, test, video_stats, physio_stats, cfg);
  report.f1w_valence = eval.f1_valence;
  report.f1w_arousal = eval.f1_arousal;
  report.support_valence = eval.support_valence;
  report.support_arousal = eval.support_arousal;
  report.test_count = eval.count;

  if (!checkpoint_path.empty()) {
    // Model parameters plus the training-split normalization statistics, so
    // `mvp eval` applies the exact training transform.
    ParamStore full;
    for (std::size_t i = 0; i < model.params().count(); ++i) {
      const auto& e = model.params().entry(i);
      full.add(e.name, e.value);
    }
    auto stats_tensor = [](const std::vector<double>& v) {
      return Tensor({v.size()}, v);
    };
    full.add("norm.video.mean", stats_tensor(video_stats.mean));
    full.add("norm.video.std", stats_tensor(video_stats.stddev));
    full.add("norm.physio.mean", stats_tensor(physio_stats.mean));
    full.add("norm.physio.std", stats_tensor(physio_stats.stddev));
    save_checkpoint(checkpoint_path, full, checkpoint_meta(cfg, mode));
  }
  return report;
}

// Loads a checkpoint into a freshly built model plus its normalization
// statistics. Returns the run config recovered from the metadata.
struct LoadedModel {
  RunConfig cfg;
  FusionMode mode = FusionMode::fused;
  std::unique_ptr<MvpModel> model;
  ChannelStats video_stats;
  ChannelStats physio_stats;
};

inline LoadedModel load_model(const std::string& checkpoint_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  LoadedModel lm;
  auto [cfg, mode] = run_config_from_meta(ck.meta);
  lm.cfg = cfg;
  lm.mode = mode;
  lm.model = std::make_unique<MvpModel>(cfg.model, cfg.video_backbone, cfg.physio_backbone,
                                        mode, /*init_seed=*/0);
  for (const auto& [name, tensor] : ck.params) {
    if (name.rfind("norm.", 0) == 0) continue;
    auto& e = lm.model->params().entry(lm.model->params().find(name));
    if (!e.value.same_shape(tensor))
      throw DimensionError(str("checkpoint parameter ", name, " has shape ",
                               shape_str(tensor.shape), ", model expects ",
                               shape_str(e.value.shape)));
    e.value = tensor;
  }
  lm.video_stats.mean = ck.find("norm.video.mean").data;
  lm.video_stats.stddev = ck.find("norm.video.std").data;
  lm.physio_stats.mean = ck.find("norm.physio.mean").data;
  lm.physio_stats.stddev = ck.find("norm.physio.std").data;
  return lm;
}

namespace detail {

inline AxisSummary summarize(const std::vector<double>& xs) {
  AxisSummary s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(xs.size()));
  return s;
}

inline std::size_t thread_cap() {
  const char* env = std::getenv("MVP_THREADS");
  if (!env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

}  // namespace detail

// Full subject-independent cross-validation in one ablation mode. Folds are
// independent models; MVP_THREADS caps how many train concurrently.
inline CvSummary cross_validate(const std::vector<Trial>& corpus, const RunConfig& cfg,
                                FusionMode mode = FusionMode::fused,
                                const std::string& checkpoint_dir = "", bool verbose = false) {
  cfg.validate();
  std::vector<std::string> subjects;
  for (const Trial& t : corpus) subjects.push_back(t.subject_id);
  const FoldPlan plan = make_folds(subjects, cfg.folds, cfg.seed);

  CvSummary summary;
  summary.mode = fusion_mode_name(mode);
  summary.seed = cfg.seed;
  summary.folds.resize(plan.k);

  std::vector<std::exception_ptr> errors(plan.k);
  auto run_fold = [&](std::size_t f) {
    try {
      std::set<std::string> test_subjects(plan.folds[f].begin(), plan.folds[f].end());
      std::vector<const Trial*> train, test;
      for (const Trial& t : corpus)
        (test_subjects.count(t.subject_id) ? test : train).push_back(&t);
      std::string ckpt;
      if (!checkpoint_dir.empty())
        ckpt = (std::filesystem::path(checkpoint_dir) / str("fold", f, ".ckpt")).string();
      summary.folds[f] = train_fold(train, test, cfg, mode, f, ckpt, verbose);
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };

  const std::size_t cap = std::min(detail::thread_cap(), plan.k);
  if (cap <= 1) {
    for (std::size_t f = 0; f < plan.k; ++f) run_fold(f);
  } else {
    for (std::size_t base = 0; base < plan.k; base += cap) {
      std::vector<std::thread> pool;
      for (std::size_t f = base; f < std::min(plan.k, base + cap); ++f)
        pool.emplace_back(run_fold, f);
      for (auto& th : pool) th.join();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<double> v, a;
  for (const auto& r : summary.folds) {
    v.push_back(r.f1w_valence);
    a.push_back(r.f1w_arousal);
  }
  summary.valence = detail::summarize(v);
  summary.arousal = detail::summarize(a);
  return summary;
}

// Ablation entry point: video_only feeds video tokens as both query and
// key/value streams, physio_only the physio tokens; fused is the standard
// model.
inline CvSummary ablation_modes(const std::vector<Trial>& corpus, const RunConfig& cfg,
                                FusionMode mode, const std::string& checkpoint_dir = "",
                                bool verbose = false) {
  return cross_validate(corpus, cfg, mode, checkpoint_dir, verbose);
}

// ---------------------------------------------------------------------------
// Reports: diff-able text plus JSON that parses back to the same summary.
// ---------------------------------------------------------------------------

inline std::string emit_summary_json(const CvSummary& s) {
  nlohmann::ordered_json j;
  j["mode"] = s.mode;
  j["seed"] = s.seed;
  j["valence"] = {{"mean", s.valence.mean}, {"std", s.valence.stddev}};
  j["arousal"] = {{"mean", s.arousal.mean}, {"std", s.arousal.stddev}};
  j["folds"] = nlohmann::ordered_json::array();
  for (const auto& f : s.folds) {
    nlohmann::ordered_json jf;
    jf["fold_index"] = f.fold_index;
    jf["f1w_valence"] = f.f1w_valence;
    jf["f1w_arousal"] = f.f1w_arousal;
    jf["support_valence"] = f.support_valence;
    jf["support_arousal"] = f.support_arousal;
    jf["test_count"] = f.test_count;
    jf["epoch_losses"] = f.epoch_losses;
    j["folds"].push_back(jf);
  }
  return j.dump(2) + "\n";
}

inline CvSummary parse_summary_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(str("summary JSON: ", e.what()));
  }
  CvSummary s;
  s.mode = j.at("mode").get<std::string>();
  s.seed = j.at("seed").get<uint64_t>();
  s.valence.mean = j.at("valence").at("mean").get<double>();
  s.valence.stddev = j.at("valence").at("std").get<double>();
  s.arousal.mean = j.at("arousal").at("mean").get<double>();
  s.arousal.stddev = j.at("arousal").at("std").get<double>();
  for (const auto& jf : j.at("folds")) {
    FoldReport f;
    f.fold_index = jf.at("fold_index").get<std::size_t>();
    f.f1w_valence = jf.at("f1w_valence").get<double>();
    f.f1w_arousal = jf.at("f1w_arousal").get<double>();
    f.support_valence = jf.at("support_valence").get<std::array<std::size_t, 2>>();
    f.support_arousal = jf.at("support_arousal").get<std::array<std::size_t, 2>>();
    f.test_count = jf.at("test_count").get<std::size_t>();
    f.epoch_losses = jf.at("epoch_losses").get<std::vector<double>>();
    s.folds.push_back(std::move(f));
  }
  return s;
}

inline std::string emit_summary_text(const CvSummary& s) {
  std::string out = str("mode: ", s.mode, "\nseed: ", s.seed, "\n");
  out += str("valence weighted F1: ", fmt_double(s.valence.mean), " +/- ",
             fmt_double(s.valence.stddev), "\n");
  out += str("arousal weighted F1: ", fmt_double(s.arousal.mean), " +/- ",
             fmt_double(s.arousal.stddev), "\n");
  for (const auto& f : s.folds)
    out += str("fold ", f.fold_index, ": valence ", fmt_double(f.f1w_valence), " arousal ",
               fmt_double(f.f1w_arousal), " (", f.test_count, " test trials, ",
               f.epoch_losses.size(), " epochs)\n");
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint metadata: enough to rebuild the model for `mvp eval`.
// ---------------------------------------------------------------------------

inline std::string conv_layers_to_string(const BackboneConfig& c) {
  std::string s;
  for (std::size_t i = 0; i < c.conv_layers.size(); ++i) {
    if (i) s += ',';
    s += str(c.conv_layers[i].first, "x", c.conv_layers[i].second);
  }
  return s;
}

inline std::vector<std::pair<std::size_t, std::size_t>> conv_layers_from_string(
    const std::string& s) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t start = 0;
  while (start < s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    const std::string item = s.substr(start, comma - start);
    const std::size_t x = item.find('x');
    if (x == std::string::npos)
      throw ConfigError(str("conv layer spec '", item, "' is not <channels>x<kernel>"));
    try {
      out.emplace_back(std::stoul(item.substr(0, x)), std::stoul(item.substr(x + 1)));
    } catch (const std::exception&) {
      throw ConfigError(str("conv layer spec '", item, "' is not <channels>x<kernel>"));
    }
    start = comma + 1;
  }
  if (out.empty()) throw ConfigError("conv layer spec is empty");
  return out;
}

inline std::map<std::string, std::string> checkpoint_meta(const RunConfig& cfg, FusionMode mode) {
  std::map<std::string, std::string> m;
  m["mode"] = fusion_mode_name(mode);
  m["seed"] = str(cfg.seed);
  m["dataset"] = dataset_name(cfg.dataset);
  m["threshold.valence"] = fmt_double(cfg.thresholds.valence);
  m["threshold.arousal"] = fmt_double(cfg.thresholds.arousal);
  m["model.heads"] = str(cfg.model.n_heads);
  m["model.layers"] = str(cfg.model.n_layers);
  m["model.dim"] = str(cfg.model.model_dim);
  m["model.ffn_dim"] = str(cfg.model.ffn_dim);
  m["model.tokens"] = str(cfg.model.token_count);
  m["model.positional_encoding"] = cfg.model.use_positional_encoding ? "true" : "false";
  m["model.dropout"] = fmt_double(cfg.model.dropout);
  m["video.conv"] = conv_layers_to_string(cfg.video_backbone);
  m["video.time_max"] = str(cfg.video_backbone.input_time_max);
  m["physio.conv"] = conv_layers_to_string(cfg.physio_backbone);
  m["physio.time_max"] = str(cfg.physio_backbone.input_time_max);
  return m;
}

// Rebuilds a RunConfig/mode pair from checkpoint metadata.
inline std::pair<RunConfig, FusionMode> run_config_from_meta(
    const std::map<std::string, std::string>& m) {
  RunConfig cfg;
  auto need = [&m](const std::string& k) {
    auto it = m.find(k);
    if (it == m.end()) throw SchemaError(str("checkpoint meta missing key ", k));
    return it->second;
  };
  cfg.seed = std::stoull(need("seed"));
  cfg.dataset = dataset_from_name(need("dataset"));
  cfg.thresholds.valence = std::stod(need("threshold.valence"));
  cfg.thresholds.arousal = std::stod(need("threshold.arousal"));
  cfg.model.n_heads = std::stoul(need("model.heads"));
  cfg.model.n_layers = std::stoul(need("model.layers"));
  cfg.model.model_dim = std::stoul(need("model.dim"));
  cfg.model.ffn_dim = std::stoul(need("model.ffn_dim"));
  cfg.model.token_count = std::stoul(need("model.tokens"));
  cfg.model.use_positional_encoding = need("model.positional_encoding") == "true";
  cfg.model.dropout = std::stod(need("model.dropout"));
  cfg.video_backbone.conv_layers = conv_layers_from_string(need("video.conv"));
  cfg.video_backbone.feature_dim = cfg.model.model_dim;
  cfg.video_backbone.token_count = cfg.model.token_count;
  cfg.video_backbone.input_time_max = std::stoul(need("video.time_max"));
  cfg.video_backbone.input_channels = kVideoFeatureWidth;
  cfg.physio_backbone.conv_layers = conv_layers_from_string(need("physio.conv"));
  cfg.physio_backbone.feature_dim = cfg.model.model_dim;
  cfg.physio_backbone.token_count = cfg.model.token_count;
  cfg.physio_backbone.input_time_max = std::stoul(need("physio.time_max"));
  cfg.physio_backbone.input_channels = kPhysioWidth;
  return {cfg, fusion_mode_from_name(need("mode"))};
}

}  // namespace mvp
