#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvp/common.hpp"
#include "mvp/io_util.hpp"
#include "mvp/train.hpp"

namespace mvp {

// Run configuration file: flat `key = value` lines with dotted sections and
// '#' comments. Unknown keys are rejected, not ignored; command-line
// overrides (--set key=value) win over the file.
struct KeySpec {
  const char* key;
  const char* def;
  const char* help;
};

inline const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"seed", "7", "run seed; drives folds, init, shuffling and dropout"},
      {"epochs", "30", "maximum training epochs per fold"},
      {"batch.size", "8", "trials per training step"},
      {"learning.rate", "0.0001", "Adam learning rate"},
      {"dataset", "synthetic", "dataset tag: amigos | deap | synthetic"},
      {"folds", "5", "cross-validation fold count"},
      {"threshold.valence", "4.5", "binarization threshold for valence"},
      {"threshold.arousal", "4.5", "binarization threshold for arousal"},
      {"early_stop.patience", "5", "epochs without improvement before stopping"},
      {"early_stop.min_delta", "0.0001", "minimum loss improvement that counts"},
      {"model.heads", "8", "attention heads"},
      {"model.layers", "8", "cross-attention layers"},
      {"model.dim", "512", "token feature width"},
      {"model.ffn_dim", "1024", "feed-forward hidden width"},
      {"model.tokens", "100", "token count after time reduction"},
      {"model.positional_encoding", "true", "add sinusoidal positions to token streams"},
      {"model.dropout", "0.1", "dropout on attention weights and FFN while training"},
      {"video.conv", "128x5,512x5", "video conv stack as <channels>x<kernel>,..."},
      {"video.time_max", "0", "video frames after padding; 0 = corpus maximum"},
      {"physio.conv", "64x7,256x7,512x7", "physio conv stack as <channels>x<kernel>,..."},
      {"physio.time_max", "0", "physio samples after padding; 0 = corpus maximum"},
  };
  return keys;
}

inline bool is_known_key(const std::string& k) {
  for (const auto& spec : config_keys())
    if (k == spec.key) return true;
  return false;
}

inline std::map<std::string, std::string> default_config_kv() {
  std::map<std::string, std::string> kv;
  for (const auto& spec : config_keys()) kv[spec.key] = spec.def;
  return kv;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

inline void apply_config_line(std::map<std::string, std::string>& kv, const std::string& raw,
                              const std::string& where) {
  const std::string line = detail::trim(raw);
  if (line.empty() || line[0] == '#') return;
  const std::size_t eq = line.find('=');
  if (eq == std::string::npos)
    throw ConfigError(str(where, ": expected key = value, got '", line, "'"));
  const std::string key = detail::trim(line.substr(0, eq));
  const std::string value = detail::trim(line.substr(eq + 1));
  if (!is_known_key(key)) throw ConfigError(str(where, ": unknown config key '", key, "'"));
  kv[key] = value;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::map<std::string, std::string> kv = default_config_kv();
  const std::string text = read_file(path);
  std::size_t lineno = 0, start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    ++lineno;
    apply_config_line(kv, text.substr(start, nl - start), str(path, ":", lineno));
    if (nl == text.size()) break;
    start = nl + 1;
  }
  return kv;
}

inline void apply_overrides(std::map<std::string, std::string>& kv,
                            const std::vector<std::string>& sets) {
  for (const auto& s : sets) apply_config_line(kv, s, str("--set ", s));
}

namespace detail {

inline double parse_double(const std::map<std::string, std::string>& kv, const std::string& k) {
  try {
    return std::stod(kv.at(k));
  } catch (const std::exception&) {
    throw ConfigError(str("config key ", k, ": '", kv.at(k), "' is not a number"));
  }
}

inline std::size_t parse_size(const std::map<std::string, std::string>& kv,
                              const std::string& k) {
  try {
    return std::stoul(kv.at(k));
  } catch (const std::exception&) {
    throw ConfigError(str("config key ", k, ": '", kv.at(k), "' is not a count"));
  }
}

inline bool parse_bool(const std::map<std::string, std::string>& kv, const std::string& k) {
  const std::string& v = kv.at(k);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(str("config key ", k, ": '", v, "' is not true/false"));
}

}  // namespace detail

inline RunConfig run_config_from_kv(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  cfg.seed = static_cast<uint64_t>(detail::parse_size(kv, "seed"));
  cfg.epochs = detail::parse_size(kv, "epochs");
  cfg.batch_size = detail::parse_size(kv, "batch.size");
  cfg.learning_rate = detail::parse_double(kv, "learning.rate");
  cfg.dataset = dataset_from_name(kv.at("dataset"));
  cfg.folds = detail::parse_size(kv, "folds");
  cfg.thresholds.valence = detail::parse_double(kv, "threshold.valence");
  cfg.thresholds.arousal = detail::parse_double(kv, "threshold.arousal");
  cfg.early_stop_patience = detail::parse_size(kv, "early_stop.patience");
  cfg.early_stop_min_delta = detail::parse_double(kv, "early_stop.min_delta");
  cfg.model.n_heads = detail::parse_size(kv, "model.heads");
  cfg.model.n_layers = detail::parse_size(kv, "model.layers");
  cfg.model.model_dim = detail::parse_size(kv, "model.dim");
  cfg.model.ffn_dim = detail::parse_size(kv, "model.ffn_dim");
  cfg.model.token_count = detail::parse_size(kv, "model.tokens");
  cfg.model.use_positional_encoding = detail::parse_bool(kv, "model.positional_encoding");
  cfg.model.dropout = detail::parse_double(kv, "model.dropout");
  cfg.video_backbone.conv_layers = conv_layers_from_string(kv.at("video.conv"));
  cfg.video_backbone.feature_dim = cfg.model.model_dim;
  cfg.video_backbone.token_count = cfg.model.token_count;
  cfg.video_backbone.input_time_max = detail::parse_size(kv, "video.time_max");
  cfg.video_backbone.input_channels = kVideoFeatureWidth;
  cfg.physio_backbone.conv_layers = conv_layers_from_string(kv.at("physio.conv"));
  cfg.physio_backbone.feature_dim = cfg.model.model_dim;
  cfg.physio_backbone.token_count = cfg.model.token_count;
  cfg.physio_backbone.input_time_max = detail::parse_size(kv, "physio.time_max");
  cfg.physio_backbone.input_channels = kPhysioWidth;
  return cfg;
}

}  // namespace mvp
