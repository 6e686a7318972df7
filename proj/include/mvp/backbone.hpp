#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mvp/autodiff.hpp"
#include "mvp/common.hpp"
#include "mvp/optimizer.hpp"
#include "mvp/rng.hpp"

namespace mvp {

// Modality encoder: a 1D-CNN stack that keeps the time length, then one
// dense map along the time axis (shared across feature channels) that
// reduces T_max tokens down to token_count.
struct BackboneConfig {
  std::vector<std::pair<std::size_t, std::size_t>> conv_layers;  // (out_channels, kernel_len)
  std::size_t feature_dim = 512;
  std::size_t token_count = 100;
  std::size_t input_time_max = 0;
  std::size_t input_channels = 0;

  void validate() const {
    if (conv_layers.empty()) throw ConfigError("backbone: need at least one conv layer");
    if (conv_layers.back().first != feature_dim)
      throw ConfigError(str("backbone: final conv channels ", conv_layers.back().first,
                            " must equal feature_dim ", feature_dim));
    for (const auto& [ch, k] : conv_layers) {
      if (ch == 0) throw ConfigError("backbone: conv channels must be >= 1");
      if (k % 2 == 0) throw ConfigError(str("backbone: kernel length ", k, " must be odd"));
    }
    if (token_count == 0 || input_time_max == 0 || input_channels == 0)
      throw ConfigError("backbone: token_count, input_time_max, input_channels must be >= 1");
    if (token_count >= input_time_max)
      throw ConfigError(str("backbone: token_count ", token_count,
                            " must be < input_time_max ", input_time_max));
  }

  // Full-scale defaults.
  static BackboneConfig video_default(std::size_t tv_max = 2800) {
    BackboneConfig c;
    c.conv_layers = {{128, 5}, {512, 5}};
    c.feature_dim = 512;
    c.token_count = 100;
    c.input_time_max = tv_max;
    c.input_channels = 42;
    return c;
  }

  static BackboneConfig physio_default(std::size_t tp_max = 19900) {
    BackboneConfig c;
    c.conv_layers = {{64, 7}, {256, 7}, {512, 7}};
    c.feature_dim = 512;
    c.token_count = 100;
    c.input_time_max = tp_max;
    c.input_channels = 2;
    return c;
  }
};

class Backbone {
 public:
  Backbone(ParamStore& store, BackboneConfig cfg, std::string prefix, Rng& init)
      : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
    std::size_t cin = cfg_.input_channels;
    for (std::size_t i = 0; i < cfg_.conv_layers.size(); ++i) {
      const auto [cout, k] = cfg_.conv_layers[i];
      Tensor kernels({cout, cin, k});
      const double sigma = std::sqrt(2.0 / static_cast<double>(cin * k));
      for (auto& v : kernels.data) v = sigma * init.normal();
      conv_kernels_.push_back(store.add(str(prefix_, ".conv", i, ".kernels"), std::move(kernels)));
      conv_bias_.push_back(store.add(str(prefix_, ".conv", i, ".bias"), Tensor({cout})));
      cin = cout;
    }
    Tensor tw({cfg_.input_time_max, cfg_.token_count});
    const double sigma = 1.0 / std::sqrt(static_cast<double>(cfg_.input_time_max));
    for (auto& v : tw.data) v = sigma * init.normal();
    time_w_ = store.add(str(prefix_, ".time.w"), std::move(tw));
    time_b_ = store.add(str(prefix_, ".time.b"), Tensor({cfg_.token_count}));
  }

  const BackboneConfig& config() const { return cfg_; }

  // x: [input_time_max, input_channels] -> [token_count, feature_dim].
  // When stage_shapes is given, the shape after every conv stage is recorded
  // (each must keep the input's time length).
  Var forward(Tape& tape, Var x, const std::vector<Var>& params,
              std::vector<std::vector<std::size_t>>* stage_shapes = nullptr) const {
    const std::size_t t_in = x.value().shape[0];
    if (x.value().rank() != 2 || x.value().shape[1] != cfg_.input_channels)
      throw DimensionError(str(prefix_, ": input ", shape_str(x.value().shape),
                               " does not match [T,", cfg_.input_channels, "]"));
    Var h = x;
    for (std::size_t i = 0; i < conv_kernels_.size(); ++i) {
      h = relu(conv1d(h, params[conv_kernels_[i]], params[conv_bias_[i]]));
      if (h.value().shape[0] != t_in)
        throw DimensionError(str(prefix_, ": conv stage ", i, " changed the time length"));
      if (stage_shapes) stage_shapes->push_back(h.value().shape);
    }
    Var out = time_reduce(h, params[time_w_], params[time_b_]);
    if (stage_shapes) stage_shapes->push_back(out.value().shape);
    return out;
  }

 private:
  BackboneConfig cfg_;
  std::string prefix_;
  std::vector<std::size_t> conv_kernels_;
  std::vector<std::size_t> conv_bias_;
  std::size_t time_w_ = 0;
  std::size_t time_b_ = 0;
};

}  // namespace mvp
