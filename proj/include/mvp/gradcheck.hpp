#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mvp/model.hpp"

namespace mvp {

// Desk-size configuration used by the finite-difference suite: one head,
// one layer, width 8, four tokens.
inline ModelConfig tiny_fusion_config() {
  ModelConfig cfg;
  cfg.n_heads = 1;
  cfg.n_layers = 1;
  cfg.model_dim = 8;
  cfg.ffn_dim = 16;
  cfg.token_count = 4;
  cfg.use_positional_encoding = true;
  cfg.dropout = 0.0;
  return cfg;
}

inline BackboneConfig tiny_video_config() {
  BackboneConfig c;
  c.conv_layers = {{8, 3}};
  c.feature_dim = 8;
  c.token_count = 4;
  c.input_time_max = 12;
  c.input_channels = 5;
  return c;
}

inline BackboneConfig tiny_physio_config() {
  BackboneConfig c;
  c.conv_layers = {{8, 5}};
  c.feature_dim = 8;
  c.token_count = 4;
  c.input_time_max = 20;
  c.input_channels = 2;
  return c;
}

inline MvpModel build_tiny_model(uint64_t seed = 42, FusionMode mode = FusionMode::fused) {
  return MvpModel(tiny_fusion_config(), tiny_video_config(), tiny_physio_config(), mode, seed);
}

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  bool pass(double tol = 1e-3) const { return coords_checked > 0 && max_rel_err <= tol; }
};

// Central finite differences against the tape gradients through the full
// tiny network, sampling coordinates from every parameter tensor.
inline GradcheckReport run_tiny_gradcheck(uint64_t seed = 42, double eps = 1e-5,
                                          std::size_t coords_per_param = 3) {
  MvpModel model = build_tiny_model(seed);
  Rng nudge(seed + 1);
  for (std::size_t i = 0; i < model.params().count(); ++i)
    for (auto& v : model.params().entry(i).value.data) v += 0.05 * nudge.normal();

  Rng rng(seed + 2);
  Tensor video({12, 5});
  for (auto& v : video.data) v = rng.normal();
  Tensor physio({20, 2});
  for (auto& v : physio.data) v = rng.normal();
  Tensor targets({2, 2}, {1.0, 0.0, 0.0, 1.0});

  auto loss_value = [&]() {
    Tape tape;
    auto pv = model.params().push_all(tape);
    Var l0 = model.forward_trial(tape, pv, video, physio);
    Var l1 = model.forward_trial(tape, pv, video, physio);
    return bce_with_logits(concat_rows({l0, l1}), targets).value().data[0];
  };

  Tape tape;
  auto pv = model.params().push_all(tape);
  Var l0 = model.forward_trial(tape, pv, video, physio);
  Var l1 = model.forward_trial(tape, pv, video, physio);
  Var loss = bce_with_logits(concat_rows({l0, l1}), targets);
  tape.backward(loss);

  GradcheckReport report;
  Rng pick(seed + 3);
  for (std::size_t e = 0; e < model.params().count(); ++e) {
    auto& entry = model.params().entry(e);
    const Tensor& analytic = tape.grad(pv[e]);
    const std::size_t n = std::min(coords_per_param, entry.value.size());
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t i = static_cast<std::size_t>(pick.below(entry.value.size()));
      const double saved = entry.value.data[i];
      entry.value.data[i] = saved + eps;
      const double fp = loss_value();
      entry.value.data[i] = saved - eps;
      const double fm = loss_value();
      entry.value.data[i] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::abs(fd), std::abs(analytic.data[i]), 1e-8});
      const double rel = std::abs(fd - analytic.data[i]) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = entry.name;
      }
      ++report.coords_checked;
    }
  }
  return report;
}

}  // namespace mvp
