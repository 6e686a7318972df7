#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mvp/backbone.hpp"
#include "mvp/data.hpp"
#include "mvp/fusion.hpp"
#include "mvp/optimizer.hpp"

namespace mvp {

enum class FusionMode { fused, video_only, physio_only };

inline const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::fused: return "fused";
    case FusionMode::video_only: return "video_only";
    case FusionMode::physio_only: return "physio_only";
  }
  return "?";
}

inline FusionMode fusion_mode_from_name(const std::string& s) {
  if (s == "fused") return FusionMode::fused;
  if (s == "video_only") return FusionMode::video_only;
  if (s == "physio_only") return FusionMode::physio_only;
  throw ConfigError(str("unknown ablation mode: ", s));
}

// The full network: modality backbones feeding the cross-attention fusion
// stack. Physio tokens are the queries and video tokens the keys/values; the
// ablation modes reroute one modality's tokens into both roles.
class MvpModel {
 public:
  MvpModel(ModelConfig fusion_cfg, BackboneConfig video_cfg, BackboneConfig physio_cfg,
           FusionMode mode, uint64_t init_seed)
      : fusion_cfg_(fusion_cfg), video_cfg_(video_cfg), physio_cfg_(physio_cfg), mode_(mode) {
    fusion_cfg_.validate();
    Rng init(init_seed);
    if (mode_ != FusionMode::physio_only) {
      if (video_cfg_.feature_dim != fusion_cfg_.model_dim ||
          video_cfg_.token_count != fusion_cfg_.token_count)
        throw ConfigError("video backbone output must match fusion token geometry");
      video_bb_ = std::make_unique<Backbone>(params_, video_cfg_, "video", init);
    }
    if (mode_ != FusionMode::video_only) {
      if (physio_cfg_.feature_dim != fusion_cfg_.model_dim ||
          physio_cfg_.token_count != fusion_cfg_.token_count)
        throw ConfigError("physio backbone output must match fusion token geometry");
      physio_bb_ = std::make_unique<Backbone>(params_, physio_cfg_, "physio", init);
    }
    fusion_ = std::make_unique<FusionStack>(params_, fusion_cfg_, "fusion", init);
    pe_ = sinusoidal_positional_encoding(fusion_cfg_.token_count, fusion_cfg_.model_dim);
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  FusionMode mode() const { return mode_; }
  const ModelConfig& fusion_config() const { return fusion_cfg_; }
  const BackboneConfig& video_config() const { return video_cfg_; }
  const BackboneConfig& physio_config() const { return physio_cfg_; }

  // One trial: video [TV_max, 42], physio [TP_max, 2] -> logits [2].
  Var forward_trial(Tape& tape, const std::vector<Var>& pv, const Tensor& video,
                    const Tensor& physio, bool training = false, Rng* rng = nullptr,
                    AttnProbe* probe = nullptr,
                    std::vector<std::vector<std::size_t>>* stage_shapes = nullptr) const {
    Var query{nullptr, 0}, kv{nullptr, 0};
    if (mode_ != FusionMode::physio_only) {
      Var v_in = tape.leaf(video, false);
      Var v_tokens = video_bb_->forward(tape, v_in, pv, stage_shapes);
      if (fusion_cfg_.use_positional_encoding)
        v_tokens = add(v_tokens, tape.leaf(pe_, false));
      query = v_tokens;
      kv = v_tokens;
    }
    if (mode_ != FusionMode::video_only) {
      Var p_in = tape.leaf(physio, false);
      Var p_tokens = physio_bb_->forward(tape, p_in, pv, stage_shapes);
      if (fusion_cfg_.use_positional_encoding)
        p_tokens = add(p_tokens, tape.leaf(pe_, false));
      query = p_tokens;
      if (mode_ == FusionMode::physio_only) kv = p_tokens;
    }
    return fusion_->forward(tape, query, kv, pv, training, rng, probe);
  }

  // Whole padded batch -> logits [B, 2].
  Var forward_batch(Tape& tape, const std::vector<Var>& pv, const PaddedBatch& batch,
                    bool training = false, Rng* rng = nullptr) const {
    std::vector<Var> rows;
    rows.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      rows.push_back(forward_trial(tape, pv, batch.video_slice(i), batch.physio_slice(i),
                                   training, rng));
    return concat_rows(rows);
  }

 private:
  ModelConfig fusion_cfg_;
  BackboneConfig video_cfg_;
  BackboneConfig physio_cfg_;
  FusionMode mode_;
  ParamStore params_;
  std::unique_ptr<Backbone> video_bb_;
  std::unique_ptr<Backbone> physio_bb_;
  std::unique_ptr<FusionStack> fusion_;
  Tensor pe_;
};

}  // namespace mvp
