#pragma once

// Thin aliases over the library's tiny-model builders so tests and the
// acceptance suite share one desk-size configuration.

#include "mvp/gradcheck.hpp"

namespace tiny {

inline mvp::ModelConfig fusion_config() { return mvp::tiny_fusion_config(); }
inline mvp::BackboneConfig video_config() { return mvp::tiny_video_config(); }
inline mvp::BackboneConfig physio_config() { return mvp::tiny_physio_config(); }

inline mvp::MvpModel build(uint64_t seed = 42,
                           mvp::FusionMode mode = mvp::FusionMode::fused) {
  return mvp::build_tiny_model(seed, mode);
}

}  // namespace tiny
