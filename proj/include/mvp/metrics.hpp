#pragma once

#include <cstddef>
#include <vector>

#include "mvp/common.hpp"

namespace mvp {

// Weighted F1 for binary labels: per-class F1 (harmonic mean of precision
// and recall, 0 when undefined) averaged with weights proportional to class
// support. Datasets here are imbalanced, so this is the reporting metric.
inline double weighted_f1(const std::vector<int>& preds, const std::vector<int>& targets) {
  if (preds.size() != targets.size())
    throw ValidationError(str("weighted_f1: ", preds.size(), " predictions vs ", targets.size(),
                              " targets"));
  if (preds.empty()) throw ValidationError("weighted_f1: empty input");
  double weighted = 0.0;
  const double n = static_cast<double>(preds.size());
  for (int cls = 0; cls <= 1; ++cls) {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i] == cls;
      const bool t = targets[i] == cls;
      if (t) ++support;
      if (p && t) ++tp;
      if (p && !t) ++fp;
      if (!p && t) ++fn;
    }
    const double precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                                       : 0.0;
    const double recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                                    : 0.0;
    const double f1 = (precision + recall > 0.0)
                          ? 2.0 * precision * recall / (precision + recall)
                          : 0.0;
    weighted += f1 * static_cast<double>(support) / n;
  }
  return weighted;
}

}  // namespace mvp
