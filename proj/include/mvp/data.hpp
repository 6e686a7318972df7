#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mvp/common.hpp"
#include "mvp/dsp.hpp"
#include "mvp/rng.hpp"
#include "mvp/tensor.hpp"

namespace mvp {

// Row-major matrix for trial storage. Unlike Tensor, rows may be zero: an
// empty AU file parses to a 0 x 42 matrix and is rejected later as an empty
// trial.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

constexpr std::size_t kVideoFeatureWidth = 42;
constexpr std::size_t kPhysioWidth = 2;
constexpr double kPhysioRateHz = 128.0;
constexpr double kVideoFps = 18.0;

// The 18 action units carried as presence + intensity features.
inline const std::vector<int>& au_ids() {
  static const std::vector<int> ids = {1,  2,  4,  5,  6,  7,  9,  10, 12,
                                       14, 15, 17, 20, 23, 25, 26, 28, 45};
  return ids;
}

// Canonical 42-column order: 18 AU presence (AUxx_c), 18 AU intensity
// (AUxx_r), 6 gaze direction components (one 3-vector per eye).
inline const std::vector<std::string>& au_column_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    char buf[16];
    for (int id : au_ids()) {
      std::snprintf(buf, sizeof buf, "AU%02d_c", id);
      n.emplace_back(buf);
    }
    for (int id : au_ids()) {
      std::snprintf(buf, sizeof buf, "AU%02d_r", id);
      n.emplace_back(buf);
    }
    for (const char* g : {"gaze_0_x", "gaze_0_y", "gaze_0_z", "gaze_1_x", "gaze_1_y", "gaze_1_z"})
      n.emplace_back(g);
    return n;
  }();
  return names;
}

inline std::size_t au_presence_col(int au_id) {
  const auto& ids = au_ids();
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == au_id) return i;
  throw ValidationError(str("AU", au_id, " is not part of the feature set"));
}

inline std::size_t au_intensity_col(int au_id) { return 18 + au_presence_col(au_id); }

struct Trial {
  std::string subject_id;
  std::string trial_id;
  Mat video_feats;  // [TV, 42]
  Mat physio;       // [TP, 2], columns: cardiac, EDA, at 128 Hz
  double valence_raw = 5.0;
  double arousal_raw = 5.0;
  DatasetTag dataset_tag = DatasetTag::synthetic;

  void validate() const {
    if (video_feats.cols != kVideoFeatureWidth)
      throw ValidationError(str("trial ", trial_id, ": video feature width ", video_feats.cols,
                                " != ", kVideoFeatureWidth));
    if (physio.cols != kPhysioWidth)
      throw ValidationError(str("trial ", trial_id, ": physio width ", physio.cols, " != ",
                                kPhysioWidth));
    if (video_feats.rows == 0 || physio.rows == 0)
      throw ValidationError(str("trial ", trial_id, " is empty"));
    for (double v : {valence_raw, arousal_raw})
      if (!(v >= 1.0 && v <= 9.0))
        throw ValidationError(str("trial ", trial_id, ": raw label ", v, " outside [1,9]"));
  }
};

// raw <= threshold -> 0, else 1.
inline int binarize_label(double raw, double threshold) {
  if (!(raw >= 1.0 && raw <= 9.0))
    throw ValidationError(str("label ", raw, " outside [1,9]"));
  return raw <= threshold ? 0 : 1;
}

struct LabelThresholds {
  double valence = 4.5;
  double arousal = 4.5;
};

// ---------------------------------------------------------------------------
// Normalization: per-channel zero-mean unit-variance statistics fitted on
// the training split only; the transform has no fit path.
// ---------------------------------------------------------------------------

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::size_t zero_variance_channels = 0;

  static ChannelStats fit(const std::vector<const Mat*>& mats, std::size_t cols) {
    ChannelStats s;
    s.mean.assign(cols, 0.0);
    s.stddev.assign(cols, 0.0);
    std::size_t n = 0;
    for (const Mat* m : mats) {
      if (m->cols != cols) throw DimensionError("normalize: column count mismatch");
      n += m->rows;
      for (std::size_t i = 0; i < m->rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) s.mean[j] += m->at(i, j);
    }
    if (n == 0) throw ValidationError("normalize: no samples to fit");
    for (auto& v : s.mean) v /= static_cast<double>(n);
    for (const Mat* m : mats)
      for (std::size_t i = 0; i < m->rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
          const double d = m->at(i, j) - s.mean[j];
          s.stddev[j] += d * d;
        }
    for (std::size_t j = 0; j < cols; ++j) {
      s.stddev[j] = std::sqrt(s.stddev[j] / static_cast<double>(n));
      if (s.stddev[j] < 1e-12) {  // constant channel: shift only
        s.stddev[j] = 1.0;
        ++s.zero_variance_channels;
      }
    }
    return s;
  }

  Mat transform(const Mat& m) const {
    if (m.cols != mean.size()) throw DimensionError("normalize: column count mismatch");
    Mat out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
      for (std::size_t j = 0; j < m.cols; ++j)
        out.at(i, j) = (m.at(i, j) - mean[j]) / stddev[j];
    return out;
  }
};

// ---------------------------------------------------------------------------
// Zero-padded batches
// ---------------------------------------------------------------------------

struct PaddedBatch {
  Tensor video;   // [B, TV_max, 42]
  Tensor physio;  // [B, TP_max, 2]
  Tensor labels;  // [B, 2], binarized (valence, arousal)
  std::vector<std::pair<std::size_t, std::size_t>> true_lengths;  // (TV, TP) per trial

  std::size_t size() const { return true_lengths.size(); }

  Tensor video_slice(std::size_t i) const {
    Tensor out({video.shape[1], video.shape[2]});
    std::copy(video.data.begin() + static_cast<std::ptrdiff_t>(i * out.size()),
              video.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * out.size()),
              out.data.begin());
    return out;
  }

  Tensor physio_slice(std::size_t i) const {
    Tensor out({physio.shape[1], physio.shape[2]});
    std::copy(physio.data.begin() + static_cast<std::ptrdiff_t>(i * out.size()),
              physio.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * out.size()),
              out.data.begin());
    return out;
  }
};

inline PaddedBatch pad_batch(const std::vector<const Trial*>& trials, std::size_t tv_max,
                             std::size_t tp_max, const LabelThresholds& thresholds) {
  if (trials.empty()) throw ValidationError("pad_batch: empty batch");
  PaddedBatch batch;
  const std::size_t b = trials.size();
  batch.video = Tensor({b, tv_max, kVideoFeatureWidth});
  batch.physio = Tensor({b, tp_max, kPhysioWidth});
  batch.labels = Tensor({b, 2});
  for (std::size_t i = 0; i < b; ++i) {
    const Trial& t = *trials[i];
    t.validate();
    if (t.video_feats.rows > tv_max)
      throw ValidationError(str("trial ", t.trial_id, ": video length ", t.video_feats.rows,
                                " exceeds TV_max ", tv_max));
    if (t.physio.rows > tp_max)
      throw ValidationError(str("trial ", t.trial_id, ": physio length ", t.physio.rows,
                                " exceeds TP_max ", tp_max));
    std::copy(t.video_feats.data.begin(), t.video_feats.data.end(),
              batch.video.data.begin() +
                  static_cast<std::ptrdiff_t>(i * tv_max * kVideoFeatureWidth));
    std::copy(t.physio.data.begin(), t.physio.data.end(),
              batch.physio.data.begin() + static_cast<std::ptrdiff_t>(i * tp_max * kPhysioWidth));
    batch.labels.at(i, 0) = binarize_label(t.valence_raw, thresholds.valence);
    batch.labels.at(i, 1) = binarize_label(t.arousal_raw, thresholds.arousal);
    batch.true_lengths.emplace_back(t.video_feats.rows, t.physio.rows);
  }
  return batch;
}

// Dataset-wide maxima, computed at corpus scan time.
struct CorpusMaxes {
  std::size_t tv_max = 0;
  std::size_t tp_max = 0;
};

inline CorpusMaxes scan_maxes(const std::vector<Trial>& trials) {
  CorpusMaxes m;
  for (const Trial& t : trials) {
    m.tv_max = std::max(m.tv_max, t.video_feats.rows);
    m.tp_max = std::max(m.tp_max, t.physio.rows);
  }
  if (m.tv_max == 0 || m.tp_max == 0) throw ValidationError("corpus scan: no usable trials");
  return m;
}

// ---------------------------------------------------------------------------
// Subject-independent folds
// ---------------------------------------------------------------------------

struct FoldPlan {
  std::size_t k = 5;
  std::vector<std::vector<std::string>> folds;  // disjoint subject-id sets

  void validate_against(const std::vector<std::string>& subjects) const {
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto& fold : folds) {
      for (const auto& s : fold) {
        if (!seen.insert(s).second)
          throw ValidationError(str("fold plan: subject ", s, " appears twice"));
        ++total;
      }
    }
    if (total != subjects.size()) throw ValidationError("fold plan: subject set mismatch");
    for (const auto& s : subjects)
      if (!seen.count(s)) throw ValidationError(str("fold plan: subject ", s, " missing"));
  }
};

// Deterministic for a given seed: subjects are sorted, shuffled with the
// seeded generator, and dealt round-robin, so fold sizes differ by at most 1.
inline FoldPlan make_folds(std::vector<std::string> subjects, std::size_t k, uint64_t seed) {
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (k == 0) throw ValidationError("make_folds: k must be >= 1");
  if (subjects.size() < k)
    throw ValidationError(str("make_folds: ", subjects.size(), " subjects < ", k, " folds"));
  Rng rng(seed);
  shuffle(subjects, rng);
  FoldPlan plan;
  plan.k = k;
  plan.folds.assign(k, {});
  for (std::size_t i = 0; i < subjects.size(); ++i) plan.folds[i % k].push_back(subjects[i]);
  plan.validate_against(subjects);
  return plan;
}

}  // namespace mvp
