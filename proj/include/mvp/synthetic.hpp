#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mvp/data.hpp"
#include "mvp/data_io.hpp"
#include "mvp/rng.hpp"

namespace mvp {

// Generator for a corpus with planted, learnable structure:
//  - arousal lives in the physio matrix: high arousal means a faster pulse
//    train (0.6 s vs 1.0 s period) and more frequent skin-conductance
//    responses (0.2/s vs 0.05/s, instant rise with a 4 s exponential decay);
//  - valence lives in the video features: +1.0 mean shift on the AU06/AU12
//    intensity analogues, on top of smoothed noise.
// Subject-level offsets make subject-independent splitting matter. Labels
// are stratified inside each subject so the corpus stays balanced per axis.
struct SyntheticParams {
  double physio_hz = kPhysioRateHz;
  double video_fps = kVideoFps;
  double min_duration_s = 60.0;
  double max_duration_s = 155.0;
  double pulse_period_high_s = 0.6;
  double pulse_period_low_s = 1.0;
  double scr_rate_high = 0.2;   // events per second
  double scr_rate_low = 0.05;
  double scr_decay_s = 4.0;
  double valence_au_shift = 1.0;
};

namespace detail {

inline void fill_cardiac(std::vector<double>& out, double fs, double period_s, double amp_scale,
                         double offset, Rng& rng) {
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = offset + 0.03 * rng.normal();
  const double sigma_s = 0.025;
  const double sigma_n = sigma_s * fs;
  double t = 0.3 * period_s;
  const double dur = static_cast<double>(n) / fs;
  while (t < dur) {
    const double amp = amp_scale * (1.0 + 0.05 * rng.normal());
    const double center = t * fs;
    const long lo = std::max(0L, static_cast<long>(center - 4.0 * sigma_n));
    const long hi = std::min(static_cast<long>(n) - 1, static_cast<long>(center + 4.0 * sigma_n));
    for (long i = lo; i <= hi; ++i) {
      const double d = (static_cast<double>(i) - center) / sigma_n;
      out[static_cast<std::size_t>(i)] += amp * std::exp(-0.5 * d * d);
    }
    t += period_s * (1.0 + 0.03 * rng.normal());
  }
}

inline void fill_eda(std::vector<double>& out, double fs, double event_rate, double decay_s,
                     double offset, Rng& rng) {
  const std::size_t n = out.size();
  const double decay = std::exp(-1.0 / (fs * decay_s));
  double next_event = -std::log(1.0 - rng.uniform01()) / event_rate;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    if (t >= next_event) {
      s += rng.uniform(0.5, 1.5);
      next_event += -std::log(1.0 - rng.uniform01()) / event_rate;
    }
    s *= decay;
    out[i] = 2.0 + offset + s + 0.02 * rng.normal();
  }
}

}  // namespace detail

inline std::vector<Trial> generate_synthetic(std::size_t n_subjects,
                                             std::size_t trials_per_subject, uint64_t seed,
                                             const SyntheticParams& p = {}) {
  if (n_subjects < 5)
    throw ValidationError(str("generate_synthetic: need >= 5 subjects, got ", n_subjects));
  if (trials_per_subject < 1)
    throw ValidationError("generate_synthetic: need >= 1 trial per subject");

  const Rng root(seed);
  std::vector<Trial> trials;
  trials.reserve(n_subjects * trials_per_subject);
  const std::size_t au6 = au_intensity_col(6);
  const std::size_t au12 = au_intensity_col(12);

  for (std::size_t s = 0; s < n_subjects; ++s) {
    Rng subj_rng = root.fork(1000 + s);
    const double cardiac_offset = 0.1 * subj_rng.normal();
    const double cardiac_amp = subj_rng.uniform(0.85, 1.15);
    const double eda_offset = 0.3 * subj_rng.normal();
    std::vector<double> au_offset(kVideoFeatureWidth, 0.0);
    for (std::size_t j = 18; j < 36; ++j) au_offset[j] = 0.15 * subj_rng.normal();
    for (std::size_t j = 36; j < 42; ++j) au_offset[j] = 0.05 * subj_rng.normal();

    // Balanced label grid per subject, shuffled.
    std::vector<std::pair<int, int>> grid;
    for (std::size_t i = 0; i < trials_per_subject; ++i)
      grid.emplace_back(static_cast<int>((i / 2) % 2), static_cast<int>(i % 2));
    shuffle(grid, subj_rng);

    for (std::size_t tr = 0; tr < trials_per_subject; ++tr) {
      Rng rng = subj_rng.fork(7919 * (tr + 1));
      const auto [valence, arousal] = grid[tr];
      const double duration = rng.uniform(p.min_duration_s, p.max_duration_s);
      const std::size_t tp = static_cast<std::size_t>(duration * p.physio_hz);
      const std::size_t tv = static_cast<std::size_t>(duration * p.video_fps);

      Trial t;
      char id[32];
      std::snprintf(id, sizeof id, "subj%02zu", s);
      t.subject_id = id;
      std::snprintf(id, sizeof id, "s%02zu_t%02zu", s, tr);
      t.trial_id = id;
      t.dataset_tag = DatasetTag::synthetic;
      t.valence_raw = valence ? rng.uniform(4.9, 8.7) : rng.uniform(1.2, 4.2);
      t.arousal_raw = arousal ? rng.uniform(4.9, 8.7) : rng.uniform(1.2, 4.2);

      t.physio = Mat(tp, kPhysioWidth);
      std::vector<double> cardiac(tp), eda(tp);
      detail::fill_cardiac(cardiac, p.physio_hz,
                           arousal ? p.pulse_period_high_s : p.pulse_period_low_s, cardiac_amp,
                           cardiac_offset, rng);
      detail::fill_eda(eda, p.physio_hz, arousal ? p.scr_rate_high : p.scr_rate_low,
                       p.scr_decay_s, eda_offset, rng);
      for (std::size_t i = 0; i < tp; ++i) {
        t.physio.at(i, 0) = cardiac[i];
        t.physio.at(i, 1) = eda[i];
      }

      t.video_feats = Mat(tv, kVideoFeatureWidth);
      const double rho = std::exp(-1.0 / (p.video_fps * 2.0));  // ~2 s smoothing
      const double innov = std::sqrt(1.0 - rho * rho);
      std::vector<double> ar(kVideoFeatureWidth, 0.0);
      for (std::size_t i = 0; i < tv; ++i) {
        for (std::size_t j = 18; j < 42; ++j) ar[j] = rho * ar[j] + innov * rng.normal();
        for (std::size_t j = 18; j < 36; ++j) {
          double v = 1.2 + au_offset[j] + 0.4 * ar[j];
          if (valence && (j == au6 || j == au12)) v += p.valence_au_shift;
          t.video_feats.at(i, j) = std::min(5.0, std::max(0.0, v));
          t.video_feats.at(i, j - 18) = t.video_feats.at(i, j) > 1.5 ? 1.0 : 0.0;
        }
        for (std::size_t j = 36; j < 42; ++j)
          t.video_feats.at(i, j) = au_offset[j] + 0.1 * ar[j];
      }

      t.validate();
      trials.push_back(std::move(t));
    }
  }
  return trials;
}

// Writes a generated corpus to disk: one AU CSV and one physio binary per
// trial, plus manifest.jsonl. Output bytes depend only on the trials.
inline std::string write_synthetic_corpus(const std::string& dir,
                                          const std::vector<Trial>& trials) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::vector<ManifestRecord> records;
  for (const Trial& t : trials) {
    const std::string au_rel = t.trial_id + "_au.csv";
    const std::string ph_rel = t.trial_id + "_physio.bin";
    write_au_csv((fs::path(dir) / au_rel).string(), t.video_feats);
    write_trial_physio((fs::path(dir) / ph_rel).string(), t.physio, kPhysioRateHz);
    ManifestRecord r;
    r.subject_id = t.subject_id;
    r.trial_id = t.trial_id;
    r.au_csv_path = au_rel;
    r.physio_path = ph_rel;
    r.valence_raw = t.valence_raw;
    r.arousal_raw = t.arousal_raw;
    r.dataset_tag = t.dataset_tag;
    records.push_back(std::move(r));
  }
  const std::string manifest = (fs::path(dir) / "manifest.jsonl").string();
  write_manifest(manifest, records);
  return manifest;
}

}  // namespace mvp
