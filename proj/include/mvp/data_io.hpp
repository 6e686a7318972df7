#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mvp/common.hpp"
#include "mvp/data.hpp"
#include "mvp/io_util.hpp"

namespace mvp {

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = comma == std::string_view::npos
                                ? line.substr(start)
                                : line.substr(start, comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() &&
           (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r'))
      cell.remove_suffix(1);
    out.emplace_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_cell(const std::string& cell, std::size_t row, const std::string& col) {
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
    throw ParseError(str("non-numeric cell '", cell, "' at row ", row, " column ", col));
  return v;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

}  // namespace detail

struct AuLoadStats {
  std::size_t presence_rounded = 0;   // presence cells that were not exactly 0/1
  std::size_t intensity_clamped = 0;  // intensity cells outside [0,5]
};

// Loads an OpenFace-style AU/gaze CSV into the canonical 42-column layout.
// Columns are matched by name (extra columns are ignored); a header-only
// file yields a 0 x 42 matrix. Presence is rounded to {0,1}, intensity
// clamped to [0,5].
inline Mat load_au_csv(const std::string& path, AuLoadStats* stats = nullptr) {
  const std::string text = read_file(path);
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw SchemaError(str(path, ": missing header"));
  const auto header = detail::split_csv_line(lines[0]);

  const auto& wanted = au_column_names();
  std::vector<std::size_t> pos(wanted.size());
  std::vector<std::string> missing;
  for (std::size_t j = 0; j < wanted.size(); ++j) {
    bool found = false;
    for (std::size_t h = 0; h < header.size(); ++h) {
      if (header[h] == wanted[j]) {
        pos[j] = h;
        found = true;
        break;
      }
    }
    if (!found) missing.push_back(wanted[j]);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw SchemaError(str(path, ": missing columns: ", list));
  }

  std::vector<double> rowsdata;
  std::size_t nrows = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty() || lines[li] == "\r") continue;
    const auto cells = detail::split_csv_line(lines[li]);
    ++nrows;
    for (std::size_t j = 0; j < wanted.size(); ++j) {
      if (pos[j] >= cells.size())
        throw ParseError(str(path, ": row ", nrows, " has ", cells.size(), " cells, column ",
                             wanted[j], " out of range"));
      double v = detail::parse_cell(cells[pos[j]], nrows, wanted[j]);
      if (j < 18) {  // presence
        if (v != 0.0 && v != 1.0) {
          if (stats) ++stats->presence_rounded;
          v = v >= 0.5 ? 1.0 : 0.0;
        }
      } else if (j < 36) {  // intensity
        if (v < 0.0 || v > 5.0) {
          if (stats) ++stats->intensity_clamped;
          v = std::min(5.0, std::max(0.0, v));
        }
      }
      rowsdata.push_back(v);
    }
  }
  Mat m(nrows, kVideoFeatureWidth);
  m.data = std::move(rowsdata);
  return m;
}

inline void write_au_csv(const std::string& path, const Mat& m) {
  if (m.cols != kVideoFeatureWidth) throw DimensionError("write_au_csv: width must be 42");
  std::string out;
  const auto& names = au_column_names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    out += names[j];
    out += (j + 1 == names.size()) ? '\n' : ',';
  }
  char buf[40];
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (j < 18)
        std::snprintf(buf, sizeof buf, "%d", m.at(i, j) > 0.5 ? 1 : 0);
      else
        std::snprintf(buf, sizeof buf, "%.10g", m.at(i, j));
      out += buf;
      out += (j + 1 == m.cols) ? '\n' : ',';
    }
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Trial physio files: two-column little-endian float64 binary plus a text
// sidecar "<path>.meta" declaring rate, channel names and sample count.
// ---------------------------------------------------------------------------

inline void write_trial_physio(const std::string& path, const Mat& physio,
                               double sample_rate_hz) {
  if (physio.cols != kPhysioWidth) throw DimensionError("physio matrix must have 2 columns");
  std::string blob(physio.data.size() * sizeof(double), '\0');
  std::memcpy(blob.data(), physio.data.data(), blob.size());
  write_file_atomic(path, blob);
  write_file_atomic(path + ".meta", str("sample_rate_hz = ", fmt_double(sample_rate_hz), "\n",
                                        "channels = cardiac,eda\n",
                                        "samples = ", physio.rows, "\n"));
}

inline Mat load_trial_physio(const std::string& path, double* sample_rate_hz = nullptr) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
    const std::string text = read_file(path);
    const auto lines = detail::split_lines(text);
    if (lines.empty()) throw SchemaError(str(path, ": missing header"));
    const auto header = detail::split_csv_line(lines[0]);
    if (header.size() != 3 || header[0] != "t")
      throw SchemaError(str(path, ": expected header t,cardiac,eda"));
    std::vector<double> t, a, b;
    for (std::size_t li = 1; li < lines.size(); ++li) {
      if (lines[li].empty() || lines[li] == "\r") continue;
      const auto cells = detail::split_csv_line(lines[li]);
      if (cells.size() != 3) throw ParseError(str(path, ": row ", li, " needs 3 cells"));
      t.push_back(detail::parse_cell(cells[0], li, "t"));
      a.push_back(detail::parse_cell(cells[1], li, header[1]));
      b.push_back(detail::parse_cell(cells[2], li, header[2]));
    }
    if (t.size() < 2) throw ValidationError(str(path, ": needs at least 2 samples"));
    if (sample_rate_hz)
      *sample_rate_hz = static_cast<double>(t.size() - 1) / (t.back() - t.front());
    Mat m(t.size(), kPhysioWidth);
    for (std::size_t i = 0; i < t.size(); ++i) {
      m.at(i, 0) = a[i];
      m.at(i, 1) = b[i];
    }
    return m;
  }
  const std::string meta = read_file(path + ".meta");
  double rate = 0.0;
  std::size_t samples = 0;
  for (const auto line : detail::split_lines(meta)) {
    const std::string s(line);
    if (s.rfind("sample_rate_hz = ", 0) == 0) rate = std::stod(s.substr(17));
    if (s.rfind("samples = ", 0) == 0) samples = std::stoul(s.substr(10));
  }
  if (rate <= 0.0 || samples == 0) throw SchemaError(str(path, ".meta: missing rate or samples"));
  const std::string blob = read_file(path);
  if (blob.size() != samples * kPhysioWidth * sizeof(double))
    throw ParseError(str(path, ": expected ", samples * kPhysioWidth * sizeof(double),
                         " bytes, got ", blob.size()));
  Mat m(samples, kPhysioWidth);
  std::memcpy(m.data.data(), blob.data(), blob.size());
  if (sample_rate_hz) *sample_rate_hz = rate;
  return m;
}

// ---------------------------------------------------------------------------
// Raw single-channel signal files for `mvp preprocess`: CSV with header
// "t,<channel>", or "<name>.bin" + "<name>.bin.meta" sidecar.
// ---------------------------------------------------------------------------

inline RawSignal read_raw_signal(const std::string& path) {
  RawSignal sig;
  if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
    const std::string text = read_file(path);
    const auto lines = detail::split_lines(text);
    if (lines.empty()) throw SchemaError(str(path, ": missing header"));
    const auto header = detail::split_csv_line(lines[0]);
    if (header.size() != 2 || header[0] != "t")
      throw SchemaError(str(path, ": expected header t,<channel>"));
    sig.channel = channel_from_name(header[1]);
    std::vector<double> t;
    for (std::size_t li = 1; li < lines.size(); ++li) {
      if (lines[li].empty() || lines[li] == "\r") continue;
      const auto cells = detail::split_csv_line(lines[li]);
      if (cells.size() != 2) throw ParseError(str(path, ": row ", li, " needs 2 cells"));
      t.push_back(detail::parse_cell(cells[0], li, "t"));
      sig.samples.push_back(detail::parse_cell(cells[1], li, header[1]));
    }
    if (t.size() < 2) throw ValidationError(str(path, ": needs at least 2 samples"));
    sig.sample_rate_hz = static_cast<double>(t.size() - 1) / (t.back() - t.front());
    return sig;
  }
  const std::string meta = read_file(path + ".meta");
  double rate = 0.0;
  std::string channel;
  std::size_t samples = 0;
  for (const auto line : detail::split_lines(meta)) {
    const std::string s(line);
    if (s.rfind("sample_rate_hz = ", 0) == 0) rate = std::stod(s.substr(17));
    if (s.rfind("channel = ", 0) == 0) channel = s.substr(10);
    if (s.rfind("samples = ", 0) == 0) samples = std::stoul(s.substr(10));
  }
  if (rate <= 0.0 || channel.empty() || samples == 0)
    throw SchemaError(str(path, ".meta: missing rate, channel or samples"));
  const std::string blob = read_file(path);
  if (blob.size() != samples * sizeof(double))
    throw ParseError(str(path, ": expected ", samples * sizeof(double), " bytes, got ",
                         blob.size()));
  sig.samples.resize(samples);
  std::memcpy(sig.samples.data(), blob.data(), blob.size());
  sig.sample_rate_hz = rate;
  sig.channel = channel_from_name(channel);
  return sig;
}

inline void write_raw_signal_csv(const std::string& path, const RawSignal& sig) {
  std::string out = str("t,", channel_name(sig.channel), "\n");
  char buf[64];
  for (std::size_t i = 0; i < sig.samples.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g\n",
                  static_cast<double>(i) / sig.sample_rate_hz, sig.samples[i]);
    out += buf;
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Corpus manifest: JSON lines, one record per trial. Paths are resolved
// relative to the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestRecord {
  std::string subject_id;
  std::string trial_id;
  std::string au_csv_path;
  std::string physio_path;
  double valence_raw = 5.0;
  double arousal_raw = 5.0;
  DatasetTag dataset_tag = DatasetTag::synthetic;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["subject_id"] = r.subject_id;
    j["trial_id"] = r.trial_id;
    j["au_csv_path"] = r.au_csv_path;
    j["physio_path"] = r.physio_path;
    j["valence_raw"] = r.valence_raw;
    j["arousal_raw"] = r.arousal_raw;
    j["dataset_tag"] = dataset_name(r.dataset_tag);
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<ManifestRecord> records;
  std::size_t lineno = 0;
  for (const auto line : detail::split_lines(text)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(str(path, ":", lineno, ": bad JSON: ", e.what()));
    }
    for (const char* key : {"subject_id", "trial_id", "au_csv_path", "physio_path",
                            "valence_raw", "arousal_raw", "dataset_tag"})
      if (!j.contains(key)) throw SchemaError(str(path, ":", lineno, ": missing key ", key));
    ManifestRecord r;
    r.subject_id = j["subject_id"].get<std::string>();
    r.trial_id = j["trial_id"].get<std::string>();
    r.au_csv_path = j["au_csv_path"].get<std::string>();
    r.physio_path = j["physio_path"].get<std::string>();
    r.valence_raw = j["valence_raw"].get<double>();
    r.arousal_raw = j["arousal_raw"].get<double>();
    r.dataset_tag = dataset_from_name(j["dataset_tag"].get<std::string>());
    records.push_back(std::move(r));
  }
  return records;
}

inline Trial load_trial(const ManifestRecord& rec, const std::string& base_dir,
                        AuLoadStats* stats = nullptr) {
  namespace fs = std::filesystem;
  auto resolve = [&base_dir](const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() ? p : (fs::path(base_dir) / fp).string();
  };
  Trial t;
  t.subject_id = rec.subject_id;
  t.trial_id = rec.trial_id;
  t.video_feats = load_au_csv(resolve(rec.au_csv_path), stats);
  t.physio = load_trial_physio(resolve(rec.physio_path));
  t.valence_raw = rec.valence_raw;
  t.arousal_raw = rec.arousal_raw;
  t.dataset_tag = rec.dataset_tag;
  t.validate();
  return t;
}

inline std::vector<Trial> load_corpus(const std::string& manifest_path,
                                      AuLoadStats* stats = nullptr) {
  namespace fs = std::filesystem;
  const std::string base = fs::path(manifest_path).parent_path().string();
  std::vector<Trial> trials;
  for (const auto& rec : read_manifest(manifest_path))
    trials.push_back(load_trial(rec, base.empty() ? "." : base, stats));
  if (trials.empty()) throw ValidationError(str(manifest_path, ": empty corpus"));
  return trials;
}

}  // namespace mvp
