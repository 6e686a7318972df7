#pragma once

#include <cstring>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mvp/common.hpp"
#include "mvp/io_util.hpp"
#include "mvp/optimizer.hpp"

namespace mvp {

// Parameter checkpoint: a text manifest followed by a flat binary blob of
// little-endian float64 arrays. Layout (also documented in the README):
//
//   MVP-CHECKPOINT-V1\n
//   meta <n_meta>\n
//   <key> = <value>\n                 (n_meta lines, free-form run metadata)
//   params <n_params>\n
//   <name> <rank> <d0> <d1> ... <byte_offset>\n
//   DATA\n
//   <raw float64 data, offsets relative to the byte after DATA\n>
//
// Parameters are written in store order; offsets are contiguous, so output
// bytes are a pure function of the store contents.

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const std::map<std::string, std::string>& meta) {
  std::ostringstream head;
  head << "MVP-CHECKPOINT-V1\n";
  head << "meta " << meta.size() << '\n';
  for (const auto& [k, v] : meta) head << k << " = " << v << '\n';
  head << "params " << params.count() << '\n';
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& e = params.entry(i);
    head << e.name << ' ' << e.value.rank();
    for (std::size_t d : e.value.shape) head << ' ' << d;
    head << ' ' << offset << '\n';
    offset += e.value.size() * sizeof(double);
  }
  head << "DATA\n";
  std::string out = head.str();
  const std::size_t data_start = out.size();
  out.resize(data_start + offset);
  std::size_t pos = data_start;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& e = params.entry(i);
    std::memcpy(&out[pos], e.value.data.data(), e.value.size() * sizeof(double));
    pos += e.value.size() * sizeof(double);
  }
  write_file_atomic(path, out);
}

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> params;  // in file order

  const Tensor& find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return t;
    throw ValidationError(str("checkpoint has no parameter ", name));
  }
};

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::string blob = read_file(path);
  std::istringstream in(blob);
  std::string line;
  if (!std::getline(in, line) || line != "MVP-CHECKPOINT-V1")
    throw ParseError(str("not a checkpoint file: ", path));
  Checkpoint ck;
  std::size_t n_meta = 0, n_params = 0;
  std::string word;
  in >> word >> n_meta;
  std::getline(in, line);
  if (word != "meta") throw ParseError(str("checkpoint: expected meta count in ", path));
  for (std::size_t i = 0; i < n_meta; ++i) {
    if (!std::getline(in, line)) throw ParseError("checkpoint: truncated meta section");
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError(str("checkpoint: bad meta line: ", line));
    ck.meta[line.substr(0, eq)] = line.substr(eq + 3);
  }
  in >> word >> n_params;
  if (word != "params") throw ParseError("checkpoint: expected params count");
  struct Rec {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset;
  };
  std::vector<Rec> recs(n_params);
  for (auto& r : recs) {
    std::size_t rank = 0;
    in >> r.name >> rank;
    r.shape.resize(rank);
    for (auto& d : r.shape) in >> d;
    in >> r.offset;
    if (!in) throw ParseError("checkpoint: bad parameter record");
  }
  std::getline(in, line);
  if (!std::getline(in, line) || line != "DATA")
    throw ParseError("checkpoint: missing DATA marker");
  const std::size_t data_start = static_cast<std::size_t>(in.tellg());
  for (auto& r : recs) {
    Tensor t(r.shape);
    const std::size_t nbytes = t.size() * sizeof(double);
    if (data_start + r.offset + nbytes > blob.size())
      throw ParseError(str("checkpoint: data for ", r.name, " out of bounds"));
    std::memcpy(t.data.data(), blob.data() + data_start + r.offset, nbytes);
    ck.params.emplace_back(r.name, std::move(t));
  }
  return ck;
}

// Restores values into an already-built store with matching names/shapes.
inline void restore_params(ParamStore& store, const Checkpoint& ck) {
  for (const auto& [name, tensor] : ck.params) {
    if (!store.contains(name))
      throw ValidationError(str("checkpoint parameter ", name, " not present in model"));
    auto& e = store.entry(store.find(name));
    if (!e.value.same_shape(tensor))
      throw DimensionError(str("checkpoint parameter ", name, " shape ", shape_str(tensor.shape),
                               " != model shape ", shape_str(e.value.shape)));
    e.value = tensor;
  }
}

}  // namespace mvp
