#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mvp/autodiff.hpp"
#include "mvp/common.hpp"
#include "mvp/tensor.hpp"

namespace mvp {

// Named model parameters with per-parameter Adam moments. Entries keep
// insertion order; iteration order is therefore deterministic.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m;  // first moment
    Tensor v;  // second moment
  };

  std::size_t add(std::string name, Tensor value) {
    if (index_.count(name)) throw ContractError(str("duplicate parameter name: ", name));
    Entry e;
    e.name = std::move(name);
    e.m = Tensor(value.shape);
    e.v = Tensor(value.shape);
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    index_[entries_.back().name] = entries_.size() - 1;
    return entries_.size() - 1;
  }

  std::size_t count() const { return entries_.size(); }
  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }

  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError(str("unknown parameter: ", name));
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  // Pushes every parameter onto a tape as a requires_grad leaf; the returned
  // vector is aligned with entry indices.
  std::vector<Var> push_all(Tape& tape) const {
    std::vector<Var> vars;
    vars.reserve(entries_.size());
    for (const auto& e : entries_) vars.push_back(tape.leaf(e.value, true, e.name));
    return vars;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update over every parameter. `vars` must come from push_all on
// the tape that ran backward. `step` counts from 1 for bias correction.
// A non-finite gradient aborts, naming the offending parameter.
inline void adam_step(ParamStore& params, Tape& tape, const std::vector<Var>& vars,
                      const AdamConfig& cfg, std::size_t step) {
  if (step == 0) throw ContractError("adam_step: step counts from 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& e = params.entry(i);
    const Tensor& g = tape.grad(vars[i]);
    if (!g.same_shape(e.value))
      throw DimensionError(str("adam_step: grad shape ", shape_str(g.shape),
                               " != param shape ", shape_str(e.value.shape), " for ", e.name));
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double gk = g.data[k];
      if (!std::isfinite(gk))
        throw NumericError(str("adam_step: non-finite gradient in parameter ", e.name));
      e.m.data[k] = cfg.beta1 * e.m.data[k] + (1.0 - cfg.beta1) * gk;
      e.v.data[k] = cfg.beta2 * e.v.data[k] + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = e.m.data[k] / bc1;
      const double vhat = e.v.data[k] / bc2;
      e.value.data[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace mvp
