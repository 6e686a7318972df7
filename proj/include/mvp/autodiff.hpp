#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mvp/common.hpp"
#include "mvp/rng.hpp"
#include "mvp/tensor.hpp"

namespace mvp {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t idx = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const;
};

// Record of primitive operations in execution order. Reverse-mode gradients
// are accumulated by walking the record backwards from a scalar root.
// Single-threaded by contract; run independent tapes for parallelism.
class Tape {
 public:
  // When inference_only, no backward closures are recorded and backward()
  // refuses to run. Evaluation paths use this as their no-training guard.
  explicit Tape(bool inference_only = false) : inference_only_(inference_only) {}

  bool inference_only() const { return inference_only_; }

  Var leaf(Tensor value, bool requires_grad, std::string name = "") {
    nodes_.push_back(Node{std::move(value), requires_grad, true, {}, nullptr, std::move(name)});
    grads_.emplace_back();
    return Var{this, nodes_.size() - 1};
  }

  Var record(Tensor value, std::vector<std::size_t> parents,
             std::function<void(Tape&, std::size_t)> backward) {
    bool rg = false;
    for (std::size_t p : parents) rg = rg || nodes_[p].requires_grad;
    nodes_.push_back(Node{std::move(value), rg, false, std::move(parents),
                          (rg && !inference_only_) ? std::move(backward) : nullptr, ""});
    grads_.emplace_back();
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }

  // Gradient of the last backward() root w.r.t. node v.
  const Tensor& grad(Var v) const {
    if (!backward_done_) throw ContractError("grad() queried before backward()");
    return grads_[v.idx];
  }

  bool has_grad(Var v) const { return !grads_[v.idx].data.empty(); }

  void accumulate_grad(std::size_t i, const Tensor& g) {
    Tensor& slot = grads_[i];
    if (slot.data.empty()) {
      slot = g;
    } else {
      for (std::size_t k = 0; k < slot.data.size(); ++k) slot.data[k] += g.data[k];
    }
  }

  // Reverse pass from a scalar root. A second call without reset_gradients()
  // is a contract error: gradients would silently double-accumulate.
  void backward(Var root) {
    if (inference_only_) throw ContractError("backward() called on an inference-only tape");
    if (root.tape != this) throw ContractError("backward() root belongs to another tape");
    if (backward_done_) throw ContractError("backward() called twice without reset_gradients()");
    const Tensor& rv = nodes_[root.idx].value;
    if (rv.size() != 1)
      throw ContractError(str("backward() root must be scalar, got shape ", shape_str(rv.shape)));
    backward_done_ = true;  // closures below read gradients through grad()
    grads_[root.idx] = Tensor::scalar(1.0);
    for (std::size_t i = root.idx + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (grads_[i].data.empty() || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, i);
    }
    // Disconnected requires_grad leaves still get a (zero) gradient so that
    // every leaf has a gradient of its own shape after the pass.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf && nodes_[i].requires_grad && grads_[i].data.empty())
        grads_[i] = Tensor(nodes_[i].value.shape);
    }
  }

  void reset_gradients() {
    for (auto& g : grads_) g = Tensor();
    backward_done_ = false;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::size_t> parents;
    std::function<void(Tape&, std::size_t)> backward;
    std::string name;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool inference_only_ = false;
  bool backward_done_ = false;

  friend struct Var;
};

inline const Tensor& Var::value() const { return tape->value(idx); }
inline const std::vector<std::size_t>& Var::shape() const { return tape->value(idx).shape; }

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError(str("add: shape mismatch ", shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
  Tensor out(a.value().shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = a.value().data[i] + b.value().data[i];
  const std::size_t pa = a.idx, pb = b.idx;
  return a.tape->record(std::move(out), {pa, pb}, [pa, pb](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    if (t.requires_grad(pa)) t.accumulate_grad(pa, g);
    if (t.requires_grad(pb)) t.accumulate_grad(pb, g);
  });
}

inline Var mul(Var a, Var b) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError(str("mul: shape mismatch ", shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
  Tensor out(a.value().shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = a.value().data[i] * b.value().data[i];
  const std::size_t pa = a.idx, pb = b.idx;
  return a.tape->record(std::move(out), {pa, pb}, [pa, pb](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    if (t.requires_grad(pa)) {
      Tensor ga(t.value(pa).shape);
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] = g.data[i] * t.value(pb).data[i];
      t.accumulate_grad(pa, ga);
    }
    if (t.requires_grad(pb)) {
      Tensor gb(t.value(pb).shape);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] = g.data[i] * t.value(pa).data[i];
      t.accumulate_grad(pb, gb);
    }
  });
}

inline Var scale(Var a, double c) {
  Tensor out(a.value().shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = c * a.value().data[i];
  const std::size_t pa = a.idx;
  return a.tape->record(std::move(out), {pa}, [pa, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    Tensor ga(t.value(pa).shape);
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] = c * g.data[i];
    t.accumulate_grad(pa, ga);
  });
}

inline Var relu(Var a) {
  Tensor out(a.value().shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = a.value().data[i];
    out.data[i] = v > 0.0 ? v : 0.0;
  }
  const std::size_t pa = a.idx;
  return a.tape->record(std::move(out), {pa}, [pa](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    Tensor ga(t.value(pa).shape);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga.data[i] = t.value(pa).data[i] > 0.0 ? g.data[i] : 0.0;
    t.accumulate_grad(pa, ga);
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const std::size_t pa = a.idx;
  return a.tape->record(Tensor::scalar(s), {pa}, [pa](Tape& t, std::size_t self) {
    const double g = t.grad(Var{&t, self}).data[0];
    Tensor ga = Tensor::full(t.value(pa).shape, g);
    t.accumulate_grad(pa, ga);
  });
}

// Mean over rows: [T,F] -> [F].
inline Var mean_rows(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw DimensionError(str("mean_rows expects rank 2, got ", shape_str(x.shape)));
  const std::size_t rows = x.shape[0], cols = x.shape[1];
  Tensor out({cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.data[j] += x.at(i, j);
  for (std::size_t j = 0; j < cols; ++j) out.data[j] /= static_cast<double>(rows);
  const std::size_t pa = a.idx;
  return a.tape->record(std::move(out), {pa}, [pa, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    Tensor ga({rows, cols});
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        ga.at(i, j) = g.data[j] / static_cast<double>(rows);
    t.accumulate_grad(pa, ga);
  });
}

// Stacks N vectors of identical length d into [N,d].
inline Var concat_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ValidationError("concat_rows: empty input");
  Tape* tape = rows[0].tape;
  const std::size_t d = rows[0].value().size();
  Tensor out({rows.size(), d});
  std::vector<std::size_t> parents;
  parents.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& r = rows[i].value();
    if (r.size() != d)
      throw DimensionError(str("concat_rows: row ", i, " has ", r.size(), " elements, want ", d));
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = r.data[j];
    parents.push_back(rows[i].idx);
  }
  std::vector<std::size_t> ps = parents;
  return tape->record(std::move(out), std::move(parents), [ps, d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!t.requires_grad(ps[i])) continue;
      Tensor gi(t.value(ps[i]).shape);
      for (std::size_t j = 0; j < d; ++j) gi.data[j] = g.data[i * d + j];
      t.accumulate_grad(ps[i], gi);
    }
  });
}

// Inverted-dropout on the whole tensor; identity when not training or p == 0.
inline Var dropout(Var a, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError(str("dropout probability must be < 1, got ", p));
  const double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(a.value().size());
  Tensor out(a.value().shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = rng.uniform01() < p ? 0.0 : 1.0 / keep;
    (*mask)[i] = m;
    out.data[i] = a.value().data[i] * m;
  }
  const std::size_t pa = a.idx;
  return a.tape->record(std::move(out), {pa}, [pa, mask](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    Tensor ga(t.value(pa).shape);
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] = g.data[i] * (*mask)[i];
    t.accumulate_grad(pa, ga);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw DimensionError(str("matmul: incompatible shapes ", shape_str(av.shape), " vs ",
                             shape_str(bv.shape)));
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor out({m, n});
  matmul_acc_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
  const std::size_t pa = a.idx, pb = b.idx;
  return a.tape->record(std::move(out), {pa, pb}, [pa, pb, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    if (t.requires_grad(pa)) {  // dA = G * B^T
      Tensor ga({m, k});
      matmul_acc_nt(g.data.data(), t.value(pb).data.data(), ga.data.data(), m, n, k);
      t.accumulate_grad(pa, ga);
    }
    if (t.requires_grad(pb)) {  // dB = A^T * G
      Tensor gb({k, n});
      matmul_acc_tn(t.value(pa).data.data(), g.data.data(), gb.data.data(), m, k, n);
      t.accumulate_grad(pb, gb);
    }
  });
}

// Affine map on the last dimension. x may be [d_in] or [rows, d_in].
inline Var dense(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2)
    throw DimensionError(str("dense: weight must be rank 2, got ", shape_str(wv.shape)));
  const std::size_t din = wv.shape[0], dout = wv.shape[1];
  if (bv.size() != dout)
    throw DimensionError(str("dense: bias ", shape_str(bv.shape), " does not match output width ",
                             dout));
  const bool vec_in = xv.rank() == 1;
  const std::size_t rows = vec_in ? 1 : xv.shape[0];
  const std::size_t xin = vec_in ? xv.shape[0] : xv.shape[1];
  if (xv.rank() > 2 || xin != din)
    throw DimensionError(str("dense: input ", shape_str(xv.shape), " incompatible with weight ",
                             shape_str(wv.shape)));
  Tensor out(vec_in ? std::vector<std::size_t>{dout} : std::vector<std::size_t>{rows, dout});
  matmul_acc_nn(xv.data.data(), wv.data.data(), out.data.data(), rows, din, dout);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < dout; ++j) out.data[i * dout + j] += bv.data[j];
  const std::size_t px = x.idx, pw = w.idx, pb = b.idx;
  return x.tape->record(std::move(out), {px, pw, pb},
                        [px, pw, pb, rows, din, dout](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    if (t.requires_grad(px)) {
      Tensor gx(t.value(px).shape);
      matmul_acc_nt(g.data.data(), t.value(pw).data.data(), gx.data.data(), rows, dout, din);
      t.accumulate_grad(px, gx);
    }
    if (t.requires_grad(pw)) {
      Tensor gw({din, dout});
      matmul_acc_tn(t.value(px).data.data(), g.data.data(), gw.data.data(), rows, din, dout);
      t.accumulate_grad(pw, gw);
    }
    if (t.requires_grad(pb)) {
      Tensor gb(t.value(pb).shape);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < dout; ++j) gb.data[j] += g.data[i * dout + j];
      t.accumulate_grad(pb, gb);
    }
  });
}

// 1D convolution over time, stride 1, symmetric zero padding so the output
// keeps the input's time length. x: [T, C_in], kernels: [C_out, C_in, k],
// bias: [C_out] -> [T, C_out]. Implemented as one [C_in -> C_out] matmul per
// kernel tap with shifted row ranges.
inline Var conv1d(Var x, Var kernels, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2) throw DimensionError(str("conv1d: input must be [T,C], got ", shape_str(xv.shape)));
  if (kv.rank() != 3)
    throw DimensionError(str("conv1d: kernels must be [C_out,C_in,k], got ", shape_str(kv.shape)));
  const std::size_t T = xv.shape[0], cin = xv.shape[1];
  const std::size_t cout = kv.shape[0], klen = kv.shape[2];
  if (kv.shape[1] != cin)
    throw DimensionError(str("conv1d: kernel C_in ", kv.shape[1], " != input C_in ", cin));
  if (klen % 2 == 0) throw ConfigError(str("conv1d: kernel length must be odd, got ", klen));
  if (bv.size() != cout)
    throw DimensionError(str("conv1d: bias ", shape_str(bv.shape), " != C_out ", cout));
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((klen - 1) / 2);

  // Per-tap weight matrices W_d[cin, cout] repacked from [C_out, C_in, k].
  auto taps = std::make_shared<std::vector<std::vector<double>>>(klen);
  for (std::size_t d = 0; d < klen; ++d) {
    (*taps)[d].assign(cin * cout, 0.0);
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        (*taps)[d][ci * cout + co] = kv.data[(co * cin + ci) * klen + d];
  }

  Tensor out({T, cout});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < cout; ++j) out.at(i, j) = bv.data[j];
  const std::ptrdiff_t sT = static_cast<std::ptrdiff_t>(T);
  for (std::size_t d = 0; d < klen; ++d) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(d) - pad;
    const std::ptrdiff_t t0 = off < 0 ? -off : 0;
    const std::ptrdiff_t t1 = off > 0 ? sT - off : sT;  // exclusive
    if (t1 <= t0) continue;
    matmul_acc_nn(xv.data.data() + (t0 + off) * static_cast<std::ptrdiff_t>(cin),
                  (*taps)[d].data(), out.data.data() + t0 * static_cast<std::ptrdiff_t>(cout),
                  static_cast<std::size_t>(t1 - t0), cin, cout);
  }

  const std::size_t px = x.idx, pk = kernels.idx, pb = bias.idx;
  return x.tape->record(std::move(out), {px, pk, pb},
                        [px, pk, pb, taps, T, cin, cout, klen, pad](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    const Tensor& xin = t.value(px);
    const std::ptrdiff_t sT = static_cast<std::ptrdiff_t>(T);
    if (t.requires_grad(px)) {
      Tensor gx({T, cin});
      for (std::size_t d = 0; d < klen; ++d) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(d) - pad;
        const std::ptrdiff_t t0 = off < 0 ? -off : 0;
        const std::ptrdiff_t t1 = off > 0 ? sT - off : sT;
        if (t1 <= t0) continue;
        matmul_acc_nt(g.data.data() + t0 * static_cast<std::ptrdiff_t>(cout), (*taps)[d].data(),
                      gx.data.data() + (t0 + off) * static_cast<std::ptrdiff_t>(cin),
                      static_cast<std::size_t>(t1 - t0), cout, cin);
      }
      t.accumulate_grad(px, gx);
    }
    if (t.requires_grad(pk)) {
      Tensor gk({cout, cin, klen});
      std::vector<double> gtap(cin * cout);
      for (std::size_t d = 0; d < klen; ++d) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(d) - pad;
        const std::ptrdiff_t t0 = off < 0 ? -off : 0;
        const std::ptrdiff_t t1 = off > 0 ? sT - off : sT;
        if (t1 <= t0) continue;
        std::fill(gtap.begin(), gtap.end(), 0.0);
        matmul_acc_tn(xin.data.data() + (t0 + off) * static_cast<std::ptrdiff_t>(cin),
                      g.data.data() + t0 * static_cast<std::ptrdiff_t>(cout), gtap.data(),
                      static_cast<std::size_t>(t1 - t0), cin, cout);
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ci = 0; ci < cin; ++ci)
            gk.data[(co * cin + ci) * klen + d] = gtap[ci * cout + co];
      }
      t.accumulate_grad(pk, gk);
    }
    if (t.requires_grad(pb)) {
      Tensor gb({cout});
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < cout; ++j) gb.data[j] += g.at(i, j);
      t.accumulate_grad(pb, gb);
    }
  });
}

// Time-reduction dense map, shared across feature channels:
// x: [T, F], w: [T, tokens], b: [tokens] -> [tokens, F],
// out[s, f] = sum_t w[t, s] * x[t, f] + b[s].
inline Var time_reduce(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[0] != wv.shape[0])
    throw DimensionError(str("time_reduce: incompatible shapes ", shape_str(xv.shape), " vs ",
                             shape_str(wv.shape)));
  const std::size_t T = xv.shape[0], F = xv.shape[1], tok = wv.shape[1];
  if (bv.size() != tok)
    throw DimensionError(str("time_reduce: bias ", shape_str(bv.shape), " != tokens ", tok));
  Tensor out({tok, F});
  matmul_acc_tn(wv.data.data(), xv.data.data(), out.data.data(), T, tok, F);
  for (std::size_t s = 0; s < tok; ++s)
    for (std::size_t f = 0; f < F; ++f) out.at(s, f) += bv.data[s];
  const std::size_t px = x.idx, pw = w.idx, pb = b.idx;
  return x.tape->record(std::move(out), {px, pw, pb},
                        [px, pw, pb, T, F, tok](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    if (t.requires_grad(px)) {  // dX = W * G
      Tensor gx({T, F});
      matmul_acc_nn(t.value(pw).data.data(), g.data.data(), gx.data.data(), T, tok, F);
      t.accumulate_grad(px, gx);
    }
    if (t.requires_grad(pw)) {  // dW[t,s] = sum_f x[t,f] g[s,f]
      Tensor gw({T, tok});
      matmul_acc_nt(t.value(px).data.data(), g.data.data(), gw.data.data(), T, F, tok);
      t.accumulate_grad(pw, gw);
    }
    if (t.requires_grad(pb)) {
      Tensor gb({tok});
      for (std::size_t s = 0; s < tok; ++s)
        for (std::size_t f = 0; f < F; ++f) gb.data[s] += g.at(s, f);
      t.accumulate_grad(pb, gb);
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax / normalization / losses
// ---------------------------------------------------------------------------

namespace detail {

// Row-wise exp-normalize with max subtraction. rows x n, in-place capable.
inline void softmax_rows(const double* in, double* out, std::size_t rows, std::size_t n) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = in + i * n;
    double* o = out + i * n;
    double mx = r[0];
    for (std::size_t j = 1; j < n; ++j)
      if (r[j] > mx) mx = r[j];
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(r[j] - mx);
      denom += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= denom;
  }
}

inline void softmax_backward_rows(const double* p, const double* g, double* out,
                                  std::size_t rows, std::size_t n) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* pr = p + i * n;
    const double* gr = g + i * n;
    double* o = out + i * n;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += pr[j] * gr[j];
    for (std::size_t j = 0; j < n; ++j) o[j] = pr[j] * (gr[j] - dot);
  }
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

// Softmax over the last dimension; leading dimensions are treated as rows.
inline Var softmax_lastdim(Var x) {
  const Tensor& xv = x.value();
  if (!xv.all_finite()) throw NumericError("softmax_lastdim: non-finite input");
  const std::size_t n = xv.shape.back();
  const std::size_t rows = xv.size() / n;
  Tensor out(xv.shape);
  detail::softmax_rows(xv.data.data(), out.data.data(), rows, n);
  const std::size_t px = x.idx;
  return x.tape->record(std::move(out), {px}, [px, rows, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    const Tensor& p = t.value(self);
    Tensor gx(t.value(px).shape);
    detail::softmax_backward_rows(p.data.data(), g.data.data(), gx.data.data(), rows, n);
    t.accumulate_grad(px, gx);
  });
}

// Per-row layer normalization over the feature dimension with learnable
// scale gamma and shift beta. x: [T, F], gamma/beta: [F].
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError(str("layer_norm expects rank 2, got ", shape_str(xv.shape)));
  const std::size_t T = xv.shape[0], F = xv.shape[1];
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  if (gv.size() != F || bv.size() != F)
    throw DimensionError("layer_norm: gamma/beta width mismatch");
  auto xhat = std::make_shared<Tensor>(std::vector<std::size_t>{T, F});
  auto inv_std = std::make_shared<std::vector<double>>(T);
  Tensor out({T, F});
  for (std::size_t i = 0; i < T; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < F; ++j) mean += xv.at(i, j);
    mean /= static_cast<double>(F);
    double var = 0.0;
    for (std::size_t j = 0; j < F; ++j) {
      const double d = xv.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(F);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < F; ++j) {
      const double xh = (xv.at(i, j) - mean) * is;
      xhat->at(i, j) = xh;
      out.at(i, j) = gv.data[j] * xh + bv.data[j];
    }
  }
  const std::size_t px = x.idx, pg = gamma.idx, pb = beta.idx;
  return x.tape->record(std::move(out), {px, pg, pb},
                        [px, pg, pb, xhat, inv_std, T, F](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    const Tensor& gv = t.value(pg);
    if (t.requires_grad(px)) {
      Tensor gx({T, F});
      for (std::size_t i = 0; i < T; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < F; ++j) {
          const double gj = gv.data[j] * g.at(i, j);
          m1 += gj;
          m2 += gj * xhat->at(i, j);
        }
        m1 /= static_cast<double>(F);
        m2 /= static_cast<double>(F);
        for (std::size_t j = 0; j < F; ++j) {
          const double gj = gv.data[j] * g.at(i, j);
          gx.at(i, j) = (gj - m1 - xhat->at(i, j) * m2) * (*inv_std)[i];
        }
      }
      t.accumulate_grad(px, gx);
    }
    if (t.requires_grad(pg)) {
      Tensor gg({F});
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < F; ++j) gg.data[j] += g.at(i, j) * xhat->at(i, j);
      t.accumulate_grad(pg, gg);
    }
    if (t.requires_grad(pb)) {
      Tensor gb({F});
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < F; ++j) gb.data[j] += g.at(i, j);
      t.accumulate_grad(pb, gb);
    }
  });
}

// Binary cross entropy on logits, fused sigmoid+log form:
// loss = mean over all elements of max(z,0) - z*y + log(1 + exp(-|z|)).
// Targets must be exactly 0 or 1 and are constants (not differentiated).
inline Var bce_with_logits(Var logits, const Tensor& targets) {
  const Tensor& zv = logits.value();
  if (!zv.same_shape(targets))
    throw DimensionError(str("bce: logits ", shape_str(zv.shape), " vs targets ",
                             shape_str(targets.shape)));
  for (double y : targets.data)
    if (y != 0.0 && y != 1.0)
      throw ValidationError(str("bce: target must be binary, got ", y));
  const std::size_t n = zv.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = zv.data[i];
    const double y = targets.data[i];
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= static_cast<double>(n);
  auto tgt = std::make_shared<Tensor>(targets);
  const std::size_t pz = logits.idx;
  return logits.tape->record(Tensor::scalar(loss), {pz}, [pz, tgt, n](Tape& t, std::size_t self) {
    const double g = t.grad(Var{&t, self}).data[0];
    const Tensor& z = t.value(pz);
    Tensor gz(z.shape);
    for (std::size_t i = 0; i < n; ++i)
      gz.data[i] = g * (detail::sigmoid(z.data[i]) - tgt->data[i]) / static_cast<double>(n);
    t.accumulate_grad(pz, gz);
  });
}

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention core
// ---------------------------------------------------------------------------

// Captures the post-softmax attention weights of the most recent forward,
// one [Lq, Lkv] matrix per head. Test/diagnostic hook.
struct AttnProbe {
  std::vector<Tensor> head_weights;
};

// q: [Lq, D], k/v: [Lkv, D], D split into n_heads slices of d_k columns.
// Per head: softmax(Q_h K_h^T / sqrt(d_k)) V_h, heads concatenated -> [Lq, D].
// Optional inverted dropout on the attention weights while training.
inline Var mha_core(Var q, Var k, Var v, std::size_t n_heads, double attn_dropout = 0.0,
                    bool training = false, Rng* rng = nullptr, AttnProbe* probe = nullptr) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2)
    throw DimensionError("mha_core: inputs must be rank 2");
  const std::size_t D = qv.shape[1];
  if (kv.shape[1] != D || vv.shape[1] != D)
    throw DimensionError(str("mha_core: width mismatch ", shape_str(qv.shape), " vs ",
                             shape_str(kv.shape), " vs ", shape_str(vv.shape)));
  if (kv.shape[0] != vv.shape[0])
    throw DimensionError("mha_core: key/value row counts differ");
  if (n_heads == 0 || D % n_heads != 0)
    throw ConfigError(str("mha_core: width ", D, " not divisible by ", n_heads, " heads"));
  const std::size_t Lq = qv.shape[0], Lkv = kv.shape[0], dk = D / n_heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dk));

  struct Saved {
    std::vector<Tensor> probs;  // post-softmax, pre-dropout [Lq, Lkv] per head
    std::vector<Tensor> masks;  // dropout masks (empty when unused)
  };
  auto saved = std::make_shared<Saved>();
  saved->probs.reserve(n_heads);
  const bool use_drop = training && attn_dropout > 0.0;
  if (use_drop && rng == nullptr)
    throw ContractError("mha_core: attention dropout requested without an rng");

  Tensor out({Lq, D});
  std::vector<double> qh(Lq * dk), kh(Lkv * dk), vh(Lkv * dk), scores(Lq * Lkv), oh(Lq * dk);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t c0 = h * dk;
    for (std::size_t i = 0; i < Lq; ++i)
      for (std::size_t j = 0; j < dk; ++j) qh[i * dk + j] = qv.at(i, c0 + j) * scl;
    for (std::size_t i = 0; i < Lkv; ++i)
      for (std::size_t j = 0; j < dk; ++j) {
        kh[i * dk + j] = kv.at(i, c0 + j);
        vh[i * dk + j] = vv.at(i, c0 + j);
      }
    std::fill(scores.begin(), scores.end(), 0.0);
    matmul_acc_nt(qh.data(), kh.data(), scores.data(), Lq, dk, Lkv);
    Tensor probs({Lq, Lkv});
    detail::softmax_rows(scores.data(), probs.data.data(), Lq, Lkv);
    if (probe) probe->head_weights.push_back(probs);

    const double* pw = probs.data.data();
    Tensor mask;
    if (use_drop) {
      mask = Tensor({Lq, Lkv});
      const double keep = 1.0 - attn_dropout;
      for (std::size_t i = 0; i < Lq * Lkv; ++i)
        mask.data[i] = rng->uniform01() < attn_dropout ? 0.0 : 1.0 / keep;
      for (std::size_t i = 0; i < Lq * Lkv; ++i) scores[i] = probs.data[i] * mask.data[i];
      pw = scores.data();
    }
    std::fill(oh.begin(), oh.end(), 0.0);
    matmul_acc_nn(pw, vh.data(), oh.data(), Lq, Lkv, dk);
    for (std::size_t i = 0; i < Lq; ++i)
      for (std::size_t j = 0; j < dk; ++j) out.at(i, c0 + j) = oh[i * dk + j];
    saved->probs.push_back(std::move(probs));
    saved->masks.push_back(std::move(mask));
  }

  const std::size_t pq = q.idx, pk = k.idx, pv = v.idx;
  return q.tape->record(std::move(out), {pq, pk, pv},
                        [pq, pk, pv, saved, n_heads, Lq, Lkv, dk, scl, use_drop](
                            Tape& t, std::size_t self) {
    const Tensor& g = t.grad(Var{&t, self});
    const Tensor& qv = t.value(pq);
    const Tensor& kv = t.value(pk);
    const Tensor& vv = t.value(pv);
    const bool need_q = t.requires_grad(pq);
    const bool need_k = t.requires_grad(pk);
    const bool need_v = t.requires_grad(pv);
    Tensor gq = need_q ? Tensor(qv.shape) : Tensor();
    Tensor gk = need_k ? Tensor(kv.shape) : Tensor();
    Tensor gv = need_v ? Tensor(vv.shape) : Tensor();
    std::vector<double> goh(Lq * dk), vh(Lkv * dk), gp(Lq * Lkv), gs(Lq * Lkv),
        qh(Lq * dk), kh(Lkv * dk), tmp(std::max(Lq, Lkv) * dk);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t c0 = h * dk;
      const Tensor& probs = saved->probs[h];
      for (std::size_t i = 0; i < Lq; ++i)
        for (std::size_t j = 0; j < dk; ++j) goh[i * dk + j] = g.at(i, c0 + j);
      for (std::size_t i = 0; i < Lkv; ++i)
        for (std::size_t j = 0; j < dk; ++j) vh[i * dk + j] = vv.at(i, c0 + j);
      // dP' = dO * V^T ; applied probs P' = P (.* mask/keep when dropout)
      std::fill(gp.begin(), gp.end(), 0.0);
      matmul_acc_nt(goh.data(), vh.data(), gp.data(), Lq, dk, Lkv);
      if (need_v) {  // dV = P'^T * dO
        const double* pw = probs.data.data();
        std::vector<double> pd;
        if (use_drop) {
          pd.resize(Lq * Lkv);
          for (std::size_t i = 0; i < Lq * Lkv; ++i)
            pd[i] = probs.data[i] * saved->masks[h].data[i];
          pw = pd.data();
        }
        std::fill(tmp.begin(), tmp.end(), 0.0);
        matmul_acc_tn(pw, goh.data(), tmp.data(), Lq, Lkv, dk);
        for (std::size_t i = 0; i < Lkv; ++i)
          for (std::size_t j = 0; j < dk; ++j) gv.at(i, c0 + j) += tmp[i * dk + j];
      }
      if (!need_q && !need_k) continue;
      if (use_drop)
        for (std::size_t i = 0; i < Lq * Lkv; ++i) gp[i] *= saved->masks[h].data[i];
      detail::softmax_backward_rows(probs.data.data(), gp.data(), gs.data(), Lq, Lkv);
      if (need_q) {  // dQ = (dS * K) * scl
        for (std::size_t i = 0; i < Lkv; ++i)
          for (std::size_t j = 0; j < dk; ++j) kh[i * dk + j] = kv.at(i, c0 + j);
        std::fill(tmp.begin(), tmp.end(), 0.0);
        matmul_acc_nn(gs.data(), kh.data(), tmp.data(), Lq, Lkv, dk);
        for (std::size_t i = 0; i < Lq; ++i)
          for (std::size_t j = 0; j < dk; ++j) gq.at(i, c0 + j) += tmp[i * dk + j] * scl;
      }
      if (need_k) {  // dK = dS^T * (Q * scl)
        for (std::size_t i = 0; i < Lq; ++i)
          for (std::size_t j = 0; j < dk; ++j) qh[i * dk + j] = qv.at(i, c0 + j) * scl;
        std::fill(tmp.begin(), tmp.end(), 0.0);
        matmul_acc_tn(gs.data(), qh.data(), tmp.data(), Lq, Lkv, dk);
        for (std::size_t i = 0; i < Lkv; ++i)
          for (std::size_t j = 0; j < dk; ++j) gk.at(i, c0 + j) += tmp[i * dk + j];
      }
    }
    if (need_q) t.accumulate_grad(pq, gq);
    if (need_k) t.accumulate_grad(pk, gk);
    if (need_v) t.accumulate_grad(pv, gv);
  });
}

}  // namespace mvp
