#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "mvp/common.hpp"

namespace mvp {

enum class Channel { ECG, PPG, EDA };

inline const char* channel_name(Channel c) {
  switch (c) {
    case Channel::ECG: return "ECG";
    case Channel::PPG: return "PPG";
    case Channel::EDA: return "EDA";
  }
  return "?";
}

inline Channel channel_from_name(const std::string& s) {
  if (s == "ECG" || s == "ecg" || s == "cardiac") return Channel::ECG;
  if (s == "PPG" || s == "ppg") return Channel::PPG;
  if (s == "EDA" || s == "eda") return Channel::EDA;
  throw ValidationError(str("unknown channel kind: ", s));
}

enum class FilterKind { lowpass, highpass, bandpass, notch };

struct FilterSpec {
  FilterKind kind = FilterKind::lowpass;
  int order = 1;
  double cutoff_lo_hz = 0.0;  // the single cutoff for lowpass/highpass/notch
  double cutoff_hi_hz = 0.0;  // upper edge, bandpass only
  double sample_rate_hz = 0.0;

  void validate() const {
    const double nyq = sample_rate_hz / 2.0;
    if (sample_rate_hz <= 0.0) throw ConfigError("filter spec: sample rate must be positive");
    if (order < 1) throw ConfigError("filter spec: order must be >= 1");
    if (!(cutoff_lo_hz > 0.0 && cutoff_lo_hz < nyq))
      throw ConfigError(str("filter spec: cutoff ", cutoff_lo_hz, " Hz outside (0, ", nyq, ")"));
    if (kind == FilterKind::bandpass) {
      if (!(cutoff_hi_hz > 0.0 && cutoff_hi_hz < nyq))
        throw ConfigError(str("filter spec: cutoff ", cutoff_hi_hz, " Hz outside (0, ", nyq, ")"));
      if (!(cutoff_lo_hz < cutoff_hi_hz))
        throw ConfigError("filter spec: bandpass needs low < high");
    }
  }
};

// One second-order section, denominator normalized to a0 = 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

struct BiquadChain {
  std::vector<Biquad> sections;
};

// Pole moduli of one section (roots of 1 + a1 w + a2 w^2 in w = z^-1 map to
// poles z with product a2, i.e. roots of z^2 + a1 z + a2).
inline std::pair<double, double> section_pole_moduli(const Biquad& s) {
  const double disc = s.a1 * s.a1 - 4.0 * s.a2;
  if (disc < 0.0) {
    const double m = std::sqrt(s.a2);  // complex pair, |z|^2 = a2
    return {m, m};
  }
  const double r = std::sqrt(disc);
  return {std::abs((-s.a1 + r) / 2.0), std::abs((-s.a1 - r) / 2.0)};
}

inline double chain_max_pole_modulus(const BiquadChain& c) {
  double mx = 0.0;
  for (const auto& s : c.sections) {
    const auto [m1, m2] = section_pole_moduli(s);
    mx = std::max({mx, m1, m2});
  }
  return mx;
}

inline void assert_stable(const BiquadChain& c) {
  if (chain_max_pole_modulus(c) >= 1.0 - 1e-9)
    throw NumericError("designed filter is not strictly stable");
}

// Complex frequency response of the cascade at freq_hz.
inline std::complex<double> chain_response(const BiquadChain& c, double freq_hz,
                                           double sample_rate_hz) {
  const double w = 2.0 * M_PI * freq_hz / sample_rate_hz;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h(1.0, 0.0);
  for (const auto& s : c.sections)
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

namespace detail {

using cplx = std::complex<double>;

// Analog Butterworth prototype poles (unit cutoff), full conjugate set.
inline std::vector<cplx> butterworth_prototype(int order) {
  std::vector<cplx> poles;
  poles.reserve(static_cast<std::size_t>(order));
  for (int k = 0; k < order; ++k) {
    const double theta = M_PI * (2.0 * k + order + 1.0) / (2.0 * order);
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

struct AnalogDesign {
  std::vector<cplx> zeros;
  std::vector<cplx> poles;
  double gain = 1.0;
};

// Lowpass prototype -> target response in the analog domain, with prewarped
// edge frequencies wa (rad/s).
inline AnalogDesign analog_transform(const FilterSpec& spec, double fs) {
  const auto proto = butterworth_prototype(spec.order);
  const double wa_lo = 2.0 * fs * std::tan(M_PI * spec.cutoff_lo_hz / fs);
  AnalogDesign d;
  switch (spec.kind) {
    case FilterKind::lowpass: {
      for (const cplx& p : proto) d.poles.push_back(wa_lo * p);
      d.gain = std::pow(wa_lo, spec.order);
      break;
    }
    case FilterKind::highpass: {
      for (const cplx& p : proto) d.poles.push_back(wa_lo / p);
      d.zeros.assign(static_cast<std::size_t>(spec.order), cplx(0.0, 0.0));
      d.gain = 1.0;
      break;
    }
    case FilterKind::bandpass: {
      const double wa_hi = 2.0 * fs * std::tan(M_PI * spec.cutoff_hi_hz / fs);
      const double w0sq = wa_lo * wa_hi;
      const double bw = wa_hi - wa_lo;
      for (const cplx& p : proto) {
        const cplx bp = bw * p / 2.0;
        const cplx disc = std::sqrt(bp * bp - w0sq);
        d.poles.push_back(bp + disc);
        d.poles.push_back(bp - disc);
      }
      d.zeros.assign(static_cast<std::size_t>(spec.order), cplx(0.0, 0.0));
      d.gain = std::pow(bw, spec.order);
      break;
    }
    case FilterKind::notch:
      throw ConfigError("notch is designed by design_notch()");
  }
  return d;
}

struct DigitalDesign {
  std::vector<cplx> zeros;
  std::vector<cplx> poles;
  double gain = 1.0;
};

// Bilinear transform z = (2fs + s) / (2fs - s). Degree deficit in the
// numerator becomes zeros at z = -1.
inline DigitalDesign bilinear(const AnalogDesign& a, double fs) {
  const double k = 2.0 * fs;
  DigitalDesign d;
  cplx num(1.0, 0.0), den(1.0, 0.0);
  for (const cplx& z : a.zeros) {
    d.zeros.push_back((k + z) / (k - z));
    num *= (k - z);
  }
  for (const cplx& p : a.poles) {
    d.poles.push_back((k + p) / (k - p));
    den *= (k - p);
  }
  for (std::size_t i = a.zeros.size(); i < a.poles.size(); ++i) d.zeros.emplace_back(-1.0, 0.0);
  d.gain = a.gain * (num / den).real();
  return d;
}

// Groups a conjugate-symmetric root set into conjugate pairs (represented by
// the upper-half member) plus real roots.
inline void split_roots(const std::vector<cplx>& roots, std::vector<cplx>& pairs,
                        std::vector<double>& reals) {
  constexpr double tol = 1e-10;
  for (const cplx& r : roots) {
    if (r.imag() > tol)
      pairs.push_back(r);
    else if (r.imag() >= -tol)
      reals.push_back(r.real());
  }
}

// Assembles second-order sections. Every conjugate pole pair takes the two
// remaining real zeros nearest to it; real poles are paired among
// themselves. The overall gain lands on the first section.
inline BiquadChain zpk_to_sos(const DigitalDesign& d) {
  std::vector<cplx> pole_pairs, zero_pairs;
  std::vector<double> real_poles, real_zeros;
  split_roots(d.poles, pole_pairs, real_poles);
  split_roots(d.zeros, zero_pairs, real_zeros);

  // Widest sections first: pair poles closest to the unit circle early so
  // they get the nearest zeros.
  std::sort(pole_pairs.begin(), pole_pairs.end(),
            [](const cplx& x, const cplx& y) { return std::abs(x) > std::abs(y); });

  BiquadChain chain;
  auto take_nearest_real_zero = [&real_zeros](double to) {
    if (real_zeros.empty()) return cplx(0.0, 0.0);  // implicit zero at origin padding
    std::size_t best = 0;
    for (std::size_t i = 1; i < real_zeros.size(); ++i)
      if (std::abs(real_zeros[i] - to) < std::abs(real_zeros[best] - to)) best = i;
    const double z = real_zeros[best];
    real_zeros.erase(real_zeros.begin() + static_cast<std::ptrdiff_t>(best));
    return cplx(z, 0.0);
  };

  for (const cplx& p : pole_pairs) {
    Biquad s;
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    cplx z1, z2;
    if (!zero_pairs.empty()) {
      z1 = zero_pairs.back();
      zero_pairs.pop_back();
      z2 = std::conj(z1);
    } else {
      z1 = take_nearest_real_zero(p.real());
      z2 = take_nearest_real_zero(p.real());
    }
    s.b0 = 1.0;
    s.b1 = -(z1 + z2).real();
    s.b2 = (z1 * z2).real();
    chain.sections.push_back(s);
  }
  // Real poles: two per section, a possible odd one as first-order.
  std::sort(real_poles.begin(), real_poles.end(),
            [](double x, double y) { return std::abs(x) > std::abs(y); });
  std::size_t i = 0;
  for (; i + 1 < real_poles.size(); i += 2) {
    Biquad s;
    s.a1 = -(real_poles[i] + real_poles[i + 1]);
    s.a2 = real_poles[i] * real_poles[i + 1];
    const cplx z1 = take_nearest_real_zero(real_poles[i]);
    const cplx z2 = take_nearest_real_zero(real_poles[i + 1]);
    s.b0 = 1.0;
    s.b1 = -(z1 + z2).real();
    s.b2 = (z1 * z2).real();
    chain.sections.push_back(s);
  }
  if (i < real_poles.size()) {
    Biquad s;
    s.a1 = -real_poles[i];
    s.a2 = 0.0;
    const cplx z1 = take_nearest_real_zero(real_poles[i]);
    s.b0 = 1.0;
    s.b1 = -z1.real();
    s.b2 = 0.0;
    chain.sections.push_back(s);
  }
  if (chain.sections.empty()) chain.sections.push_back(Biquad{});
  for (auto& coef : {&chain.sections[0].b0, &chain.sections[0].b1, &chain.sections[0].b2})
    *coef *= d.gain;
  return chain;
}

}  // namespace detail

// Butterworth design: analog prototype, band transform with cutoff
// prewarping, bilinear transform, cascaded second-order sections.
inline BiquadChain design_butterworth(const FilterSpec& spec) {
  spec.validate();
  if (spec.kind == FilterKind::notch) throw ConfigError("use design_notch for notch filters");
  const double fs = spec.sample_rate_hz;
  const auto analog = detail::analog_transform(spec, fs);
  const auto digital = detail::bilinear(analog, fs);
  BiquadChain chain = detail::zpk_to_sos(digital);
  assert_stable(chain);
  return chain;
}

// Powerline notch: one second-order section, quality factor 30.
inline BiquadChain design_notch(double freq_hz, double sample_rate_hz, double q = 30.0) {
  if (!(sample_rate_hz > 0.0) || !(freq_hz > 0.0) || freq_hz >= sample_rate_hz / 2.0)
    throw ConfigError(str("notch frequency ", freq_hz, " Hz must lie inside (0, ",
                          sample_rate_hz / 2.0, ")"));
  const double w0 = 2.0 * M_PI * freq_hz / sample_rate_hz;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double cw = std::cos(w0);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * cw / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * cw / a0;
  s.a2 = (1.0 - alpha) / a0;
  BiquadChain chain;
  chain.sections.push_back(s);
  assert_stable(chain);
  return chain;
}

struct RawSignal {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;
  Channel channel = Channel::ECG;

  void validate() const {
    if (!(sample_rate_hz > 0.0)) throw ValidationError("raw signal: sample rate must be positive");
    for (double v : samples)
      if (!std::isfinite(v)) throw ValidationError("raw signal: samples must be finite");
  }
};

namespace detail {

// Single forward pass, transposed direct form II. With steady_init the
// section states start at the steady response to the first sample, so
// constant inputs pass through with no transient.
inline void sosfilt_inplace(const BiquadChain& chain, std::vector<double>& x, bool steady_init) {
  if (x.empty()) return;
  double dc_in = x.front();
  for (const Biquad& s : chain.sections) {
    const double asum = 1.0 + s.a1 + s.a2;
    const double bsum = s.b0 + s.b1 + s.b2;
    const double K = bsum == 0.0 ? 0.0 : (std::abs(asum) > 1e-300 ? bsum / asum : 0.0);
    double s1 = steady_init ? (K - s.b0) * dc_in : 0.0;
    double s2 = steady_init ? (s.b2 - s.a2 * K) * dc_in : 0.0;
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + s1;
      s1 = s.b1 * in - s.a1 * out + s2;
      s2 = s.b2 * in - s.a2 * out;
      v = out;
    }
    dc_in *= K;
  }
}

}  // namespace detail

// First n samples of the causal impulse response (zero initial state).
inline std::vector<double> impulse_response(const BiquadChain& chain, std::size_t n) {
  std::vector<double> x(n, 0.0);
  if (n) x[0] = 1.0;
  detail::sosfilt_inplace(chain, x, false);
  return x;
}

// Samples for the chain's impulse response to decay by three decades;
// filter_forward_backward pads by this much on each side.
inline std::size_t chain_warmup(const BiquadChain& chain) {
  const double r = chain_max_pole_modulus(chain);
  if (r <= 1e-12) return 4;
  const double n = std::log(1e-3) / std::log(r);
  return std::max<std::size_t>(4, static_cast<std::size_t>(std::ceil(n)));
}

// Zero-phase application: odd-reflection padding, forward pass, time
// reversal, second pass, reversal, unpad. Output length equals input length
// and the net phase shift in the passband is zero.
inline RawSignal filter_forward_backward(const RawSignal& x, const BiquadChain& chain) {
  x.validate();
  const std::size_t n = x.samples.size();
  const std::size_t warm = chain_warmup(chain);
  if (n <= 3 * warm)
    throw ValidationError(str("signal too short for zero-phase filtering: ", n,
                              " samples, need > ", 3 * warm));
  const std::size_t pad = warm;
  std::vector<double> buf;
  buf.reserve(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) buf.push_back(2.0 * x.samples[0] - x.samples[pad - i]);
  buf.insert(buf.end(), x.samples.begin(), x.samples.end());
  for (std::size_t i = 0; i < pad; ++i)
    buf.push_back(2.0 * x.samples[n - 1] - x.samples[n - 2 - i]);

  detail::sosfilt_inplace(chain, buf, true);
  std::reverse(buf.begin(), buf.end());
  detail::sosfilt_inplace(chain, buf, true);
  std::reverse(buf.begin(), buf.end());

  RawSignal out;
  out.sample_rate_hz = x.sample_rate_hz;
  out.channel = x.channel;
  out.samples.assign(buf.begin() + static_cast<std::ptrdiff_t>(pad),
                     buf.begin() + static_cast<std::ptrdiff_t>(pad + n));
  return out;
}

// Downsampling with an order-8 anti-alias Butterworth at 0.45x the target
// Nyquist (applied zero-phase), then linear interpolation at the target
// grid. Integer ratios land exactly on source samples.
inline RawSignal resample_to(const RawSignal& x, double target_hz) {
  x.validate();
  if (!(target_hz > 0.0)) throw ConfigError("resample: target rate must be positive");
  if (target_hz > x.sample_rate_hz)
    throw ConfigError(str("resample: upsampling ", x.sample_rate_hz, " -> ", target_hz,
                          " Hz is not supported"));
  if (target_hz == x.sample_rate_hz) return x;

  FilterSpec aa;
  aa.kind = FilterKind::lowpass;
  aa.order = 8;
  aa.cutoff_lo_hz = 0.45 * (target_hz / 2.0);
  aa.sample_rate_hz = x.sample_rate_hz;
  const RawSignal filtered = filter_forward_backward(x, design_butterworth(aa));

  const double ratio = x.sample_rate_hz / target_hz;
  const std::size_t n = x.samples.size();
  const std::size_t out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_hz / x.sample_rate_hz));
  RawSignal out;
  out.sample_rate_hz = target_hz;
  out.channel = x.channel;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * ratio;
    std::size_t i0 = static_cast<std::size_t>(pos);
    if (i0 >= n - 1) i0 = n - 2;
    const double frac = pos - static_cast<double>(i0);
    out.samples[i] = frac == 0.0
                         ? filtered.samples[i0]
                         : (1.0 - frac) * filtered.samples[i0] + frac * filtered.samples[i0 + 1];
  }
  return out;
}

// Drops exactly floor(seconds * rate) samples from the front.
inline RawSignal trim_head(const RawSignal& x, double seconds) {
  x.validate();
  if (seconds < 0.0) throw ConfigError("trim: seconds must be >= 0");
  const std::size_t n = static_cast<std::size_t>(std::floor(seconds * x.sample_rate_hz));
  if (x.samples.size() <= n)
    throw ValidationError(str("trim: signal of ", x.samples.size(),
                              " samples too short to drop ", n));
  RawSignal out;
  out.sample_rate_hz = x.sample_rate_hz;
  out.channel = x.channel;
  out.samples.assign(x.samples.begin() + static_cast<std::ptrdiff_t>(n), x.samples.end());
  return out;
}

// ---------------------------------------------------------------------------
// Per-channel preprocessing pipeline
// ---------------------------------------------------------------------------

enum class DatasetTag { amigos, deap, synthetic };

inline const char* dataset_name(DatasetTag t) {
  switch (t) {
    case DatasetTag::amigos: return "amigos";
    case DatasetTag::deap: return "deap";
    case DatasetTag::synthetic: return "synthetic";
  }
  return "?";
}

inline DatasetTag dataset_from_name(const std::string& s) {
  if (s == "amigos") return DatasetTag::amigos;
  if (s == "deap") return DatasetTag::deap;
  if (s == "synthetic") return DatasetTag::synthetic;
  throw ValidationError(str("unknown dataset tag: ", s));
}

inline FilterSpec channel_filter_spec(Channel ch, double sample_rate_hz) {
  FilterSpec spec;
  spec.sample_rate_hz = sample_rate_hz;
  switch (ch) {
    case Channel::PPG:  // 3rd order band-pass, [0.5, 8] Hz
      spec.kind = FilterKind::bandpass;
      spec.order = 3;
      spec.cutoff_lo_hz = 0.5;
      spec.cutoff_hi_hz = 8.0;
      break;
    case Channel::ECG:  // 5th order high-pass, 0.5 Hz
      spec.kind = FilterKind::highpass;
      spec.order = 5;
      spec.cutoff_lo_hz = 0.5;
      break;
    case Channel::EDA:  // 4th order low-pass, 3 Hz
      spec.kind = FilterKind::lowpass;
      spec.order = 4;
      spec.cutoff_lo_hz = 3.0;
      break;
  }
  return spec;
}

struct PipelineResult {
  RawSignal signal;
  std::vector<std::string> stages;  // applied stages, in order
};

// Fixed stage order: resample -> notch -> Butterworth -> head trim (the trim
// applies to AMIGOS recordings only; the first second carries a connection
// artifact there).
inline PipelineResult preprocess_channel(const RawSignal& x, DatasetTag tag,
                                         double target_hz = 128.0, double powerline_hz = 50.0,
                                         double trim_seconds = 1.0) {
  PipelineResult r;
  r.signal = resample_to(x, target_hz);
  r.stages.push_back(str("resample(", target_hz, "Hz)"));

  r.signal = filter_forward_backward(r.signal, design_notch(powerline_hz, target_hz));
  r.stages.push_back(str("notch(", powerline_hz, "Hz)"));

  const FilterSpec spec = channel_filter_spec(x.channel, target_hz);
  r.signal = filter_forward_backward(r.signal, design_butterworth(spec));
  const char* kind = spec.kind == FilterKind::lowpass    ? "lowpass"
                     : spec.kind == FilterKind::highpass ? "highpass"
                                                         : "bandpass";
  r.stages.push_back(str("butterworth(", kind, ",order", spec.order, ")"));

  if (tag == DatasetTag::amigos) {
    r.signal = trim_head(r.signal, trim_seconds);
    r.stages.push_back(str("trim(", trim_seconds, "s)"));
  }
  return r;
}

}  // namespace mvp
