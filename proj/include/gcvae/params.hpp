#pragma once

// Named parameter storage, tape binding, the Adam optimizer, a finite
// difference gradient checker and the binary checkpoint format.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "gcvae/autodiff.hpp"
#include "gcvae/errors.hpp"
#include "gcvae/tensor.hpp"

namespace gcvae {

/// Trainable weights keyed by scoped name ("enc/mlp1/fc1/W"). Ordered, so
/// iteration and serialization are deterministic.
using ParamStore = std::map<std::string, Tensor>;
using GradStore = std::map<std::string, Tensor>;

/// Binds ParamStore entries onto one tape, once each.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParamStore& store, bool trainable = true)
      : tape_(&tape), store_(&store), trainable_(trainable) {}

  Var operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    auto it = store_->find(name);
    if (it == store_->end()) throw ConfigError("unknown parameter '" + name + "'");
    Var v = trainable_ ? tape_->leaf(it->second, name) : tape_->constant(it->second);
    bound_.emplace(name, v);
    return v;
  }

  Tape& tape() { return *tape_; }
  bool trainable() const { return trainable_; }

  /// Gradient for every stored parameter; zeros for ones the loss never reached.
  GradStore grads() const {
    GradStore out;
    for (const auto& [name, value] : *store_) {
      auto it = bound_.find(name);
      out[name] = it == bound_.end() ? Tensor(value.shape()) : tape_->grad(it->second);
    }
    return out;
  }

 private:
  Tape* tape_;
  const ParamStore* store_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

// ---- optimizer ------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig cfg;
  std::int64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

inline void check_finite(const GradStore& grads) {
  for (const auto& [name, g] : grads)
    if (!g.all_finite()) throw TrainingError("non-finite gradient for parameter '" + name + "'");
}

/// Scale all gradients so their joint L2 norm is at most max_norm. Returns the pre-clip norm.
inline double clip_global_norm(GradStore& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g.data()) x *= s;
  }
  return norm;
}

inline void optimizer_step(ParamStore& params, const GradStore& grads, OptimizerState& st) {
  check_finite(grads);
  ++st.step;
  const auto& c = st.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  for (auto& [name, w] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (g.shape() != w.shape()) throw ContractViolation("gradient shape mismatch for '" + name + "'");
    Tensor& m = st.m.try_emplace(name, w.shape()).first->second;
    Tensor& v = st.v.try_emplace(name, w.shape()).first->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

// ---- finite differences ---------------------------------------------------

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_err = 0.0;
  bool pass = true;
};

/// Builds a scalar loss on a fresh tape from bound parameters.
using LossBuilder = std::function<Var(ParamBinder&)>;

inline double eval_loss(const LossBuilder& build, const ParamStore& params) {
  Tape tape;
  ParamBinder bind(tape, params, false);
  return build(bind).value().item();
}

/// Compare analytic gradients with central differences, per parameter block.
/// Relative error is |analytic - numeric|_inf / max(|analytic|_inf, |numeric|_inf).
inline GradCheckReport finite_diff_check(const LossBuilder& build, const ParamStore& params, double step,
                                         double tolerance) {
  if (!(step > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
  GradCheckReport report;
  if (params.empty()) return report;
  Tape tape;
  ParamBinder bind(tape, params, true);
  Var loss = build(bind);
  tape.backward(loss);
  const GradStore analytic = bind.grads();

  ParamStore work = params;
  for (auto& [name, w] : work) {
    const Tensor& ga = analytic.at(name);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + step;
      const double up = eval_loss(build, work);
      w[i] = orig - step;
      const double down = eval_loss(build, work);
      w[i] = orig;
      const double num = (up - down) / (2.0 * step);
      diff = std::max(diff, std::abs(num - ga[i]));
      scale = std::max({scale, std::abs(num), std::abs(ga[i])});
    }
    const double rel = scale > 1e-300 ? diff / scale : diff;
    report.blocks.push_back({name, rel});
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

// ---- checkpoint -----------------------------------------------------------

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
bool get_le(std::istream& is, U& v) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return true;
}

}  // namespace detail

inline constexpr std::uint8_t kCheckpointVersion = 1;

/// Layout: u8 version, then per block u32 name length, name bytes, u32 rank,
/// u64 extents[rank], f64 payload; all integers and floats little-endian.
inline void write_checkpoint(std::ostream& os, const ParamStore& params) {
  os.put(static_cast<char>(kCheckpointVersion));
  for (const auto& [name, t] : params) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put_le<std::uint64_t>(os, e);
    for (double x : t.data()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(x));
  }
}

inline ParamStore read_checkpoint(std::istream& is) {
  const int version = is.get();
  if (version == std::char_traits<char>::eof()) throw IoError("checkpoint: empty file");
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  ParamStore out;
  std::uint32_t name_len = 0;
  while (detail::get_le(is, name_len)) {
    if (name_len > (1u << 16)) throw IoError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!is.read(name.data(), name_len) || !detail::get_le(is, rank) || rank > 16)
      throw IoError("checkpoint: truncated block header");
    Shape shape(rank);
    for (auto& e : shape) {
      std::uint64_t v = 0;
      if (!detail::get_le(is, v)) throw IoError("checkpoint: truncated extents for '" + name + "'");
      e = static_cast<std::size_t>(v);
    }
    Tensor t(shape);
    for (double& x : t.data()) {
      std::uint64_t bits = 0;
      if (!detail::get_le(is, bits)) throw IoError("checkpoint: truncated payload for '" + name + "'");
      x = std::bit_cast<double>(bits);
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(os, params);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline ParamStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace gcvae
