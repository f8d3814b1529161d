#pragma once

// Linear layers and small MLP blocks on top of the tape.

#include <cmath>
#include <string>

#include "gcvae/autodiff.hpp"
#include "gcvae/params.hpp"
#include "gcvae/rng.hpp"
#include "gcvae/tensor.hpp"

namespace gcvae {

/// W [in, out] and b [out], both U(-1/sqrt(in), 1/sqrt(in)).
inline void init_linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(in));
  ps[name + "/W"] = uniform_tensor(rng, {in, out}, -k, k);
  ps[name + "/b"] = uniform_tensor(rng, {out}, -k, k);
}

/// x [..., in] -> [..., out]; leading axes are flattened into rows.
inline Var linear(ParamBinder& bind, const std::string& name, const Var& x) {
  const Var w = bind(name + "/W");
  const Var b = bind(name + "/b");
  const Shape& xs = x.shape();
  const std::size_t in = w.shape()[0];
  if (xs.empty() || xs.back() != in) {
    throw ConfigError("linear '" + name + "': input " + shape_str(xs) + " does not end in " + std::to_string(in));
  }
  Shape out_shape = xs;
  out_shape.back() = w.shape()[1];
  const Var rows = xs.size() == 2 ? x : reshape(x, {x.size() / in, in});
  const Var y = matmul(rows, w) + b;
  return xs.size() == 2 ? y : reshape(y, out_shape);
}

/// Inverted dropout. A null rng means eval mode (identity).
inline Var dropout(const Var& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = keep(*rng) ? scale : 0.0;
  return x * mask;
}

inline void init_mlp(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                     Rng& rng) {
  init_linear(ps, name + "/fc1", in, hidden, rng);
  init_linear(ps, name + "/fc2", hidden, out, rng);
}

/// Linear -> ReLU -> Dropout -> Linear.
inline Var mlp(ParamBinder& bind, const std::string& name, const Var& x, double rate = 0.0, Rng* rng = nullptr) {
  return linear(bind, name + "/fc2", dropout(relu(linear(bind, name + "/fc1", x)), rate, rng));
}

}  // namespace gcvae
