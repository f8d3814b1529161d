#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gcvae/errors.hpp"

namespace gcvae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of f64 values. Rank 0 (shape {}) holds one scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  double item() const {
    if (data_.size() != 1) throw ContractViolation("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != data_.size()) {
      throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw ContractViolation("index rank mismatch");
    std::size_t off = 0;
    std::size_t k = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[k]) throw ContractViolation("index out of range");
      off = off * shape_[k++] + i;
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

/// Result shape of an elementwise binary op. The smaller operand must be a
/// scalar or a trailing suffix of the larger shape; it is tiled cyclically.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  const std::size_t na = shape_size(a);
  const std::size_t nb = shape_size(b);
  if (nb == 1 && a.size() >= b.size()) return a;
  if (na == 1 && b.size() >= a.size()) return b;
  if (detail::is_suffix(b, a)) return a;
  if (detail::is_suffix(a, b)) return b;
  throw ConfigError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <class F>
Tensor zip_with(const Tensor& a, const Tensor& b, F f, const char* op = "elementwise") {
  Tensor out(broadcast_shape(a.shape(), b.shape(), op));
  const std::size_t n = out.size();
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i % na], pb[i % nb]);
  }
  return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  const double* pa = a.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i]);
  return out;
}

/// Sum `g` (shaped like a broadcast result) back down to `target` shape.
inline Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < g.size(); ++i) out[i % n] += g[i];
  return out;
}

inline double softplus_scalar(double x) {
  return x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return zip_with(a, b, std::plus<>(), "add"); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return zip_with(a, b, std::minus<>(), "sub"); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return zip_with(a, b, std::multiplies<>(), "mul"); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return zip_with(a, b, std::divides<>(), "div"); }
inline Tensor operator+(const Tensor& a, double s) { return map(a, [s](double v) { return v + s; }); }
inline Tensor operator-(const Tensor& a, double s) { return map(a, [s](double v) { return v - s; }); }
inline Tensor operator*(const Tensor& a, double s) { return map(a, [s](double v) { return v * s; }); }
inline Tensor operator/(const Tensor& a, double s) { return map(a, [s](double v) { return v / s; }); }
inline Tensor operator+(double s, const Tensor& a) { return a + s; }
inline Tensor operator-(double s, const Tensor& a) { return map(a, [s](double v) { return s - v; }); }
inline Tensor operator*(double s, const Tensor& a) { return a * s; }
inline Tensor operator/(double s, const Tensor& a) { return map(a, [s](double v) { return s / v; }); }
inline Tensor operator-(const Tensor& a) { return map(a, [](double v) { return -v; }); }

inline Tensor exp(const Tensor& a) { return map(a, [](double v) { return std::exp(v); }); }
inline Tensor log(const Tensor& a) { return map(a, [](double v) { return std::log(v); }); }
inline Tensor sqrt(const Tensor& a) { return map(a, [](double v) { return std::sqrt(v); }); }
inline Tensor square(const Tensor& a) { return map(a, [](double v) { return v * v; }); }
inline Tensor tanh(const Tensor& a) { return map(a, [](double v) { return std::tanh(v); }); }
inline Tensor relu(const Tensor& a) { return map(a, [](double v) { return v > 0 ? v : 0.0; }); }
inline Tensor sigmoid(const Tensor& a) { return map(a, sigmoid_scalar); }
inline Tensor softplus(const Tensor& a) { return map(a, softplus_scalar); }
inline Tensor reciprocal(const Tensor& a) { return map(a, [](double v) { return 1.0 / v; }); }
inline Tensor clamp_min(const Tensor& a, double lo) {
  return map(a, [lo](double v) { return v < lo ? lo : v; });
}
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return map(a, [lo, hi](double v) { return std::clamp(v, lo, hi); });
}

inline double sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

inline Tensor sum(const Tensor& a) { return Tensor::scalar(sum_all(a)); }

namespace detail {

// Split a shape around `axis` into (outer, n, inner) extents.
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& n,
                       std::size_t& inner) {
  if (axis >= s.size()) throw ConfigError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

/// Sum over one axis; the axis is removed from the shape.
inline Tensor sum_axis(const Tensor& a, std::size_t axis) {
  std::size_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  Shape s = a.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += a[(o * n + k) * inner + i];
  return out;
}

/// Insert a new axis of extent `n` at `axis`, repeating values along it.
inline Tensor expand_axis(const Tensor& a, std::size_t axis, std::size_t n) {
  if (axis > a.rank()) throw ConfigError("expand_axis: axis out of range");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  const std::size_t inner = a.size() / std::max<std::size_t>(outer, 1);
  Shape s = a.shape();
  s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), n);
  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(a.data().data() + o * inner, inner, out.data().data() + (o * n + k) * inner);
  return out;
}

inline Tensor mean_axis(const Tensor& a, std::size_t axis) {
  return sum_axis(a, axis) * (1.0 / static_cast<double>(a.dim(axis)));
}

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;
using MatrixMap = Eigen::Map<RowMajorMatrix>;

inline ConstMatrixMap as_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ConfigError("expected rank-2 tensor, got " + shape_str(t.shape()));
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                        static_cast<Eigen::Index>(t.dim(1)));
}

inline MatrixMap as_matrix(Tensor& t) {
  if (t.rank() != 2) throw ConfigError("expected rank-2 tensor, got " + shape_str(t.shape()));
  return MatrixMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ConfigError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{a.dim(0), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out(Shape{a.dim(1), a.dim(0)});
  as_matrix(out) = as_matrix(a).transpose();
  return out;
}

/// Contiguous sub-range [start, start+len) along `axis`.
inline Tensor slice_axis(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  std::size_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  if (start + len > n) throw ConfigError("slice: range exceeds extent along axis " + std::to_string(axis));
  Shape s = a.shape();
  s[axis] = len;
  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().data() + (o * n + start) * inner, len * inner, out.data().data() + o * len * inner);
  return out;
}

/// Concatenate along `axis`; all other extents must agree.
inline Tensor concat_axis(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  Shape s = parts.front().shape();
  if (axis >= s.size()) throw ConfigError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != s.size()) throw ConfigError("concat: rank mismatch");
    total += ps[axis];
    ps[axis] = s[axis];
    if (ps != s) throw ConfigError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
  }
  std::size_t outer, n, inner;
  detail::axis_split(s, axis, outer, n, inner);
  s[axis] = total;
  Tensor out(s);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * len * inner, len * inner,
                  out.data().data() + (o * total + offset) * inner);
    offset += len;
  }
  return out;
}

/// Softmax over the last axis.
inline Tensor softmax_last(const Tensor& a) {
  if (a.rank() == 0) throw ConfigError("softmax: rank-0 input");
  const std::size_t k = a.shape().back();
  Tensor out(a.shape());
  for (std::size_t r = 0; r < a.size() / k; ++r) {
    const double* x = a.data().data() + r * k;
    double* y = out.data().data() + r * k;
    const double mx = *std::max_element(x, x + k);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < k; ++i) y[i] /= z;
  }
  return out;
}

/// p x p matrix helpers used throughout for graphs.
inline Tensor zeros(Shape s) { return Tensor(std::move(s)); }

inline Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace gcvae
