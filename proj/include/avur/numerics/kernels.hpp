#pragma once

// Pure, scalar-templated dense kernels. The tape in tape.hpp calls these for
// its forward values, so anything checked here is checked for the graph too.

#include "avur/numerics/matrix.hpp"

#include <cmath>
#include <span>

namespace avur {

// Query row i may look at key column k iff !causal or k <= i + offset.
struct AttentionMask {
  bool causal = false;
  Eigen::Index offset = 0;

  bool visible(Eigen::Index i, Eigen::Index k) const { return !causal || k <= i + offset; }
  static AttentionMask none() { return {}; }
  static AttentionMask causal_from(Eigen::Index offset) { return {true, offset}; }
};

template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m,
                                              AttentionMask mask = {}) {
  using S = typename Derived::Scalar;
  require_finite(m, "softmax_rows");
  MatrixX<S> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    S mx = -std::numeric_limits<S>::infinity();
    for (Eigen::Index k = 0; k < m.cols(); ++k)
      if (mask.visible(i, k)) mx = std::max(mx, S(m(i, k)));
    if (!std::isfinite(static_cast<double>(mx)))
      throw NumericError("softmax_rows: row has no visible entries");
    S total = 0;
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      const S e = mask.visible(i, k) ? S(std::exp(m(i, k) - mx)) : S(0);
      out(i, k) = e;
      total += e;
    }
    out.row(i) /= total;
  }
  return out;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  require_finite(m, "log_softmax_rows");
  MatrixX<S> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const S mx = m.row(i).maxCoeff();
    S total = 0;
    for (Eigen::Index k = 0; k < m.cols(); ++k) total += std::exp(m(i, k) - mx);
    const S lse = mx + std::log(total);
    for (Eigen::Index k = 0; k < m.cols(); ++k) out(i, k) = m(i, k) - lse;
  }
  return out;
}

// Per-row normalization to zero mean / unit variance (biased variance), then
// elementwise gain and bias (both 1 x cols).
template <typename Derived, typename G, typename B>
MatrixX<typename Derived::Scalar> layer_norm(const Eigen::MatrixBase<Derived>& x,
                                            const Eigen::MatrixBase<G>& gain,
                                            const Eigen::MatrixBase<B>& bias, double eps) {
  using S = typename Derived::Scalar;
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be > 0");
  if (gain.size() != x.cols() || bias.size() != x.cols())
    throw ShapeError("layer_norm: gain/bias length " + std::to_string(gain.size()) +
                     " does not match width " + std::to_string(x.cols()));
  MatrixX<S> out(x.rows(), x.cols());
  const S n = static_cast<S>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const S mean = x.row(i).sum() / n;
    S var = 0;
    for (Eigen::Index k = 0; k < x.cols(); ++k) var += (x(i, k) - mean) * (x(i, k) - mean);
    var /= n;
    const S inv = S(1) / std::sqrt(var + S(eps));
    for (Eigen::Index k = 0; k < x.cols(); ++k)
      out(i, k) = (x(i, k) - mean) * inv * gain(k) + bias(k);
  }
  return out;
}

template <typename S>
S sigmoid(S z) {
  if (z >= 0) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

// tanh-approximation GELU and its derivative
template <typename S>
S gelu(S x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return S(0.5) * x * (S(1) + std::tanh(S(c) * (x + S(0.044715) * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
  constexpr double c = 0.7978845608028654;
  const S u = S(c) * (x + S(0.044715) * x * x * x);
  const S t = std::tanh(u);
  const S du = S(c) * (S(1) + S(3 * 0.044715) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

// Entropy of a probability row divided by log(T), with 0 log 0 := 0.
// T = 1 is fully concentrated by construction and yields 0.
inline double normalized_entropy(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("normalized_entropy: empty row");
  if (p.size() == 1) return 0.0;
  double h = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw NumericError("normalized_entropy: entries must be finite and non-negative");
    if (v > 0.0) h -= v * std::log(v);
  }
  const double s = h / std::log(static_cast<double>(p.size()));
  return std::clamp(s, 0.0, 1.0);
}

}  // namespace avur
