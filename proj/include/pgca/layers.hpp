// Small building blocks shared by the encoder, decoder and fusion layers.
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pgca/params.hpp"
#include "pgca/rng.hpp"
#include "pgca/tensor.hpp"

namespace pgca {

constexpr double kLayerNormEps = 1e-5;

struct LayerNormParams {
  Tensor gamma, beta;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

/// x W + b with a [d_in x d_out] weight.
struct LinearParams {
  Tensor w, b;
};

inline Tensor apply(const LayerNormParams& p, const Tensor& x) { return layer_norm(x, p.gamma, p.beta, kLayerNormEps); }

inline Tensor apply(const LinearParams& p, const Tensor& x) { return add_bias(matmul(x, p.w), p.b); }

/// W2 gelu(W1 x + b1) + b2
inline Tensor apply(const FeedForwardParams& p, const Tensor& x) {
  return add_bias(matmul(gelu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

inline Tensor init_normal(ParamStore& store, const std::string& name, Shape shape, const Rng& rng,
                          double stddev = 0.02) {
  Rng r = rng.split(name);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = r.normal(0.0, stddev);
  return store.add(name, Tensor::from(std::move(shape), std::move(v), true));
}

inline Tensor init_zeros(ParamStore& store, const std::string& name, Shape shape) {
  return store.add(name, Tensor::zeros(std::move(shape), true));
}

inline LayerNormParams init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t d) {
  return {store.add(prefix + "gamma", Tensor::full({d}, 1.0, true)), init_zeros(store, prefix + "beta", {d})};
}

inline LinearParams init_linear(ParamStore& store, const std::string& prefix, std::size_t d_in, std::size_t d_out,
                                const Rng& rng) {
  return {init_normal(store, prefix + "w", {d_in, d_out}, rng), init_zeros(store, prefix + "b", {d_out})};
}

inline FeedForwardParams init_feed_forward(ParamStore& store, const std::string& prefix, std::size_t d,
                                           std::size_t d_ff, const Rng& rng) {
  FeedForwardParams p;
  p.w1 = init_normal(store, prefix + "w1", {d, d_ff}, rng);
  p.b1 = init_zeros(store, prefix + "b1", {d_ff});
  p.w2 = init_normal(store, prefix + "w2", {d_ff, d}, rng);
  p.b2 = init_zeros(store, prefix + "b2", {d});
  return p;
}

inline LayerNormParams bind_layer_norm(const ParamStore& s, const std::string& prefix) {
  return {s.get(prefix + "gamma"), s.get(prefix + "beta")};
}

inline LinearParams bind_linear(const ParamStore& s, const std::string& prefix) {
  return {s.get(prefix + "w"), s.get(prefix + "b")};
}

inline FeedForwardParams bind_feed_forward(const ParamStore& s, const std::string& prefix) {
  return {s.get(prefix + "w1"), s.get(prefix + "b1"), s.get(prefix + "w2"), s.get(prefix + "b2")};
}

/// Fixed sinusoidal position table, [t x d]:
/// even column 2i holds sin(pos / 10000^(2i/d)), odd column holds the cosine.
inline std::vector<double> sinusoidal_positions(std::size_t t, std::size_t d) {
  std::vector<double> out(t * d);
  for (std::size_t pos = 0; pos < t; ++pos) {
    for (std::size_t j = 0; j < d; ++j) {
      const double pair = static_cast<double>(j / 2 * 2);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(d));
      out[pos * d + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return out;
}

}  // namespace pgca
