// Multi-head scaled dot-product attention.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pgca/params.hpp"
#include "pgca/rng.hpp"
#include "pgca/tensor.hpp"

namespace pgca {

/// Projections for all heads packed column-wise: head h owns columns
/// [h*d_k, (h+1)*d_k) of wq/wk/wv and rows [h*d_k, (h+1)*d_k) of wo.
struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t heads = 1;

  std::size_t width() const { return wq.rows(); }
  std::size_t head_dim() const { return wq.cols() / heads; }
};

/// Boolean T_q x T_k matrix, true where attending is allowed.
class AttentionMask {
 public:
  AttentionMask(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> allowed)
      : rows_(rows), cols_(cols), allowed_(std::move(allowed)) {
    if (rows_ == 0 || cols_ == 0) throw ShapeError("attention mask: empty");
    if (allowed_.size() != rows_ * cols_) throw ShapeError("attention mask: size does not match extents");
    for (std::size_t i = 0; i < rows_; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < cols_; ++j) any = any || allowed_[i * cols_ + j];
      if (!any) throw ShapeError("attention mask: query row " + std::to_string(i) + " has no allowed key");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool allowed(std::size_t i, std::size_t j) const { return allowed_[i * cols_ + j] != 0; }

  /// 0 where allowed, -1e9 where masked.
  std::vector<double> additive() const {
    std::vector<double> out(allowed_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = allowed_[i] ? 0.0 : kMasked;
    return out;
  }

  static constexpr double kMasked = -1e9;

 private:
  std::size_t rows_, cols_;
  std::vector<std::uint8_t> allowed_;
};

inline AttentionMask causal_mask(std::size_t t) {
  if (t == 0) throw ShapeError("causal_mask: length must be at least 1");
  std::vector<std::uint8_t> allowed(t * t, 0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= i; ++j) allowed[i * t + j] = 1;
  return AttentionMask(t, t, std::move(allowed));
}

struct AttentionOutput {
  Tensor out;
  /// Raw per-head weights, shape [heads x T_q x T_k]; never part of the graph.
  Tensor weights;
};

inline AttentionOutput multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                                            const AttentionParams& p,
                                            const std::optional<AttentionMask>& mask = std::nullopt) {
  const std::size_t d = p.width();
  if (q_in.rank() != 2 || k_in.rank() != 2 || v_in.rank() != 2) {
    throw ShapeError("attention: inputs must be matrices");
  }
  if (q_in.cols() != d || k_in.cols() != d || v_in.cols() != d) {
    throw ShapeError("attention: input widths " + shape_str(q_in.shape()) + ", " + shape_str(k_in.shape()) +
                     ", " + shape_str(v_in.shape()) + " do not match model width " + std::to_string(d));
  }
  if (k_in.rows() != v_in.rows()) throw ShapeError("attention: key and value lengths differ");
  const std::size_t tq = q_in.rows(), tk = k_in.rows();
  if (mask && (mask->rows() != tq || mask->cols() != tk)) {
    throw ShapeError("attention: mask is " + std::to_string(mask->rows()) + "x" + std::to_string(mask->cols()) +
                     ", expected " + std::to_string(tq) + "x" + std::to_string(tk));
  }
  const std::size_t h = p.heads;
  const std::size_t dk = p.head_dim();
  if (h * dk != p.wq.cols()) throw ShapeError("attention: heads do not divide the projection width");

  Tensor q = add_bias(matmul(q_in, p.wq), p.bq);
  Tensor k = add_bias(matmul(k_in, p.wk), p.bk);
  Tensor v = add_bias(matmul(v_in, p.wv), p.bv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> additive;
  if (mask) additive = mask->additive();

  std::vector<Tensor> head_out;
  head_out.reserve(h);
  std::vector<double> weights(h * tq * tk);
  for (std::size_t hi = 0; hi < h; ++hi) {
    Tensor qh = h == 1 ? q : slice_cols(q, hi * dk, (hi + 1) * dk);
    Tensor kh = h == 1 ? k : slice_cols(k, hi * dk, (hi + 1) * dk);
    Tensor vh = h == 1 ? v : slice_cols(v, hi * dk, (hi + 1) * dk);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (mask) scores = add_constant(scores, additive);
    Tensor a = softmax(scores, 1);
    std::copy(a.data().begin(), a.data().end(), weights.begin() + hi * tq * tk);
    head_out.push_back(matmul(a, vh));
  }
  Tensor cat = h == 1 ? head_out[0] : concat_cols(head_out);
  Tensor out = add_bias(matmul(cat, p.wo), p.bo);
  return {std::move(out), Tensor::from({h, tq, tk}, std::move(weights))};
}

/// Registers wq..bo under `prefix` with N(0, init_std) weights and zero biases.
inline AttentionParams init_attention(ParamStore& store, const std::string& prefix, std::size_t d,
                                      std::size_t heads, const Rng& rng, double init_std = 0.02) {
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                     " heads");
  }
  auto weight = [&](const std::string& name) {
    Rng r = rng.split(prefix + name);
    std::vector<double> v(d * d);
    for (double& x : v) x = r.normal(0.0, init_std);
    return store.add(prefix + name, Tensor::from({d, d}, std::move(v), true));
  };
  auto bias = [&](const std::string& name) { return store.add(prefix + name, Tensor::zeros({d}, true)); };
  AttentionParams p;
  p.wq = weight("wq");
  p.bq = bias("bq");
  p.wk = weight("wk");
  p.bk = bias("bk");
  p.wv = weight("wv");
  p.bv = bias("bv");
  p.wo = weight("wo");
  p.bo = bias("bo");
  p.heads = heads;
  return p;
}

inline AttentionParams bind_attention(const ParamStore& store, const std::string& prefix, std::size_t heads) {
  AttentionParams p;
  p.wq = store.get(prefix + "wq");
  p.bq = store.get(prefix + "bq");
  p.wk = store.get(prefix + "wk");
  p.bk = store.get(prefix + "bk");
  p.wv = store.get(prefix + "wv");
  p.bv = store.get(prefix + "bv");
  p.wo = store.get(prefix + "wo");
  p.bo = store.get(prefix + "bo");
  p.heads = heads;
  return p;
}

}  // namespace pgca
