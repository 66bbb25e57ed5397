#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace pgca;
using pgca::testing::max_abs_diff;
using pgca::testing::random_tensor;

namespace {

// Scalar-loop scaled dot-product attention, head by head.
std::vector<double> naive_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p,
                                    const AttentionMask* mask = nullptr) {
  const std::size_t tq = q_in.rows(), tk = kv_in.rows(), d = p.width(), h = p.heads, dk = d / h;
  auto proj = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
    std::vector<double> out(x.rows() * d);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = b[j];
        for (std::size_t k = 0; k < d; ++k) s += x.at(i, k) * w.at(k, j);
        out[i * d + j] = s;
      }
    return out;
  };
  const auto q = proj(q_in, p.wq, p.bq), k = proj(kv_in, p.wk, p.bk), v = proj(kv_in, p.wv, p.bv);
  std::vector<double> cat(tq * d, 0.0);
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t i = 0; i < tq; ++i) {
      std::vector<double> s(tk);
      double mx = -1e300;
      for (std::size_t j = 0; j < tk; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += q[i * d + hh * dk + c] * k[j * d + hh * dk + c];
        s[j] = dot / std::sqrt(static_cast<double>(dk));
        if (mask && !mask->allowed(i, j)) s[j] = -1e300;
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& x : s) z += (x = (x <= -1e299 ? 0.0 : std::exp(x - mx)));
      for (std::size_t j = 0; j < tk; ++j)
        for (std::size_t c = 0; c < dk; ++c) cat[i * d + hh * dk + c] += s[j] / z * v[j * d + hh * dk + c];
    }
  }
  std::vector<double> out(tq * d);
  for (std::size_t i = 0; i < tq; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = p.bo[j];
      for (std::size_t c = 0; c < d; ++c) s += cat[i * d + c] * p.wo.at(c, j);
      out[i * d + j] = s;
    }
  return out;
}

AttentionParams random_attention(ParamStore& store, std::size_t d, std::size_t heads, Rng& r) {
  AttentionParams p = init_attention(store, "a.", d, heads, r, 0.5);
  for (auto* b : {&p.bq, &p.bk, &p.bv, &p.bo}) {
    for (double& x : b->mutable_data()) x = 0.3 * r.normal();
  }
  return p;
}

}  // namespace

TEST(Attention, MatchesLoopOracleAcrossShapes) {
  Rng r(21);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t heads = 1 + r.index(3);
    const std::size_t d = heads * (1 + r.index(3));
    const std::size_t tq = 1 + r.index(5), tk = 1 + r.index(6);
    ParamStore store;
    auto p = random_attention(store, d, heads, r);
    Tensor q = random_tensor({tq, d}, r), kv = random_tensor({tk, d}, r);
    auto out = multi_head_attention(q, kv, kv, p);
    EXPECT_LT(max_abs_diff(out.out.data(), naive_attention(q, kv, p)), 1e-12);
    EXPECT_EQ(out.weights.shape(), (Shape{heads, tq, tk}));
  }
}

TEST(Attention, CausalMaskHidesTheFuture) {
  Rng r(22);
  ParamStore store;
  auto p = random_attention(store, 6, 2, r);
  Tensor x = random_tensor({5, 6}, r);
  const auto mask = causal_mask(5);
  auto out = multi_head_attention(x, x, x, p, mask);
  EXPECT_LT(max_abs_diff(out.out.data(), naive_attention(x, x, p, &mask)), 1e-12);
  auto w = out.weights.data();
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 5; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        const double a = w[(h * 5 + i) * 5 + j];
        if (j > i) {
          EXPECT_EQ(a, 0.0);
        }
        row += a;
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }

  // Changing a later position leaves earlier outputs untouched.
  Tensor x2 = x.clone();
  for (std::size_t c = 0; c < 6; ++c) x2.mutable_data()[4 * 6 + c] += 3.0;
  auto out2 = multi_head_attention(x2, x2, x2, p, mask);
  for (std::size_t i = 0; i < 4 * 6; ++i) EXPECT_EQ(out.out[i], out2.out[i]);
}

TEST(Attention, GradientsPassFiniteDifferences) {
  Rng r(23);
  ParamStore store;
  auto p = random_attention(store, 4, 2, r);
  Tensor q = random_tensor({3, 4}, r, 1.0, true), kv = random_tensor({5, 4}, r, 1.0, true);
  Tensor w = random_tensor({3, 4}, r);
  std::vector<Tensor> ps{q, kv, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo};
  auto rep = grad_check([&] { return sum(mul(multi_head_attention(q, kv, kv, p).out, w)); }, ps);
  EXPECT_TRUE(rep.passed) << "max rel " << rep.max_rel_error << " param " << rep.worst_param;
}

TEST(Attention, RejectsMismatchedInputs) {
  Rng r(24);
  ParamStore store;
  auto p = random_attention(store, 4, 2, r);
  EXPECT_THROW(multi_head_attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 4}), Tensor::zeros({2, 4}), p), ShapeError);
  EXPECT_THROW(multi_head_attention(Tensor::zeros({2, 4}), Tensor::zeros({3, 4}), Tensor::zeros({2, 4}), p), ShapeError);
  EXPECT_THROW(multi_head_attention(Tensor::zeros({2, 4}), Tensor::zeros({3, 4}), Tensor::zeros({3, 4}), p,
                                    causal_mask(3)),
               ShapeError);
  ParamStore s2;
  EXPECT_THROW(init_attention(s2, "x.", 5, 2, r, 0.02), std::invalid_argument);
}

TEST(Attention, SingleKeyCopiesItsValue) {
  // With one key every query attends to it with weight 1.
  Rng r(25);
  ParamStore store;
  auto p = random_attention(store, 4, 2, r);
  Tensor q = random_tensor({3, 4}, r), kv = random_tensor({1, 4}, r);
  auto out = multi_head_attention(q, kv, kv, p);
  for (double w : out.weights.data()) EXPECT_DOUBLE_EQ(w, 1.0);
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.out.at(i, j), out.out.at(0, j), 1e-14);
}
