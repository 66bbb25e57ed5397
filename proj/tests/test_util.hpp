// Shared fixtures for the unit tests: tiny configs and random tensors.
#pragma once

#include <vector>

#include "pgca/pgca.hpp"

namespace pgca::testing {

inline Tensor random_tensor(Shape shape, Rng& r, double scale = 1.0, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = scale * r.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline ModelConfig tiny_model() {
  ModelConfig c;
  c.d = 8;
  c.feature_bins = 4;
  c.heads = 2;
  c.d_ff = 16;
  c.n_enc = 1;
  c.n_dec = 2;
  c.vocab_tgt = 8;
  c.max_src_len = 12;
  c.max_tgt_len = 8;
  return c;
}

inline CorpusConfig tiny_corpus(std::uint64_t seed = 3) {
  CorpusConfig c;
  c.n_train = 24;
  c.n_test = 8;
  c.symbols = 6;
  c.min_len = 2;
  c.max_len = 5;
  c.feature_bins = 4;
  c.frames_per_token = 2;
  c.audio_noise = 0.5;
  c.languages = {{"clean", 0.0, 0.1}, {"noisy", 0.5, 0.6}, {"junk", 1.0, 0.9}};
  c.seed = seed;
  return c;
}

inline LanguageBank tiny_bank(const CorpusConfig& cc, const ModelConfig& mc) {
  return LanguageBank(cc.symbols, mc.d, cc.seed, cc.languages);
}

inline TrainHyper tiny_hyper(int stage, std::size_t steps = 6) {
  TrainHyper h = stage == 1 ? stage1_defaults() : stage2_defaults();
  h.total_steps = steps;
  h.warmup_steps = 2;
  h.batch_size = 4;
  h.eval_every = 3;
  h.lr_max = 5e-3;
  return h;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace pgca::testing
