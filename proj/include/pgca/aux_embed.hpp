// Frozen auxiliary-text embedder and the sentence-vector proximity metric.
//
// All languages share one table of concept vectors. A token of language l is
// first mapped back to its concept through the language's cipher, then the
// language's fixed transform is applied and a sinusoidal position term added.
// Nothing here ever requires a gradient.
#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgca/language.hpp"
#include "pgca/layers.hpp"
#include "pgca/rng.hpp"
#include "pgca/tensor.hpp"

namespace pgca {

struct AuxLanguageSpec {
  std::string id;
  TokenCipher cipher;
  double noise_rate = 0.0;
  double offset_scale = 0.0;
  Tensor transform;  // [d x d], row-vector convention: e = base * transform

  std::size_t vocab() const { return cipher.vocab(); }
};

struct AuxEmbedding {
  Tensor E;    // [T_l x d]
  Tensor cls;  // [d], mean of the rows of E
};

namespace detail {

// Random orthonormal basis via Gram-Schmidt on Gaussian columns.
inline std::vector<double> random_orthogonal(std::size_t d, Rng rng) {
  std::vector<double> q(d * d);
  for (double& x : q) x = rng.normal();
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < d; ++r) dot += q[r * d + c] * q[r * d + p];
      for (std::size_t r = 0; r < d; ++r) q[r * d + c] -= dot * q[r * d + p];
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < d; ++r) norm += q[r * d + c] * q[r * d + c];
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < d; ++r) q[r * d + c] /= norm;
  }
  return q;
}

}  // namespace detail

/// cos(theta) I + sin(theta) K with K = U J U^T skew-symmetric, theta =
/// offset_scale * pi/2. For even d this is a rotation by theta in d/2 random
/// planes, so x . (x T) = cos(theta) |x|^2 for every x.
inline Tensor offset_transform(std::size_t d, double offset_scale, const Rng& rng) {
  const double theta = offset_scale * std::numbers::pi / 2.0;
  const auto u = detail::random_orthogonal(d, rng);
  std::vector<double> k(d * d, 0.0);
  for (std::size_t p = 0; p + 1 < d; p += 2) {
    // J maps e_p -> e_{p+1}, e_{p+1} -> -e_p; K = U J U^T.
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        k[r * d + c] += u[r * d + p + 1] * u[c * d + p] - u[r * d + p] * u[c * d + p + 1];
      }
    }
  }
  std::vector<double> t(d * d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c)
      t[r * d + c] = (r == c ? std::cos(theta) : 0.0) + std::sin(theta) * k[r * d + c];
  return Tensor::from({d, d}, std::move(t));
}

inline AuxLanguageSpec make_aux_language(const AuxLanguageConfig& cfg, std::size_t vocab, std::size_t d,
                                         std::uint64_t seed) {
  if (cfg.noise_rate < 0.0 || cfg.noise_rate > 1.0) {
    throw std::invalid_argument("language '" + cfg.id + "': noise rate must lie in [0, 1]");
  }
  AuxLanguageSpec spec;
  spec.id = cfg.id;
  spec.cipher = make_cipher(vocab, cfg.id, seed);
  spec.noise_rate = cfg.noise_rate;
  spec.offset_scale = cfg.offset_scale;
  spec.transform = offset_transform(d, cfg.offset_scale, Rng(seed).split("embed_transform").split(cfg.id));
  return spec;
}

/// The target language itself: identity cipher, identity transform.
inline AuxLanguageSpec target_language_spec(std::size_t vocab, std::size_t d) {
  AuxLanguageSpec spec;
  spec.id = "target";
  spec.cipher = TokenCipher::identity(vocab);
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  spec.transform = Tensor::from({d, d}, std::move(eye));
  return spec;
}

/// Standard deviation of the concept table entries. At 0.5 the positional
/// term stays visible next to the lexical content in every row.
inline constexpr double kConceptScale = 0.5;

class AuxEmbedder {
 public:
  AuxEmbedder(std::size_t vocab, std::size_t d, std::uint64_t seed, std::size_t max_len = 64)
      : d_(d), positions_(sinusoidal_positions(max_len, d)), max_len_(max_len) {
    Rng r = Rng(seed).split("aux_concepts");
    std::vector<double> v(vocab * d);
    for (double& x : v) x = kConceptScale * r.normal();
    concepts_ = Tensor::from({vocab, d}, std::move(v));
  }

  /// Wraps an explicit concept table, one row per target symbol.
  AuxEmbedder(Tensor concepts, std::size_t max_len = 64)
      : d_(concepts.cols()), concepts_(std::move(concepts)), positions_(sinusoidal_positions(max_len, d_)),
        max_len_(max_len) {}

  std::size_t dim() const { return d_; }
  const Tensor& concepts() const { return concepts_; }

  /// Concept vector of token `tok` in language `spec`, before transform.
  std::span<const double> base_embedding(Token tok, const AuxLanguageSpec& spec) const {
    const Token c = spec.cipher.decode(tok);
    return concepts_.data().subspan(static_cast<std::size_t>(c) * d_, d_);
  }

  AuxEmbedding embed(const TokenSeq& tokens, const AuxLanguageSpec& spec) const {
    if (tokens.empty()) throw std::invalid_argument("embed_aux: empty token sequence");
    if (tokens.size() > max_len_) throw std::invalid_argument("embed_aux: sequence longer than position table");
    if (spec.vocab() != concepts_.rows()) throw std::invalid_argument("embed_aux: language vocabulary mismatch");
    if (spec.transform.rows() != d_ || spec.transform.cols() != d_) {
      throw std::invalid_argument("embed_aux: transform does not match embedding width");
    }
    const std::size_t t = tokens.size();
    std::vector<double> e(t * d_, 0.0);
    auto tr = spec.transform.data();
    for (std::size_t i = 0; i < t; ++i) {
      auto base = base_embedding(tokens[i], spec);
      double* row = e.data() + i * d_;
      for (std::size_t k = 0; k < d_; ++k) {
        const double b = base[k];
        for (std::size_t j = 0; j < d_; ++j) row[j] += b * tr[k * d_ + j];
      }
      for (std::size_t j = 0; j < d_; ++j) row[j] += positions_[i * d_ + j];
    }
    std::vector<double> cls(d_, 0.0);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < d_; ++j) cls[j] += e[i * d_ + j];
    for (double& x : cls) x /= static_cast<double>(t);
    return {Tensor::from({t, d_}, std::move(e)), Tensor::from({d_}, std::move(cls))};
  }

 private:
  std::size_t d_;
  Tensor concepts_;
  std::vector<double> positions_;
  std::size_t max_len_;
};

inline AuxEmbedding embed_aux(const TokenSeq& tokens, const AuxLanguageSpec& spec, const AuxEmbedder& embedder) {
  return embedder.embed(tokens, spec);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw std::domain_error("cosine: zero-norm sentence vector");
  return ab / std::sqrt(aa * bb);
}

/// Mean cosine similarity of paired sentence vectors.
inline double cls_proximity(const std::vector<TokenSeq>& corpus_a, const AuxLanguageSpec& spec_a,
                            const std::vector<TokenSeq>& corpus_b, const AuxLanguageSpec& spec_b,
                            const AuxEmbedder& embedder) {
  if (corpus_a.size() != corpus_b.size()) throw std::invalid_argument("cls_proximity: corpora are not paired");
  if (corpus_a.empty()) throw std::invalid_argument("cls_proximity: empty corpora");
  double total = 0.0;
  for (std::size_t i = 0; i < corpus_a.size(); ++i) {
    const auto a = embedder.embed(corpus_a[i], spec_a);
    const auto b = embedder.embed(corpus_b[i], spec_b);
    total += cosine(a.cls.data(), b.cls.data());
  }
  return total / static_cast<double>(corpus_a.size());
}

/// Everything needed to turn stored auxiliary token sequences into E_l.
class LanguageBank {
 public:
  LanguageBank(std::size_t vocab, std::size_t d, std::uint64_t seed, const std::vector<AuxLanguageConfig>& langs)
      : embedder_(vocab, d, seed), target_(target_language_spec(vocab, d)) {
    for (const auto& l : langs) {
      specs_.emplace(l.id, make_aux_language(l, vocab, d, seed));
      order_.push_back(l.id);
    }
  }

  const AuxEmbedder& embedder() const { return embedder_; }
  const AuxLanguageSpec& target() const { return target_; }
  const std::vector<std::string>& ids() const { return order_; }
  bool contains(const std::string& id) const { return specs_.count(id) != 0; }

  const AuxLanguageSpec& get(const std::string& id) const {
    auto it = specs_.find(id);
    if (it == specs_.end()) throw std::out_of_range("unknown auxiliary language '" + id + "'");
    return it->second;
  }

  AuxEmbedding embed(const TokenSeq& tokens, const std::string& id) const { return embedder_.embed(tokens, get(id)); }

 private:
  AuxEmbedder embedder_;
  AuxLanguageSpec target_;
  std::map<std::string, AuxLanguageSpec> specs_;
  std::vector<std::string> order_;
};

}  // namespace pgca
