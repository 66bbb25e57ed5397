// Token types and the length-preserving cipher that stands in for a
// translation system.
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgca/rng.hpp"

namespace pgca {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

/// Per-language settings of the synthetic corpus.
struct AuxLanguageConfig {
  std::string id;
  double noise_rate = 0.0;    // probability of substituting each position
  double offset_scale = 0.0;  // 0 = same embedding space as the target, 1 = orthogonal rotation

  bool operator==(const AuxLanguageConfig&) const = default;
};

/// Bijection from target symbols to auxiliary symbols.
class TokenCipher {
 public:
  TokenCipher() = default;

  explicit TokenCipher(std::vector<Token> forward) : forward_(std::move(forward)), inverse_(forward_.size(), -1) {
    for (std::size_t i = 0; i < forward_.size(); ++i) {
      const Token t = forward_[i];
      if (t < 0 || static_cast<std::size_t>(t) >= forward_.size() || inverse_[t] != -1) {
        throw std::invalid_argument("token map is not a bijection (entry " + std::to_string(i) + ")");
      }
      inverse_[t] = static_cast<Token>(i);
    }
  }

  static TokenCipher identity(std::size_t vocab) {
    std::vector<Token> f(vocab);
    for (std::size_t i = 0; i < vocab; ++i) f[i] = static_cast<Token>(i);
    return TokenCipher(std::move(f));
  }

  static TokenCipher random(std::size_t vocab, Rng rng) {
    std::vector<Token> f(vocab);
    for (std::size_t i = 0; i < vocab; ++i) f[i] = static_cast<Token>(i);
    rng.shuffle(f);
    return TokenCipher(std::move(f));
  }

  std::size_t vocab() const { return forward_.size(); }

  Token encode(Token t) const {
    check(t);
    return forward_[t];
  }
  Token decode(Token t) const {
    check(t);
    return inverse_[t];
  }

  TokenSeq encode(const TokenSeq& s) const {
    TokenSeq out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = encode(s[i]);
    return out;
  }
  TokenSeq decode(const TokenSeq& s) const {
    TokenSeq out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = decode(s[i]);
    return out;
  }

  const std::vector<Token>& forward() const { return forward_; }

 private:
  void check(Token t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= forward_.size()) {
      throw std::out_of_range("token " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(forward_.size()));
    }
  }

  std::vector<Token> forward_;
  std::vector<Token> inverse_;
};

/// Cipher for one auxiliary language, derived from the corpus seed and the id.
inline TokenCipher make_cipher(std::size_t vocab, const std::string& lang_id, std::uint64_t seed) {
  return TokenCipher::random(vocab, Rng(seed).split("cipher").split(lang_id));
}

/// Applies the cipher, then replaces each position with probability
/// `noise_rate` by a uniformly drawn different auxiliary token. With
/// `swap_rate` > 0 adjacent positions are additionally swapped.
inline TokenSeq translate_aux(const TokenSeq& target, const TokenCipher& cipher, double noise_rate, Rng& rng,
                              double swap_rate = 0.0) {
  if (noise_rate < 0.0 || noise_rate > 1.0) throw std::invalid_argument("noise rate must lie in [0, 1]");
  const std::size_t v = cipher.vocab();
  TokenSeq out = cipher.encode(target);
  for (auto& tok : out) {
    if (v > 1 && rng.uniform() < noise_rate) {
      const Token r = static_cast<Token>(rng.index(v - 1));
      tok = r < tok ? r : r + 1;
    }
  }
  if (swap_rate > 0.0) {
    for (std::size_t i = 0; i + 1 < out.size(); ++i) {
      if (rng.uniform() < swap_rate) {
        std::swap(out[i], out[i + 1]);
        ++i;
      }
    }
  }
  return out;
}

}  // namespace pgca
