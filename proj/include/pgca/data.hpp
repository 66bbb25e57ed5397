// Synthetic corpus: random symbol strings, audio-like frames built from
// per-symbol prototypes, and noisy cipher "translations" per language.
#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgca/binary_io.hpp"
#include "pgca/language.hpp"
#include "pgca/rng.hpp"
#include "pgca/tensor.hpp"

namespace pgca {

inline std::vector<AuxLanguageConfig> default_languages() {
  return {{"lang0", 0.0, 0.1}, {"lang1", 0.1, 0.3}, {"lang2", 0.3, 0.5}, {"lang3", 0.6, 0.7}, {"lang4", 0.9, 0.9}};
}

struct CorpusConfig {
  std::size_t n_train = 2000;
  std::size_t n_test = 400;
  std::size_t symbols = 32;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  std::size_t feature_bins = 16;
  std::size_t frames_per_token = 2;
  double audio_noise = 1.6;
  double swap_rate = 0.0;
  std::vector<AuxLanguageConfig> languages = default_languages();
  std::uint64_t seed = 1;

  bool operator==(const CorpusConfig&) const = default;

  void validate() const {
    if (symbols < 2) throw std::invalid_argument("corpus: need at least two symbols");
    if (min_len == 0 || min_len > max_len) throw std::invalid_argument("corpus: invalid length range");
    if (feature_bins == 0 || frames_per_token == 0) throw std::invalid_argument("corpus: empty frames");
    if (!(audio_noise >= 0.0)) throw std::invalid_argument("corpus: audio noise must be non-negative");
    if (swap_rate < 0.0 || swap_rate > 1.0) throw std::invalid_argument("corpus: swap rate must lie in [0, 1]");
    std::map<std::string, int> seen;
    for (const auto& l : languages) {
      if (l.id.empty()) throw std::invalid_argument("corpus: empty language id");
      if (seen[l.id]++) throw std::invalid_argument("corpus: duplicate language '" + l.id + "'");
      if (l.noise_rate < 0.0 || l.noise_rate > 1.0) {
        throw std::invalid_argument("corpus: language '" + l.id + "' noise rate outside [0, 1]");
      }
    }
  }

  /// Stable text rendering used for the digest stored in dataset files.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "n_train=" << n_train << ";n_test=" << n_test << ";symbols=" << symbols << ";min_len=" << min_len
       << ";max_len=" << max_len << ";feature_bins=" << feature_bins << ";frames_per_token=" << frames_per_token
       << ";audio_noise=" << audio_noise << ";swap_rate=" << swap_rate << ";seed=" << seed;
    for (const auto& l : languages) os << ";lang=" << l.id << "," << l.noise_rate << "," << l.offset_scale;
    return os.str();
  }

  std::uint64_t digest() const { return fnv1a(canonical()); }
};

struct Utterance {
  std::uint64_t id = 0;
  Tensor audio;  // [T_s x F]
  TokenSeq target;
  std::map<std::string, TokenSeq> aux;
};

struct Dataset {
  std::string split;
  std::uint64_t config_digest = 0;
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }
};

struct Corpus {
  Dataset train;
  Dataset test;
};

/// One fixed N(0, 1) prototype vector per symbol, [symbols x F].
inline Tensor token_prototypes(const CorpusConfig& cfg) {
  Rng r = Rng(cfg.seed).split("prototypes");
  std::vector<double> v(cfg.symbols * cfg.feature_bins);
  for (double& x : v) x = r.normal();
  return Tensor::from({cfg.symbols, cfg.feature_bins}, std::move(v));
}

/// Each symbol emits `frames_per_token` copies of its prototype plus iid
/// Gaussian noise of standard deviation `sigma`.
inline Tensor synth_audio(const TokenSeq& target, const Tensor& prototypes, std::size_t frames_per_token, double sigma,
                          Rng& rng) {
  const std::size_t f = prototypes.cols();
  const std::size_t t = target.size() * frames_per_token;
  if (t == 0) throw std::invalid_argument("synth_audio: empty target");
  std::vector<double> out(t * f);
  auto pv = prototypes.data();
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Token tok = target[i];
    if (tok < 0 || static_cast<std::size_t>(tok) >= prototypes.rows()) {
      throw std::out_of_range("synth_audio: token " + std::to_string(tok) + " outside vocabulary");
    }
    for (std::size_t k = 0; k < frames_per_token; ++k) {
      double* row = out.data() + (i * frames_per_token + k) * f;
      for (std::size_t j = 0; j < f; ++j) {
        row[j] = pv[tok * f + j];
        if (sigma > 0.0) row[j] += sigma * rng.normal();
      }
    }
  }
  return Tensor::from({t, f}, std::move(out));
}

/// Generates the utterance with the given id. Every random stream is derived
/// from (seed, id, purpose), so utterances can be produced in any order.
inline Utterance make_utterance(const CorpusConfig& cfg, const Tensor& prototypes,
                                const std::map<std::string, TokenCipher>& ciphers, std::uint64_t id) {
  const Rng root = Rng(cfg.seed).split("utterance", id);
  Utterance u;
  u.id = id;
  Rng lr = root.split("tokens");
  const std::size_t len = cfg.min_len + lr.index(cfg.max_len - cfg.min_len + 1);
  u.target.resize(len);
  for (auto& t : u.target) t = static_cast<Token>(lr.index(cfg.symbols));
  Rng ar = root.split("audio");
  u.audio = synth_audio(u.target, prototypes, cfg.frames_per_token, cfg.audio_noise, ar);
  for (const auto& l : cfg.languages) {
    Rng tr = root.split("aux").split(l.id);
    u.aux.emplace(l.id, translate_aux(u.target, ciphers.at(l.id), l.noise_rate, tr, cfg.swap_rate));
  }
  return u;
}

inline Corpus gen_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  const Tensor protos = token_prototypes(cfg);
  std::map<std::string, TokenCipher> ciphers;
  for (const auto& l : cfg.languages) ciphers.emplace(l.id, make_cipher(cfg.symbols, l.id, cfg.seed));
  Corpus c;
  c.train.split = "train";
  c.test.split = "test";
  c.train.config_digest = c.test.config_digest = cfg.digest();
  c.train.utterances.reserve(cfg.n_train);
  c.test.utterances.reserve(cfg.n_test);
  for (std::uint64_t id = 0; id < cfg.n_train; ++id) c.train.utterances.push_back(make_utterance(cfg, protos, ciphers, id));
  for (std::uint64_t id = cfg.n_train; id < cfg.n_train + cfg.n_test; ++id) {
    c.test.utterances.push_back(make_utterance(cfg, protos, ciphers, id));
  }
  return c;
}

/// Per-split corpus summary: duration-equivalent hours and utterance count.
inline std::string corpus_summary_csv(const Corpus& c, double frame_ms = 10.0) {
  auto hours = [&](const Dataset& d) {
    std::size_t frames = 0;
    for (const auto& u : d.utterances) frames += u.audio.rows();
    return static_cast<double>(frames) * frame_ms / 1000.0 / 3600.0;
  };
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  const double ht = hours(c.train), hs = hours(c.test);
  os << "split,frame_hours,utterances\n";
  os << "train," << ht << "," << c.train.size() << "\n";
  os << "test," << hs << "," << c.test.size() << "\n";
  os << "total," << ht + hs << "," << c.train.size() + c.test.size() << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Binary container

inline constexpr char kDatasetMagic[8] = {'P', 'G', 'C', 'A', 'D', 'S', 'E', 'T'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::string encode_dataset(const Dataset& d) {
  ByteWriter w;
  w.raw(std::string_view(kDatasetMagic, 8));
  w.u32(kDatasetVersion);
  w.str(d.split);
  w.u64(d.config_digest);
  w.u64(d.utterances.size());
  for (const auto& u : d.utterances) {
    w.u64(u.id);
    w.u32(static_cast<std::uint32_t>(u.target.size()));
    for (Token t : u.target) w.i32(t);
    w.u32(static_cast<std::uint32_t>(u.audio.rows()));
    w.u32(static_cast<std::uint32_t>(u.audio.cols()));
    for (double x : u.audio.data()) w.f64(x);
    w.u32(static_cast<std::uint32_t>(u.aux.size()));
    for (const auto& [lang, seq] : u.aux) {
      w.str(lang);
      w.u32(static_cast<std::uint32_t>(seq.size()));
      for (Token t : seq) w.i32(t);
    }
  }
  w.seal();
  return w.bytes();
}

inline Dataset decode_dataset(std::string_view bytes) {
  ByteReader r(bytes, "dataset");
  if (bytes.size() < 12 || bytes.substr(0, 8) != std::string_view(kDatasetMagic, 8)) {
    throw FormatError("dataset: bad magic");
  }
  r.unseal();
  r.raw(8);
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  }
  Dataset d;
  d.split = r.str();
  d.config_digest = r.u64();
  const std::uint64_t n = r.u64();
  r.need(n);  // every record is at least one byte
  d.utterances.reserve(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    Utterance u;
    u.id = r.u64();
    const std::uint32_t len = r.u32();
    r.need(std::size_t{len} * 4);
    u.target.resize(len);
    for (auto& t : u.target) t = r.i32();
    const std::uint32_t rows = r.u32(), cols = r.u32();
    r.need(std::size_t{rows} * cols * 8);
    std::vector<double> audio(std::size_t{rows} * cols);
    for (double& x : audio) x = r.f64();
    u.audio = Tensor::from({rows, cols}, std::move(audio));
    const std::uint32_t n_aux = r.u32();
    for (std::uint32_t a = 0; a < n_aux; ++a) {
      std::string lang = r.str();
      const std::uint32_t l = r.u32();
      r.need(std::size_t{l} * 4);
      TokenSeq seq(l);
      for (auto& t : seq) t = r.i32();
      u.aux.emplace(std::move(lang), std::move(seq));
    }
    d.utterances.push_back(std::move(u));
  }
  if (!r.done()) throw FormatError("dataset: trailing bytes");
  return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) { write_file(path, encode_dataset(d)); }
inline Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace pgca
