// CER scoring, teacher-forced and greedy decoding, and the read-only
// analyses over trained checkpoints: gate values, attention heatmaps and
// top-k language selection.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgca/aux_embed.hpp"
#include "pgca/data.hpp"
#include "pgca/model.hpp"
#include "pgca/tensor.hpp"

namespace pgca {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_len = 0;

  std::size_t edits() const { return substitutions + deletions + insertions; }
  double rate() const { return ref_len ? static_cast<double>(edits()) / static_cast<double>(ref_len) : 0.0; }
  bool operator==(const EditCounts&) const = default;
};

/// Levenshtein alignment with unit costs. On equal cost the backtrace
/// prefers substitution (or match), then deletion, then insertion.
inline EditCounts cer(const TokenSeq& ref, const TokenSeq& hyp) {
  if (ref.empty()) throw std::invalid_argument("cer: empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditCounts c;
  c.ref_len = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++c.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

struct UtteranceScore {
  std::uint64_t id = 0;
  EditCounts counts;
};

struct CerReport {
  double cer = 0.0;
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_chars = 0;
  std::vector<UtteranceScore> per_utterance;

  void add(std::uint64_t id, const EditCounts& c) {
    per_utterance.push_back({id, c});
    substitutions += c.substitutions;
    deletions += c.deletions;
    insertions += c.insertions;
    ref_chars += c.ref_len;
    cer = static_cast<double>(substitutions + deletions + insertions) / static_cast<double>(ref_chars);
  }
};

/// Rel = (base - cer) / base, as a fraction.
inline double relative_reduction(double base, double system) {
  if (!(base > 0.0)) throw std::invalid_argument("relative_reduction: baseline must be positive");
  return (base - system) / base;
}

// ---------------------------------------------------------------------------
// Decoding

/// Index of the largest entry of each row; ties resolve to the lowest index.
inline TokenSeq row_argmax(const Tensor& logits, std::size_t rows) {
  TokenSeq out(rows);
  const std::size_t v = logits.cols();
  auto d = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < v; ++c) {
      if (d[r * v + c] > d[r * v + best]) best = c;
    }
    out[r] = static_cast<Token>(best);
  }
  return out;
}

/// Embeddings of an utterance's auxiliary streams, in the model's branch order.
inline std::vector<Tensor> aux_streams(const Utterance& u, const ModelConfig& cfg, const LanguageBank& bank) {
  std::vector<Tensor> out;
  out.reserve(cfg.num_aux());
  for (const auto& id : cfg.aux_languages) {
    auto it = u.aux.find(id);
    if (it == u.aux.end()) throw std::invalid_argument("utterance " + std::to_string(u.id) + " has no '" + id + "' stream");
    out.push_back(bank.embed(it->second, id).E);
  }
  return out;
}

/// Hypothesis of length |target|: argmax of each teacher-forced logit row
/// that predicts a target symbol.
inline TokenSeq teacher_forcing_hypothesis(const Model& model, const Tensor& h_audio, std::span<const Tensor> aux,
                                           const TokenSeq& target) {
  NoGradGuard ng;
  const auto in = teacher_inputs(target, model.config());
  return row_argmax(model.decode(h_audio, aux, in), target.size());
}

/// Free-running greedy decode, stopping at EOS or the length cap.
inline TokenSeq greedy_hypothesis(const Model& model, const Tensor& h_audio, std::span<const Tensor> aux) {
  NoGradGuard ng;
  const auto& cfg = model.config();
  TokenSeq in{cfg.bos()};
  while (true) {
    const TokenSeq step = row_argmax(model.decode(h_audio, aux, in), in.size());
    const Token next = step.back();
    if (next == cfg.eos()) break;
    in.push_back(next);
    if (in.size() == cfg.max_tgt_len) break;
  }
  return TokenSeq(in.begin() + 1, in.end());
}

namespace detail {

inline void check_compatible(const ModelCheckpoint& ckpt, const Utterance& u, const LanguageBank* bank) {
  if (u.audio.cols() != ckpt.config.feature_bins) {
    throw std::invalid_argument("checkpoint expects " + std::to_string(ckpt.config.feature_bins) +
                                " feature bins, utterance has " + std::to_string(u.audio.cols()));
  }
  for (Token t : u.target) {
    if (t < 0 || static_cast<std::size_t>(t) >= ckpt.config.symbols()) {
      throw std::invalid_argument("utterance token outside the checkpoint's symbol set");
    }
  }
  if (u.target.size() + 1 > ckpt.config.max_tgt_len) {
    throw std::invalid_argument("utterance longer than the checkpoint's target cap");
  }
  if (ckpt.config.num_aux() > 0 && bank == nullptr) {
    throw std::invalid_argument("checkpoint fuses auxiliary languages but no language bank was given");
  }
}

}  // namespace detail

inline TokenSeq teacher_forcing_decode(const ModelCheckpoint& ckpt, const Utterance& u, const LanguageBank* bank = nullptr) {
  detail::check_compatible(ckpt, u, bank);
  const Model model(ckpt);
  NoGradGuard ng;
  const auto aux = bank ? aux_streams(u, ckpt.config, *bank) : std::vector<Tensor>{};
  return teacher_forcing_hypothesis(model, model.encode(u.audio), aux, u.target);
}

inline TokenSeq greedy_decode(const ModelCheckpoint& ckpt, const Utterance& u, const LanguageBank* bank = nullptr) {
  detail::check_compatible(ckpt, u, bank);
  const Model model(ckpt);
  NoGradGuard ng;
  const auto aux = bank ? aux_streams(u, ckpt.config, *bank) : std::vector<Tensor>{};
  return greedy_hypothesis(model, model.encode(u.audio), aux);
}

enum class DecodeMode { teacher_forcing, greedy };

/// Corpus CER, micro-averaged over all reference symbols.
inline CerReport evaluate(const ModelCheckpoint& ckpt, const Dataset& data, const LanguageBank* bank = nullptr,
                          DecodeMode mode = DecodeMode::teacher_forcing) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const Model model(ckpt);
  NoGradGuard ng;
  CerReport r;
  for (const auto& u : data.utterances) {
    detail::check_compatible(ckpt, u, bank);
    const auto aux = ckpt.config.num_aux() ? aux_streams(u, ckpt.config, *bank) : std::vector<Tensor>{};
    const Tensor h = model.encode(u.audio);
    const TokenSeq hyp = mode == DecodeMode::teacher_forcing ? teacher_forcing_hypothesis(model, h, aux, u.target)
                                                             : greedy_hypothesis(model, h, aux);
    r.add(u.id, cer(u.target, hyp));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Gates

struct GateReport {
  FusionMode mode = FusionMode::full_pgca;
  std::vector<std::string> languages;
  std::vector<std::vector<double>> attn;  // [layer][language], tanh(alpha)
  std::vector<double> fnn;                // [layer]

  /// Mean over layers of one language's gate.
  double mean_gate(std::size_t lang) const {
    double s = 0.0;
    for (const auto& row : attn) s += row.at(lang);
    return s / static_cast<double>(attn.size());
  }

  double mean_gate(const std::string& lang) const {
    for (std::size_t i = 0; i < languages.size(); ++i) {
      if (languages[i] == lang) return mean_gate(i);
    }
    throw std::out_of_range("gate report has no language '" + lang + "'");
  }
};

inline GateReport extract_gates(const ModelCheckpoint& ckpt) {
  const auto& cfg = ckpt.config;
  if (!has_gates(cfg.fusion)) {
    throw std::invalid_argument("extract_gates: fusion mode '" + std::string(to_string(cfg.fusion)) + "' has no gates");
  }
  GateReport r;
  r.mode = cfg.fusion;
  r.languages = cfg.aux_languages;
  for (std::size_t b = 0; b < cfg.n_dec; ++b) {
    const std::string pre = std::string(kFusionPrefix) + block_prefix("block", b);
    std::vector<double> row;
    for (std::size_t l = 0; l < cfg.num_aux(); ++l) {
      row.push_back(std::tanh(ckpt.params.get(pre + "alpha_attn" + std::to_string(l)).item()));
    }
    r.attn.push_back(std::move(row));
    r.fnn.push_back(std::tanh(ckpt.params.get(pre + "alpha_fnn").item()));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Heatmaps

struct Heatmap {
  std::size_t layer = 0;
  std::string language;
  std::vector<std::string> row_labels;  // decoder input tokens
  std::vector<std::string> col_labels;  // auxiliary tokens
  std::vector<double> weights;          // [rows x cols], head-averaged

  std::size_t rows() const { return row_labels.size(); }
  std::size_t cols() const { return col_labels.size(); }
  double at(std::size_t r, std::size_t c) const { return weights[r * cols() + c]; }

  /// Fraction of rows i < limit whose argmax (lowest index on ties) is i.
  double diagonal_fraction(std::size_t limit) const {
    const std::size_t n = std::min({limit, rows(), cols()});
    if (n == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < cols(); ++c) {
        if (at(r, c) > at(r, best)) best = c;
      }
      hits += best == r;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
  }
};

inline std::string token_label(Token t, const ModelConfig& cfg) {
  if (t == cfg.bos()) return "<s>";
  if (t == cfg.eos()) return "</s>";
  return "t" + std::to_string(t);
}

/// Head-averaged branch attention of one fusion layer for the teacher-forced
/// pass over `u`.
inline Heatmap attention_heatmap(const ModelCheckpoint& ckpt, const Utterance& u, std::size_t layer,
                                 const std::string& lang, const LanguageBank& bank) {
  const auto& cfg = ckpt.config;
  if (!has_gates(cfg.fusion)) {
    throw std::invalid_argument("attention_heatmap: fusion mode '" + std::string(to_string(cfg.fusion)) +
                                "' has no attention branches");
  }
  if (layer >= cfg.n_dec) {
    throw std::out_of_range("attention_heatmap: layer " + std::to_string(layer) + " outside [0, " +
                            std::to_string(cfg.n_dec) + ")");
  }
  const auto it = std::find(cfg.aux_languages.begin(), cfg.aux_languages.end(), lang);
  if (it == cfg.aux_languages.end()) throw std::out_of_range("attention_heatmap: model does not fuse '" + lang + "'");
  const auto li = static_cast<std::size_t>(it - cfg.aux_languages.begin());
  detail::check_compatible(ckpt, u, &bank);

  const Model model(ckpt);
  NoGradGuard ng;
  DecoderTrace trace;
  const auto aux = aux_streams(u, cfg, bank);
  model.forward(u.audio, aux, u.target, &trace);
  const Tensor& w = trace.layers.at(layer).branch_weights.at(li);  // [h x T_y x T_l]
  const std::size_t h = w.shape()[0], ty = w.shape()[1], tl = w.shape()[2];

  Heatmap hm;
  hm.layer = layer;
  hm.language = lang;
  for (Token t : teacher_inputs(u.target, cfg)) hm.row_labels.push_back(token_label(t, cfg));
  for (Token t : u.aux.at(lang)) hm.col_labels.push_back("a" + std::to_string(t));
  hm.weights.assign(ty * tl, 0.0);
  auto wd = w.data();
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < ty * tl; ++i) hm.weights[i] += wd[k * ty * tl + i] / static_cast<double>(h);
  return hm;
}

// ---------------------------------------------------------------------------
// Language selection

enum class SelectMetric { cer, proximity, gating };

inline SelectMetric select_metric_from_string(const std::string& s) {
  if (s == "cer") return SelectMetric::cer;
  if (s == "proximity") return SelectMetric::proximity;
  if (s == "gating") return SelectMetric::gating;
  throw std::invalid_argument("unknown selection metric '" + s + "'");
}

inline std::string to_string(SelectMetric m) {
  switch (m) {
    case SelectMetric::cer: return "cer";
    case SelectMetric::proximity: return "proximity";
    case SelectMetric::gating: return "gating";
  }
  return "?";
}

/// The k best languages: lowest CER, or highest proximity / gate value.
/// Equal scores are ordered by language id.
inline std::vector<std::string> select_topk(const std::map<std::string, double>& scores, SelectMetric metric,
                                            std::size_t k) {
  if (k == 0 || k > scores.size()) {
    throw std::out_of_range("select_topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) +
                            "]");
  }
  std::vector<std::pair<std::string, double>> v(scores.begin(), scores.end());
  const bool ascending = metric == SelectMetric::cer;
  std::stable_sort(v.begin(), v.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return ascending ? a.second < b.second : a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(v[i].first);
  return out;
}

}  // namespace pgca
