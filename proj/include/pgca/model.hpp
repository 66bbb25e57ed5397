// Miniature encoder-decoder recogniser with parallel gated cross-attention
// (PGCA) fusion of auxiliary-language embeddings.
//
// Encoder: two 1-D convolutions (kernel 3, GELU), a layer norm, sinusoidal
// positions, then pre-norm self-attention blocks. Decoder: token + learned
// position embeddings, pre-norm blocks of causal self-attention, audio
// cross-attention and MLP. In stage 2 a fusion layer sits at the start of
// every decoder block:
//
//   Y' = Y + sum_l tanh(a_attn[l]) * attn_l(Y, E_l, E_l)
//   Z  = Y' + tanh(a_fnn) * FNN(Y')
//
// with every gate scalar initialised to zero, so a fresh stage-2 model
// computes exactly what its stage-1 parent does.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pgca/attention.hpp"
#include "pgca/language.hpp"
#include "pgca/layers.hpp"
#include "pgca/optim.hpp"
#include "pgca/params.hpp"
#include "pgca/rng.hpp"
#include "pgca/tensor.hpp"

namespace pgca {

enum class FusionMode { none, full_pgca, no_tanh, sequential, shared, addition, concatenation };

inline constexpr std::array<FusionMode, 7> kAllFusionModes = {
    FusionMode::none,   FusionMode::full_pgca, FusionMode::no_tanh,      FusionMode::sequential,
    FusionMode::shared, FusionMode::addition,  FusionMode::concatenation};

inline std::string_view to_string(FusionMode m) {
  switch (m) {
    case FusionMode::none: return "none";
    case FusionMode::full_pgca: return "full_pgca";
    case FusionMode::no_tanh: return "no_tanh";
    case FusionMode::sequential: return "sequential";
    case FusionMode::shared: return "shared";
    case FusionMode::addition: return "addition";
    case FusionMode::concatenation: return "concatenation";
  }
  return "?";
}

inline FusionMode fusion_mode_from_string(std::string_view s) {
  for (FusionMode m : kAllFusionModes) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown fusion mode '" + std::string(s) + "'");
}

/// Modes whose fusion layer carries per-language gate scalars.
inline bool has_gates(FusionMode m) {
  return m == FusionMode::full_pgca || m == FusionMode::no_tanh || m == FusionMode::sequential ||
         m == FusionMode::shared;
}

struct ModelConfig {
  std::size_t d = 32;
  std::size_t feature_bins = 16;
  std::size_t heads = 2;
  std::size_t d_ff = 64;
  std::size_t n_enc = 2;
  std::size_t n_dec = 2;
  std::size_t vocab_tgt = 34;  // symbols + BOS + EOS
  std::size_t max_src_len = 28;
  std::size_t max_tgt_len = 14;
  FusionMode fusion = FusionMode::none;
  std::vector<std::string> aux_languages;  // branch order

  bool operator==(const ModelConfig&) const = default;

  std::size_t num_aux() const { return aux_languages.size(); }
  std::size_t symbols() const { return vocab_tgt - 2; }
  Token bos() const { return static_cast<Token>(vocab_tgt - 2); }
  Token eos() const { return static_cast<Token>(vocab_tgt - 1); }

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) {
      throw std::invalid_argument("model: width " + std::to_string(d) + " not divisible by " +
                                  std::to_string(heads) + " heads");
    }
    if (feature_bins == 0 || d_ff == 0 || n_dec == 0) throw std::invalid_argument("model: zero-sized component");
    if (vocab_tgt < 3) throw std::invalid_argument("model: vocabulary needs at least one symbol plus BOS/EOS");
    if (max_src_len == 0 || max_tgt_len < 2) throw std::invalid_argument("model: length caps too small");
    if (fusion != FusionMode::none && aux_languages.empty()) {
      throw std::invalid_argument("model: fusion mode " + std::string(to_string(fusion)) +
                                  " needs at least one auxiliary language");
    }
    if (fusion == FusionMode::none && !aux_languages.empty()) {
      throw std::invalid_argument("model: auxiliary languages given without a fusion mode");
    }
    std::set<std::string> seen(aux_languages.begin(), aux_languages.end());
    if (seen.size() != aux_languages.size()) throw std::invalid_argument("model: duplicate auxiliary language");
  }

  std::string serialize() const {
    std::ostringstream os;
    os << "d=" << d << "\nfeature_bins=" << feature_bins << "\nheads=" << heads << "\nd_ff=" << d_ff
       << "\nn_enc=" << n_enc << "\nn_dec=" << n_dec << "\nvocab_tgt=" << vocab_tgt << "\nmax_src_len=" << max_src_len
       << "\nmax_tgt_len=" << max_tgt_len << "\nfusion=" << to_string(fusion) << "\naux_languages=";
    for (std::size_t i = 0; i < aux_languages.size(); ++i) os << (i ? "," : "") << aux_languages[i];
    os << "\n";
    return os.str();
  }

  static ModelConfig deserialize(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    auto as_size = [](const std::string& v) { return static_cast<std::size_t>(std::stoull(v)); };
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("model config: malformed line '" + line + "'");
      const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
      if (k == "d") c.d = as_size(v);
      else if (k == "feature_bins") c.feature_bins = as_size(v);
      else if (k == "heads") c.heads = as_size(v);
      else if (k == "d_ff") c.d_ff = as_size(v);
      else if (k == "n_enc") c.n_enc = as_size(v);
      else if (k == "n_dec") c.n_dec = as_size(v);
      else if (k == "vocab_tgt") c.vocab_tgt = as_size(v);
      else if (k == "max_src_len") c.max_src_len = as_size(v);
      else if (k == "max_tgt_len") c.max_tgt_len = as_size(v);
      else if (k == "fusion") c.fusion = fusion_mode_from_string(v);
      else if (k == "aux_languages") {
        c.aux_languages.clear();
        std::istringstream ls(v);
        std::string id;
        while (std::getline(ls, id, ',')) {
          if (!id.empty()) c.aux_languages.push_back(id);
        }
      } else {
        throw std::invalid_argument("model config: unknown key '" + k + "'");
      }
    }
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Parameter groups

struct EncoderBlockParams {
  LayerNormParams ln_attn;
  AttentionParams attn;
  LayerNormParams ln_ffn;
  FeedForwardParams ffn;
};

struct EncoderParams {
  LinearParams conv1, conv2;  // [3F x d], [3d x d]
  LayerNormParams ln_conv;     // puts conv features on the scale of the positions
  std::vector<EncoderBlockParams> blocks;
  LayerNormParams ln_out;
};

struct DecoderBlockParams {
  LayerNormParams ln_self;
  AttentionParams self_attn;
  LayerNormParams ln_cross;
  AttentionParams cross_attn;
  LayerNormParams ln_ffn;
  FeedForwardParams ffn;
};

/// Fusion-layer parameters of one decoder block. Which fields are populated
/// depends on the mode: gated modes use branches/alpha_attn/alpha_fnn/fnn
/// (shared mode holds a single branch), addition uses pool_proj (one per
/// language) and concatenation uses concat_proj ([L*d x d]).
struct PgcaParams {
  FusionMode mode = FusionMode::full_pgca;
  std::vector<AttentionParams> branches;
  std::vector<Tensor> alpha_attn;
  Tensor alpha_fnn;
  FeedForwardParams fnn;
  std::vector<LinearParams> pool_proj;
  LinearParams concat_proj;

  std::size_t num_languages() const {
    switch (mode) {
      case FusionMode::addition: return pool_proj.size();
      case FusionMode::concatenation: return concat_proj.w.rows() / concat_proj.w.cols();
      default: return alpha_attn.size();
    }
  }
};

struct DecoderParams {
  Tensor token_embedding;  // [vocab x d]
  Tensor positions;        // [max_tgt_len x d]
  std::vector<DecoderBlockParams> blocks;
  std::vector<PgcaParams> fusion;  // empty in stage 1
  LayerNormParams ln_out;
  LinearParams out;  // [d x vocab]
};

struct ModelParams {
  EncoderParams encoder;
  DecoderParams decoder;
};

inline constexpr std::string_view kFusionPrefix = "pgca.";

inline bool is_fusion_param(std::string_view name) { return name.substr(0, kFusionPrefix.size()) == kFusionPrefix; }

inline std::string block_prefix(std::string_view stem, std::size_t i) {
  return std::string(stem) + std::to_string(i) + ".";
}

/// Registers one fusion layer's parameters under `prefix`. Gates start at zero.
inline PgcaParams init_pgca(ParamStore& store, const std::string& prefix, FusionMode mode, std::size_t num_languages,
                            std::size_t d, std::size_t d_ff, std::size_t heads, const Rng& rng) {
  if (mode == FusionMode::none) throw std::invalid_argument("init_pgca: fusion mode 'none' has no parameters");
  if (num_languages == 0) throw std::invalid_argument("init_pgca: need at least one language");
  PgcaParams p;
  p.mode = mode;
  if (has_gates(mode)) {
    const std::size_t n_branches = mode == FusionMode::shared ? 1 : num_languages;
    for (std::size_t l = 0; l < n_branches; ++l) {
      p.branches.push_back(init_attention(store, block_prefix(prefix + "branch", l), d, heads, rng));
    }
    for (std::size_t l = 0; l < num_languages; ++l) {
      p.alpha_attn.push_back(init_zeros(store, prefix + "alpha_attn" + std::to_string(l), {1}));
    }
    p.alpha_fnn = init_zeros(store, prefix + "alpha_fnn", {1});
    p.fnn = init_feed_forward(store, prefix + "fnn.", d, d_ff, rng);
  } else if (mode == FusionMode::addition) {
    for (std::size_t l = 0; l < num_languages; ++l) {
      p.pool_proj.push_back(init_linear(store, block_prefix(prefix + "pool", l), d, d, rng));
    }
  } else {
    p.concat_proj = init_linear(store, prefix + "concat.", num_languages * d, d, rng);
  }
  return p;
}

inline PgcaParams bind_pgca(const ParamStore& store, const std::string& prefix, FusionMode mode,
                            std::size_t num_languages, std::size_t heads) {
  PgcaParams p;
  p.mode = mode;
  if (has_gates(mode)) {
    const std::size_t n_branches = mode == FusionMode::shared ? 1 : num_languages;
    for (std::size_t l = 0; l < n_branches; ++l) {
      p.branches.push_back(bind_attention(store, block_prefix(prefix + "branch", l), heads));
    }
    for (std::size_t l = 0; l < num_languages; ++l) {
      p.alpha_attn.push_back(store.get(prefix + "alpha_attn" + std::to_string(l)));
    }
    p.alpha_fnn = store.get(prefix + "alpha_fnn");
    p.fnn = bind_feed_forward(store, prefix + "fnn.");
  } else if (mode == FusionMode::addition) {
    for (std::size_t l = 0; l < num_languages; ++l) p.pool_proj.push_back(bind_linear(store, block_prefix(prefix + "pool", l)));
  } else {
    p.concat_proj = bind_linear(store, prefix + "concat.");
  }
  return p;
}

/// Encoder and baseline decoder parameters (everything trained in stage 1).
inline ParamStore init_base_params(const ModelConfig& cfg, const Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d;
  ParamStore s;
  init_linear(s, "enc.conv1.", 3 * cfg.feature_bins, d, rng);
  init_linear(s, "enc.conv2.", 3 * d, d, rng);
  init_layer_norm(s, "enc.ln_conv.", d);
  for (std::size_t b = 0; b < cfg.n_enc; ++b) {
    const auto pre = block_prefix("enc.block", b);
    init_layer_norm(s, pre + "ln_attn.", d);
    init_attention(s, pre + "attn.", d, cfg.heads, rng);
    init_layer_norm(s, pre + "ln_ffn.", d);
    init_feed_forward(s, pre + "ffn.", d, cfg.d_ff, rng);
  }
  init_layer_norm(s, "enc.ln_out.", d);
  init_normal(s, "dec.tok_emb", {cfg.vocab_tgt, d}, rng);
  init_normal(s, "dec.pos_emb", {cfg.max_tgt_len, d}, rng);
  for (std::size_t b = 0; b < cfg.n_dec; ++b) {
    const auto pre = block_prefix("dec.block", b);
    init_layer_norm(s, pre + "ln_self.", d);
    init_attention(s, pre + "self_attn.", d, cfg.heads, rng);
    init_layer_norm(s, pre + "ln_cross.", d);
    init_attention(s, pre + "cross_attn.", d, cfg.heads, rng);
    init_layer_norm(s, pre + "ln_ffn.", d);
    init_feed_forward(s, pre + "ffn.", d, cfg.d_ff, rng);
  }
  init_layer_norm(s, "dec.ln_out.", d);
  init_linear(s, "dec.out.", d, cfg.vocab_tgt, rng);
  return s;
}

/// Adds one fusion layer per decoder block to `store`.
inline void init_fusion_params(ParamStore& store, const ModelConfig& cfg, const Rng& rng) {
  if (cfg.fusion == FusionMode::none) return;
  for (std::size_t b = 0; b < cfg.n_dec; ++b) {
    init_pgca(store, std::string(kFusionPrefix) + block_prefix("block", b), cfg.fusion, cfg.num_aux(), cfg.d, cfg.d_ff,
              cfg.heads, rng.split("fusion"));
  }
}

inline ParamStore init_params(const ModelConfig& cfg, const Rng& rng) {
  ParamStore s = init_base_params(cfg, rng);
  init_fusion_params(s, cfg, rng);
  return s;
}

inline ModelParams bind_params(const ModelConfig& cfg, const ParamStore& s) {
  ModelParams p;
  auto& enc = p.encoder;
  enc.conv1 = bind_linear(s, "enc.conv1.");
  enc.conv2 = bind_linear(s, "enc.conv2.");
  enc.ln_conv = bind_layer_norm(s, "enc.ln_conv.");
  for (std::size_t b = 0; b < cfg.n_enc; ++b) {
    const auto pre = block_prefix("enc.block", b);
    enc.blocks.push_back({bind_layer_norm(s, pre + "ln_attn."), bind_attention(s, pre + "attn.", cfg.heads),
                          bind_layer_norm(s, pre + "ln_ffn."), bind_feed_forward(s, pre + "ffn.")});
  }
  enc.ln_out = bind_layer_norm(s, "enc.ln_out.");
  auto& dec = p.decoder;
  dec.token_embedding = s.get("dec.tok_emb");
  dec.positions = s.get("dec.pos_emb");
  for (std::size_t b = 0; b < cfg.n_dec; ++b) {
    const auto pre = block_prefix("dec.block", b);
    dec.blocks.push_back({bind_layer_norm(s, pre + "ln_self."), bind_attention(s, pre + "self_attn.", cfg.heads),
                          bind_layer_norm(s, pre + "ln_cross."), bind_attention(s, pre + "cross_attn.", cfg.heads),
                          bind_layer_norm(s, pre + "ln_ffn."), bind_feed_forward(s, pre + "ffn.")});
    if (cfg.fusion != FusionMode::none) {
      dec.fusion.push_back(bind_pgca(s, std::string(kFusionPrefix) + block_prefix("block", b), cfg.fusion,
                                     cfg.num_aux(), cfg.heads));
    }
  }
  dec.ln_out = bind_layer_norm(s, "dec.ln_out.");
  dec.out = bind_linear(s, "dec.out.");
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes

inline Tensor encode_audio(const Tensor& x, const ModelConfig& cfg, const EncoderParams& p) {
  if (x.rank() != 2 || x.cols() != cfg.feature_bins) {
    throw ShapeError("encode_audio: expected [T x " + std::to_string(cfg.feature_bins) + "] features, got " +
                     shape_str(x.shape()));
  }
  const std::size_t t = x.rows();
  if (t > cfg.max_src_len) {
    throw ShapeError("encode_audio: " + std::to_string(t) + " frames exceed the cap of " +
                     std::to_string(cfg.max_src_len));
  }
  Tensor h = gelu(apply(p.conv1, unfold_time(x, 3)));
  h = gelu(apply(p.conv2, unfold_time(h, 3)));
  h = apply(p.ln_conv, h);
  h = add_constant(h, sinusoidal_positions(t, cfg.d));
  for (const auto& b : p.blocks) {
    Tensor n = apply(b.ln_attn, h);
    h = h + multi_head_attention(n, n, n, b.attn).out;
    h = h + apply(b.ffn, apply(b.ln_ffn, h));
  }
  return apply(p.ln_out, h);
}

/// Causal self-attention, audio cross-attention and MLP, each pre-norm with a
/// residual connection.
inline Tensor decoder_block_forward(const Tensor& y, const Tensor& h_audio, const DecoderBlockParams& p,
                                    std::size_t max_tgt_len) {
  if (y.rank() != 2 || h_audio.rank() != 2 || y.cols() != h_audio.cols()) {
    throw ShapeError("decoder block: width mismatch between " + shape_str(y.shape()) + " and " +
                     shape_str(h_audio.shape()));
  }
  if (y.rows() > max_tgt_len) {
    throw ShapeError("decoder block: " + std::to_string(y.rows()) + " positions exceed the cap of " +
                     std::to_string(max_tgt_len));
  }
  Tensor n = apply(p.ln_self, y);
  Tensor x = y + multi_head_attention(n, n, n, p.self_attn, causal_mask(y.rows())).out;
  Tensor c = apply(p.ln_cross, x);
  x = x + multi_head_attention(c, h_audio, h_audio, p.cross_attn).out;
  return x + apply(p.ffn, apply(p.ln_ffn, x));
}

/// Per-branch attention weights captured during a fusion forward pass.
struct PgcaTrace {
  std::vector<Tensor> branch_weights;  // per language, [heads x T_y x T_l]
};

inline Tensor pgca_variant_forward(FusionMode mode, const Tensor& y, std::span<const Tensor> aux,
                                   const PgcaParams& p, PgcaTrace* trace = nullptr) {
  if (mode != p.mode) {
    const bool gated_pair = has_gates(mode) && has_gates(p.mode) && (mode == FusionMode::shared) == (p.mode == FusionMode::shared);
    if (!gated_pair) {
      throw std::invalid_argument("fusion: parameters built for " + std::string(to_string(p.mode)) +
                                  " cannot run mode " + std::string(to_string(mode)));
    }
  }
  const std::size_t n_lang = p.num_languages();
  if (aux.size() != n_lang) {
    throw std::invalid_argument("fusion: expected " + std::to_string(n_lang) + " auxiliary streams, got " +
                                std::to_string(aux.size()));
  }
  if (y.rank() != 2) throw ShapeError("fusion: decoder input must be a matrix");
  const std::size_t d = y.cols();
  for (const auto& e : aux) {
    if (e.rank() != 2 || e.cols() != d) {
      throw ShapeError("fusion: auxiliary embedding " + shape_str(e.shape()) + " does not have width " +
                       std::to_string(d));
    }
  }
  if (trace) trace->branch_weights.clear();

  switch (mode) {
    case FusionMode::full_pgca:
    case FusionMode::no_tanh:
    case FusionMode::shared:
    case FusionMode::sequential: {
      const bool squash = mode != FusionMode::no_tanh;
      auto gate = [&](const Tensor& alpha) { return squash ? tanh(alpha) : alpha; };
      auto branch = [&](std::size_t l) -> const AttentionParams& { return p.branches[p.branches.size() == 1 ? 0 : l]; };
      Tensor acc = y;
      for (std::size_t l = 0; l < n_lang; ++l) {
        // Parallel modes read the block input; the sequential chain reads the running sum.
        const Tensor& query = mode == FusionMode::sequential ? acc : y;
        auto a = multi_head_attention(query, aux[l], aux[l], branch(l));
        if (trace) trace->branch_weights.push_back(a.weights);
        acc = acc + mul_scalar(a.out, gate(p.alpha_attn[l]));
      }
      return acc + mul_scalar(apply(p.fnn, acc), gate(p.alpha_fnn));
    }
    case FusionMode::addition: {
      Tensor acc = y;
      for (std::size_t l = 0; l < n_lang; ++l) {
        acc = acc + broadcast_rows(apply(p.pool_proj[l], mean_rows(aux[l])), y.rows());
      }
      return acc;
    }
    case FusionMode::concatenation: {
      std::vector<Tensor> pooled;
      for (const auto& e : aux) pooled.push_back(mean_rows(e));
      return y + broadcast_rows(apply(p.concat_proj, concat_cols(pooled)), y.rows());
    }
    case FusionMode::none: break;
  }
  throw std::invalid_argument("fusion: mode 'none' has no fusion layer");
}

/// Y' = Y + sum_l tanh(a_l) attn_l(Y, E_l, E_l);  Z = Y' + tanh(a_fnn) FNN(Y')
inline Tensor pgca_forward(const Tensor& y, std::span<const Tensor> aux, const PgcaParams& p,
                           PgcaTrace* trace = nullptr) {
  return pgca_variant_forward(FusionMode::full_pgca, y, aux, p, trace);
}

struct DecoderTrace {
  std::vector<PgcaTrace> layers;
};

/// Runs the decoder over `input_ids` (already BOS-prefixed) and returns
/// vocabulary logits, one row per input position.
inline Tensor decoder_forward(const ModelConfig& cfg, const DecoderParams& p, const Tensor& h_audio,
                              std::span<const Tensor> aux, std::span<const Token> input_ids,
                              DecoderTrace* trace = nullptr) {
  const std::size_t t = input_ids.size();
  if (t == 0 || t > cfg.max_tgt_len) {
    throw ShapeError("decoder: " + std::to_string(t) + " positions outside [1, " + std::to_string(cfg.max_tgt_len) +
                     "]");
  }
  const bool fused = !p.fusion.empty();
  if (fused && aux.size() != cfg.num_aux()) {
    throw std::invalid_argument("decoder: model fuses " + std::to_string(cfg.num_aux()) +
                                " auxiliary streams but " + std::to_string(aux.size()) + " were supplied");
  }
  if (!fused && !aux.empty()) throw std::invalid_argument("decoder: auxiliary streams given to a model without fusion");
  for (Token id : input_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_tgt) {
      throw std::out_of_range("decoder: token " + std::to_string(id) + " outside vocabulary");
    }
  }
  std::vector<Token> pos(t);
  for (std::size_t i = 0; i < t; ++i) pos[i] = static_cast<Token>(i);
  Tensor y = embedding(p.token_embedding, input_ids) + embedding(p.positions, pos);
  if (trace) trace->layers.assign(fused ? p.blocks.size() : 0, {});
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    if (fused) y = pgca_variant_forward(cfg.fusion, y, aux, p.fusion[b], trace ? &trace->layers[b] : nullptr);
    y = decoder_block_forward(y, h_audio, p.blocks[b], cfg.max_tgt_len);
  }
  return apply(p.out, apply(p.ln_out, y));
}

/// [BOS, t_0, ..., t_{n-1}]
inline TokenSeq teacher_inputs(const TokenSeq& target, const ModelConfig& cfg) {
  TokenSeq in;
  in.reserve(target.size() + 1);
  in.push_back(cfg.bos());
  in.insert(in.end(), target.begin(), target.end());
  return in;
}

/// [t_0, ..., t_{n-1}, EOS]
inline TokenSeq teacher_outputs(const TokenSeq& target, const ModelConfig& cfg) {
  TokenSeq out(target);
  out.push_back(cfg.eos());
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints and freezing

struct ModelCheckpoint {
  ModelConfig config;
  ParamStore params;
  int stage = 1;
  std::vector<std::string> frozen;  // names excluded from updates
  OptState optimizer;
  std::uint64_t step = 0;

  ModelCheckpoint clone() const {
    return ModelCheckpoint{config, params.clone(), stage, frozen, optimizer, step};
  }

  std::vector<std::string> trainable() const {
    std::set<std::string> f(frozen.begin(), frozen.end());
    std::vector<std::string> out;
    for (const auto& [n, _] : params) {
      if (!f.count(n)) out.push_back(n);
    }
    return out;
  }
};

/// Stage 1 freezes nothing. Stage 2 freezes every encoder, embedding,
/// baseline-decoder and output parameter, leaving only the fusion layers.
inline std::vector<std::string> freeze_plan(int stage, const ModelConfig& cfg) {
  if (stage != 1 && stage != 2) throw std::invalid_argument("freeze_plan: stage must be 1 or 2");
  if (stage == 1) return {};
  std::vector<std::string> out;
  for (const auto& [n, _] : init_params(cfg, Rng(0))) {
    if (!is_fusion_param(n)) out.push_back(n);
  }
  return out;
}

/// Bound view over a checkpoint's parameters; shares storage with it.
class Model {
 public:
  explicit Model(const ModelCheckpoint& ckpt) : cfg_(ckpt.config), params_(bind_params(ckpt.config, ckpt.params)) {}
  Model(ModelConfig cfg, const ParamStore& store) : cfg_(std::move(cfg)), params_(bind_params(cfg_, store)) {}

  const ModelConfig& config() const { return cfg_; }
  const ModelParams& params() const { return params_; }

  Tensor encode(const Tensor& audio) const { return encode_audio(audio, cfg_, params_.encoder); }

  Tensor decode(const Tensor& h_audio, std::span<const Tensor> aux, std::span<const Token> input_ids,
                DecoderTrace* trace = nullptr) const {
    return decoder_forward(cfg_, params_.decoder, h_audio, aux, input_ids, trace);
  }

  /// Teacher-forced logits, [(|target| + 1) x vocab].
  Tensor forward(const Tensor& audio, std::span<const Tensor> aux, const TokenSeq& target,
                 DecoderTrace* trace = nullptr) const {
    const auto in = teacher_inputs(target, cfg_);
    return decode(encode(audio), aux, in, trace);
  }

 private:
  ModelConfig cfg_;
  ModelParams params_;
};

inline ModelCheckpoint make_stage1_checkpoint(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.fusion != FusionMode::none) throw std::invalid_argument("stage 1 model must not have a fusion mode");
  ModelCheckpoint c;
  c.config = cfg;
  c.params = init_base_params(cfg, Rng(seed).split("model"));
  c.stage = 1;
  return c;
}

/// Fresh stage-2 model on top of a stage-1 checkpoint: copies every stage-1
/// parameter, adds zero-gated fusion layers and freezes the rest.
inline ModelCheckpoint make_stage2_checkpoint(const ModelCheckpoint& stage1, FusionMode mode,
                                              const std::vector<std::string>& languages, std::uint64_t seed) {
  if (stage1.stage != 1) throw std::invalid_argument("stage 2 must start from a stage-1 checkpoint");
  if (mode == FusionMode::none) throw std::invalid_argument("stage 2 needs a fusion mode other than 'none'");
  ModelCheckpoint c;
  c.config = stage1.config;
  c.config.fusion = mode;
  c.config.aux_languages = languages;
  c.config.validate();
  c.params = stage1.params.clone();
  init_fusion_params(c.params, c.config, Rng(seed).split("model"));
  c.stage = 2;
  c.frozen = freeze_plan(2, c.config);
  c.step = 0;
  return c;
}

}  // namespace pgca
