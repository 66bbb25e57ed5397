// Two-stage trainer. Stage 1 updates the whole encoder-decoder; stage 2
// starts from the best stage-1 checkpoint and updates only the fusion layers.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgca/aux_embed.hpp"
#include "pgca/data.hpp"
#include "pgca/eval.hpp"
#include "pgca/model.hpp"
#include "pgca/optim.hpp"
#include "pgca/tensor.hpp"
#include "pgca/text.hpp"

namespace pgca {

struct LogRow {
  std::size_t step = 0;
  double lr = 0.0;
  std::optional<double> loss;
  std::optional<double> eval_cer;
  std::vector<double> gates;  // same order as TrainLog::gate_columns
};

struct TrainLog {
  std::vector<std::string> gate_columns;
  std::vector<LogRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os << "step,lr,loss,eval_cer";
    for (const auto& c : gate_columns) os << "," << c;
    os << "\n";
    for (const auto& r : rows) {
      os << r.step << "," << format_double(r.lr) << "," << (r.loss ? format_double(*r.loss) : "") << ","
         << (r.eval_cer ? format_double(*r.eval_cer) : "");
      for (double g : r.gates) os << "," << format_double(g);
      os << "\n";
    }
    return os.str();
  }
};

struct TrainResult {
  ModelCheckpoint best;   // lowest held-out CER, earliest on ties
  ModelCheckpoint last;
  std::size_t best_step = 0;
  double best_cer = 0.0;
  TrainLog log;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, ModelCheckpoint last_good, std::size_t step)
      : std::runtime_error(what), last_good_(std::move(last_good)), step_(step) {}
  const ModelCheckpoint& last_good() const { return last_good_; }
  std::size_t step() const { return step_; }

 private:
  ModelCheckpoint last_good_;
  std::size_t step_;
};

/// Raised when a parameter in the frozen manifest changes during training.
class ManifestViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Teacher-forcing cross-entropy averaged over output positions.
inline Tensor cross_entropy_loss(const Tensor& logits, const TokenSeq& targets) {
  return cross_entropy(logits, targets);
}

/// Gate column names of the training log: gate_attn_b{block}_{lang}, then
/// gate_fnn_b{block}, block by block.
inline std::vector<std::string> gate_columns(const ModelConfig& cfg) {
  std::vector<std::string> out;
  if (!has_gates(cfg.fusion)) return out;
  for (std::size_t b = 0; b < cfg.n_dec; ++b) {
    for (const auto& l : cfg.aux_languages) out.push_back("gate_attn_b" + std::to_string(b) + "_" + l);
    out.push_back("gate_fnn_b" + std::to_string(b));
  }
  return out;
}

inline std::vector<double> gate_values(const ModelCheckpoint& ckpt) {
  std::vector<double> out;
  if (!has_gates(ckpt.config.fusion)) return out;
  const GateReport g = extract_gates(ckpt);
  for (std::size_t b = 0; b < g.attn.size(); ++b) {
    out.insert(out.end(), g.attn[b].begin(), g.attn[b].end());
    out.push_back(g.fnn[b]);
  }
  return out;
}

namespace detail {

// One training or evaluation example with everything the frozen parts of
// the model would recompute every step already materialised.
struct Prepared {
  std::uint64_t id = 0;
  Tensor audio;             // used when the encoder is trainable
  Tensor h;                 // cached encoder output when it is frozen
  std::vector<Tensor> aux;  // auxiliary embeddings, branch order
  TokenSeq target;
  TokenSeq input;   // BOS + target
  TokenSeq output;  // target + EOS
};

inline std::vector<Prepared> prepare(const Dataset& d, const ModelCheckpoint& ckpt, const LanguageBank* bank,
                                     bool cache_encoder) {
  const auto& cfg = ckpt.config;
  std::vector<Prepared> out;
  out.reserve(d.size());
  const Model model(ckpt);
  NoGradGuard ng;
  for (const auto& u : d.utterances) {
    check_compatible(ckpt, u, bank);
    Prepared p;
    p.id = u.id;
    p.audio = u.audio;
    if (cache_encoder) p.h = model.encode(u.audio);
    if (cfg.num_aux()) p.aux = aux_streams(u, cfg, *bank);
    p.target = u.target;
    p.input = teacher_inputs(u.target, cfg);
    p.output = teacher_outputs(u.target, cfg);
    out.push_back(std::move(p));
  }
  return out;
}

inline double prepared_cer(const Model& model, const std::vector<Prepared>& data) {
  NoGradGuard ng;
  CerReport r;
  for (const auto& p : data) {
    const Tensor h = p.h.defined() ? p.h : model.encode(p.audio);
    r.add(p.id, cer(p.target, teacher_forcing_hypothesis(model, h, p.aux, p.target)));
  }
  return r.cer;
}

// Snapshot of the frozen parameters for the per-step bitwise check.
inline ParamStore frozen_snapshot(const ModelCheckpoint& ckpt) {
  ParamStore s;
  for (const auto& n : ckpt.frozen) s.add(n, ckpt.params.get(n).clone());
  return s;
}

inline void check_frozen(const ModelCheckpoint& ckpt, const ParamStore& snapshot, std::size_t step) {
  for (const auto& [name, t] : snapshot) {
    const auto a = t.data();
    const auto b = ckpt.params.get(name).data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) {
        throw ManifestViolation("frozen parameter '" + name + "' changed at step " + std::to_string(step));
      }
    }
  }
}

}  // namespace detail

/// Optional per-step observer, e.g. for progress output.
using StepCallback = std::function<void(const LogRow&)>;

/// Runs hp.total_steps AdamW updates on `init`. The held-out set is scored at
/// step 0, every hp.eval_every steps and at the final step; the best-scoring
/// snapshot is returned alongside the final one.
inline TrainResult train(const ModelCheckpoint& init, const Dataset& train_set, const Dataset& eval_set,
                         const TrainHyper& hp, const LanguageBank* bank = nullptr, const StepCallback& on_step = {}) {
  hp.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (eval_set.empty()) throw std::invalid_argument("train: empty evaluation set");
  if (hp.stage != init.stage) {
    throw std::invalid_argument("train: hyperparameters for stage " + std::to_string(hp.stage) +
                                " given a stage-" + std::to_string(init.stage) + " checkpoint");
  }

  ModelCheckpoint ckpt = init.clone();
  const std::vector<std::string> trainable = ckpt.trainable();
  if (trainable.empty()) throw std::invalid_argument("train: nothing to train");
  const bool encoder_frozen = std::any_of(ckpt.frozen.begin(), ckpt.frozen.end(),
                                          [](const std::string& n) { return n.rfind("enc.", 0) == 0; });
  for (auto& [name, t] : ckpt.params) t.set_requires_grad(false);
  for (const auto& n : trainable) ckpt.params.get(n).set_requires_grad(true);

  const auto train_data = detail::prepare(train_set, ckpt, bank, encoder_frozen);
  const auto eval_data = detail::prepare(eval_set, ckpt, bank, encoder_frozen);
  const ParamStore frozen = detail::frozen_snapshot(ckpt);
  const Model model(ckpt);

  TrainResult res;
  res.log.gate_columns = gate_columns(ckpt.config);
  auto snapshot = [&]() {
    ModelCheckpoint c = ckpt.clone();
    for (auto& [name, t] : c.params) t.set_requires_grad(true);
    return c;
  };
  auto consider = [&](std::size_t step, double c) {
    if (step == 0 || c < res.best_cer) {
      res.best_cer = c;
      res.best_step = step;
      res.best = snapshot();
    }
  };

  {
    const double c0 = detail::prepared_cer(model, eval_data);
    consider(0, c0);
    LogRow row{0, lr_schedule(0, hp), std::nullopt, c0, gate_values(ckpt)};
    res.log.rows.push_back(row);
    if (on_step) on_step(row);
  }

  const Rng batch_rng = Rng(hp.seed).split("batches");
  std::vector<std::size_t> order;
  std::size_t cursor = 0, epoch = 0;
  auto next_index = [&]() {
    if (cursor == order.size()) {
      order.resize(train_data.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng r = batch_rng.split(epoch++);
      r.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  for (std::size_t step = 1; step <= hp.total_steps; ++step) {
    const double lr = lr_schedule(step - 1, hp);
    std::vector<std::size_t> batch(hp.batch_size);
    std::size_t tokens = 0;
    for (auto& i : batch) {
      i = next_index();
      tokens += train_data[i].output.size();
    }
    const double inv = 1.0 / static_cast<double>(tokens);
    double loss = 0.0;
    ckpt.params.zero_grad();
    auto diverged = [&](const std::string& why) {
      ckpt.params.zero_grad();
      return DivergenceError("train: " + why + " at step " + std::to_string(step), snapshot(), step - 1);
    };
    try {
      for (std::size_t i : batch) {
        const auto& p = train_data[i];
        const Tensor h = encoder_frozen ? p.h : model.encode(p.audio);
        const Tensor l = scale(cross_entropy_sum(model.decode(h, p.aux, p.input), p.output), inv);
        loss += l.item();
        if (!std::isfinite(loss)) throw diverged("loss is not finite");
        backward(l);
      }
    } catch (const NumericError& e) {
      throw diverged(e.what());
    }
    clip_grad_norm(ckpt.params, trainable, hp.clip_norm);
    // Kept so an update that overflows the weights can be undone.
    std::vector<std::vector<double>> before;
    before.reserve(trainable.size());
    for (const auto& n : trainable) { const auto d = ckpt.params.get(n).data(); before.emplace_back(d.begin(), d.end()); }
    const OptState opt_before = ckpt.optimizer;
    try {
      adamw_step(ckpt.params, trainable, ckpt.optimizer, lr, hp);
    } catch (const NumericError& e) {
      throw diverged(e.what());
    }
    for (std::size_t k = 0; k < trainable.size(); ++k) {
      auto w = ckpt.params.get(trainable[k]).mutable_data();
      if (std::all_of(w.begin(), w.end(), [](double x) { return std::isfinite(x); })) continue;
      for (std::size_t j = 0; j < trainable.size(); ++j) {
        auto dst = ckpt.params.get(trainable[j]).mutable_data();
        std::copy(before[j].begin(), before[j].end(), dst.begin());
      }
      ckpt.optimizer = opt_before;
      throw diverged("non-finite weights in '" + trainable[k] + "'");
    }
    ckpt.step = step;
    detail::check_frozen(ckpt, frozen, step);

    LogRow row{step, lr, loss, std::nullopt, gate_values(ckpt)};
    if (step % hp.eval_every == 0 || step == hp.total_steps) {
      row.eval_cer = detail::prepared_cer(model, eval_data);
      consider(step, *row.eval_cer);
    }
    res.log.rows.push_back(row);
    if (on_step) on_step(row);
  }
  ckpt.params.zero_grad();
  res.last = snapshot();
  return res;
}

inline TrainResult train_stage1(const ModelConfig& cfg, const Dataset& train_set, const Dataset& eval_set,
                                const TrainHyper& hp, const StepCallback& on_step = {}) {
  if (hp.stage != 1) throw std::invalid_argument("train_stage1: hyperparameters are not for stage 1");
  return train(make_stage1_checkpoint(cfg, hp.seed), train_set, eval_set, hp, nullptr, on_step);
}

inline TrainResult train_stage2(const ModelCheckpoint& stage1, FusionMode mode,
                                const std::vector<std::string>& languages, const Dataset& train_set,
                                const Dataset& eval_set, const LanguageBank& bank, const TrainHyper& hp,
                                const StepCallback& on_step = {}) {
  if (hp.stage != 2) throw std::invalid_argument("train_stage2: hyperparameters are not for stage 2");
  for (const auto& l : languages) {
    if (!bank.contains(l)) throw std::invalid_argument("train_stage2: unknown auxiliary language '" + l + "'");
  }
  ModelCheckpoint s1 = stage1.clone();
  s1.optimizer = {};
  s1.step = 0;
  return train(make_stage2_checkpoint(s1, mode, languages, hp.seed), train_set, eval_set, hp, &bank, on_step);
}

}  // namespace pgca
