// Experiment driver: turns an ExperimentConfig into a run directory of
// datasets, checkpoints, logs and report tables, with a checksummed manifest.
//
// Layout under the output directory:
//   config.resolved.ini
//   data/{train,test}.bin, data/summary.csv
//   stage1/{checkpoint.bin,log.csv,cer_report.csv}
//   <system>/{checkpoint.bin,log.csv,cer_report.csv,gate_report.csv}
//   summary tables (summary.csv, ablation.csv, single_language.csv, curve.csv, ...)
//   manifest.csv   artifact,bytes,checksum,status
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgca/aux_embed.hpp"
#include "pgca/binary_io.hpp"
#include "pgca/checkpoint_io.hpp"
#include "pgca/config.hpp"
#include "pgca/data.hpp"
#include "pgca/eval.hpp"
#include "pgca/reports.hpp"
#include "pgca/text.hpp"
#include "pgca/training.hpp"

namespace pgca {

/// An error tagged with the run phase that raised it.
class PhaseError : public std::runtime_error {
 public:
  PhaseError(std::string phase, const std::string& what)
      : std::runtime_error(phase + ": " + what), phase_(std::move(phase)) {}
  const std::string& phase() const { return phase_; }

 private:
  std::string phase_;
};

using Logger = std::function<void(const std::string&)>;

inline std::string crc_hex(std::string_view bytes) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc32_of(bytes));
  return buf;
}

struct ManifestEntry {
  std::string artifact;  // path relative to the run directory
  std::uint64_t bytes = 0;
  std::string checksum;  // CRC-32, hex
  std::string status;    // complete | incomplete | failed
};

inline constexpr const char* kManifestName = "manifest.csv";

/// Writes artifacts under a run directory and keeps the manifest in step.
class RunWriter {
 public:
  explicit RunWriter(std::filesystem::path root) : root_(std::move(root)) { std::filesystem::create_directories(root_); }

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& rel) const { return root_ / rel; }

  void put(const std::string& rel, const std::string& bytes) {
    const auto p = path(rel);
    std::filesystem::create_directories(p.parent_path());
    write_file(p.string(), bytes);
    record(rel, bytes);
  }

  /// Records a file that already exists in the run directory.
  void record_existing(const std::string& rel) { record(rel, read_file(path(rel).string())); }

  void write_manifest(const std::string& failed_phase = {}) const {
    std::ostringstream os;
    os << "artifact,bytes,checksum,status\n";
    const std::string status = failed_phase.empty() ? "complete" : "incomplete";
    for (const auto& e : entries_) os << e.artifact << "," << e.bytes << "," << e.checksum << "," << status << "\n";
    if (!failed_phase.empty()) os << "phase:" << failed_phase << ",0,-,failed\n";
    write_file(path(kManifestName).string(), os.str());
  }

  const std::vector<ManifestEntry>& entries() const { return entries_; }

 private:
  void record(const std::string& rel, const std::string& bytes) {
    for (auto& e : entries_) {
      if (e.artifact == rel) {
        e = {rel, bytes.size(), crc_hex(bytes), "complete"};
        return;
      }
    }
    entries_.push_back({rel, bytes.size(), crc_hex(bytes), "complete"});
  }

  std::filesystem::path root_;
  std::vector<ManifestEntry> entries_;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::istringstream is(read_file((dir / kManifestName).string()));
  std::string line;
  std::getline(is, line);
  if (line != "artifact,bytes,checksum,status") throw FormatError("manifest: unexpected header");
  std::vector<ManifestEntry> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto parts = split_list(line);
    if (parts.size() != 4) throw FormatError("manifest: malformed row '" + line + "'");
    out.push_back({parts[0], std::stoull(parts[1]), parts[2], parts[3]});
  }
  return out;
}

/// Checks every manifest row against the files on disk. Returns one message
/// per problem; empty means the run directory is intact and complete.
inline std::vector<std::string> verify_run(const std::filesystem::path& dir) {
  std::vector<std::string> problems;
  std::vector<ManifestEntry> rows;
  try {
    rows = read_manifest(dir);
  } catch (const std::exception& e) {
    return {std::string("cannot read manifest: ") + e.what()};
  }
  for (const auto& r : rows) {
    if (r.status == "failed") {
      problems.push_back("run failed in " + r.artifact);
      continue;
    }
    if (r.status != "complete") problems.push_back(r.artifact + ": status " + r.status);
    const auto p = dir / r.artifact;
    if (!std::filesystem::exists(p)) {
      problems.push_back(r.artifact + ": missing");
      continue;
    }
    const std::string bytes = read_file(p.string());
    if (bytes.size() != r.bytes) problems.push_back(r.artifact + ": size " + std::to_string(bytes.size()) + " != " + std::to_string(r.bytes));
    if (crc_hex(bytes) != r.checksum) problems.push_back(r.artifact + ": checksum mismatch");
  }
  return problems;
}

// ---------------------------------------------------------------------------
// Analyses that need training

/// Mean cosine between sentence vectors of the target corpus and its clean
/// (noise-free) translation into `lang`.
inline double language_proximity(const Dataset& d, const LanguageBank& bank, const std::string& lang) {
  const auto& spec = bank.get(lang);
  std::vector<TokenSeq> targets, translations;
  for (const auto& u : d.utterances) {
    targets.push_back(u.target);
    translations.push_back(spec.cipher.encode(u.target));
  }
  return cls_proximity(targets, bank.target(), translations, spec, bank.embedder());
}

/// One stage-2 run per prefix of `order`, all with the same budget and seed.
inline std::vector<CurvePoint> incremental_experiment(
    const ModelCheckpoint& stage1, const Dataset& train_set, const Dataset& test_set, const LanguageBank& bank,
    const std::vector<std::string>& order, const TrainHyper& hp,
    const std::function<void(const CurvePoint&, const TrainResult&)>& on_run = {}) {
  if (order.empty()) throw std::invalid_argument("incremental_experiment: empty language order");
  std::vector<CurvePoint> out;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    const std::vector<std::string> langs(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    TrainResult r = train_stage2(stage1, FusionMode::full_pgca, langs, train_set, test_set, bank, hp);
    CurvePoint p{k, langs, r.best_cer, extract_gates(r.best)};
    if (on_run) on_run(p, r);
    out.push_back(std::move(p));
  }
  return out;
}

/// The layer whose gate for `lang` has the largest magnitude (first on ties).
inline std::size_t representative_layer(const GateReport& g, const std::string& lang) {
  std::size_t li = g.languages.size();
  for (std::size_t i = 0; i < g.languages.size(); ++i) {
    if (g.languages[i] == lang) li = i;
  }
  if (li == g.languages.size()) throw std::out_of_range("no gate for language '" + lang + "'");
  std::size_t best = 0;
  for (std::size_t b = 1; b < g.attn.size(); ++b) {
    if (std::abs(g.attn[b][li]) > std::abs(g.attn[best][li])) best = b;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Runs

inline std::string system_tag(FusionMode mode, const std::vector<std::string>& langs) {
  return std::string(to_string(mode)) + "_" + join(langs, "+");
}

struct RunSummary {
  std::filesystem::path root;
  double baseline_cer = 0.0;
  std::vector<SystemScore> scores;
};

class ExperimentRunner {
 public:
  ExperimentRunner(ExperimentConfig cfg, Logger log = {})
      : cfg_(std::move(cfg)), log_(std::move(log)), out_(cfg_.out_dir),
        bank_(cfg_.corpus.symbols, cfg_.model.d, cfg_.corpus.seed, cfg_.corpus.languages) {
    cfg_.validate();
  }

  RunWriter& writer() { return out_; }
  const Corpus& corpus() const { return corpus_; }
  const LanguageBank& bank() const { return bank_; }

  /// Runs `body` as a named phase; failures are tagged and the manifest is
  /// written with the run marked incomplete.
  template <class F>
  auto phase(const std::string& name, F&& body) {
    note("[" + name + "]");
    try {
      return body();
    } catch (const PhaseError&) {
      throw;
    } catch (const std::exception& e) {
      out_.write_manifest(name);
      throw PhaseError(name, e.what());
    }
  }

  void write_config() {
    phase("config", [&] { out_.put("config.resolved.ini", cfg_.dump()); });
  }

  /// Loads data/{train,test}.bin when they exist and match the corpus
  /// config, otherwise generates and writes them.
  void load_or_generate_data() {
    phase("gen-data", [&] {
      const auto train_p = out_.path("data/train.bin"), test_p = out_.path("data/test.bin");
      bool loaded = false;
      if (std::filesystem::exists(train_p) && std::filesystem::exists(test_p)) {
        try {
          Corpus c{load_dataset(train_p.string()), load_dataset(test_p.string())};
          if (c.train.config_digest == cfg_.corpus.digest() && c.test.config_digest == cfg_.corpus.digest()) {
            corpus_ = std::move(c);
            loaded = true;
            out_.record_existing("data/train.bin");
            out_.record_existing("data/test.bin");
            note("loaded existing datasets");
          }
        } catch (const FormatError&) {
          loaded = false;
        }
      }
      if (!loaded) {
        corpus_ = gen_corpus(cfg_.corpus);
        out_.put("data/train.bin", encode_dataset(corpus_.train));
        out_.put("data/test.bin", encode_dataset(corpus_.test));
      }
      out_.put("data/summary.csv", corpus_summary_csv(corpus_));
    });
  }

  void train_stage1_phase() {
    phase("stage1", [&] {
      stage1_ = train_stage1(cfg_.base_model(), corpus_.train, corpus_.test, cfg_.stage1, progress("stage1"));
      out_.put("stage1/checkpoint.bin", encode_checkpoint(stage1_.best));
      out_.put("stage1/log.csv", stage1_.log.to_csv());
      const CerReport r = evaluate(stage1_.best, corpus_.test);
      out_.put("stage1/cer_report.csv", cer_report_csv(r));
      baseline_ = r.cer;
      note("stage1 best step " + std::to_string(stage1_.best_step) + ", test CER " + format_double(baseline_));
    });
  }

  /// Trains and scores one stage-2 system, writing its artifacts under
  /// `dir` (default: the system tag).
  SystemScore stage2_system(FusionMode mode, const std::vector<std::string>& langs, const std::string& label,
                            std::string dir = {}) {
    const std::string tag = system_tag(mode, langs);
    if (dir.empty()) dir = tag;
    return phase("stage2:" + tag, [&] {
      TrainResult r = train_stage2(stage1_.best, mode, langs, corpus_.train, corpus_.test, bank_, cfg_.stage2,
                                   progress(tag));
      out_.put(dir + "/checkpoint.bin", encode_checkpoint(r.best));
      out_.put(dir + "/log.csv", r.log.to_csv());
      const CerReport rep = evaluate(r.best, corpus_.test, &bank_);
      out_.put(dir + "/cer_report.csv", cer_report_csv(rep));
      if (has_gates(mode)) out_.put(dir + "/gate_report.csv", gate_report_csv(extract_gates(r.best)));
      runs_[tag] = std::move(r);
      note(tag + " test CER " + format_double(rep.cer));
      return SystemScore{label, langs, rep.cer, relative_reduction(baseline_, rep.cer)};
    });
  }

  /// Heatmaps for the first analysis.heatmap_utterances test utterances and
  /// every fused language, plus a diagonal-alignment summary.
  void heatmaps(const ModelCheckpoint& ckpt, const std::string& dir) {
    phase("analysis:" + dir, [&] {
      const GateReport g = extract_gates(ckpt);
      out_.put(dir + "/gate_report.csv", gate_report_csv(g));
      std::ostringstream summary;
      summary << "language,layer,utterances,diagonal_fraction\n";
      const std::size_t n = std::min(cfg_.analysis.heatmap_utterances, corpus_.test.size());
      for (const auto& lang : ckpt.config.aux_languages) {
        const std::size_t layer = cfg_.analysis.heatmap_layer.value_or(representative_layer(g, lang));
        std::size_t hits = 0, rows = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto& u = corpus_.test.utterances[i];
          const Heatmap hm = attention_heatmap(ckpt, u, layer, lang, bank_);
          out_.put(dir + "/heatmaps/" + lang + "_u" + std::to_string(u.id) + ".csv", heatmap_csv(hm));
          const std::size_t len = u.target.size();
          hits += static_cast<std::size_t>(std::lround(hm.diagonal_fraction(len) * static_cast<double>(len)));
          rows += len;
        }
        summary << lang << "," << layer << "," << n << ","
                << format_double(rows ? static_cast<double>(hits) / static_cast<double>(rows) : 0.0) << "\n";
      }
      out_.put(dir + "/heatmap_summary.csv", summary.str());
    });
  }

  RunSummary run_gen_data() {
    write_config();
    load_or_generate_data();
    out_.write_manifest();
    return {out_.root(), 0.0, {}};
  }

  /// Stage 1, then stage 2 with the configured fusion mode and languages.
  RunSummary run_train(bool with_analysis) {
    write_config();
    load_or_generate_data();
    train_stage1_phase();
    RunSummary s{out_.root(), baseline_, {{"baseline", {}, baseline_, 0.0}}};
    if (cfg_.fusion != FusionMode::none) {
      s.scores.push_back(stage2_system(cfg_.fusion, cfg_.languages, std::string(to_string(cfg_.fusion))));
      if (with_analysis && has_gates(cfg_.fusion)) {
        const auto tag = system_tag(cfg_.fusion, cfg_.languages);
        heatmaps(runs_.at(tag).best, tag);
      }
    }
    phase("report", [&] { out_.put("summary.csv", score_table_csv(s.scores)); });
    out_.write_manifest();
    return s;
  }

  /// Every fusion variant on the configured languages under one budget.
  RunSummary run_ablation() {
    write_config();
    load_or_generate_data();
    train_stage1_phase();
    RunSummary s{out_.root(), baseline_, {{"baseline", {}, baseline_, 0.0}}};
    for (FusionMode m : {FusionMode::full_pgca, FusionMode::no_tanh, FusionMode::sequential, FusionMode::shared,
                         FusionMode::addition, FusionMode::concatenation}) {
      s.scores.push_back(stage2_system(m, cfg_.languages, std::string(to_string(m))));
    }
    phase("report", [&] { out_.put("ablation.csv", score_table_csv(s.scores)); });
    out_.write_manifest();
    return s;
  }

  /// Single-language runs for every language, then the incremental curve in
  /// the configured order (default: best single-language CER first).
  RunSummary run_sweep() {
    write_config();
    load_or_generate_data();
    train_stage1_phase();
    RunSummary s{out_.root(), baseline_, {{"baseline", {}, baseline_, 0.0}}};
    const auto singles = single_language_phase(s);
    std::vector<std::string> order = cfg_.analysis.sweep_order;
    if (order.empty()) order = select_topk(singles, SelectMetric::cer, singles.size());
    std::vector<CurvePoint> curve;
    for (std::size_t k = 1; k <= order.size(); ++k) {
      const std::vector<std::string> langs(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
      const auto sc = stage2_system(FusionMode::full_pgca, langs, "k=" + std::to_string(k),
                                    "curve/k" + std::to_string(k));
      curve.push_back({k, langs, sc.cer, extract_gates(runs_.at(system_tag(FusionMode::full_pgca, langs)).best)});
      s.scores.push_back(sc);
    }
    phase("report", [&] {
      out_.put("curve.csv", curve_csv(curve));
      out_.put("curve_gates.csv", curve_gates_csv(curve));
    });
    out_.write_manifest();
    return s;
  }

  /// Top-k language selection by single-language CER, by proximity to the
  /// target, and by gate value in an all-language run; one run per strategy.
  RunSummary run_selection() {
    write_config();
    load_or_generate_data();
    train_stage1_phase();
    RunSummary s{out_.root(), baseline_, {{"baseline", {}, baseline_, 0.0}}};
    const auto singles = single_language_phase(s);

    std::map<std::string, double> proximity;
    phase("proximity", [&] {
      std::vector<LanguageScore> rows;
      for (const auto& l : cfg_.corpus.languages) {
        proximity[l.id] = language_proximity(corpus_.test, bank_, l.id);
        rows.push_back({l.id, l.noise_rate, l.offset_scale, proximity[l.id]});
      }
      out_.put("proximity.csv", language_table_csv(rows, "proximity"));
    });

    std::vector<std::string> all;
    for (const auto& l : cfg_.corpus.languages) all.push_back(l.id);
    const auto all_score = stage2_system(FusionMode::full_pgca, all, "all");
    s.scores.push_back(all_score);
    std::map<std::string, double> gating;
    {
      const GateReport g = extract_gates(runs_.at(system_tag(FusionMode::full_pgca, all)).best);
      for (const auto& l : all) gating[l] = g.mean_gate(l);
    }

    const std::size_t k = cfg_.analysis.select_k;
    for (const auto& [metric, scores] : std::vector<std::pair<SelectMetric, const std::map<std::string, double>*>>{
             {SelectMetric::cer, &singles}, {SelectMetric::proximity, &proximity}, {SelectMetric::gating, &gating}}) {
      const auto langs = select_topk(*scores, metric, k);
      const std::string tag = system_tag(FusionMode::full_pgca, langs);
      SystemScore sc;
      if (runs_.count(tag)) {
        const CerReport rep = evaluate(runs_.at(tag).best, corpus_.test, &bank_);
        sc = SystemScore{"", langs, rep.cer, relative_reduction(baseline_, rep.cer)};
      } else {
        sc = stage2_system(FusionMode::full_pgca, langs, "");
      }
      sc.system = "top" + std::to_string(k) + "_" + to_string(metric);
      s.scores.push_back(sc);
    }
    phase("report", [&] { out_.put("selection.csv", score_table_csv(s.scores)); });
    out_.write_manifest();
    return s;
  }

  RunSummary run_preset(Preset p) {
    switch (p) {
      case Preset::baseline: return run_train(true);
      case Preset::ablation: return run_ablation();
      case Preset::sweep: return run_sweep();
      case Preset::selection: return run_selection();
    }
    throw std::invalid_argument("unknown preset");
  }

 private:
  std::map<std::string, double> single_language_phase(RunSummary& s) {
    std::map<std::string, double> singles;
    std::vector<LanguageScore> rows;
    for (const auto& l : cfg_.corpus.languages) {
      const auto sc = stage2_system(FusionMode::full_pgca, {l.id}, l.id);
      singles[l.id] = sc.cer;
      rows.push_back({l.id, l.noise_rate, l.offset_scale, sc.cer});
      s.scores.push_back(sc);
    }
    phase("report", [&] { out_.put("single_language.csv", language_table_csv(rows, "cer")); });
    return singles;
  }

  void note(const std::string& msg) const {
    if (log_) log_(msg);
  }

  StepCallback progress(const std::string& tag) const {
    if (!log_) return {};
    return [this, tag](const LogRow& r) {
      if (r.eval_cer) {
        log_(tag + " step " + std::to_string(r.step) + (r.loss ? " loss " + format_double(*r.loss) : "") +
             " eval_cer " + format_double(*r.eval_cer));
      }
    };
  }

  ExperimentConfig cfg_;
  Logger log_;
  RunWriter out_;
  LanguageBank bank_;
  Corpus corpus_;
  TrainResult stage1_;
  double baseline_ = 0.0;
  std::map<std::string, TrainResult> runs_;
};

inline RunSummary run_experiment(const ExperimentConfig& cfg, const Logger& log = {}) {
  ExperimentRunner runner(cfg, log);
  return runner.run_preset(cfg.preset);
}

}  // namespace pgca
