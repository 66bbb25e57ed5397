// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   acceptance [--workdir DIR] [--only N[,N...]]
#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "oracles.hpp"

using namespace pgca;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and thresholds.
constexpr double kIdentityTol = 1e-9;
constexpr std::size_t kIdentityUtterances = 50;
constexpr double kOracleTol = 1e-9;
constexpr int kOracleConfigs = 100;
constexpr double kGradEps = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr int kCerPairs = 1000;
constexpr double kRelTarget = 14.77;
constexpr double kRelTolPp = 0.01;
constexpr double kMinRelReduction = 0.10;
constexpr double kMinDiagonal = 0.80;
constexpr std::size_t kHeatmapUtterances = 20;
constexpr std::uint64_t kSeed = 1;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << x;
  return os.str();
}

Tensor random_tensor(Shape shape, Rng& r, double scale = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = scale * r.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

void jitter(ModelCheckpoint& c, Rng& r, double s, bool fusion_only) {
  for (auto& [n, t] : c.params) {
    if (fusion_only && !is_fusion_param(n)) continue;
    for (double& x : t.mutable_data()) x += s * r.normal();
  }
}

// 1
Outcome zero_init_identity() {
  CorpusConfig cc;
  cc.n_train = 1;
  cc.n_test = kIdentityUtterances;
  cc.seed = 11;
  const Corpus corpus = gen_corpus(cc);
  ExperimentConfig ec;
  const ModelConfig mc = ec.base_model();
  const LanguageBank bank(cc.symbols, mc.d, cc.seed, cc.languages);
  auto s1 = make_stage1_checkpoint(mc, 11);
  Rng r(12);
  jitter(s1, r, 0.05, false);  // a parent that is not at its own init
  const Model base(s1);
  double worst = 0.0;
  NoGradGuard ng;
  for (FusionMode m : {FusionMode::full_pgca, FusionMode::no_tanh, FusionMode::sequential, FusionMode::shared}) {
    const auto s2 = make_stage2_checkpoint(s1, m, {"lang0", "lang2", "lang4"}, 13);
    const Model fused(s2);
    for (const auto& u : corpus.test.utterances) {
      const Tensor a = base.forward(u.audio, {}, u.target);
      const Tensor b = fused.forward(u.audio, aux_streams(u, s2.config, bank), u.target);
      for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
  }
  return {worst < kIdentityTol, "4 modes x " + std::to_string(kIdentityUtterances) + " utterances, max |dlogit| = " +
                                    fmt(worst) + " (< " + fmt(kIdentityTol) + ")"};
}

// 2
Outcome oracle_equivalence() {
  Rng r(21);
  double worst = 0.0;
  for (int trial = 0; trial < kOracleConfigs; ++trial) {
    const std::size_t heads = 1 + r.index(2);
    const std::size_t d = heads * (1 + r.index(8 / heads));
    const std::size_t n_lang = 1 + r.index(3);
    const Tensor y = random_tensor({1 + r.index(6), d}, r);
    std::vector<Tensor> aux;
    std::vector<oracle::Mat> aux_m;
    for (std::size_t l = 0; l < n_lang; ++l) {
      aux.push_back(random_tensor({1 + r.index(7), d}, r));
      aux_m.push_back(oracle::to_mat(aux.back()));
    }
    ParamStore store;
    const auto p = oracle::random_pgca(store, FusionMode::full_pgca, n_lang, d, 2 * d, heads, r);
    worst = std::max(worst, oracle::max_abs_diff(pgca_forward(y, aux, p), oracle::pgca(oracle::to_mat(y), aux_m, p)));
  }
  return {worst < kOracleTol, std::to_string(kOracleConfigs) + " random configs (d <= 8, L <= 3), max |dz| = " +
                                  fmt(worst) + " (< " + fmt(kOracleTol) + ")"};
}

// 3
Outcome gradient_integrity() {
  CorpusConfig cc;
  cc.n_train = 2;
  cc.n_test = 1;
  cc.symbols = 6;
  cc.min_len = 2;
  cc.max_len = 4;
  cc.feature_bins = 4;
  cc.languages = {{"a", 0.0, 0.2}, {"b", 0.3, 0.6}};
  cc.seed = 31;
  const Corpus corpus = gen_corpus(cc);
  ModelConfig mc;
  mc.d = 8;
  mc.feature_bins = 4;
  mc.heads = 2;
  mc.d_ff = 16;
  mc.n_enc = 1;
  mc.n_dec = 2;
  mc.vocab_tgt = cc.symbols + 2;
  mc.max_src_len = cc.max_len * cc.frames_per_token;
  mc.max_tgt_len = cc.max_len + 1;
  const LanguageBank bank(cc.symbols, mc.d, cc.seed, cc.languages);
  auto s1 = make_stage1_checkpoint(mc, 31);
  Rng r(32);
  jitter(s1, r, 0.3, false);
  auto s2 = make_stage2_checkpoint(s1, FusionMode::full_pgca, {"a", "b"}, 33);
  jitter(s2, r, 0.3, true);  // zero gates would hide the branch gradients
  const Model model(s2);
  std::vector<Tensor> ps;
  std::vector<std::string> names;
  for (const auto& n : s2.trainable()) {
    ps.push_back(s2.params.get(n));
    names.push_back(n);
  }
  auto f = [&] {
    Tensor tot = Tensor::scalar(0.0);
    for (const auto& u : corpus.train.utterances) {
      tot = tot + cross_entropy_sum(model.forward(u.audio, aux_streams(u, s2.config, bank), u.target),
                                    teacher_outputs(u.target, s2.config));
    }
    return tot;
  };
  const auto rep = grad_check(f, ps, kGradEps, kGradTol);
  return {rep.passed, std::to_string(ps.size()) + " stage-2 trainable tensors, max rel err " + fmt(rep.max_rel_error) +
                          " at " + names[rep.worst_param] + " (tol " + fmt(kGradTol) + ", eps " + fmt(kGradEps) + ")"};
}

// 4
Outcome cer_oracle() {
  Rng r(41);
  int mismatches = 0;
  for (int i = 0; i < kCerPairs; ++i) {
    TokenSeq a(1 + r.index(12)), b(r.index(13));
    for (auto& t : a) t = static_cast<Token>(r.index(5));
    for (auto& t : b) t = static_cast<Token>(r.index(5));
    const auto e = cer(a, b);
    mismatches += e.edits() != oracle::edit_distance(a, b);
  }
  const double rel = 100.0 * relative_reduction(13.40, 11.42);
  const bool rel_ok = std::abs(rel - kRelTarget) <= kRelTolPp;
  return {mismatches == 0 && rel_ok, std::to_string(mismatches) + "/" + std::to_string(kCerPairs) +
                                         " edit-distance mismatches; Rel(13.40, 11.42) = " + fmt(rel, 6) + "% (" +
                                         fmt(kRelTarget) + " +/- " + fmt(kRelTolPp) + " pp)"};
}

// 9
Outcome selection_mechanics() {
  const std::map<std::string, double> cer_table{
      {"Mandarin", 11.87}, {"Hindi", 13.17}, {"English", 13.10}, {"French", 12.98}, {"Spanish", 12.84}};
  // Proximity of each language to the target language.
  const std::map<std::string, double> prox_table{
      {"Mandarin", 0.905}, {"Hindi", 0.854}, {"English", 0.552}, {"French", 0.821}, {"Spanish", 0.843}};
  const auto by_cer = select_topk(cer_table, SelectMetric::cer, 2);
  const auto by_prox = select_topk(prox_table, SelectMetric::proximity, 2);
  const std::map<std::string, double> gates{
      {"Mandarin", 0.4}, {"Hindi", 0.05}, {"English", -0.1}, {"French", 0.2}, {"Spanish", 0.3}};
  auto as_set = [](const std::vector<std::string>& v) { return std::set<std::string>(v.begin(), v.end()); };
  const auto all_c = as_set(select_topk(cer_table, SelectMetric::cer, 5));
  const auto all_p = as_set(select_topk(prox_table, SelectMetric::proximity, 5));
  const auto all_g = as_set(select_topk(gates, SelectMetric::gating, 5));
  const bool ok = by_cer == std::vector<std::string>{"Mandarin", "Spanish"} &&
                  by_prox == std::vector<std::string>{"Mandarin", "Hindi"} && all_c == all_p && all_p == all_g &&
                  all_c.size() == 5;
  return {ok, "cer top-2 [" + join(by_cer, ", ") + "], proximity top-2 [" + join(by_prox, ", ") +
                  "], k=5 sets coincide: " + (all_c == all_p && all_p == all_g ? "yes" : "no")};
}

// 5-8 share one corpus, one stage-1 model and a handful of stage-2 runs.
struct Lab {
  fs::path dir;
  ExperimentConfig cfg;
  Corpus corpus;
  std::unique_ptr<LanguageBank> bank;
  ModelCheckpoint stage1;
  double base_cer = 0.0;
  std::map<std::string, TrainResult> runs;
  std::map<std::string, double> cer;

  explicit Lab(fs::path d) : dir(std::move(d)) {
    cfg.corpus.languages.push_back({"lang5", 0.05, 0.2});
    cfg.set_seed(kSeed);
    cfg.validate();
    fs::create_directories(dir);
  }

  void ensure_stage1() {
    if (bank) return;
    corpus = gen_corpus(cfg.corpus);
    bank = std::make_unique<LanguageBank>(cfg.corpus.symbols, cfg.model.d, cfg.corpus.seed, cfg.corpus.languages);
    auto r = train_stage1(cfg.base_model(), corpus.train, corpus.test, cfg.stage1);
    stage1 = r.best;
    base_cer = evaluate(stage1, corpus.test).cer;
    save_checkpoint(stage1, (dir / "stage1.bin").string());
    write_file((dir / "stage1_log.csv").string(), r.log.to_csv());
  }

  const TrainResult& run(FusionMode mode, const std::vector<std::string>& langs) {
    ensure_stage1();
    const std::string tag = system_tag(mode, langs);
    if (auto it = runs.find(tag); it != runs.end()) return it->second;
    auto r = train_stage2(stage1, mode, langs, corpus.train, corpus.test, *bank, cfg.stage2);
    cer[tag] = evaluate(r.best, corpus.test, bank.get()).cer;
    save_checkpoint(r.best, (dir / (tag + ".bin")).string());
    write_file((dir / (tag + "_log.csv")).string(), r.log.to_csv());
    if (has_gates(mode)) write_file((dir / (tag + "_gates.csv")).string(), gate_report_csv(extract_gates(r.best)));
    return runs.emplace(tag, std::move(r)).first->second;
  }
};

// 5
Outcome language_direction(Lab& lab) {
  lab.run(FusionMode::full_pgca, {"lang0"});
  lab.run(FusionMode::full_pgca, {"lang0", "lang1"});
  const double one = lab.cer.at("full_pgca_lang0"), two = lab.cer.at("full_pgca_lang0+lang1");
  const double rel = relative_reduction(lab.base_cer, one);
  return {rel >= kMinRelReduction && two <= one, "baseline " + fmt(lab.base_cer) + ", lang0 " + fmt(one) + " (rel " +
                                                     fmt(100 * rel, 3) + "% >= " + fmt(100 * kMinRelReduction) +
                                                     "%), lang0+lang1 " + fmt(two) + (two <= one ? " (<= lang0)" : " (> lang0)")};
}

// 6
Outcome fusion_ordering(Lab& lab) {
  const std::vector<std::string> langs{"lang0", "lang1"};
  lab.run(FusionMode::full_pgca, langs);
  lab.run(FusionMode::addition, langs);
  lab.run(FusionMode::concatenation, langs);
  const double full = lab.cer.at(system_tag(FusionMode::full_pgca, langs));
  const double add = lab.cer.at(system_tag(FusionMode::addition, langs));
  const double cat = lab.cer.at(system_tag(FusionMode::concatenation, langs));
  return {full <= add && full <= cat,
          "full_pgca " + fmt(full) + ", addition " + fmt(add) + ", concatenation " + fmt(cat)};
}

// 7
Outcome gate_ordering(Lab& lab) {
  const auto& r = lab.run(FusionMode::full_pgca, {"lang5", "lang4"});
  const auto g = extract_gates(r.best);
  const double clean = g.mean_gate("lang5"), noisy = g.mean_gate("lang4");
  std::string per_layer;
  for (std::size_t b = 0; b < g.attn.size(); ++b) {
    per_layer += (b ? "; " : "") + std::string("L") + std::to_string(b) + " " + fmt(g.attn[b][0], 3) + "/" +
                 fmt(g.attn[b][1], 3);
  }
  return {clean > noisy, "mean tanh gate lang5 (p=0.05) " + fmt(clean) + " > lang4 (p=0.9) " + fmt(noisy) + " [" +
                             per_layer + "]"};
}

// 8
Outcome heatmap_alignment(Lab& lab) {
  const auto& r = lab.run(FusionMode::full_pgca, {"lang0"});
  const auto layer = representative_layer(extract_gates(r.best), "lang0");
  std::size_t hits = 0, rows = 0;
  const std::size_t n = std::min(kHeatmapUtterances, lab.corpus.test.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = lab.corpus.test.utterances[i];
    const auto hm = attention_heatmap(r.best, u, layer, "lang0", *lab.bank);
    const std::size_t t = std::min({u.target.size(), hm.rows(), hm.cols()});
    hits += static_cast<std::size_t>(std::llround(hm.diagonal_fraction(t) * static_cast<double>(t)));
    rows += t;
  }
  const double frac = rows ? static_cast<double>(hits) / static_cast<double>(rows) : 0.0;
  return {frac >= kMinDiagonal, "layer " + std::to_string(layer) + ", " + std::to_string(hits) + "/" +
                                    std::to_string(rows) + " rows on the diagonal over " + std::to_string(n) +
                                    " utterances = " + fmt(frac, 3) + " (>= " + fmt(kMinDiagonal) + ")"};
}

// 10
std::map<std::string, std::string> snapshot_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path().string());
  }
  return out;
}

Outcome determinism(const fs::path& dir) {
  ExperimentConfig c;
  c.corpus.n_train = 60;
  c.corpus.n_test = 16;
  c.stage1.total_steps = 30;
  c.stage1.warmup_steps = 5;
  c.stage1.eval_every = 10;
  c.stage2.total_steps = 20;
  c.stage2.warmup_steps = 5;
  c.stage2.eval_every = 10;
  c.analysis.heatmap_utterances = 3;
  c.set_seed(kSeed);
  c.out_dir = (dir / "run").string();
  c.validate();

  fs::remove_all(c.out_dir);
  ExperimentRunner(c).run_train(true);
  const auto first = snapshot_files(c.out_dir);
  fs::remove_all(c.out_dir);
  ExperimentRunner(c).run_train(true);
  const auto second = snapshot_files(c.out_dir);
  std::vector<std::string> differ;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    if (it == second.end() || it->second != bytes) differ.push_back(name);
  }
  if (second.size() != first.size()) differ.push_back("<file set>");
  const bool verified = verify_run(c.out_dir).empty();

  const auto ck = load_checkpoint((fs::path(c.out_dir) / "full_pgca_lang0+lang1/checkpoint.bin").string());
  const std::string ck_bytes = encode_checkpoint(ck);
  const bool ck_rt = encode_checkpoint(decode_checkpoint(ck_bytes)) == ck_bytes &&
                     ck_bytes == first.at("full_pgca_lang0+lang1/checkpoint.bin");
  const auto ds = load_dataset((fs::path(c.out_dir) / "data/test.bin").string());
  const bool ds_rt = encode_dataset(ds) == first.at("data/test.bin");

  const bool ok = differ.empty() && verified && ck_rt && ds_rt;
  return {ok, std::to_string(first.size()) + " artifacts, " + std::to_string(differ.size()) + " differ" +
                  (differ.empty() ? "" : " (" + join(differ, ", ") + ")") + "; manifest " +
                  (verified ? "verified" : "FAILED") + "; checkpoint round-trip " + (ck_rt ? "exact" : "FAILED") +
                  "; dataset round-trip " + (ds_rt ? "exact" : "FAILED")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PGCA acceptance suite"};
  std::string workdir = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory for training artifacts");
  app.add_option("--only", only, "run only these criteria")->delimiter(',')->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(workdir);
  fs::create_directories(dir);
  Lab lab(dir / "lab");

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"zero-init identity", zero_init_identity},
      {"fusion oracle equivalence", oracle_equivalence},
      {"stage-2 gradient check", gradient_integrity},
      {"CER oracle and relative reduction", cer_oracle},
      {"auxiliary languages reduce CER", [&] { return language_direction(lab); }},
      {"gated fusion beats pooled fusion", [&] { return fusion_ordering(lab); }},
      {"clean language gets the larger gate", [&] { return gate_ordering(lab); }},
      {"fusion attention is diagonal", [&] { return heatmap_alignment(lab); }},
      {"top-k selection mechanics", selection_mechanics},
      {"determinism and persistence", [&] { return determinism(dir); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail << " ("
              << fmt(secs, 3) << " s)" << std::endl;
  }

  if (lab.bank) {
    // Supplementary figures, not criteria.
    const double fr = evaluate(lab.stage1, lab.corpus.test, nullptr, DecodeMode::greedy).cer;
    std::cout << "info: stage-1 CER teacher-forced " << fmt(lab.base_cer) << ", free-running " << fmt(fr) << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria FAILED" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
