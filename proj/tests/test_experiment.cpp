#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace pgca;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("pgca_exp_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny_experiment(const fs::path& out) {
  ExperimentConfig c;
  c.corpus = pgca::testing::tiny_corpus();
  c.model = pgca::testing::tiny_model();
  c.stage1 = pgca::testing::tiny_hyper(1, 4);
  c.stage2 = pgca::testing::tiny_hyper(2, 3);
  c.languages = {"clean", "noisy"};
  c.analysis.heatmap_utterances = 2;
  c.out_dir = out.string();
  c.set_seed(3);
  c.validate();
  return c;
}

std::map<std::string, std::string> files_under(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path().string());
  }
  return out;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST(Manifest, ListsEveryArtifactWithChecksums) {
  const auto dir = scratch("manifest");
  RunWriter w(dir);
  w.put("a.txt", "hello");
  w.put("sub/b.bin", std::string("\0\1\2", 3));
  w.put("a.txt", "hello again");  // rewritten artifacts keep one row
  w.write_manifest();
  const auto rows = read_manifest(dir);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].artifact, "a.txt");
  EXPECT_EQ(rows[0].bytes, 11u);
  EXPECT_EQ(rows[0].checksum, crc_hex("hello again"));
  EXPECT_EQ(rows[1].status, "complete");
  EXPECT_TRUE(verify_run(dir).empty());
}

TEST(Manifest, VerifyFindsTamperingAndMissingFiles) {
  const auto dir = scratch("verify");
  RunWriter w(dir);
  w.put("a.txt", "hello");
  w.put("b.txt", "world");
  w.write_manifest();
  write_file((dir / "a.txt").string(), "jello");
  fs::remove(dir / "b.txt");
  const auto problems = verify_run(dir);
  ASSERT_EQ(problems.size(), 2u);
  EXPECT_NE(problems[0].find("checksum"), std::string::npos);
  EXPECT_NE(problems[1].find("missing"), std::string::npos);
  EXPECT_FALSE(verify_run(scratch("nothing")).empty());
}

TEST(Manifest, FailedPhaseMarksTheRunIncomplete) {
  const auto dir = scratch("failed");
  auto cfg = tiny_experiment(dir);
  ExperimentRunner runner(cfg);
  runner.write_config();
  try {
    runner.phase("stage1", []() -> int { throw std::runtime_error("boom"); });
    FAIL();
  } catch (const PhaseError& e) {
    EXPECT_EQ(e.phase(), "stage1");
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
  const auto rows = read_manifest(dir);
  EXPECT_EQ(rows.front().status, "incomplete");
  EXPECT_EQ(rows.back().artifact, "phase:stage1");
  EXPECT_EQ(rows.back().status, "failed");
  EXPECT_FALSE(verify_run(dir).empty());
}

TEST(Experiment, TrainRunWritesTheDocumentedLayout) {
  const auto dir = scratch("train");
  const auto s = ExperimentRunner(tiny_experiment(dir)).run_train(true);
  ASSERT_EQ(s.scores.size(), 2u);
  EXPECT_EQ(s.scores[0].system, "baseline");
  const auto files = files_under(dir);
  for (const char* f : {"config.resolved.ini", "data/train.bin", "data/test.bin", "data/summary.csv",
                        "stage1/checkpoint.bin", "stage1/log.csv", "stage1/cer_report.csv",
                        "full_pgca_clean+noisy/checkpoint.bin", "full_pgca_clean+noisy/log.csv",
                        "full_pgca_clean+noisy/cer_report.csv", "full_pgca_clean+noisy/gate_report.csv",
                        "full_pgca_clean+noisy/heatmap_summary.csv", "summary.csv", "manifest.csv"}) {
    EXPECT_TRUE(files.count(f)) << f;
  }
  EXPECT_EQ(first_line(files.at("summary.csv")), "system,languages,cer,rel_reduction");
  EXPECT_EQ(first_line(files.at("stage1/cer_report.csv")), "id,ref_len,substitutions,deletions,insertions,cer");
  EXPECT_EQ(first_line(files.at("full_pgca_clean+noisy/gate_report.csv")), "layer,language,gate");
  EXPECT_EQ(first_line(files.at("full_pgca_clean+noisy/heatmap_summary.csv")),
            "language,layer,utterances,diagonal_fraction");
  std::size_t heatmaps = 0;
  for (const auto& [name, _] : files) heatmaps += name.find("/heatmaps/") != std::string::npos;
  EXPECT_EQ(heatmaps, 4u);  // 2 utterances x 2 languages
  EXPECT_TRUE(verify_run(dir).empty());
  // Every file except the manifest itself is listed.
  EXPECT_EQ(read_manifest(dir).size(), files.size() - 1);
  // The resolved config reproduces the run configuration.
  EXPECT_EQ(parse_config_text(files.at("config.resolved.ini")), tiny_experiment(dir));
  // Saved checkpoints load and score what the summary says.
  const auto ck = load_checkpoint((dir / "stage1/checkpoint.bin").string());
  EXPECT_DOUBLE_EQ(evaluate(ck, load_dataset((dir / "data/test.bin").string())).cer, s.baseline_cer);
}

TEST(Experiment, RerunIsBitIdenticalAndReusesData) {
  const auto dir = scratch("rerun");
  ExperimentRunner(tiny_experiment(dir)).run_train(false);
  const auto first = files_under(dir);
  ExperimentRunner(tiny_experiment(dir)).run_train(false);  // loads the existing datasets
  EXPECT_EQ(files_under(dir), first);
}

TEST(Experiment, StaleDataIsRegenerated) {
  const auto dir = scratch("stale");
  auto cfg = tiny_experiment(dir);
  ExperimentRunner(cfg).run_gen_data();
  const auto old_bytes = read_file((dir / "data/train.bin").string());
  cfg.corpus.audio_noise = 0.9;
  ExperimentRunner(cfg).run_gen_data();
  const auto fresh = load_dataset((dir / "data/train.bin").string());
  EXPECT_EQ(fresh.config_digest, cfg.corpus.digest());
  EXPECT_NE(read_file((dir / "data/train.bin").string()), old_bytes);
}

TEST(Experiment, AblationCoversEveryFusionVariant) {
  const auto dir = scratch("ablation");
  const auto s = ExperimentRunner(tiny_experiment(dir)).run_ablation();
  std::vector<std::string> systems;
  for (const auto& r : s.scores) systems.push_back(r.system);
  EXPECT_EQ(systems, (std::vector<std::string>{"baseline", "full_pgca", "no_tanh", "sequential", "shared", "addition",
                                                "concatenation"}));
  EXPECT_TRUE(fs::exists(dir / "ablation.csv"));
  EXPECT_TRUE(verify_run(dir).empty());
}

TEST(Experiment, SweepFollowsTheConfiguredOrder) {
  const auto dir = scratch("sweep");
  auto cfg = tiny_experiment(dir);
  cfg.analysis.sweep_order = {"junk", "clean"};
  ExperimentRunner(cfg).run_sweep();
  const auto curve = read_file((dir / "curve.csv").string());
  EXPECT_EQ(curve.substr(0, curve.find('\n', curve.find('\n') + 1)), "k,languages,cer\n1,junk," +
                                                                         curve.substr(curve.find("1,junk,") + 7,
                                                                                      curve.find('\n', curve.find("1,junk,")) - curve.find("1,junk,") - 7));
  EXPECT_NE(curve.find("\n2,junk+clean,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "single_language.csv"));
  EXPECT_TRUE(fs::exists(dir / "curve_gates.csv"));
  EXPECT_TRUE(verify_run(dir).empty());
}

TEST(Experiment, SelectionScoresThreeStrategies) {
  const auto dir = scratch("selection");
  const auto s = ExperimentRunner(tiny_experiment(dir)).run_selection();
  std::vector<std::string> tail;
  for (std::size_t i = s.scores.size() - 3; i < s.scores.size(); ++i) tail.push_back(s.scores[i].system);
  EXPECT_EQ(tail, (std::vector<std::string>{"top2_cer", "top2_proximity", "top2_gating"}));
  const auto prox = read_file((dir / "proximity.csv").string());
  EXPECT_EQ(first_line(prox), "language,noise_rate,offset_scale,proximity");
  EXPECT_TRUE(verify_run(dir).empty());
}

TEST(Analysis, ProximityFallsWithOffset) {
  const auto cc = pgca::testing::tiny_corpus();
  const auto c = gen_corpus(cc);
  const auto bank = pgca::testing::tiny_bank(cc, pgca::testing::tiny_model());
  const double a = language_proximity(c.test, bank, "clean"), b = language_proximity(c.test, bank, "noisy"),
               d = language_proximity(c.test, bank, "junk");
  EXPECT_GT(a, b);
  EXPECT_GT(b, d);
}

TEST(Analysis, RepresentativeLayerHasTheLargestGate) {
  GateReport g;
  g.languages = {"a", "b"};
  g.attn = {{0.1, -0.5}, {-0.3, 0.2}};
  g.fnn = {0, 0};
  EXPECT_EQ(representative_layer(g, "a"), 1u);
  EXPECT_EQ(representative_layer(g, "b"), 0u);
  EXPECT_THROW(representative_layer(g, "c"), std::out_of_range);
}

TEST(Analysis, IncrementalCurveAddsOneLanguagePerPoint) {
  const auto cc = pgca::testing::tiny_corpus();
  const auto c = gen_corpus(cc);
  const auto mc = pgca::testing::tiny_model();
  const auto bank = pgca::testing::tiny_bank(cc, mc);
  const auto s1 = train_stage1(mc, c.train, c.test, pgca::testing::tiny_hyper(1, 3)).best;
  const auto curve = incremental_experiment(s1, c.train, c.test, bank, {"noisy", "clean", "junk"},
                                            pgca::testing::tiny_hyper(2, 2));
  ASSERT_EQ(curve.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(curve[k].k, k + 1);
    EXPECT_EQ(curve[k].languages.size(), k + 1);
    EXPECT_EQ(curve[k].gates.languages, curve[k].languages);
  }
  EXPECT_EQ(first_line(curve_csv(curve)), "k,languages,cer");
  EXPECT_THROW(incremental_experiment(s1, c.train, c.test, bank, {}, pgca::testing::tiny_hyper(2, 2)),
               std::invalid_argument);
}

TEST(Reports, TablesHaveFixedHeaders) {
  CerReport r;
  r.add(7, cer({1, 2}, {1}));
  EXPECT_EQ(cer_report_csv(r), "id,ref_len,substitutions,deletions,insertions,cer\n7,2,0,1,0,0.5\ntotal,2,0,1,0,0.5\n");
  EXPECT_EQ(score_table_csv({{"x", {"a", "b"}, 0.25, 0.5}}), "system,languages,cer,rel_reduction\nx,a+b,0.25,0.5\n");
  Heatmap h;
  h.row_labels = {"<s>"};
  h.col_labels = {"a1", "a2"};
  h.weights = {0.25, 0.75};
  EXPECT_EQ(heatmap_csv(h), "query\\key,a1,a2\n<s>,0.25,0.75\n");
  GateReport g;
  g.languages = {"p"};
  g.attn = {{0.5}};
  g.fnn = {-0.25};
  EXPECT_EQ(gate_report_csv(g), "layer,language,gate\n0,p,0.5\n0,fnn,-0.25\n");
}
