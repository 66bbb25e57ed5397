#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace pgca;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalConfigTakesDefaults) {
  const auto c = parse_config_text("[run]\nseed = 4\n");
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.corpus.seed, 4u);
  EXPECT_EQ(c.stage1.seed, 4u);
  EXPECT_EQ(c.stage2.seed, 4u);
  EXPECT_EQ(c.preset, Preset::baseline);
  EXPECT_EQ(c.fusion, FusionMode::full_pgca);
  EXPECT_EQ(c.corpus.languages, default_languages());
  EXPECT_EQ(c.stage1, [] { auto h = stage1_defaults(); h.seed = 4; return h; }());
  EXPECT_EQ(c.model.vocab_tgt, c.corpus.symbols + 2);
  EXPECT_EQ(c.model.feature_bins, c.corpus.feature_bins);
  EXPECT_FALSE(c.analysis.heatmap_layer.has_value());
}

TEST(Config, ResolvedDumpContainsEveryEffectiveValue) {
  const std::string dump = parse_config_text("[run]\nseed = 4\n").dump();
  for (const char* key : {"seed = 4", "n_train = 2000", "audio_noise = 1.6", "[lang.lang4]", "lr_max = 0.002",
                          "lr_max = 0.01", "mode = full_pgca", "heatmap_layer = auto", "batch_size = 8"}) {
    EXPECT_NE(dump.find(key), std::string::npos) << key;
  }
}

TEST(Config, DumpRoundTrips) {
  const std::string text =
      "[run]\nseed = 11\nout = somewhere\npreset = sweep\n"
      "[corpus]\nn_train = 50\nsymbols = 10\naudio_noise = 0.25\n"
      "[lang.x]\nnoise_rate = 0.2\noffset_scale = 0.3\n[lang.y]\nnoise_rate = 0\n"
      "[model]\nd = 16\nheads = 4\n"
      "[stage2]\nlr_max = 3e-3\ntotal_steps = 100\nwarmup_steps = 10\n"
      "[fusion]\nmode = no_tanh\nlanguages = y, x\n"
      "[analysis]\nheatmap_layer = 1\nselect_k = 1\nsweep_order = x,y\n";
  const auto c = parse_config_text(text);
  EXPECT_EQ(c.languages, (std::vector<std::string>{"y", "x"}));
  EXPECT_EQ(c.corpus.languages.size(), 2u);
  EXPECT_EQ(c.model.vocab_tgt, 12u);
  EXPECT_EQ(c.analysis.heatmap_layer, 1u);
  const auto again = parse_config_text(c.dump());
  EXPECT_EQ(again, c);
  EXPECT_EQ(again.dump(), c.dump());
}

TEST(Config, UnknownKeysAreNamed) {
  EXPECT_NE(error_of("[run]\nseed = 1\n[stage1]\nlr_mxa = 0.1\n").find("stage1.lr_mxa"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = 1\nsede = 2\n").find("run.sede"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = 1\n[modle]\nd = 8\n").find("modle"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = 1\n[lang.q]\nnoise = 0.1\n").find("lang.q.noise"), std::string::npos);
}

TEST(Config, MissingAndMalformedValuesAreErrors) {
  EXPECT_NE(error_of("[corpus]\nn_train = 5\n").find("run.seed"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = 1\n[corpus]\nn_train = many\n").find("corpus.n_train"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = 1\n[corpus]\nn_train = -5\n").find("non-negative"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = 1\n[corpus]\naudio_noise = nan\n").find("audio_noise"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = 1\n[stage1]\nlr_max = 1e-3x\n").find("stage1.lr_max"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = 1\n[fusion]\nmode = gated\n").find("gated"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = 1\npreset = everything\n").find("everything"), std::string::npos);
  EXPECT_FALSE(error_of("seed = 1\n").empty());
  EXPECT_FALSE(error_of("[run\nseed = 1\n").empty());
}

TEST(Config, CrossFieldValidation) {
  EXPECT_FALSE(error_of("[run]\nseed = 1\n[fusion]\nlanguages = lang0,martian\n").empty());
  EXPECT_FALSE(error_of("[run]\nseed = 1\n[fusion]\nlanguages = lang0,lang0\n").empty());
  EXPECT_FALSE(error_of("[run]\nseed = 1\n[model]\nmax_tgt_len = 5\n").empty());
  EXPECT_FALSE(error_of("[run]\nseed = 1\n[model]\nd = 30\nheads = 4\n").empty());
  EXPECT_FALSE(error_of("[run]\nseed = 1\n[analysis]\nselect_k = 9\n").empty());
  EXPECT_FALSE(error_of("[run]\nseed = 1\n[analysis]\nheatmap_layer = 5\n").empty());
  EXPECT_FALSE(error_of("[run]\nseed = 1\n[analysis]\nsweep_order = lang0,zzz\n").empty());
  EXPECT_FALSE(error_of("[run]\nseed = 1\n[stage2]\nwarmup_steps = 9000\n").empty());
}

TEST(Config, SeedOverrideReachesEveryStream) {
  auto c = parse_config_text("[run]\nseed = 1\n");
  c.set_seed(17);
  EXPECT_EQ(c.corpus.seed, 17u);
  EXPECT_EQ(c.stage1.seed, 17u);
  EXPECT_EQ(c.stage2.seed, 17u);
  EXPECT_NE(c.dump().find("seed = 17"), std::string::npos);
}

TEST(Config, ReadsFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "pgca_config_test.ini";
  write_file(path.string(), "[run]\nseed = 2\n");
  EXPECT_EQ(parse_config(path.string()).seed, 2u);
  std::filesystem::remove(path);
  EXPECT_THROW(parse_config(path.string()), ConfigError);
}
