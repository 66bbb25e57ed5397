// pgca: command-line driver for data generation, training, ablations and analysis.
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "pgca/pgca.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::string checkpoint;
};

void add_common(CLI::App* sub, Common& c, bool with_preset, bool with_checkpoint) {
  sub->add_option("--config", c.config, "experiment config file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "output directory (overrides [run] out)");
  sub->add_option("--seed", c.seed, "seed for corpus and both training stages (overrides [run] seed)");
  if (with_preset) {
    sub->add_option("--preset", c.preset, "experiment preset")
        ->check(CLI::IsMember({"baseline", "ablation", "sweep", "selection"}));
  }
  if (with_checkpoint) {
    sub->add_option("--checkpoint", c.checkpoint, "checkpoint to evaluate or analyze")
        ->required()
        ->check(CLI::ExistingFile);
  }
}

pgca::ExperimentConfig load(const Common& c) {
  pgca::ExperimentConfig cfg;
  try {
    cfg = pgca::parse_config(c.config);
    if (!c.out.empty()) cfg.out_dir = c.out;
    if (c.seed) cfg.set_seed(*c.seed);
    if (!c.preset.empty()) cfg.preset = pgca::preset_from_string(c.preset);
    cfg.validate();
  } catch (const std::exception& e) {
    throw pgca::PhaseError("config", e.what());
  }
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << "\n"; }

void print_scores(const pgca::RunSummary& s) {
  for (const auto& r : s.scores) {
    std::cout << r.system << (r.languages.empty() ? "" : " [" + pgca::join(r.languages, "+") + "]")
              << " cer=" << pgca::format_double(r.cer) << " rel=" << pgca::format_double(r.rel_reduction) << "\n";
  }
  std::cout << "run directory: " << s.root.string() << "\n";
}

pgca::ModelCheckpoint load_ckpt(const std::string& path) {
  try {
    return pgca::load_checkpoint(path);
  } catch (const std::exception& e) {
    throw pgca::PhaseError("checkpoint", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PGCA laboratory: synthetic corpus, two-stage training, fusion ablations and analysis"};
  app.require_subcommand(1);

  Common gen, train, eval, ablate, sweep, select, analyze, run;
  std::string verify_dir;

  add_common(app.add_subcommand("gen-data", "generate (or reuse) the train/test corpus"), gen, false, false);
  add_common(app.add_subcommand("train", "stage 1, then stage 2 with the configured fusion"), train, false, false);
  add_common(app.add_subcommand("eval", "teacher-forcing CER of a checkpoint on the test split"), eval, false, true);
  add_common(app.add_subcommand("ablate", "every fusion variant under one budget"), ablate, false, false);
  add_common(app.add_subcommand("sweep", "single-language runs and the incremental language curve"), sweep, false,
             false);
  add_common(app.add_subcommand("select", "top-k language selection strategies"), select, false, false);
  add_common(app.add_subcommand("analyze", "gate values and attention heatmaps of a checkpoint"), analyze, false,
             true);
  add_common(app.add_subcommand("run", "run the configured preset"), run, true, false);
  auto* ver = app.add_subcommand("verify", "check a run directory against its manifest");
  ver->add_option("dir", verify_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("verify")) {
      const auto problems = pgca::verify_run(verify_dir);
      for (const auto& p : problems) std::cerr << "verify: " << p << "\n";
      if (!problems.empty()) return 1;
      std::cout << "ok\n";
      return 0;
    }
    if (app.got_subcommand("gen-data")) {
      pgca::ExperimentRunner r(load(gen), log_line);
      r.run_gen_data();
      std::cout << "train=" << r.corpus().train.size() << " test=" << r.corpus().test.size() << "\n";
      return 0;
    }
    if (app.got_subcommand("train")) {
      print_scores(pgca::ExperimentRunner(load(train), log_line).run_train(false));
      return 0;
    }
    if (app.got_subcommand("ablate")) {
      print_scores(pgca::ExperimentRunner(load(ablate), log_line).run_ablation());
      return 0;
    }
    if (app.got_subcommand("sweep")) {
      print_scores(pgca::ExperimentRunner(load(sweep), log_line).run_sweep());
      return 0;
    }
    if (app.got_subcommand("select")) {
      print_scores(pgca::ExperimentRunner(load(select), log_line).run_selection());
      return 0;
    }
    if (app.got_subcommand("run")) {
      const auto cfg = load(run);
      print_scores(pgca::ExperimentRunner(cfg, log_line).run_preset(cfg.preset));
      return 0;
    }
    if (app.got_subcommand("eval")) {
      pgca::ExperimentRunner r(load(eval), log_line);
      const auto ckpt = load_ckpt(eval.checkpoint);
      r.write_config();
      r.load_or_generate_data();
      const auto rep = r.phase("eval", [&] {
        auto rep = pgca::evaluate(ckpt, r.corpus().test, &r.bank());
        r.writer().put("eval/cer_report.csv", pgca::cer_report_csv(rep));
        return rep;
      });
      r.writer().write_manifest();
      std::cout << "cer=" << pgca::format_double(rep.cer) << " S=" << rep.substitutions << " D=" << rep.deletions
                << " I=" << rep.insertions << " N=" << rep.ref_chars << "\n";
      return 0;
    }
    if (app.got_subcommand("analyze")) {
      pgca::ExperimentRunner r(load(analyze), log_line);
      const auto ckpt = load_ckpt(analyze.checkpoint);
      if (!pgca::has_gates(ckpt.config.fusion)) {
        throw pgca::PhaseError("analysis", "checkpoint has no gated fusion layers");
      }
      r.write_config();
      r.load_or_generate_data();
      r.heatmaps(ckpt, "analysis");
      r.writer().write_manifest();
      const auto g = pgca::extract_gates(ckpt);
      for (std::size_t b = 0; b < g.attn.size(); ++b) {
        for (std::size_t l = 0; l < g.languages.size(); ++l) {
          std::cout << "layer " << b << " " << g.languages[l] << " gate=" << pgca::format_double(g.attn[b][l]) << "\n";
        }
      }
      return 0;
    }
  } catch (const pgca::PhaseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: run: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
