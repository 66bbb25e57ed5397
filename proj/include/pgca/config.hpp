// Experiment configuration: an INI-style file with sections, parsed
// strictly (unknown sections or keys are errors) and dumped back with every
// effective value spelled out.
//
//   [run]      seed (required), out, preset
//   [corpus]   n_train n_test symbols min_len max_len feature_bins
//              frames_per_token audio_noise swap_rate
//   [lang.ID]  noise_rate offset_scale   (one section per language, in order)
//   [model]    d heads d_ff n_enc n_dec max_src_len max_tgt_len
//   [stage1], [stage2]
//              lr_max warmup_steps total_steps batch_size weight_decay
//              beta1 beta2 adam_eps clip_norm eval_every
//   [fusion]   mode languages
//   [analysis] heatmap_utterances heatmap_layer select_k sweep_order
#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "pgca/data.hpp"
#include "pgca/model.hpp"
#include "pgca/optim.hpp"
#include "pgca/text.hpp"

namespace pgca {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Preset { baseline, ablation, sweep, selection };

inline std::string to_string(Preset p) {
  switch (p) {
    case Preset::baseline: return "baseline";
    case Preset::ablation: return "ablation";
    case Preset::sweep: return "sweep";
    case Preset::selection: return "selection";
  }
  return "?";
}

inline Preset preset_from_string(const std::string& s) {
  for (Preset p : {Preset::baseline, Preset::ablation, Preset::sweep, Preset::selection}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown preset '" + s + "' (expected baseline, ablation, sweep or selection)");
}

struct AnalysisConfig {
  std::size_t heatmap_utterances = 20;
  std::optional<std::size_t> heatmap_layer;  // unset: layer with the largest gate
  std::size_t select_k = 2;
  std::vector<std::string> sweep_order;  // empty: best single-language CER first

  bool operator==(const AnalysisConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  Preset preset = Preset::baseline;
  CorpusConfig corpus;
  ModelConfig model;  // fusion fields are filled from [fusion]
  TrainHyper stage1 = stage1_defaults();
  TrainHyper stage2 = stage2_defaults();
  FusionMode fusion = FusionMode::full_pgca;
  std::vector<std::string> languages{"lang0", "lang1"};
  AnalysisConfig analysis;

  bool operator==(const ExperimentConfig&) const = default;

  /// One seed drives the corpus and both training stages.
  void set_seed(std::uint64_t s) {
    seed = s;
    corpus.seed = s;
    stage1.seed = s;
    stage2.seed = s;
  }

  /// Stage-1 model configuration (no fusion).
  ModelConfig base_model() const {
    ModelConfig m = model;
    m.fusion = FusionMode::none;
    m.aux_languages.clear();
    return m;
  }

  void validate() const {
    try {
      corpus.validate();
      base_model().validate();
      stage1.validate();
      stage2.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (model.feature_bins != corpus.feature_bins) throw ConfigError("model and corpus feature widths differ");
    if (model.vocab_tgt != corpus.symbols + 2) throw ConfigError("model vocabulary must be corpus symbols + 2");
    if (model.max_tgt_len < corpus.max_len + 1) {
      throw ConfigError("model.max_tgt_len must be at least corpus.max_len + 1");
    }
    if (model.max_src_len < corpus.max_len * corpus.frames_per_token) {
      throw ConfigError("model.max_src_len must be at least corpus.max_len * corpus.frames_per_token");
    }
    std::set<std::string> known;
    for (const auto& l : corpus.languages) known.insert(l.id);
    auto check_langs = [&](const std::vector<std::string>& ls, const std::string& where) {
      std::set<std::string> seen;
      for (const auto& l : ls) {
        if (!known.count(l)) throw ConfigError(where + ": unknown language '" + l + "'");
        if (!seen.insert(l).second) throw ConfigError(where + ": language '" + l + "' listed twice");
      }
    };
    check_langs(languages, "fusion.languages");
    check_langs(analysis.sweep_order, "analysis.sweep_order");
    if (fusion != FusionMode::none && languages.empty()) throw ConfigError("fusion.languages is empty");
    if (analysis.heatmap_layer && *analysis.heatmap_layer >= model.n_dec) {
      throw ConfigError("analysis.heatmap_layer must be below model.n_dec");
    }
    if (analysis.select_k == 0 || analysis.select_k > corpus.languages.size()) {
      throw ConfigError("analysis.select_k must lie in [1, number of languages]");
    }
    if (corpus.languages.empty()) throw ConfigError("corpus defines no auxiliary languages");
  }

  /// The resolved configuration in the same format the parser reads.
  std::string dump() const {
    std::ostringstream os;
    os << "[run]\nseed = " << seed << "\nout = " << out_dir << "\npreset = " << to_string(preset) << "\n\n";
    os << "[corpus]\nn_train = " << corpus.n_train << "\nn_test = " << corpus.n_test << "\nsymbols = " << corpus.symbols
       << "\nmin_len = " << corpus.min_len << "\nmax_len = " << corpus.max_len
       << "\nfeature_bins = " << corpus.feature_bins << "\nframes_per_token = " << corpus.frames_per_token
       << "\naudio_noise = " << format_double(corpus.audio_noise) << "\nswap_rate = " << format_double(corpus.swap_rate)
       << "\n\n";
    for (const auto& l : corpus.languages) {
      os << "[lang." << l.id << "]\nnoise_rate = " << format_double(l.noise_rate)
         << "\noffset_scale = " << format_double(l.offset_scale) << "\n\n";
    }
    os << "[model]\nd = " << model.d << "\nheads = " << model.heads << "\nd_ff = " << model.d_ff
       << "\nn_enc = " << model.n_enc << "\nn_dec = " << model.n_dec << "\nmax_src_len = " << model.max_src_len
       << "\nmax_tgt_len = " << model.max_tgt_len << "\n\n";
    auto hyper = [&](const char* name, const TrainHyper& h) {
      os << "[" << name << "]\nlr_max = " << format_double(h.lr_max) << "\nwarmup_steps = " << h.warmup_steps
         << "\ntotal_steps = " << h.total_steps << "\nbatch_size = " << h.batch_size
         << "\nweight_decay = " << format_double(h.weight_decay) << "\nbeta1 = " << format_double(h.beta1)
         << "\nbeta2 = " << format_double(h.beta2) << "\nadam_eps = " << format_double(h.adam_eps)
         << "\nclip_norm = " << format_double(h.clip_norm) << "\neval_every = " << h.eval_every << "\n\n";
    };
    hyper("stage1", stage1);
    hyper("stage2", stage2);
    os << "[fusion]\nmode = " << to_string(fusion) << "\nlanguages = " << join(languages, ",") << "\n\n";
    os << "[analysis]\nheatmap_utterances = " << analysis.heatmap_utterances
       << "\nheatmap_layer = " << (analysis.heatmap_layer ? std::to_string(*analysis.heatmap_layer) : "auto")
       << "\nselect_k = " << analysis.select_k << "\nsweep_order = " << join(analysis.sweep_order, ",") << "\n";
    return os.str();
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string_view s = trim(text);
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return v;
}

inline double parse_real(const std::string& key, const std::string& text) {
  const double v = parse_number<double>(key, text);
  if (!std::isfinite(v)) throw ConfigError("config key '" + key + "': value must be finite");
  return v;
}

inline std::size_t parse_count(const std::string& key, const std::string& text) {
  if (trim(text).substr(0, 1) == "-") throw ConfigError("config key '" + key + "': value must be non-negative");
  return parse_number<std::size_t>(key, text);
}

inline void parse_hyper(const boost::property_tree::ptree& sec, const std::string& name, TrainHyper& h) {
  for (const auto& [k, v] : sec) {
    const std::string key = name + "." + k, val = v.data();
    if (k == "lr_max") h.lr_max = parse_real(key, val);
    else if (k == "warmup_steps") h.warmup_steps = parse_count(key, val);
    else if (k == "total_steps") h.total_steps = parse_count(key, val);
    else if (k == "batch_size") h.batch_size = parse_count(key, val);
    else if (k == "weight_decay") h.weight_decay = parse_real(key, val);
    else if (k == "beta1") h.beta1 = parse_real(key, val);
    else if (k == "beta2") h.beta2 = parse_real(key, val);
    else if (k == "adam_eps") h.adam_eps = parse_real(key, val);
    else if (k == "clip_norm") h.clip_norm = parse_real(key, val);
    else if (k == "eval_every") h.eval_every = parse_count(key, val);
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }

  ExperimentConfig c;
  bool have_seed = false;
  bool custom_langs = false;
  for (const auto& [section, sec] : tree) {
    if (!sec.data().empty()) throw ConfigError("config key '" + section + "' appears outside any section");
    if (section == "run") {
      for (const auto& [k, v] : sec) {
        if (k == "seed") {
          c.seed = detail::parse_number<std::uint64_t>("run.seed", v.data());
          have_seed = true;
        } else if (k == "out") {
          c.out_dir = std::string(trim(v.data()));
        } else if (k == "preset") {
          c.preset = preset_from_string(std::string(trim(v.data())));
        } else {
          throw ConfigError("unknown config key 'run." + k + "'");
        }
      }
    } else if (section == "corpus") {
      auto& cc = c.corpus;
      for (const auto& [k, v] : sec) {
        const std::string key = "corpus." + k, val = v.data();
        if (k == "n_train") cc.n_train = detail::parse_count(key, val);
        else if (k == "n_test") cc.n_test = detail::parse_count(key, val);
        else if (k == "symbols") cc.symbols = detail::parse_count(key, val);
        else if (k == "min_len") cc.min_len = detail::parse_count(key, val);
        else if (k == "max_len") cc.max_len = detail::parse_count(key, val);
        else if (k == "feature_bins") cc.feature_bins = detail::parse_count(key, val);
        else if (k == "frames_per_token") cc.frames_per_token = detail::parse_count(key, val);
        else if (k == "audio_noise") cc.audio_noise = detail::parse_real(key, val);
        else if (k == "swap_rate") cc.swap_rate = detail::parse_real(key, val);
        else throw ConfigError("unknown config key '" + key + "'");
      }
    } else if (section.rfind("lang.", 0) == 0) {
      if (!custom_langs) {
        c.corpus.languages.clear();
        custom_langs = true;
      }
      AuxLanguageConfig l;
      l.id = section.substr(5);
      if (l.id.empty() || l.id.find_first_of(", \t") != std::string::npos) {
        throw ConfigError("invalid language section name '" + section + "'");
      }
      for (const auto& [k, v] : sec) {
        const std::string key = section + "." + k;
        if (k == "noise_rate") l.noise_rate = detail::parse_real(key, v.data());
        else if (k == "offset_scale") l.offset_scale = detail::parse_real(key, v.data());
        else throw ConfigError("unknown config key '" + key + "'");
      }
      c.corpus.languages.push_back(l);
    } else if (section == "model") {
      auto& m = c.model;
      for (const auto& [k, v] : sec) {
        const std::string key = "model." + k, val = v.data();
        if (k == "d") m.d = detail::parse_count(key, val);
        else if (k == "heads") m.heads = detail::parse_count(key, val);
        else if (k == "d_ff") m.d_ff = detail::parse_count(key, val);
        else if (k == "n_enc") m.n_enc = detail::parse_count(key, val);
        else if (k == "n_dec") m.n_dec = detail::parse_count(key, val);
        else if (k == "max_src_len") m.max_src_len = detail::parse_count(key, val);
        else if (k == "max_tgt_len") m.max_tgt_len = detail::parse_count(key, val);
        else throw ConfigError("unknown config key '" + key + "'");
      }
    } else if (section == "stage1") {
      detail::parse_hyper(sec, "stage1", c.stage1);
    } else if (section == "stage2") {
      detail::parse_hyper(sec, "stage2", c.stage2);
    } else if (section == "fusion") {
      for (const auto& [k, v] : sec) {
        if (k == "mode") {
          try {
            c.fusion = fusion_mode_from_string(std::string(trim(v.data())));
          } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("fusion.mode: ") + e.what());
          }
        } else if (k == "languages") {
          c.languages = split_list(v.data());
        } else {
          throw ConfigError("unknown config key 'fusion." + k + "'");
        }
      }
    } else if (section == "analysis") {
      auto& a = c.analysis;
      for (const auto& [k, v] : sec) {
        const std::string key = "analysis." + k, val = v.data();
        if (k == "heatmap_utterances") a.heatmap_utterances = detail::parse_count(key, val);
        else if (k == "heatmap_layer") {
          if (trim(val) == "auto") a.heatmap_layer.reset();
          else a.heatmap_layer = detail::parse_count(key, val);
        } else if (k == "select_k") a.select_k = detail::parse_count(key, val);
        else if (k == "sweep_order") a.sweep_order = split_list(val);
        else throw ConfigError("unknown config key '" + key + "'");
      }
    } else {
      throw ConfigError("unknown config section '" + section + "'");
    }
  }
  if (!have_seed) throw ConfigError("missing required config key 'run.seed'");

  c.model.feature_bins = c.corpus.feature_bins;
  c.model.vocab_tgt = c.corpus.symbols + 2;
  c.model.fusion = FusionMode::none;
  c.model.aux_languages.clear();
  c.stage1.stage = 1;
  c.stage2.stage = 2;
  c.set_seed(c.seed);
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace pgca
