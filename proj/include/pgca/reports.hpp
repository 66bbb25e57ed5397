// Comma-separated report tables. Every table has a fixed header; reals are
// written in shortest round-trip form so reruns are byte-identical.
#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "pgca/eval.hpp"
#include "pgca/text.hpp"

namespace pgca {

/// id,ref_len,substitutions,deletions,insertions,cer plus a closing total row.
inline std::string cer_report_csv(const CerReport& r) {
  std::ostringstream os;
  os << "id,ref_len,substitutions,deletions,insertions,cer\n";
  for (const auto& u : r.per_utterance) {
    os << u.id << "," << u.counts.ref_len << "," << u.counts.substitutions << "," << u.counts.deletions << ","
       << u.counts.insertions << "," << format_double(u.counts.rate()) << "\n";
  }
  os << "total," << r.ref_chars << "," << r.substitutions << "," << r.deletions << "," << r.insertions << ","
     << format_double(r.cer) << "\n";
  return os.str();
}

/// layer,language,gate; the feed-forward gate uses language "fnn".
inline std::string gate_report_csv(const GateReport& g) {
  std::ostringstream os;
  os << "layer,language,gate\n";
  for (std::size_t b = 0; b < g.attn.size(); ++b) {
    for (std::size_t l = 0; l < g.languages.size(); ++l) {
      os << b << "," << g.languages[l] << "," << format_double(g.attn[b][l]) << "\n";
    }
    os << b << ",fnn," << format_double(g.fnn[b]) << "\n";
  }
  return os.str();
}

/// First row: corner cell then auxiliary token labels. Each following row:
/// decoder token label then the head-averaged weights.
inline std::string heatmap_csv(const Heatmap& h) {
  std::ostringstream os;
  os << "query\\key";
  for (const auto& c : h.col_labels) os << "," << c;
  os << "\n";
  for (std::size_t r = 0; r < h.rows(); ++r) {
    os << h.row_labels[r];
    for (std::size_t c = 0; c < h.cols(); ++c) os << "," << format_double(h.at(r, c));
    os << "\n";
  }
  return os.str();
}

struct SystemScore {
  std::string system;  // e.g. "baseline", a fusion mode or a metric name
  std::vector<std::string> languages;
  double cer = 0.0;
  double rel_reduction = 0.0;  // fraction relative to the stage-1 baseline
};

/// system,languages,cer,rel_reduction; languages are joined with '+'.
inline std::string score_table_csv(const std::vector<SystemScore>& rows) {
  std::ostringstream os;
  os << "system,languages,cer,rel_reduction\n";
  for (const auto& r : rows) {
    os << r.system << "," << join(r.languages, "+") << "," << format_double(r.cer) << ","
       << format_double(r.rel_reduction) << "\n";
  }
  return os.str();
}

struct CurvePoint {
  std::size_t k = 0;
  std::vector<std::string> languages;
  double cer = 0.0;
  GateReport gates;
};

/// k,languages,cer
inline std::string curve_csv(const std::vector<CurvePoint>& pts) {
  std::ostringstream os;
  os << "k,languages,cer\n";
  for (const auto& p : pts) os << p.k << "," << join(p.languages, "+") << "," << format_double(p.cer) << "\n";
  return os.str();
}

/// k,layer,language,gate for every point of a curve.
inline std::string curve_gates_csv(const std::vector<CurvePoint>& pts) {
  std::ostringstream os;
  os << "k,layer,language,gate\n";
  for (const auto& p : pts) {
    for (std::size_t b = 0; b < p.gates.attn.size(); ++b) {
      for (std::size_t l = 0; l < p.gates.languages.size(); ++l) {
        os << p.k << "," << b << "," << p.gates.languages[l] << "," << format_double(p.gates.attn[b][l]) << "\n";
      }
      os << p.k << "," << b << ",fnn," << format_double(p.gates.fnn[b]) << "\n";
    }
  }
  return os.str();
}

struct LanguageScore {
  std::string language;
  double noise_rate = 0.0;
  double offset_scale = 0.0;
  double value = 0.0;
};

/// language,noise_rate,offset_scale,<value_name>
inline std::string language_table_csv(const std::vector<LanguageScore>& rows, const std::string& value_name) {
  std::ostringstream os;
  os << "language,noise_rate,offset_scale," << value_name << "\n";
  for (const auto& r : rows) {
    os << r.language << "," << format_double(r.noise_rate) << "," << format_double(r.offset_scale) << ","
       << format_double(r.value) << "\n";
  }
  return os.str();
}

}  // namespace pgca
