#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "longtail/difficulty.hpp"
#include "longtail/model.hpp"

namespace longtail {

// Best-of-K mean displacement against the ground truth.
inline double min_ade(const HypothesisSet& hyps, const std::vector<Vec2>& gt) {
  if (static_cast<int>(gt.size()) != hyps.horizon)
    throw std::invalid_argument("min_ade: ground truth length does not match horizon");
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < hyps.hypothesis_count; ++k) {
    double sum = 0.0;
    for (int m = 0; m < hyps.horizon; ++m) sum += distance(hyps.at(k, m), gt[m]);
    best = std::min(best, sum / static_cast<double>(hyps.horizon));
  }
  return best;
}

// Best-of-K displacement at the final step.
inline double min_fde(const HypothesisSet& hyps, const std::vector<Vec2>& gt) {
  if (static_cast<int>(gt.size()) != hyps.horizon)
    throw std::invalid_argument("min_fde: ground truth length does not match horizon");
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < hyps.hypothesis_count; ++k)
    best = std::min(best, distance(hyps.at(k, hyps.horizon - 1), gt[hyps.horizon - 1]));
  return best;
}

struct SubsetMetrics {
  std::string name;       // "all" or "topP"
  double percent = 0.0;   // 0 for "all"
  std::size_t count = 0;
  double min_ade = 0.0;
  double min_fde = 0.0;
};

struct EvalReport {
  std::string run_id;
  std::vector<SubsetMetrics> subsets;
  std::vector<std::pair<std::string, std::string>> config_echo;
};

namespace detail {

struct SampleMetrics {
  double ade = 0.0;
  double fde = 0.0;
};

inline std::string percent_label(double p) {
  char buf[32];
  if (p == std::floor(p)) {
    std::snprintf(buf, sizeof(buf), "top%d", static_cast<int>(p));
  } else {
    std::snprintf(buf, sizeof(buf), "top%g", p);
  }
  return buf;
}

}  // namespace detail

// Runs the model over a split and aggregates min-ADE / min-FDE over all samples and
// over each top-percent hardest subset. Metrics are computed in scene coordinates
// (predictions are denormalized through the sample transform). The subsets use exactly
// the difficulty module's ranking over the split's scores.
inline EvalReport evaluate(const ModelParams& params, const std::vector<TrajectorySample>& samples,
                           const DifficultyTable& table, const std::vector<double>& percents,
                           const std::string& run_id = "",
                           std::vector<std::pair<std::string, std::string>> config_echo = {}) {
  std::map<std::string, detail::SampleMetrics> per_sample;
  DifficultyTable split_table;
  split_table.split_tag = table.split_tag;
  for (const auto& sample : samples) {
    const auto [normalized, tf] = normalize(sample);
    const auto fwd = forward(params, normalized);
    HypothesisSet scene_hyps = fwd.hyps;
    for (auto& p : scene_hyps.points) p = tf.to_scene(p);
    const auto gt = future_positions(sample);
    per_sample[sample.sample_id] = {min_ade(scene_hyps, gt), min_fde(scene_hyps, gt)};
    split_table.entries[sample.sample_id] = table.at(sample.sample_id);
  }

  auto aggregate = [&](const std::vector<std::string>& ids, const std::string& name, double percent) {
    SubsetMetrics m;
    m.name = name;
    m.percent = percent;
    m.count = ids.size();
    double ade = 0.0, fde = 0.0;
    for (const auto& id : ids) {
      const auto& sm = per_sample.at(id);
      ade += sm.ade;
      fde += sm.fde;
    }
    if (!ids.empty()) {
      m.min_ade = ade / static_cast<double>(ids.size());
      m.min_fde = fde / static_cast<double>(ids.size());
    }
    return m;
  };

  EvalReport report;
  report.run_id = run_id;
  report.config_echo = std::move(config_echo);
  std::vector<std::string> all_ids;
  all_ids.reserve(per_sample.size());
  for (const auto& [id, _] : per_sample) all_ids.push_back(id);
  report.subsets.push_back(aggregate(all_ids, "all", 0.0));
  for (double p : percents)
    report.subsets.push_back(aggregate(top_percent(split_table, p), detail::percent_label(p), p));
  return report;
}

// CSV of bottleneck embeddings: sample_id, difficulty score, then the embedding
// coordinates, 9 decimal digits. Rows in ascending sample_id order.
inline void export_embeddings(const ModelParams& params, const std::vector<TrajectorySample>& samples,
                              const DifficultyTable& table, const std::string& path,
                              const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path);
  if (!out) throw IoError("export_embeddings: cannot open '" + path + "' for writing");
  for (const auto& c : header_comments) out << "# " << c << "\n";
  out << "sample_id,score";
  for (int d = 0; d < params.config.embed_dim; ++d) out << ",z_" << d;
  out << "\n";

  std::map<std::string, const TrajectorySample*> ordered;
  for (const auto& s : samples) ordered[s.sample_id] = &s;
  for (const auto& [id, sample] : ordered) {
    const auto [normalized, tf] = normalize(*sample);
    const Embedding z = encode(params, normalized);
    out << id << "," << format_fixed(table.at(id), 9);
    for (Eigen::Index d = 0; d < z.size(); ++d) out << "," << format_fixed(z(d), 9);
    out << "\n";
  }
  if (!out) throw IoError("export_embeddings: write failed for '" + path + "'");
}

// Fixed-width histogram of a difficulty table, rows bin_lo,bin_hi,count. Bins cover
// [0, max score]; empty leading/interior bins are kept so the shape reads directly.
inline void export_histogram(const DifficultyTable& table, double bin_width, const std::string& path,
                             const std::vector<std::string>& header_comments = {}) {
  if (bin_width <= 0.0) throw ConfigError("export_histogram: bin_width must be > 0");
  std::ofstream out(path);
  if (!out) throw IoError("export_histogram: cannot open '" + path + "' for writing");
  for (const auto& c : header_comments) out << "# " << c << "\n";
  out << "bin_lo,bin_hi,count\n";
  if (table.entries.empty()) return;

  std::int64_t max_bin = 0;
  std::map<std::int64_t, std::int64_t> counts;
  for (const auto& [id, score] : table.entries) {
    const std::int64_t bin = static_cast<std::int64_t>(std::floor(score / bin_width));
    ++counts[bin];
    max_bin = std::max(max_bin, bin);
  }
  for (std::int64_t b = 0; b <= max_bin; ++b) {
    const auto it = counts.find(b);
    const std::int64_t c = it == counts.end() ? 0 : it->second;
    out << format_fixed(b * bin_width, 9) << "," << format_fixed((b + 1) * bin_width, 9) << "," << c
        << "\n";
  }
  if (!out) throw IoError("export_histogram: write failed for '" + path + "'");
}

inline void write_eval_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_eval_report: cannot open '" + path + "' for writing");
  out << "longtail-eval-report v1\n";
  out << "run_id " << (report.run_id.empty() ? "-" : report.run_id) << "\n";
  for (const auto& [k, v] : report.config_echo) out << "config " << k << " = " << v << "\n";
  for (const auto& s : report.subsets) {
    out << "subset " << s.name << " percent " << format_fixed(s.percent, 3) << " count " << s.count
        << " min_ade " << format_fixed(s.min_ade, 9) << " min_fde " << format_fixed(s.min_fde, 9) << "\n";
  }
  if (!out) throw IoError("write_eval_report: write failed for '" + path + "'");
}

inline EvalReport load_eval_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_eval_report: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line) != "longtail-eval-report v1")
    throw IoError("load_eval_report: '" + path + "' is not an eval report");
  EvalReport report;
  while (std::getline(in, line)) {
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto fields = split_whitespace(stripped);
    if (fields[0] == "run_id" && fields.size() == 2) {
      report.run_id = fields[1] == "-" ? "" : fields[1];
    } else if (fields[0] == "config") {
      // config <key> = <value...>
      if (fields.size() >= 4 && fields[2] == "=") {
        std::string value = fields[3];
        for (std::size_t i = 4; i < fields.size(); ++i) value += " " + fields[i];
        report.config_echo.emplace_back(fields[1], value);
      }
    } else if (fields[0] == "subset" && fields.size() == 10) {
      SubsetMetrics m;
      m.name = fields[1];
      m.percent = std::strtod(fields[3].c_str(), nullptr);
      m.count = static_cast<std::size_t>(std::strtoll(fields[5].c_str(), nullptr, 10));
      m.min_ade = std::strtod(fields[7].c_str(), nullptr);
      m.min_fde = std::strtod(fields[9].c_str(), nullptr);
      report.subsets.push_back(std::move(m));
    } else {
      throw IoError("load_eval_report: malformed line in '" + path + "': " + stripped);
    }
  }
  return report;
}

struct ComparisonRow {
  std::string run_id;
  std::vector<SubsetMetrics> subsets;
  std::vector<double> ade_delta_pct;  // relative to the baseline row, per subset
  std::vector<double> fde_delta_pct;
};

struct ComparisonTable {
  std::vector<std::string> subset_names;
  std::size_t baseline_index = 0;
  std::vector<ComparisonRow> rows;
};

// One row per run with relative deltas against a designated baseline row. All reports
// must share the same subset layout.
inline ComparisonTable compare_runs(const std::vector<EvalReport>& reports, std::size_t baseline_index = 0) {
  if (reports.empty()) throw std::invalid_argument("compare_runs: no reports");
  if (baseline_index >= reports.size())
    throw std::invalid_argument("compare_runs: baseline index out of range");

  ComparisonTable table;
  table.baseline_index = baseline_index;
  for (const auto& s : reports[0].subsets) table.subset_names.push_back(s.name);
  for (const auto& r : reports) {
    if (r.subsets.size() != table.subset_names.size())
      throw std::invalid_argument("compare_runs: reports disagree on subsets");
    for (std::size_t i = 0; i < r.subsets.size(); ++i)
      if (r.subsets[i].name != table.subset_names[i])
        throw std::invalid_argument("compare_runs: reports disagree on subsets");
  }

  const auto& base = reports[baseline_index].subsets;
  for (const auto& r : reports) {
    ComparisonRow row;
    row.run_id = r.run_id;
    row.subsets = r.subsets;
    for (std::size_t i = 0; i < r.subsets.size(); ++i) {
      auto delta = [](double value, double reference) {
        if (reference == 0.0) return 0.0;
        return (value - reference) / reference * 100.0;
      };
      row.ade_delta_pct.push_back(delta(r.subsets[i].min_ade, base[i].min_ade));
      row.fde_delta_pct.push_back(delta(r.subsets[i].min_fde, base[i].min_fde));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Tab-separated rendering with a fixed column order: for each subset, min_ade, min_fde
// and their percent deltas vs the baseline row.
inline void write_comparison(const ComparisonTable& table, const std::string& path,
                             const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path);
  if (!out) throw IoError("write_comparison: cannot open '" + path + "' for writing");
  for (const auto& c : header_comments) out << "# " << c << "\n";
  out << "run_id";
  for (const auto& name : table.subset_names)
    out << "\t" << name << "_min_ade\t" << name << "_min_fde\t" << name << "_dade_pct\t" << name
        << "_dfde_pct";
  out << "\n";
  for (const auto& row : table.rows) {
    out << (row.run_id.empty() ? "-" : row.run_id);
    for (std::size_t i = 0; i < table.subset_names.size(); ++i) {
      out << "\t" << format_fixed(row.subsets[i].min_ade, 9) << "\t" << format_fixed(row.subsets[i].min_fde, 9)
          << "\t" << format_fixed(row.ade_delta_pct[i], 3) << "\t" << format_fixed(row.fde_delta_pct[i], 3);
    }
    out << "\n";
  }
  if (!out) throw IoError("write_comparison: write failed for '" + path + "'");
}

}  // namespace longtail
