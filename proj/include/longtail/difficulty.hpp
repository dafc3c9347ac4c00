#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "longtail/data.hpp"

namespace longtail {

enum class KalmanErrorMode { kMean, kFinal };

struct KalmanConfig {
  double process_noise_std = 0.05;  // white-acceleration magnitude, meters per frame^2
  double obs_noise_std = 0.05;      // position observation noise, meters
  bool init_from_first_two = true;  // position = second point, velocity = finite difference
  KalmanErrorMode error_mode = KalmanErrorMode::kMean;

  void validate() const {
    if (process_noise_std < 0.0 || obs_noise_std < 0.0)
      throw ConfigError("kalman: noise stds must be >= 0");
  }
};

struct DifficultyScore {
  double value = 0.0;  // meters
};

struct DifficultyTable {
  std::string split_tag;
  std::map<std::string, double> entries;  // sample_id -> score

  double at(const std::string& sample_id) const {
    auto it = entries.find(sample_id);
    if (it == entries.end())
      throw std::invalid_argument("difficulty table: no entry for sample '" + sample_id + "'");
    return it->second;
  }
};

struct DifficultyBins {
  std::vector<double> edges;  // lower bound of each class, strictly increasing
  double bin_width = 0.0;
  double tail_threshold = 0.0;
  std::map<std::string, int> class_of;
  std::vector<std::int64_t> counts;

  int num_classes() const { return static_cast<int>(counts.size()); }
};

// Difficulty of one sample: run a constant-velocity Kalman filter (state x, y, vx, vy,
// position-only observations, one frame per step) over the history, extrapolate M steps,
// and return the displacement against the ground-truth future (mean over steps by
// default, final step optionally). The score is a ranking signal, not a calibrated
// uncertainty, so the filter setup is deliberately plain.
inline DifficultyScore kalman_score(const TrajectorySample& sample, const KalmanConfig& cfg) {
  cfg.validate();
  if (sample.history.size() < 2)
    throw std::invalid_argument("kalman_score: history must hold at least 2 points (sample '" +
                                sample.sample_id + "')");
  if (sample.future.empty())
    throw std::invalid_argument("kalman_score: empty future (sample '" + sample.sample_id + "')");

  using Eigen::Matrix2d;
  using Eigen::Matrix4d;
  using Eigen::Vector4d;
  using Mat42 = Eigen::Matrix<double, 4, 2>;
  using Mat24 = Eigen::Matrix<double, 2, 4>;

  Matrix4d F = Matrix4d::Identity();
  F(0, 2) = 1.0;
  F(1, 3) = 1.0;
  Mat24 H = Mat24::Zero();
  H(0, 0) = 1.0;
  H(1, 1) = 1.0;

  // discrete white-acceleration process noise (dt = 1 frame), isotropic in x/y
  const double q2 = cfg.process_noise_std * cfg.process_noise_std;
  Matrix4d Q = Matrix4d::Zero();
  Q(0, 0) = Q(1, 1) = 0.25 * q2;
  Q(2, 2) = Q(3, 3) = q2;
  Q(0, 2) = Q(2, 0) = 0.5 * q2;
  Q(1, 3) = Q(3, 1) = 0.5 * q2;

  // observation noise floored so the innovation covariance stays invertible
  const double r2 = std::max(cfg.obs_noise_std * cfg.obs_noise_std, 1e-12);
  const Matrix2d R = Matrix2d::Identity() * r2;

  const auto& hist = sample.history;
  Vector4d x;
  x << hist[1].x, hist[1].y, hist[1].x - hist[0].x, hist[1].y - hist[0].y;
  Matrix4d P = Matrix4d::Identity();

  for (std::size_t i = 2; i < hist.size(); ++i) {
    x = F * x;
    P = F * P * F.transpose() + Q;
    const Eigen::Vector2d innovation(hist[i].x - x(0), hist[i].y - x(1));
    const Matrix2d S = H * P * H.transpose() + R;
    const Mat42 K = P * H.transpose() * S.inverse();
    x += K * innovation;
    P = (Matrix4d::Identity() - K * H) * P;
  }

  double sum = 0.0;
  double last = 0.0;
  for (std::size_t m = 0; m < sample.future.size(); ++m) {
    x = F * x;
    const double dx = x(0) - sample.future[m].x;
    const double dy = x(1) - sample.future[m].y;
    last = std::hypot(dx, dy);
    sum += last;
  }
  const double value =
      cfg.error_mode == KalmanErrorMode::kMean ? sum / static_cast<double>(sample.future.size()) : last;
  if (!std::isfinite(value)) throw NumericError("kalman_score: non-finite score for '" + sample.sample_id + "'");
  return {value};
}

// Scores every sample; the map keying makes the result order independent.
inline DifficultyTable score_split(const std::vector<TrajectorySample>& samples, const KalmanConfig& cfg,
                                   std::string split_tag = "") {
  DifficultyTable table;
  table.split_tag = std::move(split_tag);
  // kalman_score already names the offending sample in its errors
  for (const auto& s : samples) table.entries[s.sample_id] = kalman_score(s, cfg).value;
  return table;
}

// The ceil(p/100 * N) highest-scoring sample ids, descending score, ties broken by
// ascending sample_id.
inline std::vector<std::string> top_percent(const DifficultyTable& table, double percent) {
  if (!(percent > 0.0) || percent > 100.0)
    throw std::invalid_argument("top_percent: percent must be in (0, 100]");
  std::vector<std::pair<std::string, double>> items(table.entries.begin(), table.entries.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t n = items.size();
  std::size_t take = static_cast<std::size_t>(
      std::ceil(percent * static_cast<double>(n) / 100.0 - 1e-9));
  if (n > 0 && take == 0) take = 1;
  take = std::min(take, n);
  std::vector<std::string> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(items[i].first);
  return out;
}

// Discretizes scores into pseudo-classes: floor(score / bin_width) below the tail
// threshold, one shared class at and above it. Empty bins are dropped and the class
// indices re-packed densely ascending.
inline DifficultyBins bin_scores(const DifficultyTable& table, double bin_width, double tail_threshold) {
  if (bin_width <= 0.0) throw ConfigError("bin_scores: bin_width must be > 0");
  if (tail_threshold <= 0.0) throw ConfigError("bin_scores: tail_threshold must be > 0");

  const std::int64_t tail_key = INT64_MAX;
  std::map<std::int64_t, std::int64_t> raw_counts;
  std::map<std::string, std::int64_t> raw_class;
  for (const auto& [id, score] : table.entries) {
    std::int64_t key;
    if (score >= tail_threshold) {
      key = tail_key;
    } else {
      key = static_cast<std::int64_t>(std::floor(score / bin_width));
    }
    raw_class[id] = key;
    ++raw_counts[key];
  }

  DifficultyBins bins;
  bins.bin_width = bin_width;
  bins.tail_threshold = tail_threshold;
  std::map<std::int64_t, int> dense;
  for (const auto& [key, count] : raw_counts) {
    dense[key] = static_cast<int>(bins.counts.size());
    bins.counts.push_back(count);
    bins.edges.push_back(key == tail_key ? tail_threshold : static_cast<double>(key) * bin_width);
  }
  for (const auto& [id, key] : raw_class) bins.class_of[id] = dense[key];
  return bins;
}

inline void write_difficulty_csv(const DifficultyTable& table, const std::string& path,
                                 const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path);
  if (!out) throw IoError("write_difficulty_csv: cannot open '" + path + "' for writing");
  for (const auto& c : header_comments) out << "# " << c << "\n";
  out << "sample_id,score\n";
  for (const auto& [id, score] : table.entries) out << id << "," << format_fixed(score, 9) << "\n";
  if (!out) throw IoError("write_difficulty_csv: write failed for '" + path + "'");
}

inline DifficultyTable load_difficulty_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_difficulty_csv: cannot open '" + path + "'");
  DifficultyTable table;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    if (!header_seen) {
      if (stripped != "sample_id,score")
        throw IoError("load_difficulty_csv: line " + std::to_string(line_no) +
                      ": expected header 'sample_id,score'");
      header_seen = true;
      continue;
    }
    const auto fields = split_char(stripped, ',');
    if (fields.size() != 2)
      throw IoError("load_difficulty_csv: line " + std::to_string(line_no) + ": expected 2 fields");
    double score = 0.0;
    if (!detail::parse_double(fields[1], &score))
      throw IoError("load_difficulty_csv: line " + std::to_string(line_no) + ": bad score '" + fields[1] +
                    "'");
    if (!table.entries.emplace(fields[0], score).second)
      throw IoError("load_difficulty_csv: line " + std::to_string(line_no) + ": duplicate sample_id '" +
                    fields[0] + "'");
  }
  if (!header_seen) throw IoError("load_difficulty_csv: missing header in '" + path + "'");
  return table;
}

// Restriction of a table to the given ids; every id must be covered.
inline DifficultyTable slice_table(const DifficultyTable& table, const std::vector<std::string>& ids,
                                   std::string split_tag = "") {
  DifficultyTable out;
  out.split_tag = std::move(split_tag);
  for (const auto& id : ids) out.entries[id] = table.at(id);
  return out;
}

}  // namespace longtail
