#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "longtail/common.hpp"

namespace longtail {

struct TrajectoryPoint {
  std::int64_t t = 0;  // discrete frame index
  double x = 0.0;      // meters
  double y = 0.0;      // meters

  Vec2 pos() const { return {x, y}; }
};

struct AgentTrack {
  int agent_id = 0;
  std::vector<TrajectoryPoint> points;  // strictly increasing in t
};

struct Scene {
  std::string scene_id;
  double dt = 0.0;  // seconds per frame step
  std::vector<AgentTrack> tracks;
  std::map<int, std::string> maneuver_labels;  // synthetic only; agents without entry are plain walkers
};

// Neighbor history, time-aligned with the sample's history frames.
struct NeighborTrack {
  int agent_id = 0;
  std::vector<TrajectoryPoint> points;  // h+1 points
};

struct TrajectorySample {
  std::string sample_id;
  std::vector<TrajectoryPoint> history;  // h+1 points, frames t-h..t
  std::vector<TrajectoryPoint> future;   // M points, frames t+1..t+M
  std::vector<NeighborTrack> neighbors;
  std::string origin_scene;
  std::string maneuver_label;  // empty unless the source agent carries a synthetic tag
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

inline std::vector<Vec2> future_positions(const TrajectorySample& sample) {
  std::vector<Vec2> out;
  out.reserve(sample.future.size());
  for (const auto& p : sample.future) out.push_back(p.pos());
  return out;
}

namespace detail {

inline bool parse_integral(const std::string& field, std::int64_t* out) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end == nullptr || *end != '\0' || field.empty()) return false;
  if (!std::isfinite(v) || v != std::floor(v)) return false;
  *out = static_cast<std::int64_t>(v);
  return true;
}

inline bool parse_double(const std::string& field, double* out) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end == nullptr || *end != '\0' || field.empty()) return false;
  if (!std::isfinite(v)) return false;
  *out = v;
  return true;
}

}  // namespace detail

// Reads a plain-text trajectory file with one observation per line:
//   frame_id agent_id x y
// separated by spaces or tabs. Lines starting with '#' and blank lines are skipped.
// frame_id and agent_id may be written as floats (as in the public ETH-UCY files)
// but must hold integral values. `frame_stride` divides raw frame ids so that files
// annotated every n-th frame produce contiguous indices (the public files use 10).
inline Scene load_ethucy(const std::string& path, double dt, std::int64_t frame_stride = 1) {
  if (dt <= 0.0) throw ConfigError("load_ethucy: dt must be positive");
  if (frame_stride < 1) throw ConfigError("load_ethucy: frame_stride must be >= 1");
  std::ifstream in(path);
  if (!in) throw IoError("load_ethucy: cannot open '" + path + "'");

  std::map<int, std::vector<TrajectoryPoint>> by_agent;
  std::map<std::pair<std::int64_t, int>, bool> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto fields = split_whitespace(stripped);
    if (fields.size() != 4)
      throw IoError("load_ethucy: line " + std::to_string(line_no) + ": expected 4 fields, got " +
                    std::to_string(fields.size()));
    std::int64_t frame = 0, agent = 0;
    double x = 0.0, y = 0.0;
    if (!detail::parse_integral(fields[0], &frame))
      throw IoError("load_ethucy: line " + std::to_string(line_no) + ": bad frame_id '" + fields[0] + "'");
    if (!detail::parse_integral(fields[1], &agent))
      throw IoError("load_ethucy: line " + std::to_string(line_no) + ": bad agent_id '" + fields[1] + "'");
    if (!detail::parse_double(fields[2], &x))
      throw IoError("load_ethucy: line " + std::to_string(line_no) + ": bad x '" + fields[2] + "'");
    if (!detail::parse_double(fields[3], &y))
      throw IoError("load_ethucy: line " + std::to_string(line_no) + ": bad y '" + fields[3] + "'");
    if (frame < 0) throw IoError("load_ethucy: line " + std::to_string(line_no) + ": negative frame_id");
    if (frame % frame_stride != 0)
      throw IoError("load_ethucy: line " + std::to_string(line_no) + ": frame_id " + std::to_string(frame) +
                    " not divisible by frame_stride " + std::to_string(frame_stride));
    frame /= frame_stride;
    if (!seen.emplace(std::make_pair(frame, static_cast<int>(agent)), true).second)
      throw IoError("load_ethucy: line " + std::to_string(line_no) + ": duplicate (frame, agent) pair (" +
                    std::to_string(frame) + ", " + std::to_string(agent) + ")");
    by_agent[static_cast<int>(agent)].push_back({frame, x, y});
  }

  Scene scene;
  scene.scene_id = path;
  scene.dt = dt;
  for (auto& [agent_id, points] : by_agent) {
    std::sort(points.begin(), points.end(),
              [](const TrajectoryPoint& a, const TrajectoryPoint& b) { return a.t < b.t; });
    scene.tracks.push_back({agent_id, std::move(points)});
  }
  return scene;
}

// Writes the same format: tab separated fields, positions with 6 decimal digits,
// ordered by (agent_id, frame). Optional comment lines go first, prefixed with '#'.
inline void write_ethucy(const Scene& scene, const std::string& path,
                         const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path);
  if (!out) throw IoError("write_ethucy: cannot open '" + path + "' for writing");
  for (const auto& c : header_comments) out << "# " << c << "\n";
  for (const auto& track : scene.tracks) {
    for (const auto& p : track.points) {
      out << p.t << "\t" << track.agent_id << "\t" << format_fixed(p.x, 6) << "\t" << format_fixed(p.y, 6)
          << "\n";
    }
  }
  if (!out) throw IoError("write_ethucy: write failed for '" + path + "'");
}

namespace detail {

inline std::string make_sample_id(const std::string& scene_id, int agent_id, std::int64_t anchor) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "a%06d_t%06lld", agent_id, static_cast<long long>(anchor));
  return scene_id.empty() ? std::string(buf) : scene_id + "_" + buf;
}

}  // namespace detail

// Windows every track into samples. A sample exists for each anchor frame t where the
// track holds contiguous frames t-h..t+M. Neighbors are the other agents present over
// the full history window t-h..t and within `neighbor_radius` of the anchor at frame t,
// ordered by distance (ties by agent_id) and capped at `max_neighbors`.
inline std::vector<TrajectorySample> extract_samples(const Scene& scene, int history_frames, int horizon,
                                                     double neighbor_radius, int max_neighbors = 1 << 20) {
  if (history_frames < 1 || horizon < 1)
    throw ConfigError("extract_samples: history_frames and horizon must be >= 1");
  const int h = history_frames;
  const int M = horizon;

  // frame -> position per agent, for neighbor lookups
  std::map<int, std::map<std::int64_t, Vec2>> positions;
  for (const auto& track : scene.tracks) {
    auto& m = positions[track.agent_id];
    for (const auto& p : track.points) m[p.t] = p.pos();
  }

  std::vector<TrajectorySample> samples;
  for (const auto& track : scene.tracks) {
    const auto& pts = track.points;
    const int n = static_cast<int>(pts.size());
    // runs of consecutive frames
    int run_start = 0;
    for (int i = 1; i <= n; ++i) {
      const bool breaks = (i == n) || (pts[i].t != pts[i - 1].t + 1);
      if (!breaks) continue;
      // anchor index within [run_start + h, i - M - 1]
      for (int a = run_start + h; a + M <= i - 1; ++a) {
        TrajectorySample s;
        s.sample_id = detail::make_sample_id(scene.scene_id, track.agent_id, pts[a].t);
        s.origin_scene = scene.scene_id;
        s.history.assign(pts.begin() + (a - h), pts.begin() + a + 1);
        s.future.assign(pts.begin() + a + 1, pts.begin() + a + 1 + M);
        auto label = scene.maneuver_labels.find(track.agent_id);
        if (label != scene.maneuver_labels.end()) s.maneuver_label = label->second;

        const std::int64_t t0 = pts[a - h].t;
        const std::int64_t t1 = pts[a].t;
        const Vec2 anchor = pts[a].pos();
        std::vector<std::pair<double, const AgentTrack*>> candidates;
        for (const auto& other : scene.tracks) {
          if (other.agent_id == track.agent_id) continue;
          const auto& m = positions[other.agent_id];
          bool covered = true;
          for (std::int64_t t = t0; t <= t1 && covered; ++t) covered = m.count(t) > 0;
          if (!covered) continue;
          const double d = distance(m.at(t1), anchor);
          if (d <= neighbor_radius) candidates.emplace_back(d, &other);
        }
        std::sort(candidates.begin(), candidates.end(),
                  [](const auto& a_, const auto& b_) {
                    if (a_.first != b_.first) return a_.first < b_.first;
                    return a_.second->agent_id < b_.second->agent_id;
                  });
        const int keep = std::min<int>(max_neighbors, static_cast<int>(candidates.size()));
        for (int c = 0; c < keep; ++c) {
          NeighborTrack nb;
          nb.agent_id = candidates[c].second->agent_id;
          const auto& m = positions[nb.agent_id];
          for (std::int64_t t = t0; t <= t1; ++t) {
            const Vec2 p = m.at(t);
            nb.points.push_back({t, p.x, p.y});
          }
          s.neighbors.push_back(std::move(nb));
        }
        samples.push_back(std::move(s));
      }
      run_start = i;
    }
  }
  return samples;
}

enum class ManeuverKind { kTurn, kStopAndGo, kSwerve };

struct SyntheticConfig {
  int n_agents = 100;
  double maneuver_fraction = 0.05;
  double noise_std = 0.02;      // isotropic position noise, meters
  int track_length = 30;        // frames per agent
  double dt = 0.4;              // seconds per frame
  double area_half_width = 25.0;
  double speed_min = 0.5;       // m/s
  double speed_max = 2.0;       // m/s
  double turn_weight = 1.0;     // maneuver mix, normalized internally
  double stop_weight = 1.0;
  double swerve_weight = 1.0;

  void validate() const {
    if (n_agents < 0) throw ConfigError("gen.n_agents: must be >= 0");
    if (maneuver_fraction < 0.0 || maneuver_fraction > 1.0)
      throw ConfigError("gen.maneuver_fraction: must be in [0, 1]");
    if (noise_std < 0.0) throw ConfigError("gen.noise_std: must be >= 0");
    if (track_length < 2) throw ConfigError("gen.track_length: must be >= 2");
    if (dt <= 0.0) throw ConfigError("gen.dt: must be > 0");
    if (speed_min <= 0.0 || speed_max < speed_min)
      throw ConfigError("gen.speed_min/speed_max: need 0 < speed_min <= speed_max");
    if (turn_weight < 0.0 || stop_weight < 0.0 || swerve_weight < 0.0)
      throw ConfigError("gen.*_weight: must be >= 0");
    if (turn_weight + stop_weight + swerve_weight <= 0.0 && maneuver_fraction > 0.0)
      throw ConfigError("gen.*_weight: at least one maneuver weight must be positive");
  }
};

namespace detail {

// Largest-remainder apportionment of `total` maneuvers over the three kinds.
inline std::vector<ManeuverKind> maneuver_assignment(const SyntheticConfig& cfg, int total) {
  std::vector<ManeuverKind> kinds;
  if (total == 0) return kinds;
  const double wsum = cfg.turn_weight + cfg.stop_weight + cfg.swerve_weight;
  const double raw[3] = {cfg.turn_weight / wsum * total, cfg.stop_weight / wsum * total,
                         cfg.swerve_weight / wsum * total};
  int counts[3];
  double rem[3];
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    counts[i] = static_cast<int>(std::floor(raw[i]));
    rem[i] = raw[i] - counts[i];
    assigned += counts[i];
  }
  while (assigned < total) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  for (int i = 0; i < counts[0]; ++i) kinds.push_back(ManeuverKind::kTurn);
  for (int i = 0; i < counts[1]; ++i) kinds.push_back(ManeuverKind::kStopAndGo);
  for (int i = 0; i < counts[2]; ++i) kinds.push_back(ManeuverKind::kSwerve);
  return kinds;
}

}  // namespace detail

// Builds a long-tailed scene: mostly constant-velocity walkers, plus a small set of
// maneuver agents (90-degree turn spread over 3 steps, a 4-step full stop mid-track,
// or a lateral swerve around a static agent placed on the path). The swerve partner
// is emitted as an extra static track with id >= n_agents. Pure function of
// (cfg, seed): identical inputs give a bitwise identical scene.
inline Scene generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();

  Scene scene;
  scene.scene_id = "syn" + std::to_string(seed);
  scene.dt = cfg.dt;

  const int n_maneuver = static_cast<int>(std::floor(cfg.n_agents * cfg.maneuver_fraction));
  const auto kinds = detail::maneuver_assignment(cfg, n_maneuver);
  const int L = cfg.track_length;

  std::vector<AgentTrack> partners;
  int next_partner_id = cfg.n_agents;

  for (int agent = 0; agent < cfg.n_agents; ++agent) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(agent)));
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double heading0 = rng.uniform(0.0, 2.0 * M_PI);
    Vec2 pos{rng.uniform(-cfg.area_half_width, cfg.area_half_width),
             rng.uniform(-cfg.area_half_width, cfg.area_half_width)};
    const double step = speed * cfg.dt;  // meters per frame

    std::optional<ManeuverKind> kind;
    if (agent < n_maneuver) kind = kinds[agent];

    // exact (noise-free) path
    std::vector<Vec2> path;
    path.reserve(L);
    double heading = heading0;
    if (!kind) {
      for (int t = 0; t < L; ++t) {
        path.push_back(pos);
        pos = pos + Vec2{std::cos(heading), std::sin(heading)} * step;
      }
    } else if (*kind == ManeuverKind::kTurn) {
      // heading rotates 90 degrees over 3 steps starting at a random interior frame
      const int turn_start = 2 + static_cast<int>(rng.uniform_index(std::max(1, L - 7)));
      const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
      for (int t = 0; t < L; ++t) {
        path.push_back(pos);
        if (t >= turn_start && t < turn_start + 3) heading += sign * (M_PI / 2.0) / 3.0;
        pos = pos + Vec2{std::cos(heading), std::sin(heading)} * step;
      }
      scene.maneuver_labels[agent] = "turn";
    } else if (*kind == ManeuverKind::kStopAndGo) {
      // zero velocity for 4 steps mid-track, then the walk resumes
      const int stop_start = 2 + static_cast<int>(rng.uniform_index(std::max(1, L - 7)));
      for (int t = 0; t < L; ++t) {
        path.push_back(pos);
        const bool stopped = t >= stop_start && t < stop_start + 4;
        if (!stopped) pos = pos + Vec2{std::cos(heading), std::sin(heading)} * step;
      }
      scene.maneuver_labels[agent] = "stop_go";
    } else {
      // lateral offset ramp (triangle profile) around a static agent on the path
      const int ramp = 8;
      const int lo = 2 + ramp / 2;
      const int hi = std::max(lo + 1, L - 2 - ramp / 2);
      const int center = lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo)));
      const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
      const double offset_max = rng.uniform(1.0, 2.0);
      const Vec2 dir{std::cos(heading), std::sin(heading)};
      const Vec2 lateral{-dir.y, dir.x};
      const Vec2 start = pos;
      for (int t = 0; t < L; ++t) {
        double off = 0.0;
        const int d = std::abs(t - center);
        if (d < ramp / 2) off = offset_max * (1.0 - static_cast<double>(d) / (ramp / 2));
        path.push_back(start + dir * (step * t) + lateral * (side * off));
      }
      scene.maneuver_labels[agent] = "swerve";
      // partner sits exactly where the unperturbed path would have been
      const Vec2 obstacle = start + dir * (step * center);
      AgentTrack partner;
      partner.agent_id = next_partner_id++;
      Rng prng(mix_seed(seed, 0x70000000ULL + static_cast<std::uint64_t>(agent)));
      for (int t = 0; t < L; ++t) {
        const double nx = cfg.noise_std > 0.0 ? prng.normal(0.0, cfg.noise_std) : 0.0;
        const double ny = cfg.noise_std > 0.0 ? prng.normal(0.0, cfg.noise_std) : 0.0;
        partner.points.push_back({t, obstacle.x + nx, obstacle.y + ny});
      }
      partners.push_back(std::move(partner));
    }

    AgentTrack track;
    track.agent_id = agent;
    for (int t = 0; t < L; ++t) {
      const double nx = cfg.noise_std > 0.0 ? rng.normal(0.0, cfg.noise_std) : 0.0;
      const double ny = cfg.noise_std > 0.0 ? rng.normal(0.0, cfg.noise_std) : 0.0;
      track.points.push_back({t, path[t].x + nx, path[t].y + ny});
    }
    scene.tracks.push_back(std::move(track));
  }

  for (auto& p : partners) scene.tracks.push_back(std::move(p));
  return scene;
}

// Translation that maps the last observed point to the origin.
struct NormalizeTransform {
  double offset_x = 0.0;
  double offset_y = 0.0;

  Vec2 to_scene(const Vec2& p) const { return {p.x + offset_x, p.y + offset_y}; }
  Vec2 to_local(const Vec2& p) const { return {p.x - offset_x, p.y - offset_y}; }
};

inline std::pair<TrajectorySample, NormalizeTransform> normalize(const TrajectorySample& sample) {
  if (sample.history.empty()) throw std::invalid_argument("normalize: empty history");
  NormalizeTransform tf{sample.history.back().x, sample.history.back().y};
  TrajectorySample out = sample;
  auto shift = [&](std::vector<TrajectoryPoint>& pts) {
    for (auto& p : pts) {
      p.x -= tf.offset_x;
      p.y -= tf.offset_y;
    }
  };
  shift(out.history);
  shift(out.future);
  for (auto& nb : out.neighbors) shift(nb.points);
  return {std::move(out), tf};
}

inline TrajectorySample denormalize(const TrajectorySample& sample, const NormalizeTransform& tf) {
  TrajectorySample out = sample;
  auto shift = [&](std::vector<TrajectoryPoint>& pts) {
    for (auto& p : pts) {
      p.x += tf.offset_x;
      p.y += tf.offset_y;
    }
  };
  shift(out.history);
  shift(out.future);
  for (auto& nb : out.neighbors) shift(nb.points);
  return out;
}

// Seeded, disjoint train/val/test partition over sample ids. Fractions apply to the
// id list sorted lexicographically, shuffled by `seed`, so the split is independent
// of the input ordering.
inline DatasetSplit make_split(const std::vector<TrajectorySample>& samples, double train_frac,
                               double val_frac, std::uint64_t seed) {
  if (train_frac < 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0 + 1e-12)
    throw ConfigError("make_split: fractions must be nonnegative and sum to <= 1");
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.sample_id);
  std::sort(ids.begin(), ids.end());
  Rng rng(mix_seed(seed, 0x5417ULL));
  deterministic_shuffle(ids, rng);

  const std::size_t n = ids.size();
  const std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  const std::size_t n_val =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n))));
  DatasetSplit split;
  split.train.assign(ids.begin(), ids.begin() + n_train);
  split.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  split.test.assign(ids.begin() + n_train + n_val, ids.end());
  return split;
}

}  // namespace longtail
