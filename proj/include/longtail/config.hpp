#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "longtail/data.hpp"
#include "longtail/difficulty.hpp"
#include "longtail/trainer.hpp"

namespace longtail {

enum class ConfigSource { kDefault, kFile, kFlag };

inline const char* config_source_name(ConfigSource s) {
  switch (s) {
    case ConfigSource::kDefault: return "default";
    case ConfigSource::kFile: return "file";
    case ConfigSource::kFlag: return "flag";
  }
  return "default";
}

// Flat key-value configuration with dotted section keys (`loss.lambda = 50`).
// Defaults are registered first, then file values, then flag overrides; each key
// remembers where its value came from. Lookups of unregistered keys are errors so
// typos in files or flags never pass silently.
class ConfigMap {
 public:
  void set_default(const std::string& key, const std::string& value) {
    values_[key] = {value, ConfigSource::kDefault};
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string stripped = trim(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      const auto eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: " + path + ":" + std::to_string(line_no) + ": expected 'key = value'");
      const std::string key = trim(stripped.substr(0, eq));
      const std::string value = trim(stripped.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config: " + path + ":" + std::to_string(line_no) + ": empty key");
      if (!values_.count(key))
        throw ConfigError("config: " + path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
      values_[key] = {value, ConfigSource::kFile};
    }
  }

  void set_flag(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    values_[key] = {value, ConfigSource::kFlag};
  }

  // `key=value` as accepted by the --set flag
  void set_flag_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: --set expects key=value, got '" + assignment + "'");
    set_flag(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second.value;
  }

  ConfigSource source(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second.source;
  }

  double get_double(const std::string& key) const {
    double v = 0.0;
    if (!detail::parse_double(raw(key), &v))
      throw ConfigError("config: key '" + key + "': expected a number, got '" + raw(key) + "'");
    return v;
  }

  std::int64_t get_int(const std::string& key) const {
    std::int64_t v = 0;
    if (!detail::parse_integral(raw(key), &v))
      throw ConfigError("config: key '" + key + "': expected an integer, got '" + raw(key) + "'");
    return v;
  }

  std::uint64_t get_uint(const std::string& key) const {
    const std::int64_t v = get_int(key);
    if (v < 0) throw ConfigError("config: key '" + key + "': expected a nonnegative integer");
    return static_cast<std::uint64_t>(v);
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = raw(key);
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config: key '" + key + "': expected a boolean, got '" + v + "'");
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& part : split_char(raw(key), ',')) {
      std::int64_t v = 0;
      if (!detail::parse_integral(trim(part), &v))
        throw ConfigError("config: key '" + key + "': expected comma-separated integers");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

  std::vector<double> get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : split_char(raw(key), ',')) {
      double v = 0.0;
      if (!detail::parse_double(trim(part), &v))
        throw ConfigError("config: key '" + key + "': expected comma-separated numbers");
      out.push_back(v);
    }
    return out;
  }

  // Resolved view, sorted by key, with provenance. Echoed into output artifacts.
  std::vector<std::string> echo_lines() const {
    std::vector<std::string> lines;
    for (const auto& [key, entry] : values_)
      lines.push_back(key + " = " + entry.value + "  (" + config_source_name(entry.source) + ")");
    return lines;
  }

  std::vector<std::pair<std::string, std::string>> echo_pairs() const {
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& [key, entry] : values_) kv.emplace_back(key, entry.value);
    return kv;
  }

 private:
  struct Entry {
    std::string value;
    ConfigSource source = ConfigSource::kDefault;
  };
  std::map<std::string, Entry> values_;
};

// Registry of every key with its default, shared by all subcommands so any config
// file can drive the whole pipeline.
inline ConfigMap make_default_config() {
  ConfigMap cfg;
  // data windowing / ingestion
  cfg.set_default("data.dt", "0.4");
  cfg.set_default("data.h", "7");
  cfg.set_default("data.M", "12");
  cfg.set_default("data.neighbor_radius", "5.0");
  cfg.set_default("data.max_neighbors", "4");
  cfg.set_default("data.frame_stride", "1");
  cfg.set_default("data.train_frac", "0.7");
  cfg.set_default("data.val_frac", "0.15");
  cfg.set_default("data.split_seed", "17");
  // synthetic generator
  cfg.set_default("gen.n_agents", "100");
  cfg.set_default("gen.maneuver_fraction", "0.05");
  cfg.set_default("gen.noise_std", "0.02");
  cfg.set_default("gen.track_length", "30");
  cfg.set_default("gen.area_half_width", "25.0");
  cfg.set_default("gen.speed_min", "0.5");
  cfg.set_default("gen.speed_max", "2.0");
  cfg.set_default("gen.turn_weight", "1.0");
  cfg.set_default("gen.stop_weight", "1.0");
  cfg.set_default("gen.swerve_weight", "1.0");
  cfg.set_default("gen.seed", "0");
  // kalman difficulty
  cfg.set_default("kalman.process_noise_std", "0.05");
  cfg.set_default("kalman.obs_noise_std", "0.05");
  cfg.set_default("kalman.error_mode", "mean");
  // model
  cfg.set_default("model.K", "20");
  cfg.set_default("model.embed_dim", "64");
  cfg.set_default("model.hidden_widths", "64,64");
  cfg.set_default("model.use_neighbors", "false");
  cfg.set_default("model.input_scale", "1.0");
  // loss
  cfg.set_default("loss.tau", "0.5");
  cfg.set_default("loss.lambda", "0.0");
  cfg.set_default("loss.theta_p", "0.0");
  cfg.set_default("loss.theta_n", "0.0");
  cfg.set_default("loss.denominator_mode", "masked");
  cfg.set_default("loss.normalize_z", "true");
  cfg.set_default("loss.winner_mode", "per_step");
  // trainer
  cfg.set_default("train.seed", "0");
  cfg.set_default("train.batch_size", "64");
  cfg.set_default("train.epochs_per_stage", "5");
  cfg.set_default("train.learning_rate", "0.001");
  cfg.set_default("train.adam_beta1", "0.9");
  cfg.set_default("train.adam_beta2", "0.999");
  cfg.set_default("train.adam_epsilon", "1e-8");
  cfg.set_default("train.calibrate_from_ratios", "true");
  cfg.set_default("train.target_pos_ratio", "0.10");
  cfg.set_default("train.target_neg_ratio", "0.40");
  cfg.set_default("train.max_calibration_pairs", "1000000");
  cfg.set_default("train.baseline", "none");
  cfg.set_default("train.effective_beta", "0.9");
  cfg.set_default("train.ldam_margin_scale", "0.5");
  cfg.set_default("train.ldam_logit_scale", "1.0");
  cfg.set_default("train.bin_width", "0.5");
  cfg.set_default("train.tail_threshold", "2.0");
  cfg.set_default("train.drw_start_epoch", "0");
  cfg.set_default("train.val_percent", "5.0");
  // eval
  cfg.set_default("eval.percents", "1,2,3");
  cfg.set_default("eval.split", "test");
  return cfg;
}

inline SyntheticConfig synthetic_config_from(const ConfigMap& cfg) {
  SyntheticConfig g;
  g.n_agents = static_cast<int>(cfg.get_int("gen.n_agents"));
  g.maneuver_fraction = cfg.get_double("gen.maneuver_fraction");
  g.noise_std = cfg.get_double("gen.noise_std");
  g.track_length = static_cast<int>(cfg.get_int("gen.track_length"));
  g.dt = cfg.get_double("data.dt");
  g.area_half_width = cfg.get_double("gen.area_half_width");
  g.speed_min = cfg.get_double("gen.speed_min");
  g.speed_max = cfg.get_double("gen.speed_max");
  g.turn_weight = cfg.get_double("gen.turn_weight");
  g.stop_weight = cfg.get_double("gen.stop_weight");
  g.swerve_weight = cfg.get_double("gen.swerve_weight");
  g.validate();
  return g;
}

inline KalmanConfig kalman_config_from(const ConfigMap& cfg) {
  KalmanConfig k;
  k.process_noise_std = cfg.get_double("kalman.process_noise_std");
  k.obs_noise_std = cfg.get_double("kalman.obs_noise_std");
  const std::string mode = cfg.raw("kalman.error_mode");
  if (mode == "mean") {
    k.error_mode = KalmanErrorMode::kMean;
  } else if (mode == "final") {
    k.error_mode = KalmanErrorMode::kFinal;
  } else {
    throw ConfigError("config: key 'kalman.error_mode': expected mean|final, got '" + mode + "'");
  }
  k.validate();
  return k;
}

inline ModelConfig model_config_from(const ConfigMap& cfg) {
  ModelConfig m;
  m.history_frames = static_cast<int>(cfg.get_int("data.h"));
  m.horizon = static_cast<int>(cfg.get_int("data.M"));
  m.hypothesis_count = static_cast<int>(cfg.get_int("model.K"));
  m.embed_dim = static_cast<int>(cfg.get_int("model.embed_dim"));
  m.hidden_widths = cfg.get_int_list("model.hidden_widths");
  m.use_neighbors = cfg.get_bool("model.use_neighbors");
  m.max_neighbors = static_cast<int>(cfg.get_int("data.max_neighbors"));
  m.input_scale = cfg.get_double("model.input_scale");
  m.validate();
  return m;
}

inline LossConfig loss_config_from(const ConfigMap& cfg) {
  LossConfig l;
  l.tau = cfg.get_double("loss.tau");
  l.lambda = cfg.get_double("loss.lambda");
  l.theta_p = cfg.get_double("loss.theta_p");
  l.theta_n = cfg.get_double("loss.theta_n");
  const std::string mode = cfg.raw("loss.denominator_mode");
  if (mode == "masked") {
    l.denominator_mode = DenominatorMode::kMasked;
  } else if (mode == "full") {
    l.denominator_mode = DenominatorMode::kFull;
  } else {
    throw ConfigError("config: key 'loss.denominator_mode': expected masked|full, got '" + mode + "'");
  }
  l.normalize_z = cfg.get_bool("loss.normalize_z");
  const std::string winner = cfg.raw("loss.winner_mode");
  if (winner == "per_step") {
    l.winner_mode = WinnerMode::kPerStep;
  } else if (winner == "per_trajectory") {
    l.winner_mode = WinnerMode::kPerTrajectory;
  } else {
    throw ConfigError("config: key 'loss.winner_mode': expected per_step|per_trajectory, got '" + winner +
                      "'");
  }
  l.validate();
  return l;
}

inline TrainConfig train_config_from(const ConfigMap& cfg) {
  TrainConfig t;
  t.seed = cfg.get_uint("train.seed");
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  t.epochs_per_stage = static_cast<int>(cfg.get_int("train.epochs_per_stage"));
  t.adam.learning_rate = cfg.get_double("train.learning_rate");
  t.adam.beta1 = cfg.get_double("train.adam_beta1");
  t.adam.beta2 = cfg.get_double("train.adam_beta2");
  t.adam.epsilon = cfg.get_double("train.adam_epsilon");
  t.model = model_config_from(cfg);
  t.loss = loss_config_from(cfg);
  t.calibrate_from_ratios = cfg.get_bool("train.calibrate_from_ratios");
  t.target_pos_ratio = cfg.get_double("train.target_pos_ratio");
  t.target_neg_ratio = cfg.get_double("train.target_neg_ratio");
  t.max_calibration_pairs = static_cast<std::size_t>(cfg.get_uint("train.max_calibration_pairs"));
  t.baseline = baseline_mode_from_name(cfg.raw("train.baseline"));
  t.effective_beta = cfg.get_double("train.effective_beta");
  t.ldam_margin_scale = cfg.get_double("train.ldam_margin_scale");
  t.ldam_logit_scale = cfg.get_double("train.ldam_logit_scale");
  t.bin_width = cfg.get_double("train.bin_width");
  t.tail_threshold = cfg.get_double("train.tail_threshold");
  t.drw_start_epoch = cfg.get_int("train.drw_start_epoch");
  t.val_percent = cfg.get_double("train.val_percent");
  t.validate();
  return t;
}

}  // namespace longtail
