#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "longtail/eval.hpp"
#include "longtail/losses.hpp"

namespace longtail {

// Fixed positive/negative thresholds from target pairwise ratios: theta_p is the
// smallest observed |s_i - s_j| with at least target_pos_ratio of the pairs strictly
// below it, theta_n the largest with at least target_neg_ratio of the pairs at or
// above it. Pair sets larger than max_pairs are subsampled deterministically by seed.
inline std::pair<double, double> calibrate_thresholds(const DifficultyTable& scores,
                                                      double target_pos_ratio, double target_neg_ratio,
                                                      std::uint64_t seed = 0,
                                                      std::size_t max_pairs = 1000000) {
  if (scores.entries.size() < 2)
    throw std::invalid_argument("calibrate_thresholds: need at least 2 scores");
  if (!(target_pos_ratio > 0.0) || !(target_pos_ratio < 1.0) || !(target_neg_ratio > 0.0) ||
      !(target_neg_ratio < 1.0) || target_pos_ratio + target_neg_ratio > 1.0 + 1e-12)
    throw ConfigError("calibrate_thresholds: ratios must lie in (0,1) and sum to <= 1");

  std::vector<double> values;
  values.reserve(scores.entries.size());
  for (const auto& [id, s] : scores.entries) values.push_back(s);
  const std::size_t n = values.size();

  std::vector<double> diffs;
  const std::size_t total_pairs = n * (n - 1) / 2;
  if (total_pairs <= max_pairs) {
    diffs.reserve(total_pairs);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) diffs.push_back(std::abs(values[i] - values[j]));
  } else {
    diffs.reserve(max_pairs);
    Rng rng(mix_seed(seed, 0xCA11BULL));
    for (std::size_t p = 0; p < max_pairs; ++p) {
      const std::size_t i = static_cast<std::size_t>(rng.uniform_index(n));
      std::size_t j = static_cast<std::size_t>(rng.uniform_index(n - 1));
      if (j >= i) ++j;
      diffs.push_back(std::abs(values[i] - values[j]));
    }
  }
  std::sort(diffs.begin(), diffs.end());
  const std::size_t count = diffs.size();

  const auto need = [&](double ratio) {
    std::size_t k = static_cast<std::size_t>(
        std::ceil(ratio * static_cast<double>(count) - 1e-9));
    return std::max<std::size_t>(1, k);
  };
  const std::size_t need_pos = need(target_pos_ratio);
  const std::size_t need_neg = need(target_neg_ratio);

  // smallest observed value with need_pos pair differences strictly below it
  const double pivot = diffs[need_pos - 1];
  const auto above = std::upper_bound(diffs.begin(), diffs.end(), pivot);
  if (above == diffs.end())
    throw ConfigError(
        "calibrate_thresholds: cannot achieve the target positive ratio; the score "
        "differences are too concentrated (are all scores identical?)");
  const double theta_p = *above;

  const double theta_n = diffs[count - need_neg];
  if (theta_p > theta_n)
    throw ConfigError("calibrate_thresholds: computed theta_p > theta_n; the target ratios are "
                      "incompatible with the score distribution");
  return {theta_p, theta_n};
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

inline AdamState make_adam_state(const std::vector<TensorView>& params) {
  std::size_t total = 0;
  for (const auto& t : params) total += t.size;
  return AdamState{std::vector<double>(total, 0.0), std::vector<double>(total, 0.0), 0};
}

// Textbook Adam with bias correction, applied in the fixed tensor-view order.
inline void adam_step(std::vector<TensorView>& params, const std::vector<TensorView>& grads,
                      AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: tensor list mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::size_t offset = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size != grads[t].size) throw std::invalid_argument("adam_step: tensor shape mismatch");
    for (std::size_t i = 0; i < params[t].size; ++i) {
      const double g = grads[t].data[i];
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
      double& m = state.m[offset + i];
      double& v = state.v[offset + i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      params[t].data[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    offset += params[t].size;
  }
}

enum class BaselineMode { kNone, kReweightInvFreq, kReweightEffective, kLdam, kResample };

inline std::string baseline_mode_name(BaselineMode mode) {
  switch (mode) {
    case BaselineMode::kNone: return "none";
    case BaselineMode::kReweightInvFreq: return "reweight_invfreq";
    case BaselineMode::kReweightEffective: return "reweight_effective";
    case BaselineMode::kLdam: return "ldam";
    case BaselineMode::kResample: return "resample";
  }
  return "none";
}

inline BaselineMode baseline_mode_from_name(const std::string& name) {
  if (name == "none") return BaselineMode::kNone;
  if (name == "reweight_invfreq") return BaselineMode::kReweightInvFreq;
  if (name == "reweight_effective") return BaselineMode::kReweightEffective;
  if (name == "ldam") return BaselineMode::kLdam;
  if (name == "resample") return BaselineMode::kResample;
  throw ConfigError("train.baseline: unknown mode '" + name +
                    "' (expected none|reweight_invfreq|reweight_effective|ldam|resample)");
}

struct TrainConfig {
  std::uint64_t seed = 0;
  int batch_size = 64;
  int epochs_per_stage = 5;
  AdamConfig adam;
  ModelConfig model;
  LossConfig loss;

  // theta_p / theta_n calibration from target pairwise ratios on the training split;
  // disable to use loss.theta_p / loss.theta_n as given
  bool calibrate_from_ratios = true;
  double target_pos_ratio = 0.10;
  double target_neg_ratio = 0.40;
  std::size_t max_calibration_pairs = 1000000;

  BaselineMode baseline = BaselineMode::kNone;
  double effective_beta = 0.9;     // reweight_effective; also the deferred LDAM class weights
  double ldam_margin_scale = 0.5;  // C
  double ldam_logit_scale = 1.0;   // s
  double bin_width = 0.5;          // difficulty binning for the baselines, meters
  double tail_threshold = 2.0;     // meters
  std::int64_t drw_start_epoch = 0;  // first epoch with active re-weighting; 0 = immediate

  double val_percent = 5.0;  // top-k% logged per epoch

  void validate() const {
    model.validate();
    loss.validate();
    if (batch_size < 2) throw ConfigError("train.batch_size: must be >= 2");
    if (epochs_per_stage < 1) throw ConfigError("train.epochs_per_stage: must be >= 1");
    if (adam.learning_rate <= 0.0) throw ConfigError("train.learning_rate: must be > 0");
    if (calibrate_from_ratios && loss.lambda > 0.0) {
      if (!(target_pos_ratio > 0.0) || !(target_pos_ratio < 1.0) || !(target_neg_ratio > 0.0) ||
          !(target_neg_ratio < 1.0) || target_pos_ratio + target_neg_ratio > 1.0 + 1e-12)
        throw ConfigError("train.target_pos_ratio/target_neg_ratio: must lie in (0,1) and sum to <= 1");
    }
    if (effective_beta < 0.0 || effective_beta >= 1.0)
      throw ConfigError("train.effective_beta: must be in [0, 1)");
    if (drw_start_epoch < 0) throw ConfigError("train.drw_start_epoch: must be >= 0");
    if (!(val_percent > 0.0) || val_percent > 100.0)
      throw ConfigError("train.val_percent: must be in (0, 100]");
  }

  std::vector<std::pair<std::string, std::string>> echo() const {
    std::vector<std::pair<std::string, std::string>> kv;
    auto add = [&](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
    add("train.seed", std::to_string(seed));
    add("train.batch_size", std::to_string(batch_size));
    add("train.epochs_per_stage", std::to_string(epochs_per_stage));
    add("train.learning_rate", format_fixed(adam.learning_rate, 9));
    add("train.baseline", baseline_mode_name(baseline));
    add("train.drw_start_epoch", std::to_string(drw_start_epoch));
    add("model.h", std::to_string(model.history_frames));
    add("model.M", std::to_string(model.horizon));
    add("model.K", std::to_string(model.hypothesis_count));
    add("model.embed_dim", std::to_string(model.embed_dim));
    add("loss.lambda", format_fixed(loss.lambda, 6));
    add("loss.tau", format_fixed(loss.tau, 6));
    add("loss.k_schedule", "evolving");
    return kv;
  }
};

struct EpochRecord {
  int epoch = 0;
  int k = 0;
  double total = 0.0;
  double ewta = 0.0;
  double contrastive = 0.0;
  double aux = 0.0;  // classification term under the ldam baseline
  double val_min_ade_all = std::numeric_limits<double>::quiet_NaN();
  double val_min_fde_all = std::numeric_limits<double>::quiet_NaN();
  double val_min_ade_top = std::numeric_limits<double>::quiet_NaN();
  double val_min_fde_top = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;  // informational; not part of the deterministic log file
};

struct RunLog {
  std::vector<EpochRecord> epochs;
  double theta_p = 0.0;
  double theta_n = 0.0;
  std::vector<std::pair<std::string, std::string>> config_echo;
};

// Deterministic fields only; wall time stays in memory so repeated runs produce byte
// identical files. Field order: epoch k total ewta contrastive aux then val metrics.
inline void write_run_log(const RunLog& log, const std::string& path,
                          const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path);
  if (!out) throw IoError("write_run_log: cannot open '" + path + "' for writing");
  out << "longtail-run-log v1\n";
  for (const auto& c : header_comments) out << "# " << c << "\n";
  for (const auto& [k, v] : log.config_echo) out << "# config " << k << " = " << v << "\n";
  out << "# theta_p = " << format_fixed(log.theta_p, 9) << " theta_n = " << format_fixed(log.theta_n, 9)
      << "\n";
  out << "epoch k total ewta contrastive aux val_min_ade_all val_min_fde_all val_min_ade_top "
         "val_min_fde_top\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << " " << e.k << " " << format_fixed(e.total, 9) << " " << format_fixed(e.ewta, 9) << " "
        << format_fixed(e.contrastive, 9) << " " << format_fixed(e.aux, 9) << " "
        << format_fixed(e.val_min_ade_all, 9) << " " << format_fixed(e.val_min_fde_all, 9) << " "
        << format_fixed(e.val_min_ade_top, 9) << " " << format_fixed(e.val_min_fde_top, 9) << "\n";
  }
  if (!out) throw IoError("write_run_log: write failed for '" + path + "'");
}

struct TrainResult {
  ModelParams params;
  RunLog log;
};

namespace detail {

struct PreparedSample {
  const TrajectorySample* raw = nullptr;
  TrajectorySample normalized;
  NormalizeTransform transform;
  std::vector<Vec2> gt_local;  // future in normalized coordinates
  double score = 0.0;
  int difficulty_class = 0;
};

}  // namespace detail

// Full training run: difficulty thresholds calibrated on the training split only,
// K stages of epochs_per_stage epochs with the evolving winner count, one Adam step
// per batch, per-epoch validation metrics. All randomness derives from cfg.seed.
// `on_stage_end(k, params)` fires after the last epoch of each stage.
inline TrainResult train(
    const TrainConfig& cfg, const std::vector<TrajectorySample>& samples, const DatasetSplit& split,
    const DifficultyTable& table,
    const std::function<void(int, const ModelParams&)>& on_stage_end = nullptr) {
  cfg.validate();
  if (split.train.empty()) throw ConfigError("train: empty training split");

  std::map<std::string, const TrajectorySample*> by_id;
  for (const auto& s : samples) by_id[s.sample_id] = &s;
  auto resolve = [&](const std::vector<std::string>& ids) {
    std::vector<detail::PreparedSample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw std::invalid_argument("train: split references unknown sample '" + id + "'");
      detail::PreparedSample p;
      p.raw = it->second;
      auto [normalized, tf] = normalize(*it->second);
      p.normalized = std::move(normalized);
      p.transform = tf;
      p.gt_local = future_positions(p.normalized);
      p.score = table.at(id);
      out.push_back(std::move(p));
    }
    return out;
  };
  std::vector<detail::PreparedSample> train_set = resolve(split.train);

  std::vector<const TrajectorySample*> val_raw;
  for (const auto& id : split.val) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw std::invalid_argument("train: split references unknown sample '" + id + "'");
    table.at(id);
    val_raw.push_back(it->second);
  }

  // thresholds and difficulty classes come from the training slice of the table only
  const DifficultyTable train_table = slice_table(table, split.train, "train");
  LossConfig loss = cfg.loss;
  RunLog log;
  if (loss.lambda > 0.0 && cfg.calibrate_from_ratios) {
    auto [tp, tn] = calibrate_thresholds(train_table, cfg.target_pos_ratio, cfg.target_neg_ratio, cfg.seed,
                                         cfg.max_calibration_pairs);
    loss.theta_p = tp;
    loss.theta_n = tn;
  }
  log.theta_p = loss.theta_p;
  log.theta_n = loss.theta_n;
  log.config_echo = cfg.echo();

  // baseline machinery
  std::vector<double> class_weights;
  std::vector<double> resample_cdf;  // aligned with train_set
  DifficultyBins bins;
  Layer aux_head;
  std::vector<std::int64_t> aux_counts;
  const bool needs_bins = cfg.baseline != BaselineMode::kNone;
  if (needs_bins) {
    bins = bin_scores(train_table, cfg.bin_width, cfg.tail_threshold);
    for (auto& p : train_set) p.difficulty_class = bins.class_of.at(p.raw->sample_id);
    switch (cfg.baseline) {
      case BaselineMode::kReweightInvFreq:
        class_weights = class_weights_inverse_freq(bins);
        break;
      case BaselineMode::kReweightEffective:
        class_weights = class_weights_effective(bins, cfg.effective_beta);
        break;
      case BaselineMode::kLdam: {
        aux_counts = bins.counts;
        aux_head = {Eigen::MatrixXd::Zero(bins.num_classes(), cfg.model.embed_dim),
                    Eigen::VectorXd::Zero(bins.num_classes())};
        class_weights = class_weights_effective(bins, cfg.effective_beta);  // deferred CE weights
        break;
      }
      case BaselineMode::kResample: {
        const auto probs = resample_distribution(bins);
        std::map<std::string, double> prob_of;
        for (const auto& [id, p] : probs) prob_of[id] = p;
        resample_cdf.resize(train_set.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < train_set.size(); ++i) {
          acc += prob_of.at(train_set[i].raw->sample_id);
          resample_cdf[i] = acc;
        }
        resample_cdf.back() = 1.0;
        break;
      }
      case BaselineMode::kNone:
        break;
    }
  }

  ModelParams params = init_params(cfg.model, cfg.seed);
  GradientBuffer grads = make_zero_params(cfg.model);
  Layer aux_grads = aux_head;

  auto model_views = tensor_views(params);
  auto grad_views = tensor_views(grads);
  if (cfg.baseline == BaselineMode::kLdam) {
    model_views.push_back({aux_head.W.data(), static_cast<std::size_t>(aux_head.W.size())});
    model_views.push_back({aux_head.b.data(), static_cast<std::size_t>(aux_head.b.size())});
    grad_views.push_back({aux_grads.W.data(), static_cast<std::size_t>(aux_grads.W.size())});
    grad_views.push_back({aux_grads.b.data(), static_cast<std::size_t>(aux_grads.b.size())});
  }
  AdamState adam = make_adam_state(model_views);

  const int total_epochs = cfg.model.hypothesis_count * cfg.epochs_per_stage;
  const std::size_t n_train = train_set.size();
  const DifficultyTable val_table =
      split.val.empty() ? DifficultyTable{} : slice_table(table, split.val, "val");

  std::vector<std::size_t> order(n_train);
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const int k = ewta_schedule(cfg.model.hypothesis_count, cfg.epochs_per_stage, epoch);
    loss.winner_count = k;
    const bool weights_active =
        (cfg.baseline == BaselineMode::kReweightInvFreq || cfg.baseline == BaselineMode::kReweightEffective) &&
        epoch >= cfg.drw_start_epoch;
    const bool ldam_weights_active = cfg.baseline == BaselineMode::kLdam && epoch >= cfg.drw_start_epoch &&
                                     cfg.drw_start_epoch > 0;

    Rng epoch_rng(mix_seed(cfg.seed, 0xE70C000ULL + static_cast<std::uint64_t>(epoch)));
    if (cfg.baseline == BaselineMode::kResample) {
      // class-balanced sampling with replacement, epoch length preserved
      for (std::size_t i = 0; i < n_train; ++i) {
        const double u = epoch_rng.uniform();
        order[i] = static_cast<std::size_t>(
            std::lower_bound(resample_cdf.begin(), resample_cdf.end(), u) - resample_cdf.begin());
      }
    } else {
      for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
      deterministic_shuffle(order, epoch_rng);
    }

    double sum_total = 0.0, sum_ewta = 0.0, sum_contr = 0.0, sum_aux = 0.0;
    for (std::size_t batch_start = 0; batch_start < n_train; batch_start += cfg.batch_size) {
      const std::size_t batch_end = std::min(n_train, batch_start + cfg.batch_size);
      const std::size_t b = batch_end - batch_start;

      std::vector<ForwardCache> caches(b);
      std::vector<HypothesisSet> hyps(b);
      std::vector<Eigen::VectorXd> embeddings(b);
      std::vector<double> scores(b);
      for (std::size_t i = 0; i < b; ++i) {
        const auto& ps = train_set[order[batch_start + i]];
        embeddings[i] = encode(params, ps.normalized, &caches[i]);
        hyps[i] = predict(params, embeddings[i]);
        scores[i] = ps.score;
      }

      double batch_ewta = 0.0;
      double batch_aux = 0.0;
      std::vector<EwtaResult> ewta_results(b);
      std::vector<double> sample_weights(b, 1.0);
      for (std::size_t i = 0; i < b; ++i) {
        const auto& ps = train_set[order[batch_start + i]];
        if (weights_active) sample_weights[i] = class_weights[ps.difficulty_class];
        ewta_results[i] = ewta_loss(hyps[i], ps.gt_local, k, loss.winner_mode);
        batch_ewta += sample_weights[i] * ewta_results[i].loss;
      }
      batch_ewta /= static_cast<double>(b);

      double batch_contr = 0.0;
      std::vector<Eigen::VectorXd> contr_grads;
      if (loss.lambda > 0.0 && b >= 2) {
        const auto c = contrastive_loss(embeddings, scores, loss, &contr_grads);
        batch_contr = c.loss;
      }

      // gradient accumulation in fixed index order
      for (auto& l : grads.encoder) {
        l.W.setZero();
        l.b.setZero();
      }
      if (cfg.model.use_neighbors) {
        grads.neighbor_encoder.W.setZero();
        grads.neighbor_encoder.b.setZero();
      }
      for (auto& l : grads.heads) {
        l.W.setZero();
        l.b.setZero();
      }
      if (cfg.baseline == BaselineMode::kLdam) {
        aux_grads.W.setZero();
        aux_grads.b.setZero();
      }

      for (std::size_t i = 0; i < b; ++i) {
        const auto& ps = train_set[order[batch_start + i]];
        auto d_hyp = ewta_loss_backward(hyps[i], ps.gt_local, k, ewta_results[i]);
        const double w = sample_weights[i] / static_cast<double>(b);
        for (auto& g : d_hyp) g = g * w;

        Eigen::VectorXd d_z = Eigen::VectorXd::Zero(cfg.model.embed_dim);
        if (!contr_grads.empty()) d_z += loss.lambda * contr_grads[i];
        if (cfg.baseline == BaselineMode::kLdam) {
          const Eigen::VectorXd logits = aux_head.W * embeddings[i] + aux_head.b;
          const auto lr = ldam_loss(logits, ps.difficulty_class, aux_counts, cfg.ldam_margin_scale,
                                    cfg.ldam_logit_scale);
          const double ce_w =
              (ldam_weights_active ? class_weights[ps.difficulty_class] : 1.0) / static_cast<double>(b);
          batch_aux += ce_w * lr.loss;
          const Eigen::VectorXd d_logits = ce_w * lr.d_logits;
          aux_grads.W.noalias() += d_logits * embeddings[i].transpose();
          aux_grads.b += d_logits;
          d_z.noalias() += aux_head.W.transpose() * d_logits;
        }
        backward_accumulate(params, caches[i], d_hyp, d_z, grads);
      }

      const double batch_total = batch_ewta + loss.lambda * batch_contr + batch_aux;
      if (!std::isfinite(batch_total))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_start / cfg.batch_size));

      adam_step(model_views, grad_views, adam, cfg.adam);

      sum_total += batch_total * static_cast<double>(b);
      sum_ewta += batch_ewta * static_cast<double>(b);
      sum_contr += batch_contr * static_cast<double>(b);
      sum_aux += batch_aux * static_cast<double>(b);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.k = k;
    rec.total = sum_total / static_cast<double>(n_train);
    rec.ewta = sum_ewta / static_cast<double>(n_train);
    rec.contrastive = sum_contr / static_cast<double>(n_train);
    rec.aux = sum_aux / static_cast<double>(n_train);

    if (!val_raw.empty()) {
      std::vector<TrajectorySample> val_samples;
      val_samples.reserve(val_raw.size());
      for (const auto* s : val_raw) val_samples.push_back(*s);
      const auto report = evaluate(params, val_samples, val_table, {cfg.val_percent});
      rec.val_min_ade_all = report.subsets[0].min_ade;
      rec.val_min_fde_all = report.subsets[0].min_fde;
      rec.val_min_ade_top = report.subsets[1].min_ade;
      rec.val_min_fde_top = report.subsets[1].min_fde;
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - epoch_start)
                      .count();
    log.epochs.push_back(rec);

    if (on_stage_end && (epoch + 1) % cfg.epochs_per_stage == 0) on_stage_end(k, params);
  }

  return {std::move(params), std::move(log)};
}

}  // namespace longtail
