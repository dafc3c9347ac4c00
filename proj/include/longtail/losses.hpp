#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "longtail/difficulty.hpp"
#include "longtail/model.hpp"

namespace longtail {

enum class DenominatorMode { kMasked, kFull };
enum class WinnerMode { kPerStep, kPerTrajectory };

struct LossConfig {
  double tau = 0.5;             // contrastive temperature
  double lambda = 0.0;          // contrastive weight in the joint objective
  double theta_p = 0.0;         // positive threshold on |s_i - s_j|, meters
  double theta_n = 0.0;         // negative threshold, meters
  int winner_count = 1;         // current k of the winner-takes-all schedule
  DenominatorMode denominator_mode = DenominatorMode::kMasked;
  bool normalize_z = true;
  WinnerMode winner_mode = WinnerMode::kPerStep;

  void validate() const {
    if (tau <= 0.0) throw ConfigError("loss.tau: must be > 0");
    if (lambda < 0.0) throw ConfigError("loss.lambda: must be >= 0");
    if (winner_count < 1) throw ConfigError("loss.k: must be >= 1");
  }
};

struct EwtaResult {
  double loss = 0.0;
  std::vector<std::uint8_t> winner_mask;  // K x M, index k * M + m
};

// Winner-takes-all regression loss: per future step (default) the k hypotheses closest
// to the ground truth are penalized by their Euclidean distance, averaged over M * k so
// the magnitude is comparable across schedule stages. Distance ties go to the lower
// hypothesis index. The per-trajectory mode selects winners once by summed distance.
inline EwtaResult ewta_loss(const HypothesisSet& hyps, const std::vector<Vec2>& gt, int k,
                            WinnerMode mode = WinnerMode::kPerStep) {
  const int K = hyps.hypothesis_count;
  const int M = hyps.horizon;
  if (k < 1 || k > K) throw std::invalid_argument("ewta_loss: k out of range [1, K]");
  if (static_cast<int>(gt.size()) != M)
    throw std::invalid_argument("ewta_loss: ground truth length does not match horizon");

  EwtaResult result;
  result.winner_mask.assign(static_cast<std::size_t>(K) * M, 0);
  double sum = 0.0;

  if (mode == WinnerMode::kPerStep) {
    std::vector<int> order(K);
    for (int m = 0; m < M; ++m) {
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = distance(hyps.at(a, m), gt[m]);
        const double db = distance(hyps.at(b, m), gt[m]);
        if (da != db) return da < db;
        return a < b;
      });
      for (int w = 0; w < k; ++w) {
        const int idx = order[w];
        result.winner_mask[static_cast<std::size_t>(idx) * M + m] = 1;
        sum += distance(hyps.at(idx, m), gt[m]);
      }
    }
  } else {
    std::vector<double> totals(K, 0.0);
    for (int kk = 0; kk < K; ++kk)
      for (int m = 0; m < M; ++m) totals[kk] += distance(hyps.at(kk, m), gt[m]);
    std::vector<int> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (totals[a] != totals[b]) return totals[a] < totals[b];
      return a < b;
    });
    for (int w = 0; w < k; ++w) {
      const int idx = order[w];
      for (int m = 0; m < M; ++m) result.winner_mask[static_cast<std::size_t>(idx) * M + m] = 1;
      sum += totals[idx];
    }
  }

  result.loss = sum / (static_cast<double>(M) * static_cast<double>(k));
  return result;
}

// Gradient of ewta_loss w.r.t. the hypothesis positions. Zero-distance winners get a
// zero gradient (the norm is not differentiable there).
inline std::vector<Vec2> ewta_loss_backward(const HypothesisSet& hyps, const std::vector<Vec2>& gt, int k,
                                            const EwtaResult& result) {
  const int K = hyps.hypothesis_count;
  const int M = hyps.horizon;
  std::vector<Vec2> grads(static_cast<std::size_t>(K) * M, Vec2{0.0, 0.0});
  const double scale = 1.0 / (static_cast<double>(M) * static_cast<double>(k));
  for (int kk = 0; kk < K; ++kk) {
    for (int m = 0; m < M; ++m) {
      if (!result.winner_mask[static_cast<std::size_t>(kk) * M + m]) continue;
      const Vec2 diff = hyps.at(kk, m) - gt[m];
      const double d = diff.norm();
      if (d > 1e-300) grads[static_cast<std::size_t>(kk) * M + m] = diff * (scale / d);
    }
  }
  return grads;
}

// Stage schedule: k starts at K and drops by one every `epochs_per_stage` epochs,
// clamped at 1.
inline int ewta_schedule(int hypothesis_count, int epochs_per_stage, int epoch) {
  if (epochs_per_stage < 1) throw std::invalid_argument("ewta_schedule: epochs_per_stage must be >= 1");
  if (epoch < 0) throw std::invalid_argument("ewta_schedule: epoch must be >= 0");
  const int k = hypothesis_count - epoch / epochs_per_stage;
  return std::max(1, k);
}

struct ContrastiveResult {
  double loss = 0.0;
  int anchors_used = 0;
  std::vector<int> positives_per_anchor;
};

namespace detail {

struct ContrastiveWork {
  std::vector<Eigen::VectorXd> e;       // working embeddings (normalized if requested)
  std::vector<double> norms;            // original norms, for the normalization Jacobian
  std::vector<std::vector<int>> pos;    // positive sets per anchor
  std::vector<std::vector<int>> den;    // denominator sets per anchor
};

inline ContrastiveWork contrastive_setup(const std::vector<Eigen::VectorXd>& embeddings,
                                         const std::vector<double>& scores, const LossConfig& cfg) {
  cfg.validate();
  const std::size_t n = embeddings.size();
  if (n < 2) throw std::invalid_argument("contrastive_loss: need at least 2 samples");
  if (scores.size() != n)
    throw std::invalid_argument("contrastive_loss: embeddings and scores must align");
  if (!(cfg.theta_p > 0.0) || cfg.theta_p > cfg.theta_n)
    throw std::invalid_argument("contrastive_loss: need 0 < theta_p <= theta_n");

  ContrastiveWork w;
  w.e.reserve(n);
  w.norms.reserve(n);
  for (const auto& z : embeddings) {
    if (cfg.normalize_z) {
      const double norm = z.norm();
      if (norm <= 0.0)
        throw std::invalid_argument("contrastive_loss: zero-norm embedding with normalize_z enabled");
      w.e.push_back(z / norm);
      w.norms.push_back(norm);
    } else {
      w.e.push_back(z);
      w.norms.push_back(1.0);
    }
  }

  w.pos.resize(n);
  w.den.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double diff = std::abs(scores[i] - scores[j]);
      const bool positive = diff < cfg.theta_p;
      const bool negative = diff > cfg.theta_n;
      if (positive) w.pos[i].push_back(static_cast<int>(j));
      if (cfg.denominator_mode == DenominatorMode::kFull || positive || negative)
        w.den[i].push_back(static_cast<int>(j));
    }
  }
  return w;
}

}  // namespace detail

// Difficulty-conditioned InfoNCE over a batch. Samples j with |s_i - s_j| < theta_p are
// positives of anchor i, samples with |s_i - s_j| > theta_n are negatives, the rest are
// neutral. In masked mode the denominator runs over positives and negatives only; in
// full mode over every other sample. Anchors without positives contribute nothing and
// are excluded from the averaging count. The per-anchor term is divided by the
// anchor-exclusive positive count.
inline ContrastiveResult contrastive_loss(const std::vector<Eigen::VectorXd>& embeddings,
                                          const std::vector<double>& scores, const LossConfig& cfg,
                                          std::vector<Eigen::VectorXd>* grad_out = nullptr) {
  const auto w = detail::contrastive_setup(embeddings, scores, cfg);
  const std::size_t n = embeddings.size();

  ContrastiveResult result;
  result.positives_per_anchor.resize(n, 0);

  std::vector<Eigen::VectorXd> de;
  if (grad_out) de.assign(n, Eigen::VectorXd::Zero(embeddings[0].size()));

  double total = 0.0;
  int anchors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int pi = static_cast<int>(w.pos[i].size());
    result.positives_per_anchor[i] = pi;
    if (pi == 0) continue;
    ++anchors;

    // log-sum-exp over the denominator set, stabilized by the max dot product
    double max_dot = -std::numeric_limits<double>::infinity();
    for (int k : w.den[i]) max_dot = std::max(max_dot, w.e[i].dot(w.e[k]) / cfg.tau);
    double denom = 0.0;
    for (int k : w.den[i]) denom += std::exp(w.e[i].dot(w.e[k]) / cfg.tau - max_dot);
    const double log_denom = std::log(denom) + max_dot;

    double pos_dot_sum = 0.0;
    for (int j : w.pos[i]) pos_dot_sum += w.e[i].dot(w.e[j]) / cfg.tau;
    total += -pos_dot_sum / pi + log_denom;

    if (grad_out) {
      // d/de_i and d/de_j of  -(1/P_i) sum_j s_ij + log sum_k exp(s_ik)
      for (int j : w.pos[i]) {
        de[i] -= w.e[j] / (pi * cfg.tau);
        de[j] -= w.e[i] / (pi * cfg.tau);
      }
      for (int k : w.den[i]) {
        const double soft = std::exp(w.e[i].dot(w.e[k]) / cfg.tau - log_denom);
        de[i] += soft / cfg.tau * w.e[k];
        de[k] += soft / cfg.tau * w.e[i];
      }
    }
  }

  result.anchors_used = anchors;
  result.loss = anchors > 0 ? total / anchors : 0.0;

  if (grad_out) {
    grad_out->assign(n, Eigen::VectorXd::Zero(embeddings[0].size()));
    if (anchors > 0) {
      for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd g = de[i] / static_cast<double>(anchors);
        if (cfg.normalize_z) {
          // Jacobian of z -> z / |z|
          const Eigen::VectorXd& u = w.e[i];
          g = (g - u * u.dot(g)) / w.norms[i];
        }
        (*grad_out)[i] = g;
      }
    }
  }
  return result;
}

struct LossBreakdown {
  double total = 0.0;
  double ewta = 0.0;
  double contrastive = 0.0;
  std::vector<std::vector<std::uint8_t>> winner_masks;  // per sample, K x M
  std::vector<int> positives_per_anchor;
  int anchors_used = 0;
};

// Joint objective over a batch: (weighted) mean per-sample winner-takes-all loss plus
// lambda times the batch contrastive term. With lambda = 0 the contrastive term is not
// evaluated at all, so the result matches a pure regression run bit for bit.
inline LossBreakdown joint_loss(const std::vector<HypothesisSet>& hyps,
                                const std::vector<std::vector<Vec2>>& ground_truths,
                                const std::vector<Eigen::VectorXd>& embeddings,
                                const std::vector<double>& scores, const LossConfig& cfg,
                                const std::vector<double>& sample_weights = {}) {
  cfg.validate();
  const std::size_t n = hyps.size();
  if (ground_truths.size() != n) throw std::invalid_argument("joint_loss: batch size mismatch");
  if (!sample_weights.empty() && sample_weights.size() != n)
    throw std::invalid_argument("joint_loss: sample_weights size mismatch");
  if (n == 0) throw std::invalid_argument("joint_loss: empty batch");

  LossBreakdown out;
  double ewta_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = ewta_loss(hyps[i], ground_truths[i], cfg.winner_count, cfg.winner_mode);
    const double weight = sample_weights.empty() ? 1.0 : sample_weights[i];
    ewta_sum += weight * r.loss;
    out.winner_masks.push_back(r.winner_mask);
  }
  out.ewta = ewta_sum / static_cast<double>(n);

  if (cfg.lambda > 0.0 && embeddings.size() >= 2) {
    if (embeddings.size() != n || scores.size() != n)
      throw std::invalid_argument("joint_loss: contrastive inputs must span the batch");
    const auto c = contrastive_loss(embeddings, scores, cfg);
    out.contrastive = c.loss;
    out.anchors_used = c.anchors_used;
    out.positives_per_anchor = c.positives_per_anchor;
  }

  out.total = out.ewta + cfg.lambda * out.contrastive;
  return out;
}

// Inverse-class-frequency weights, normalized so the average sample weight is one.
inline std::vector<double> class_weights_inverse_freq(const DifficultyBins& bins) {
  const std::size_t c = bins.counts.size();
  if (c == 0) throw std::invalid_argument("class_weights_inverse_freq: no classes");
  double total = 0.0;
  for (auto n : bins.counts) {
    if (n <= 0) throw std::invalid_argument("class_weights_inverse_freq: empty class");
    total += static_cast<double>(n);
  }
  std::vector<double> weights(c);
  for (std::size_t i = 0; i < c; ++i)
    weights[i] = total / (static_cast<double>(c) * static_cast<double>(bins.counts[i]));
  return weights;
}

// Effective-number-of-samples weights, raw (1 - beta) / (1 - beta^n), normalized the
// same way. beta = 0 degenerates to uniform weights.
inline std::vector<double> class_weights_effective(const DifficultyBins& bins, double beta) {
  if (beta < 0.0 || beta >= 1.0)
    throw std::invalid_argument("class_weights_effective: beta must be in [0, 1)");
  const std::size_t c = bins.counts.size();
  if (c == 0) throw std::invalid_argument("class_weights_effective: no classes");
  std::vector<double> raw(c);
  double weighted_total = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    const double ni = static_cast<double>(bins.counts[i]);
    raw[i] = beta == 0.0 ? 1.0 : (1.0 - beta) / (1.0 - std::pow(beta, ni));
    weighted_total += raw[i] * ni;
    total += ni;
  }
  std::vector<double> weights(c);
  for (std::size_t i = 0; i < c; ++i) weights[i] = raw[i] * total / weighted_total;
  return weights;
}

struct LdamResult {
  double loss = 0.0;
  Eigen::VectorXd d_logits;
};

// Margin cross-entropy for the binned difficulty classes: the true logit is reduced by
// C / n_c^(1/4) before a scaled softmax. Returns the gradient w.r.t. the raw logits.
inline LdamResult ldam_loss(const Eigen::VectorXd& logits, int true_class,
                            const std::vector<std::int64_t>& counts, double margin_scale,
                            double logit_scale) {
  const int c = static_cast<int>(logits.size());
  if (static_cast<int>(counts.size()) != c)
    throw std::invalid_argument("ldam_loss: counts size does not match logits");
  if (true_class < 0 || true_class >= c) throw std::invalid_argument("ldam_loss: class index out of range");
  if (margin_scale <= 0.0) throw std::invalid_argument("ldam_loss: margin scale C must be > 0");
  for (auto n : counts)
    if (n <= 0) throw std::invalid_argument("ldam_loss: class counts must be positive");

  const double margin =
      margin_scale / std::pow(static_cast<double>(counts[true_class]), 0.25);
  Eigen::VectorXd scaled = logits * logit_scale;
  scaled(true_class) -= logit_scale * margin;

  const double max_v = scaled.maxCoeff();
  const double lse = std::log((scaled.array() - max_v).exp().sum()) + max_v;

  LdamResult r;
  r.loss = lse - scaled(true_class);
  r.d_logits = (scaled.array() - lse).exp().matrix() * logit_scale;
  r.d_logits(true_class) -= logit_scale;
  return r;
}

inline double ldam_margin(std::int64_t count, double margin_scale) {
  return margin_scale / std::pow(static_cast<double>(count), 0.25);
}

// Class-balanced sampling distribution: p_i proportional to 1 / n_class(i), summing to
// one, returned in ascending sample_id order.
inline std::vector<std::pair<std::string, double>> resample_distribution(const DifficultyBins& bins) {
  if (bins.counts.empty()) throw std::invalid_argument("resample_distribution: no classes");
  for (auto n : bins.counts)
    if (n <= 0) throw std::invalid_argument("resample_distribution: empty class");
  std::vector<std::pair<std::string, double>> probs;
  probs.reserve(bins.class_of.size());
  double total = 0.0;
  for (const auto& [id, cls] : bins.class_of) {
    const double p = 1.0 / static_cast<double>(bins.counts[cls]);
    probs.emplace_back(id, p);
    total += p;
  }
  for (auto& [id, p] : probs) p /= total;
  return probs;
}

}  // namespace longtail
