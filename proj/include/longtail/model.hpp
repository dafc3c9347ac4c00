#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "longtail/data.hpp"

namespace longtail {

using Embedding = Eigen::VectorXd;

struct ModelConfig {
  int history_frames = 7;   // h; the encoder consumes h+1 points
  int horizon = 12;         // M
  int hypothesis_count = 20;  // K
  int embed_dim = 64;
  std::vector<int> hidden_widths = {64, 64};
  bool use_neighbors = false;
  int max_neighbors = 4;
  double input_scale = 1.0;  // applied to flattened coordinates before the first layer

  int history_input_dim() const { return 2 * (history_frames + 1); }
  int neighbor_feature_dim() const { return hidden_widths.front(); }
  int input_dim() const {
    return history_input_dim() + (use_neighbors ? neighbor_feature_dim() : 0);
  }

  void validate() const {
    if (history_frames < 1) throw ConfigError("model.h: must be >= 1");
    if (horizon < 1) throw ConfigError("model.M: must be >= 1");
    if (hypothesis_count < 1) throw ConfigError("model.K: must be >= 1");
    if (embed_dim < 2) throw ConfigError("model.embed_dim: must be >= 2");
    if (hidden_widths.empty()) throw ConfigError("model.hidden_widths: must be non-empty");
    for (int w : hidden_widths)
      if (w < 1) throw ConfigError("model.hidden_widths: entries must be >= 1");
    if (max_neighbors < 0) throw ConfigError("model.max_neighbors: must be >= 0");
    if (input_scale <= 0.0) throw ConfigError("model.input_scale: must be > 0");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct Layer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

// Parameters for encoder (hidden layers + linear bottleneck), the optional neighbor
// sub-encoder (single tanh layer), and K linear decoder heads emitting per-step
// displacements.
struct ModelParams {
  ModelConfig config;
  std::vector<Layer> encoder;
  Layer neighbor_encoder;
  std::vector<Layer> heads;
};

using GradientBuffer = ModelParams;

struct HypothesisSet {
  int hypothesis_count = 0;  // K
  int horizon = 0;           // M
  std::vector<Vec2> points;  // index k * horizon + m, positions in normalized coordinates

  Vec2& at(int k, int m) { return points[static_cast<std::size_t>(k) * horizon + m]; }
  const Vec2& at(int k, int m) const { return points[static_cast<std::size_t>(k) * horizon + m]; }
};

namespace detail {

inline std::vector<std::pair<int, int>> encoder_layer_shapes(const ModelConfig& cfg) {
  std::vector<std::pair<int, int>> shapes;
  int in = cfg.input_dim();
  for (int w : cfg.hidden_widths) {
    shapes.emplace_back(w, in);
    in = w;
  }
  shapes.emplace_back(cfg.embed_dim, in);
  return shapes;
}

inline void check_shapes(const ModelParams& params) {
  const auto& cfg = params.config;
  cfg.validate();
  const auto shapes = encoder_layer_shapes(cfg);
  if (params.encoder.size() != shapes.size())
    throw std::invalid_argument("model params: encoder layer count mismatch");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& l = params.encoder[i];
    if (l.W.rows() != shapes[i].first || l.W.cols() != shapes[i].second || l.b.size() != shapes[i].first)
      throw std::invalid_argument("model params: encoder layer " + std::to_string(i) + " shape mismatch");
  }
  if (cfg.use_neighbors) {
    if (params.neighbor_encoder.W.rows() != cfg.neighbor_feature_dim() ||
        params.neighbor_encoder.W.cols() != cfg.history_input_dim() ||
        params.neighbor_encoder.b.size() != cfg.neighbor_feature_dim())
      throw std::invalid_argument("model params: neighbor encoder shape mismatch");
  }
  if (static_cast<int>(params.heads.size()) != cfg.hypothesis_count)
    throw std::invalid_argument("model params: head count mismatch");
  for (const auto& head : params.heads) {
    if (head.W.rows() != 2 * cfg.horizon || head.W.cols() != cfg.embed_dim ||
        head.b.size() != 2 * cfg.horizon)
      throw std::invalid_argument("model params: head shape mismatch");
  }
}

}  // namespace detail

inline ModelParams make_zero_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams params;
  params.config = cfg;
  for (const auto& [rows, cols] : detail::encoder_layer_shapes(cfg)) {
    params.encoder.push_back({Eigen::MatrixXd::Zero(rows, cols), Eigen::VectorXd::Zero(rows)});
  }
  if (cfg.use_neighbors) {
    params.neighbor_encoder = {Eigen::MatrixXd::Zero(cfg.neighbor_feature_dim(), cfg.history_input_dim()),
                               Eigen::VectorXd::Zero(cfg.neighbor_feature_dim())};
  }
  for (int k = 0; k < cfg.hypothesis_count; ++k) {
    params.heads.push_back(
        {Eigen::MatrixXd::Zero(2 * cfg.horizon, cfg.embed_dim), Eigen::VectorXd::Zero(2 * cfg.horizon)});
  }
  return params;
}

// Glorot-style uniform init, deterministic in the seed.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams params = make_zero_params(cfg);
  Rng rng(mix_seed(seed, 0x10D31ULL));
  auto fill = [&](Layer& layer) {
    const double a = std::sqrt(6.0 / static_cast<double>(layer.W.rows() + layer.W.cols()));
    for (Eigen::Index r = 0; r < layer.W.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.W.cols(); ++c) layer.W(r, c) = rng.uniform(-a, a);
    layer.b.setZero();
  };
  for (auto& l : params.encoder) fill(l);
  if (cfg.use_neighbors) fill(params.neighbor_encoder);
  for (auto& head : params.heads) fill(head);
  return params;
}

// Flat list of parameter tensors in a fixed order; shared by the optimizer, the
// gradient checker and checkpointing.
struct TensorView {
  double* data = nullptr;
  std::size_t size = 0;
};

inline std::vector<TensorView> tensor_views(ModelParams& params) {
  std::vector<TensorView> views;
  auto add = [&](Layer& l) {
    views.push_back({l.W.data(), static_cast<std::size_t>(l.W.size())});
    views.push_back({l.b.data(), static_cast<std::size_t>(l.b.size())});
  };
  for (auto& l : params.encoder) add(l);
  if (params.config.use_neighbors) add(params.neighbor_encoder);
  for (auto& head : params.heads) add(head);
  return views;
}

inline std::size_t param_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& v : tensor_views(const_cast<ModelParams&>(params))) n += v.size;
  return n;
}

struct ForwardCache {
  Eigen::VectorXd input;                    // assembled encoder input
  std::vector<Eigen::VectorXd> activations;  // a[0] = input, a[i+1] = output of layer i
  std::vector<Eigen::VectorXd> nb_inputs;    // per used neighbor
  std::vector<Eigen::VectorXd> nb_activations;
  int used_neighbors = 0;
  Embedding z;
};

namespace detail {

inline Eigen::VectorXd flatten_points(const std::vector<TrajectoryPoint>& pts, double scale) {
  Eigen::VectorXd v(2 * pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    v(2 * i) = pts[i].x * scale;
    v(2 * i + 1) = pts[i].y * scale;
  }
  return v;
}

}  // namespace detail

// Deterministic bottleneck embedding of a normalized sample: tanh MLP over the
// flattened history, optionally concatenated with the mean of per-neighbor
// sub-encoder features (zeros when no neighbor is present).
inline Embedding encode(const ModelParams& params, const TrajectorySample& sample,
                        ForwardCache* cache = nullptr) {
  detail::check_shapes(params);
  const auto& cfg = params.config;
  if (static_cast<int>(sample.history.size()) != cfg.history_frames + 1)
    throw std::invalid_argument("encode: history length does not match model.h (sample '" +
                                sample.sample_id + "')");

  Eigen::VectorXd input(cfg.input_dim());
  input.head(cfg.history_input_dim()) = detail::flatten_points(sample.history, cfg.input_scale);

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c = ForwardCache{};

  if (cfg.use_neighbors) {
    const int used = std::min<int>(cfg.max_neighbors, static_cast<int>(sample.neighbors.size()));
    c.used_neighbors = used;
    Eigen::VectorXd agg = Eigen::VectorXd::Zero(cfg.neighbor_feature_dim());
    for (int n = 0; n < used; ++n) {
      const auto& nb = sample.neighbors[n];
      if (static_cast<int>(nb.points.size()) != cfg.history_frames + 1)
        throw std::invalid_argument("encode: neighbor history length mismatch (sample '" +
                                    sample.sample_id + "')");
      Eigen::VectorXd xn = detail::flatten_points(nb.points, cfg.input_scale);
      Eigen::VectorXd an =
          (params.neighbor_encoder.W * xn + params.neighbor_encoder.b).array().tanh().matrix();
      agg += an;
      c.nb_inputs.push_back(std::move(xn));
      c.nb_activations.push_back(std::move(an));
    }
    if (used > 0) agg /= static_cast<double>(used);
    input.tail(cfg.neighbor_feature_dim()) = agg;
  }

  c.input = input;
  c.activations.clear();
  c.activations.push_back(input);
  Eigen::VectorXd a = input;
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    Eigen::VectorXd pre = params.encoder[i].W * a + params.encoder[i].b;
    if (i + 1 < params.encoder.size()) {
      a = pre.array().tanh().matrix();
    } else {
      a = pre;  // linear bottleneck
    }
    c.activations.push_back(a);
  }
  c.z = a;
  return a;
}

// Each head emits M displacement vectors; the hypothesis is their cumulative sum
// starting from the origin, so zero parameters predict "stay put".
inline HypothesisSet predict(const ModelParams& params, const Embedding& z) {
  detail::check_shapes(params);
  const auto& cfg = params.config;
  if (z.size() != cfg.embed_dim) throw std::invalid_argument("predict: embedding dimension mismatch");
  if (!z.allFinite()) throw NumericError("predict: non-finite embedding");

  HypothesisSet hyps;
  hyps.hypothesis_count = cfg.hypothesis_count;
  hyps.horizon = cfg.horizon;
  hyps.points.resize(static_cast<std::size_t>(cfg.hypothesis_count) * cfg.horizon);
  for (int k = 0; k < cfg.hypothesis_count; ++k) {
    const Eigen::VectorXd out = params.heads[k].W * z + params.heads[k].b;
    Vec2 acc{0.0, 0.0};
    for (int m = 0; m < cfg.horizon; ++m) {
      acc.x += out(2 * m);
      acc.y += out(2 * m + 1);
      hyps.at(k, m) = acc;
    }
  }
  return hyps;
}

struct ForwardResult {
  Embedding z;
  HypothesisSet hyps;
};

inline ForwardResult forward(const ModelParams& params, const TrajectorySample& sample,
                             ForwardCache* cache = nullptr) {
  ForwardResult r;
  r.z = encode(params, sample, cache);
  r.hyps = predict(params, r.z);
  return r;
}

// Upstream gradients for one sample: d_hyp(k*M + m) holds dLoss/d position, d_z holds
// dLoss/d embedding (the contrastive path; zero when unused).
inline void backward_accumulate(const ModelParams& params, const ForwardCache& cache,
                                const std::vector<Vec2>& d_hyp, const Eigen::VectorXd& d_z_upstream,
                                GradientBuffer& grads) {
  const auto& cfg = params.config;
  if (cache.activations.empty()) throw std::invalid_argument("backward: missing forward cache");
  if (d_hyp.size() != static_cast<std::size_t>(cfg.hypothesis_count) * cfg.horizon)
    throw std::invalid_argument("backward: hypothesis gradient shape mismatch");
  if (d_z_upstream.size() != 0 && d_z_upstream.size() != cfg.embed_dim)
    throw std::invalid_argument("backward: embedding gradient shape mismatch");

  const Embedding& z = cache.z;
  Eigen::VectorXd d_z = d_z_upstream.size() ? d_z_upstream : Eigen::VectorXd::Zero(cfg.embed_dim);

  // heads: trajectory positions are cumulative sums of displacements, so the
  // displacement gradient is the suffix sum of position gradients
  Eigen::VectorXd d_out(2 * cfg.horizon);
  for (int k = 0; k < cfg.hypothesis_count; ++k) {
    Vec2 suffix{0.0, 0.0};
    for (int m = cfg.horizon - 1; m >= 0; --m) {
      suffix = suffix + d_hyp[static_cast<std::size_t>(k) * cfg.horizon + m];
      d_out(2 * m) = suffix.x;
      d_out(2 * m + 1) = suffix.y;
    }
    grads.heads[k].W.noalias() += d_out * z.transpose();
    grads.heads[k].b += d_out;
    d_z.noalias() += params.heads[k].W.transpose() * d_out;
  }

  // encoder: tanh on hidden layers, linear bottleneck
  Eigen::VectorXd d_a = d_z;
  for (int i = static_cast<int>(params.encoder.size()) - 1; i >= 0; --i) {
    Eigen::VectorXd d_pre;
    if (i + 1 < static_cast<int>(params.encoder.size())) {
      const Eigen::VectorXd& act = cache.activations[i + 1];
      d_pre = (d_a.array() * (1.0 - act.array().square())).matrix();
    } else {
      d_pre = d_a;
    }
    grads.encoder[i].W.noalias() += d_pre * cache.activations[i].transpose();
    grads.encoder[i].b += d_pre;
    d_a = params.encoder[i].W.transpose() * d_pre;
  }

  if (cfg.use_neighbors && cache.used_neighbors > 0) {
    const Eigen::VectorXd d_agg =
        d_a.tail(cfg.neighbor_feature_dim()) / static_cast<double>(cache.used_neighbors);
    for (int n = 0; n < cache.used_neighbors; ++n) {
      const Eigen::VectorXd& an = cache.nb_activations[n];
      const Eigen::VectorXd d_pre = (d_agg.array() * (1.0 - an.array().square())).matrix();
      grads.neighbor_encoder.W.noalias() += d_pre * cache.nb_inputs[n].transpose();
      grads.neighbor_encoder.b += d_pre;
    }
  }
}

inline GradientBuffer backward(const ModelParams& params, const ForwardCache& cache,
                               const std::vector<Vec2>& d_hyp, const Eigen::VectorXd& d_z_upstream) {
  GradientBuffer grads = make_zero_params(params.config);
  backward_accumulate(params, cache, d_hyp, d_z_upstream, grads);
  return grads;
}

// Central-difference check of analytic gradients. `loss_fn` must be a pure function of
// the parameters. Returns the maximum relative error over all parameters.
inline double grad_check(const ModelParams& params, const std::function<double(const ModelParams&)>& loss_fn,
                         const GradientBuffer& analytic, double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be positive");
  ModelParams work = params;
  GradientBuffer analytic_copy = analytic;
  auto views = tensor_views(work);
  auto grad_views = tensor_views(analytic_copy);

  double max_rel = 0.0;
  for (std::size_t t = 0; t < views.size(); ++t) {
    for (std::size_t i = 0; i < views[t].size; ++i) {
      double& p = views[t].data[i];
      const double saved = p;
      p = saved + epsilon;
      const double up = loss_fn(work);
      p = saved - epsilon;
      const double down = loss_fn(work);
      p = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss");
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic_v = grad_views[t].data[i];
      const double rel =
          std::abs(analytic_v - numeric) / std::max(1e-8, std::abs(analytic_v) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

namespace detail {

inline std::string hexfloat(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline void write_layer(std::ofstream& out, const std::string& name, const Layer& l) {
  out << "tensor " << name << " " << l.W.rows() << " " << l.W.cols() << "\n";
  for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
    for (Eigen::Index c = 0; c < l.W.cols(); ++c) out << (c ? " " : "") << hexfloat(l.W(r, c));
    out << "\n";
  }
  out << "bias";
  for (Eigen::Index i = 0; i < l.b.size(); ++i) out << " " << hexfloat(l.b(i));
  out << "\n";
}

}  // namespace detail

inline constexpr const char* kCheckpointMagic = "longtail-checkpoint v1";

// Plain-text checkpoint: hexfloat values round-trip bit for bit, and the embedded
// config makes the file self-describing.
inline void save_checkpoint(const ModelParams& params, const std::string& path,
                            const std::vector<std::string>& header_comments = {}) {
  detail::check_shapes(params);
  std::ofstream out(path);
  if (!out) throw IoError("save_checkpoint: cannot open '" + path + "' for writing");
  out << kCheckpointMagic << "\n";
  for (const auto& c : header_comments) out << "# " << c << "\n";
  const auto& cfg = params.config;
  out << "h " << cfg.history_frames << "\n";
  out << "M " << cfg.horizon << "\n";
  out << "K " << cfg.hypothesis_count << "\n";
  out << "embed_dim " << cfg.embed_dim << "\n";
  out << "hidden";
  for (int w : cfg.hidden_widths) out << " " << w;
  out << "\n";
  out << "use_neighbors " << (cfg.use_neighbors ? 1 : 0) << "\n";
  out << "max_neighbors " << cfg.max_neighbors << "\n";
  out << "input_scale " << detail::hexfloat(cfg.input_scale) << "\n";
  for (std::size_t i = 0; i < params.encoder.size(); ++i)
    detail::write_layer(out, "encoder" + std::to_string(i), params.encoder[i]);
  if (cfg.use_neighbors) detail::write_layer(out, "neighbor", params.neighbor_encoder);
  for (std::size_t k = 0; k < params.heads.size(); ++k)
    detail::write_layer(out, "head" + std::to_string(k), params.heads[k]);
  out << "end\n";
  if (!out) throw IoError("save_checkpoint: write failed for '" + path + "'");
}

namespace detail {

inline std::string next_content_line(std::ifstream& in, const std::string& path) {
  std::string line;
  while (std::getline(in, line)) {
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    return stripped;
  }
  throw ConfigError("load_checkpoint: unexpected end of file in '" + path + "'");
}

inline Layer read_layer(std::ifstream& in, const std::string& path, const std::string& expected_name) {
  const auto header = split_whitespace(next_content_line(in, path));
  if (header.size() != 4 || header[0] != "tensor" || header[1] != expected_name)
    throw ConfigError("load_checkpoint: expected tensor '" + expected_name + "' in '" + path + "'");
  const int rows = std::stoi(header[2]);
  const int cols = std::stoi(header[3]);
  Layer l{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
  for (int r = 0; r < rows; ++r) {
    const auto vals = split_whitespace(next_content_line(in, path));
    if (static_cast<int>(vals.size()) != cols)
      throw ConfigError("load_checkpoint: tensor '" + expected_name + "' row " + std::to_string(r) +
                    " has wrong width in '" + path + "'");
    for (int c = 0; c < cols; ++c) l.W(r, c) = std::strtod(vals[c].c_str(), nullptr);
  }
  const auto bias = split_whitespace(next_content_line(in, path));
  if (bias.size() != static_cast<std::size_t>(rows) + 1 || bias[0] != "bias")
    throw ConfigError("load_checkpoint: tensor '" + expected_name + "' has malformed bias in '" + path + "'");
  for (int r = 0; r < rows; ++r) l.b(r) = std::strtod(bias[r + 1].c_str(), nullptr);
  return l;
}

inline int read_int_field(std::ifstream& in, const std::string& path, const std::string& key) {
  const auto fields = split_whitespace(next_content_line(in, path));
  if (fields.size() != 2 || fields[0] != key)
    throw ConfigError("load_checkpoint: expected field '" + key + "' in '" + path + "'");
  return std::stoi(fields[1]);
}

}  // namespace detail

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_checkpoint: cannot open '" + path + "'");
  std::string magic;
  if (!std::getline(in, magic) || trim(magic) != kCheckpointMagic)
    throw ConfigError("load_checkpoint: '" + path + "' is not a checkpoint (bad magic header)");

  ModelConfig cfg;
  cfg.history_frames = detail::read_int_field(in, path, "h");
  cfg.horizon = detail::read_int_field(in, path, "M");
  cfg.hypothesis_count = detail::read_int_field(in, path, "K");
  cfg.embed_dim = detail::read_int_field(in, path, "embed_dim");
  const auto hidden = split_whitespace(detail::next_content_line(in, path));
  if (hidden.empty() || hidden[0] != "hidden")
    throw ConfigError("load_checkpoint: expected field 'hidden' in '" + path + "'");
  cfg.hidden_widths.clear();
  for (std::size_t i = 1; i < hidden.size(); ++i) cfg.hidden_widths.push_back(std::stoi(hidden[i]));
  cfg.use_neighbors = detail::read_int_field(in, path, "use_neighbors") != 0;
  cfg.max_neighbors = detail::read_int_field(in, path, "max_neighbors");
  const auto scale = split_whitespace(detail::next_content_line(in, path));
  if (scale.size() != 2 || scale[0] != "input_scale")
    throw ConfigError("load_checkpoint: expected field 'input_scale' in '" + path + "'");
  cfg.input_scale = std::strtod(scale[1].c_str(), nullptr);
  cfg.validate();

  ModelParams params;
  params.config = cfg;
  const auto shapes = detail::encoder_layer_shapes(cfg);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    params.encoder.push_back(detail::read_layer(in, path, "encoder" + std::to_string(i)));
  if (cfg.use_neighbors) params.neighbor_encoder = detail::read_layer(in, path, "neighbor");
  for (int k = 0; k < cfg.hypothesis_count; ++k)
    params.heads.push_back(detail::read_layer(in, path, "head" + std::to_string(k)));
  if (detail::next_content_line(in, path) != "end")
    throw ConfigError("load_checkpoint: missing end marker in '" + path + "'");
  detail::check_shapes(params);
  return params;
}

// Loads and additionally validates the embedded config against an expected one,
// naming the first mismatching field.
inline ModelParams load_checkpoint(const std::string& path, const ModelConfig& expected) {
  ModelParams params = load_checkpoint(path);
  const auto& got = params.config;
  auto fail = [&](const std::string& field) {
    throw ConfigError("load_checkpoint: checkpoint config mismatch on field '" + field + "' in '" + path +
                      "'");
  };
  if (got.history_frames != expected.history_frames) fail("h");
  if (got.horizon != expected.horizon) fail("M");
  if (got.hypothesis_count != expected.hypothesis_count) fail("K");
  if (got.embed_dim != expected.embed_dim) fail("embed_dim");
  if (got.hidden_widths != expected.hidden_widths) fail("hidden_widths");
  if (got.use_neighbors != expected.use_neighbors) fail("use_neighbors");
  if (got.max_neighbors != expected.max_neighbors) fail("max_neighbors");
  if (got.input_scale != expected.input_scale) fail("input_scale");
  return params;
}

}  // namespace longtail
