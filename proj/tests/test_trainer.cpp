#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "longtail/trainer.hpp"

using namespace longtail;

namespace {

DifficultyTable table_of(const std::vector<double>& scores) {
  DifficultyTable t;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03zu", i);
    t.entries[buf] = scores[i];
  }
  return t;
}

struct TinyDataset {
  std::vector<TrajectorySample> samples;
  DatasetSplit split;
  DifficultyTable table;
};

TinyDataset make_dataset(int n_agents, double maneuver_fraction, std::uint64_t seed, int h, int M) {
  SyntheticConfig gen;
  gen.n_agents = n_agents;
  gen.maneuver_fraction = maneuver_fraction;
  gen.track_length = h + 1 + M + 6;
  gen.noise_std = 0.02;
  TinyDataset d;
  d.samples = extract_samples(generate_synthetic(gen, seed), h, M, 4.0);
  d.split = make_split(d.samples, 0.7, 0.15, seed + 1);
  d.table = score_split(d.samples, KalmanConfig{}, "all");
  return d;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.model.history_frames = 2;
  cfg.model.horizon = 3;
  cfg.model.hypothesis_count = 3;
  cfg.model.embed_dim = 8;
  cfg.model.hidden_widths = {12};
  cfg.batch_size = 16;
  cfg.epochs_per_stage = 2;
  cfg.seed = 7;
  return cfg;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  for (std::size_t i = 0; i < a.encoder.size(); ++i)
    if (a.encoder[i].W != b.encoder[i].W || a.encoder[i].b != b.encoder[i].b) return false;
  for (std::size_t k = 0; k < a.heads.size(); ++k)
    if (a.heads[k].W != b.heads[k].W || a.heads[k].b != b.heads[k].b) return false;
  if (a.config.use_neighbors &&
      (a.neighbor_encoder.W != b.neighbor_encoder.W || a.neighbor_encoder.b != b.neighbor_encoder.b))
    return false;
  return true;
}

}  // namespace

TEST_CASE("calibrate_thresholds on the 1..4 brute-force example") {
  const auto t = table_of({1, 2, 3, 4});
  // pair differences: 1,1,1,2,2,3
  SECTION("half the pairs below theta_p = 2") {
    const auto [tp, tn] = calibrate_thresholds(t, 0.5, 1.0 / 6.0);
    CHECK(tp == 2.0);
    CHECK(tn == 3.0);  // one of six pairs at or above 3
  }
  SECTION("ratios summing to one accept the theta_p = theta_n boundary") {
    const auto [tp, tn] = calibrate_thresholds(t, 0.5, 0.5);
    CHECK(tp == 2.0);
    CHECK(tn == 2.0);
  }
  SECTION("incompatible ratios are rejected") {
    // 5/6 of the pairs strictly below theta_p forces theta_p = 3, but 5/6 of the
    // pairs at or above theta_n forces theta_n = 1
    CHECK_THROWS_AS(calibrate_thresholds(t, 0.75, 0.75), ConfigError);
  }
}

TEST_CASE("calibrate_thresholds rejects degenerate all-equal scores") {
  const auto t = table_of({2.0, 2.0, 2.0, 2.0});
  CHECK_THROWS_AS(calibrate_thresholds(t, 0.1, 0.4), ConfigError);
}

TEST_CASE("calibrate_thresholds subsampling is deterministic in the seed") {
  Rng rng(3);
  std::vector<double> scores;
  for (int i = 0; i < 3000; ++i) scores.push_back(rng.uniform(0.0, 5.0));  // ~4.5M pairs
  const auto t = table_of(scores);
  const auto a = calibrate_thresholds(t, 0.1, 0.4, 42, 100000);
  const auto b = calibrate_thresholds(t, 0.1, 0.4, 42, 100000);
  CHECK(a == b);
  // and close to the full-pair answer
  const auto full = calibrate_thresholds(t, 0.1, 0.4, 42, 10000000);
  CHECK(std::abs(a.first - full.first) < 0.05);
  CHECK(std::abs(a.second - full.second) < 0.05);
}

TEST_CASE("adam_step basics") {
  AdamConfig hyper;
  hyper.learning_rate = 0.1;
  SECTION("zero gradients leave parameters unchanged but advance the step") {
    std::vector<double> p{1.0, -2.0};
    std::vector<double> g{0.0, 0.0};
    std::vector<TensorView> pv{{p.data(), 2}};
    std::vector<TensorView> gv{{g.data(), 2}};
    auto state = make_adam_state(pv);
    adam_step(pv, gv, state, hyper);
    CHECK(p == std::vector<double>{1.0, -2.0});
    CHECK(state.step == 1);
  }
  SECTION("first step with unit gradient moves by about the learning rate") {
    std::vector<double> p{0.0};
    std::vector<double> g{1.0};
    std::vector<TensorView> pv{{p.data(), 1}};
    std::vector<TensorView> gv{{g.data(), 1}};
    auto state = make_adam_state(pv);
    adam_step(pv, gv, state, hyper);
    CHECK(std::abs(p[0] + 0.1) < 1e-6);  // bias-corrected first step is lr * sign(g)
  }
  SECTION("identical tensors with identical gradients update identically") {
    std::vector<double> p{0.5, 0.5};
    std::vector<double> g{0.3, 0.3};
    std::vector<TensorView> pv{{p.data(), 1}, {p.data() + 1, 1}};
    std::vector<TensorView> gv{{g.data(), 1}, {g.data() + 1, 1}};
    auto state = make_adam_state(pv);
    adam_step(pv, gv, state, hyper);
    CHECK(p[0] == p[1]);
  }
  SECTION("non-finite gradients abort") {
    std::vector<double> p{0.0};
    std::vector<double> g{std::numeric_limits<double>::quiet_NaN()};
    std::vector<TensorView> pv{{p.data(), 1}};
    std::vector<TensorView> gv{{g.data(), 1}};
    auto state = make_adam_state(pv);
    CHECK_THROWS_AS(adam_step(pv, gv, state, hyper), NumericError);
  }
}

TEST_CASE("training reduces the regression loss on a small synthetic set") {
  auto cfg = tiny_train_config();
  const auto data = make_dataset(25, 0.1, 11, cfg.model.history_frames, cfg.model.horizon);
  const auto result = train(cfg, data.samples, data.split, data.table);
  REQUIRE(result.log.epochs.size() ==
          static_cast<std::size_t>(cfg.model.hypothesis_count * cfg.epochs_per_stage));
  CHECK(result.log.epochs.back().ewta < result.log.epochs.front().ewta);
  // recorded k follows the schedule
  for (const auto& e : result.log.epochs)
    CHECK(e.k == ewta_schedule(cfg.model.hypothesis_count, cfg.epochs_per_stage, e.epoch));
}

TEST_CASE("training is bitwise deterministic") {
  auto cfg = tiny_train_config();
  cfg.loss.lambda = 10.0;
  const auto data = make_dataset(20, 0.15, 13, cfg.model.history_frames, cfg.model.horizon);
  const auto a = train(cfg, data.samples, data.split, data.table);
  const auto b = train(cfg, data.samples, data.split, data.table);
  CHECK(params_equal(a.params, b.params));
  REQUIRE(a.log.epochs.size() == b.log.epochs.size());
  for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
    CHECK(a.log.epochs[i].total == b.log.epochs[i].total);
    CHECK(a.log.epochs[i].val_min_fde_all == b.log.epochs[i].val_min_fde_all);
  }
  CHECK(a.log.theta_p == b.log.theta_p);
}

TEST_CASE("lambda = 0 training equals the plain regression run bitwise") {
  auto cfg = tiny_train_config();
  const auto data = make_dataset(20, 0.15, 17, cfg.model.history_frames, cfg.model.horizon);
  cfg.loss.lambda = 0.0;
  const auto plain = train(cfg, data.samples, data.split, data.table);
  TrainConfig joint_cfg = cfg;  // same seeds, contrastive disabled by lambda = 0
  joint_cfg.calibrate_from_ratios = false;
  const auto no_calibration = train(joint_cfg, data.samples, data.split, data.table);
  CHECK(params_equal(plain.params, no_calibration.params));
}

TEST_CASE("deferred reweighting beyond the last epoch is plain training bitwise") {
  auto cfg = tiny_train_config();
  const auto data = make_dataset(20, 0.2, 19, cfg.model.history_frames, cfg.model.horizon);
  TrainConfig plain = cfg;
  plain.baseline = BaselineMode::kNone;
  TrainConfig drw = cfg;
  drw.baseline = BaselineMode::kReweightInvFreq;
  drw.drw_start_epoch = 1000000;  // never activates
  drw.bin_width = 0.2;
  drw.tail_threshold = 0.5;
  const auto a = train(plain, data.samples, data.split, data.table);
  const auto b = train(drw, data.samples, data.split, data.table);
  CHECK(params_equal(a.params, b.params));
}

TEST_CASE("deferred reweighting changes training once activated") {
  auto cfg = tiny_train_config();
  const auto data = make_dataset(20, 0.2, 23, cfg.model.history_frames, cfg.model.horizon);
  TrainConfig immediate = cfg;
  immediate.baseline = BaselineMode::kReweightInvFreq;
  immediate.bin_width = 0.2;
  immediate.tail_threshold = 0.5;
  TrainConfig deferred = immediate;
  deferred.drw_start_epoch = cfg.epochs_per_stage * (cfg.model.hypothesis_count - 1);
  const auto a = train(immediate, data.samples, data.split, data.table);
  const auto b = train(deferred, data.samples, data.split, data.table);
  CHECK_FALSE(params_equal(a.params, b.params));
}

TEST_CASE("baseline modes run end to end") {
  auto cfg = tiny_train_config();
  cfg.bin_width = 0.2;
  cfg.tail_threshold = 0.5;
  const auto data = make_dataset(20, 0.2, 29, cfg.model.history_frames, cfg.model.horizon);
  for (auto mode : {BaselineMode::kReweightEffective, BaselineMode::kLdam, BaselineMode::kResample}) {
    TrainConfig c = cfg;
    c.baseline = mode;
    const auto result = train(c, data.samples, data.split, data.table);
    CHECK(result.log.epochs.size() ==
          static_cast<std::size_t>(cfg.model.hypothesis_count * cfg.epochs_per_stage));
    for (const auto& e : result.log.epochs) CHECK(std::isfinite(e.total));
    if (mode == BaselineMode::kLdam)
      CHECK(result.log.epochs.front().aux > 0.0);  // cross-entropy term present
  }
}

TEST_CASE("contrastive joint training runs and records both terms") {
  auto cfg = tiny_train_config();
  cfg.loss.lambda = 5.0;
  const auto data = make_dataset(25, 0.2, 31, cfg.model.history_frames, cfg.model.horizon);
  const auto result = train(cfg, data.samples, data.split, data.table);
  CHECK(result.log.theta_p > 0.0);
  CHECK(result.log.theta_p <= result.log.theta_n);
  bool contrastive_seen = false;
  for (const auto& e : result.log.epochs) {
    CHECK(std::abs(e.total - (e.ewta + cfg.loss.lambda * e.contrastive + e.aux)) < 1e-9);
    contrastive_seen |= e.contrastive != 0.0;
  }
  CHECK(contrastive_seen);
}

TEST_CASE("stage callback fires once per stage with loadable params") {
  auto cfg = tiny_train_config();
  const auto data = make_dataset(15, 0.1, 37, cfg.model.history_frames, cfg.model.horizon);
  std::vector<int> stages;
  const auto result = train(cfg, data.samples, data.split, data.table,
                            [&](int k, const ModelParams& p) {
                              stages.push_back(k);
                              CHECK(p.config.hypothesis_count == cfg.model.hypothesis_count);
                            });
  CHECK(stages == std::vector<int>{3, 2, 1});
  CHECK(result.log.epochs.size() == 6);
}

TEST_CASE("train validates its inputs") {
  auto cfg = tiny_train_config();
  const auto data = make_dataset(10, 0.0, 41, cfg.model.history_frames, cfg.model.horizon);
  SECTION("empty training split") {
    DatasetSplit empty;
    CHECK_THROWS_AS(train(cfg, data.samples, empty, data.table), ConfigError);
  }
  SECTION("split referencing a missing sample") {
    DatasetSplit bad = data.split;
    bad.train.push_back("no_such_sample");
    CHECK_THROWS_AS(train(cfg, data.samples, bad, data.table), std::invalid_argument);
  }
  SECTION("table missing a training sample") {
    DifficultyTable partial = data.table;
    partial.entries.erase(data.split.train.front());
    CHECK_THROWS_AS(train(cfg, data.samples, data.split, partial), std::invalid_argument);
  }
  SECTION("batch size below 2") {
    TrainConfig bad = cfg;
    bad.batch_size = 1;
    CHECK_THROWS_AS(train(bad, data.samples, data.split, data.table), ConfigError);
  }
}

TEST_CASE("run log file is deterministic and excludes wall time") {
  const auto dir = std::filesystem::temp_directory_path() / "longtail_tests_trainer";
  std::filesystem::create_directories(dir);
  auto cfg = tiny_train_config();
  const auto data = make_dataset(12, 0.1, 43, cfg.model.history_frames, cfg.model.horizon);
  const auto a = train(cfg, data.samples, data.split, data.table);
  const auto b = train(cfg, data.samples, data.split, data.table);
  write_run_log(a.log, (dir / "a.log").string());
  write_run_log(b.log, (dir / "b.log").string());
  std::ifstream fa(dir / "a.log"), fb(dir / "b.log");
  const std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ca == cb);
  CHECK(ca.find("wall") == std::string::npos);
}
