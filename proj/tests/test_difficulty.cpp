#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>

#include "longtail/difficulty.hpp"
#include "test_util.hpp"

using namespace longtail;

namespace {

// Reference constant-velocity filter written with plain arrays and explicit 2x2
// inversion; deliberately shares no code with the implementation.
double reference_kalman_score(const TrajectorySample& sample, const KalmanConfig& cfg) {
  using M4 = std::array<std::array<double, 4>, 4>;
  auto matmul = [](const M4& a, const M4& b) {
    M4 r{};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) r[i][j] += a[i][k] * b[k][j];
    return r;
  };
  auto transpose = [](const M4& a) {
    M4 r{};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) r[i][j] = a[j][i];
    return r;
  };

  M4 F{};
  for (int i = 0; i < 4; ++i) F[i][i] = 1.0;
  F[0][2] = F[1][3] = 1.0;

  const double q2 = cfg.process_noise_std * cfg.process_noise_std;
  M4 Q{};
  Q[0][0] = Q[1][1] = 0.25 * q2;
  Q[2][2] = Q[3][3] = q2;
  Q[0][2] = Q[2][0] = 0.5 * q2;
  Q[1][3] = Q[3][1] = 0.5 * q2;

  const double r2 = std::max(cfg.obs_noise_std * cfg.obs_noise_std, 1e-12);

  const auto& hist = sample.history;
  std::array<double, 4> x{hist[1].x, hist[1].y, hist[1].x - hist[0].x, hist[1].y - hist[0].y};
  M4 P{};
  for (int i = 0; i < 4; ++i) P[i][i] = 1.0;

  for (std::size_t obs = 2; obs < hist.size(); ++obs) {
    // predict
    std::array<double, 4> xp{};
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 4; ++k) xp[i] += F[i][k] * x[k];
    P = matmul(matmul(F, P), transpose(F));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) P[i][j] += Q[i][j];
    // innovation: H picks the first two state entries
    const double iy0 = hist[obs].x - xp[0];
    const double iy1 = hist[obs].y - xp[1];
    const double s00 = P[0][0] + r2, s01 = P[0][1], s10 = P[1][0], s11 = P[1][1] + r2;
    const double det = s00 * s11 - s01 * s10;
    const double inv00 = s11 / det, inv01 = -s01 / det, inv10 = -s10 / det, inv11 = s00 / det;
    // K = P H^T S^-1  (4x2)
    double K[4][2];
    for (int i = 0; i < 4; ++i) {
      K[i][0] = P[i][0] * inv00 + P[i][1] * inv10;
      K[i][1] = P[i][0] * inv01 + P[i][1] * inv11;
    }
    for (int i = 0; i < 4; ++i) x[i] = xp[i] + K[i][0] * iy0 + K[i][1] * iy1;
    M4 IKH{};
    for (int i = 0; i < 4; ++i) IKH[i][i] = 1.0;
    for (int i = 0; i < 4; ++i) {
      IKH[i][0] -= K[i][0];
      IKH[i][1] -= K[i][1];
    }
    P = matmul(IKH, P);
  }

  double sum = 0.0, last = 0.0;
  for (std::size_t m = 0; m < sample.future.size(); ++m) {
    std::array<double, 4> xp{};
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 4; ++k) xp[i] += F[i][k] * x[k];
    x = xp;
    last = std::hypot(x[0] - sample.future[m].x, x[1] - sample.future[m].y);
    sum += last;
  }
  return cfg.error_mode == KalmanErrorMode::kMean ? sum / sample.future.size() : last;
}

TrajectorySample make_sample(const std::vector<Vec2>& hist, const std::vector<Vec2>& fut,
                             const std::string& id = "s") {
  TrajectorySample s;
  s.sample_id = id;
  std::int64_t t = 0;
  for (const auto& p : hist) s.history.push_back({t++, p.x, p.y});
  for (const auto& p : fut) s.future.push_back({t++, p.x, p.y});
  return s;
}

TrajectorySample random_sample(Rng& rng, int h_plus_1, int M) {
  std::vector<Vec2> hist, fut;
  Vec2 p{rng.uniform(-10, 10), rng.uniform(-10, 10)};
  Vec2 v{rng.uniform(-1, 1), rng.uniform(-1, 1)};
  for (int i = 0; i < h_plus_1 + M; ++i) {
    Vec2 jitter{rng.normal(0.0, 0.3), rng.normal(0.0, 0.3)};
    const Vec2 q = p + jitter;
    if (i < h_plus_1) {
      hist.push_back(q);
    } else {
      fut.push_back(q);
    }
    p = p + v;
  }
  return make_sample(hist, fut);
}

}  // namespace

TEST_CASE("kalman_score vanishes on noiseless constant-velocity motion") {
  const int h = 5, M = 4;
  std::vector<Vec2> hist, fut;
  for (int i = 0; i <= h; ++i) hist.push_back({static_cast<double>(i), 0.0});
  for (int i = h + 1; i <= h + M; ++i) fut.push_back({static_cast<double>(i), 0.0});
  CHECK(kalman_score(make_sample(hist, fut), KalmanConfig{}).value < 1e-9);
}

TEST_CASE("kalman_score vanishes for a stationary agent") {
  std::vector<Vec2> hist(6, Vec2{3.0, -2.0}), fut(4, Vec2{3.0, -2.0});
  CHECK(kalman_score(make_sample(hist, fut), KalmanConfig{}).value < 1e-9);
}

TEST_CASE("kalman_score matches the hand-derived turn case") {
  // linear history along x, future turns along y: extrapolation is (4,0),(5,0),
  // so the mean displacement is (sqrt(2) + sqrt(8)) / 2
  const auto sample = make_sample({{0, 0}, {1, 0}, {2, 0}, {3, 0}}, {{3, 1}, {3, 2}});
  const double expected = (std::sqrt(2.0) + std::sqrt(8.0)) / 2.0;
  CHECK(std::abs(kalman_score(sample, KalmanConfig{}).value - expected) < 1e-6);
  CHECK(std::abs(expected - 2.1213) < 1e-4);
  // final mode keeps only the last step
  KalmanConfig final_cfg;
  final_cfg.error_mode = KalmanErrorMode::kFinal;
  CHECK(std::abs(kalman_score(sample, final_cfg).value - std::sqrt(8.0)) < 1e-6);
}

TEST_CASE("kalman_score equals an independently coded reference filter") {
  Rng rng(123);
  KalmanConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const auto sample = random_sample(rng, 2 + static_cast<int>(rng.uniform_index(6)),
                                      1 + static_cast<int>(rng.uniform_index(6)));
    const double got = kalman_score(sample, cfg).value;
    const double expected = reference_kalman_score(sample, cfg);
    CHECK(std::abs(got - expected) < 1e-10);
  }
}

TEST_CASE("kalman_score requires at least two history points") {
  const auto sample = make_sample({{0, 0}}, {{1, 0}});
  CHECK_THROWS_AS(kalman_score(sample, KalmanConfig{}), std::invalid_argument);
}

TEST_CASE("kalman_score is invariant under rigid transforms") {
  Rng rng(77);
  KalmanConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const auto sample = random_sample(rng, 4, 4);
    const double base = kalman_score(sample, cfg).value;

    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const double tx = rng.uniform(-100, 100), ty = rng.uniform(-100, 100);
    const double c = std::cos(angle), s = std::sin(angle);
    TrajectorySample moved = sample;
    auto apply = [&](std::vector<TrajectoryPoint>& pts) {
      for (auto& p : pts) {
        const double nx = c * p.x - s * p.y + tx;
        const double ny = s * p.x + c * p.y + ty;
        p.x = nx;
        p.y = ny;
      }
    };
    apply(moved.history);
    apply(moved.future);
    CHECK(std::abs(kalman_score(moved, cfg).value - base) < 1e-9);
  }
}

TEST_CASE("kalman_score is zero iff the future continues the filter extrapolation") {
  // purely linear history; a future on the same line scores zero, any deviation is > 0
  const auto on_line = make_sample({{0, 0}, {1, 1}, {2, 2}}, {{3, 3}, {4, 4}});
  CHECK(kalman_score(on_line, KalmanConfig{}).value < 1e-12);
  const auto off_line = make_sample({{0, 0}, {1, 1}, {2, 2}}, {{3, 3}, {4, 4.5}});
  CHECK(kalman_score(off_line, KalmanConfig{}).value > 0.1);
}

TEST_CASE("maneuver samples score strictly harder than clean linear samples") {
  SyntheticConfig cfg;
  cfg.n_agents = 40;
  cfg.maneuver_fraction = 0.25;
  cfg.noise_std = 0.0;
  cfg.track_length = 26;
  const Scene scene = generate_synthetic(cfg, 9);
  const auto samples = extract_samples(scene, 5, 6, 4.0);
  KalmanConfig kcfg;
  double maneuver_sum = 0.0, linear_sum = 0.0;
  int maneuver_n = 0, linear_n = 0;
  for (const auto& s : samples) {
    const double score = kalman_score(s, kcfg).value;
    if (!s.maneuver_label.empty()) {
      maneuver_sum += score;
      ++maneuver_n;
    } else {
      linear_sum += score;
      ++linear_n;
    }
  }
  REQUIRE(maneuver_n > 0);
  REQUIRE(linear_n > 0);
  CHECK(maneuver_sum / maneuver_n > linear_sum / linear_n);
  CHECK(linear_sum / linear_n < 1e-9);  // noiseless walkers are exactly linear
}

TEST_CASE("score_split is order independent and covers every sample") {
  Rng rng(5);
  std::vector<TrajectorySample> samples;
  for (int i = 0; i < 12; ++i) {
    auto s = random_sample(rng, 4, 3);
    s.sample_id = "s" + std::to_string(i);
    samples.push_back(s);
  }
  const auto table = score_split(samples, KalmanConfig{}, "train");
  CHECK(table.entries.size() == samples.size());
  CHECK(table.split_tag == "train");

  std::vector<TrajectorySample> shuffled(samples.rbegin(), samples.rend());
  const auto table2 = score_split(shuffled, KalmanConfig{});
  for (const auto& [id, score] : table.entries) CHECK(table2.at(id) == score);

  CHECK(score_split({}, KalmanConfig{}).entries.empty());
}

TEST_CASE("top_percent sizes, ordering and tie-breaks") {
  DifficultyTable table;
  for (int i = 0; i < 200; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", i);
    table.entries[buf] = static_cast<double>(i % 100);
  }
  SECTION("N = 200, p = 1 selects exactly 2") {
    CHECK(top_percent(table, 1.0).size() == 2);
  }
  SECTION("p = 100 returns everything in descending score order") {
    const auto all = top_percent(table, 100.0);
    REQUIRE(all.size() == 200);
    for (std::size_t i = 1; i < all.size(); ++i) CHECK(table.at(all[i - 1]) >= table.at(all[i]));
  }
  SECTION("equal scores break ties by ascending sample_id") {
    DifficultyTable tie;
    tie.entries["b"] = 1.0;
    tie.entries["a"] = 1.0;
    const auto top = top_percent(tie, 50.0);
    REQUIRE(top.size() == 1);
    CHECK(top[0] == "a");
  }
  SECTION("subset monotonicity: top(p1) is a prefix of top(p2) for p1 <= p2") {
    const auto small = top_percent(table, 3.0);
    const auto large = top_percent(table, 9.0);
    REQUIRE(small.size() <= large.size());
    for (std::size_t i = 0; i < small.size(); ++i) CHECK(small[i] == large[i]);
  }
  SECTION("p out of range is rejected") {
    CHECK_THROWS_AS(top_percent(table, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(top_percent(table, 101.0), std::invalid_argument);
  }
}

TEST_CASE("bin_scores pseudo-classes") {
  SECTION("single bin when everything is below the width") {
    DifficultyTable t;
    t.entries["a"] = 0.1;
    t.entries["b"] = 0.2;
    const auto bins = bin_scores(t, 0.5, 2.0);
    CHECK(bins.num_classes() == 1);
    CHECK(bins.counts[0] == 2);
  }
  SECTION("hand-binned three classes") {
    DifficultyTable t;
    t.entries["a"] = 0.1;
    t.entries["b"] = 0.6;
    t.entries["c"] = 5.0;
    const auto bins = bin_scores(t, 0.5, 2.0);
    REQUIRE(bins.num_classes() == 3);
    CHECK(bins.counts == std::vector<std::int64_t>{1, 1, 1});
    CHECK(bins.class_of.at("a") == 0);
    CHECK(bins.class_of.at("b") == 1);
    CHECK(bins.class_of.at("c") == 2);
    CHECK(bins.edges[2] == 2.0);  // tail lower edge is the threshold
  }
  SECTION("everything at or above the threshold lands in one tail class") {
    DifficultyTable t;
    t.entries["a"] = 2.5;
    t.entries["b"] = 9.9;
    const auto bins = bin_scores(t, 0.5, 2.0);
    CHECK(bins.num_classes() == 1);
    CHECK(bins.counts[0] == 2);
  }
  SECTION("counts always sum to the table size and edges increase") {
    Rng rng(2);
    DifficultyTable t;
    for (int i = 0; i < 300; ++i) t.entries["s" + std::to_string(i)] = rng.uniform(0.0, 6.0);
    const auto bins = bin_scores(t, 0.3, 2.5);
    std::int64_t total = 0;
    for (auto c : bins.counts) total += c;
    CHECK(total == 300);
    for (std::size_t i = 1; i < bins.edges.size(); ++i) CHECK(bins.edges[i] > bins.edges[i - 1]);
    // higher score maps to an equal or higher class
    for (const auto& [id_a, cls_a] : bins.class_of)
      for (const auto& [id_b, cls_b] : bins.class_of)
        if (t.at(id_a) < t.at(id_b) && cls_a > cls_b) FAIL("class order violates score order");
  }
}

TEST_CASE("difficulty CSV round trip") {
  const auto dir = test_util::scratch_dir("difficulty");
  DifficultyTable table;
  table.entries["x1"] = 0.123456789;
  table.entries["x2"] = 2.0;
  const auto path = (dir / "scores.csv").string();
  write_difficulty_csv(table, path, {"fixture"});
  const auto loaded = load_difficulty_csv(path);
  REQUIRE(loaded.entries.size() == 2);
  CHECK(std::abs(loaded.at("x1") - 0.123456789) < 1e-9);
  CHECK(loaded.at("x2") == 2.0);
}
