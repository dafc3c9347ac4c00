#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "longtail/eval.hpp"
#include "test_util.hpp"

using namespace longtail;

namespace {

HypothesisSet make_hyps(const std::vector<std::vector<Vec2>>& trajectories) {
  HypothesisSet h;
  h.hypothesis_count = static_cast<int>(trajectories.size());
  h.horizon = static_cast<int>(trajectories[0].size());
  for (const auto& t : trajectories)
    for (const auto& p : t) h.points.push_back(p);
  return h;
}

}  // namespace

TEST_CASE("min_ade hand cases") {
  SECTION("a hypothesis equal to the ground truth scores zero") {
    const auto hyps = make_hyps({{{1, 1}, {2, 2}}, {{0, 0}, {5, 5}}});
    const std::vector<Vec2> gt{{1, 1}, {2, 2}};
    CHECK(min_ade(hyps, gt) == 0.0);
  }
  SECTION("per-hypothesis averaging then min") {
    // hyp A at distance 1 from gt at both steps, hyp B at distances 0 and 4
    const auto hyps = make_hyps({{{1, 0}, {1, 1}}, {{0, 0}, {4, 1}}});
    const std::vector<Vec2> gt{{0, 0}, {0, 1}};
    CHECK(min_ade(hyps, gt) == 1.0);
  }
  SECTION("duplicating the best hypothesis changes nothing") {
    const auto hyps = make_hyps({{{1, 0}, {1, 1}}, {{0, 0}, {4, 1}}});
    const auto dup = make_hyps({{{1, 0}, {1, 1}}, {{0, 0}, {4, 1}}, {{1, 0}, {1, 1}}});
    const std::vector<Vec2> gt{{0, 0}, {0, 1}};
    CHECK(min_ade(hyps, gt) == min_ade(dup, gt));
  }
}

TEST_CASE("min_fde hand cases") {
  SECTION("final-step min over hypotheses") {
    const auto hyps = make_hyps({{{9, 9}, {1, 0}}, {{9, 9}, {0, 2}}});
    const std::vector<Vec2> gt{{0, 0}, {0, 0}};
    CHECK(min_fde(hyps, gt) == 1.0);
  }
  SECTION("any hypothesis ending at the ground truth gives zero") {
    const auto hyps = make_hyps({{{5, 5}, {3, 3}}, {{1, 1}, {0, 0}}});
    const std::vector<Vec2> gt{{2, 2}, {0, 0}};
    CHECK(min_fde(hyps, gt) == 0.0);
  }
}

TEST_CASE("min metrics are non-increasing under appended hypotheses and bounded") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 1 + static_cast<int>(rng.uniform_index(4));
    const int M = 1 + static_cast<int>(rng.uniform_index(5));
    std::vector<std::vector<Vec2>> trajs(K, std::vector<Vec2>(M));
    for (auto& t : trajs)
      for (auto& p : t) p = {rng.uniform(-4, 4), rng.uniform(-4, 4)};
    std::vector<Vec2> gt(M);
    for (auto& p : gt) p = {rng.uniform(-4, 4), rng.uniform(-4, 4)};
    const auto hyps = make_hyps(trajs);

    trajs.push_back(std::vector<Vec2>(M));
    for (auto& p : trajs.back()) p = {rng.uniform(-4, 4), rng.uniform(-4, 4)};
    const auto extended = make_hyps(trajs);
    CHECK(min_ade(extended, gt) <= min_ade(hyps, gt) + 1e-15);
    CHECK(min_fde(extended, gt) <= min_fde(hyps, gt) + 1e-15);

    // min over k is bounded by each hypothesis and by the mean
    double ade_mean = 0.0, fde_max = 0.0;
    for (int k = 0; k < K; ++k) {
      double sum = 0.0;
      for (int m = 0; m < M; ++m) sum += distance(hyps.at(k, m), gt[m]);
      ade_mean += sum / M;
      fde_max = std::max(fde_max, distance(hyps.at(k, M - 1), gt[M - 1]));
    }
    ade_mean /= K;
    CHECK(min_ade(hyps, gt) <= ade_mean + 1e-12);
    CHECK(min_fde(hyps, gt) <= fde_max + 1e-12);
  }
}

namespace {

struct EvalFixture {
  std::vector<TrajectorySample> samples;
  DifficultyTable table;
  ModelParams params;
};

// stationary agents everywhere: the zero model (stay-put hypotheses) is exact
EvalFixture perfect_fixture(int n_samples, int h, int M) {
  EvalFixture f;
  for (int i = 0; i < n_samples; ++i) {
    TrajectorySample s;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%03d", i);
    s.sample_id = buf;
    const double x = static_cast<double>(i), y = -static_cast<double>(i);
    for (int t = 0; t <= h; ++t) s.history.push_back({t, x, y});
    for (int t = h + 1; t <= h + M; ++t) s.future.push_back({t, x, y});
    f.samples.push_back(s);
    f.table.entries[s.sample_id] = 0.0;
  }
  ModelConfig cfg;
  cfg.history_frames = h;
  cfg.horizon = M;
  cfg.hypothesis_count = 3;
  cfg.embed_dim = 4;
  cfg.hidden_widths = {4};
  f.params = make_zero_params(cfg);
  return f;
}

}  // namespace

TEST_CASE("evaluate scores a perfect model at zero everywhere") {
  auto f = perfect_fixture(100, 3, 4);
  const auto report = evaluate(f.params, f.samples, f.table, {1.0, 5.0}, "perfect");
  REQUIRE(report.subsets.size() == 3);
  CHECK(report.subsets[0].name == "all");
  CHECK(report.subsets[0].count == 100);
  CHECK(report.subsets[0].min_ade == 0.0);
  CHECK(report.subsets[0].min_fde == 0.0);
  CHECK(report.subsets[1].name == "top1");
  CHECK(report.subsets[1].count == 1);
  CHECK(report.subsets[2].count == 5);
  CHECK(report.subsets[2].min_fde == 0.0);
}

TEST_CASE("evaluate ranks subsets by the shared difficulty ordering") {
  auto f = perfect_fixture(200, 3, 4);
  // difficulty increases with index; make the model wrong on the hardest samples by
  // shifting their futures
  int i = 0;
  for (auto& [id, score] : f.table.entries) score = static_cast<double>(i++);
  for (int k = 150; k < 200; ++k)
    for (auto& p : f.samples[k].future) p.x += 3.0;

  const auto report = evaluate(f.params, f.samples, f.table, {1.0});
  CHECK(report.subsets[1].count == 2);  // ceil(1% of 200)
  CHECK(report.subsets[1].min_fde == 3.0);  // hardest two are among the shifted ones
  CHECK(report.subsets[0].min_fde == 3.0 * 50.0 / 200.0);
}

TEST_CASE("evaluate requires difficulty coverage") {
  auto f = perfect_fixture(5, 2, 2);
  f.table.entries.erase("p003");
  CHECK_THROWS_AS(evaluate(f.params, f.samples, f.table, {1.0}), std::invalid_argument);
}

TEST_CASE("export_embeddings writes one row per sample and is reproducible") {
  const auto dir = test_util::scratch_dir("eval");
  auto f = perfect_fixture(7, 2, 2);
  const auto path_a = (dir / "emb_a.csv").string();
  const auto path_b = (dir / "emb_b.csv").string();
  export_embeddings(f.params, f.samples, f.table, path_a, {"fixture"});
  export_embeddings(f.params, f.samples, f.table, path_b, {"fixture"});
  const auto a = test_util::read_text(path_a);
  CHECK(a == test_util::read_text(path_b));
  // header + 7 rows + 1 comment
  int lines = 0;
  for (char c : a) lines += c == '\n';
  CHECK(lines == 9);
  CHECK(a.find("sample_id,score,z_0,z_1,z_2,z_3") != std::string::npos);
}

TEST_CASE("export_histogram bins cover the score range") {
  const auto dir = test_util::scratch_dir("eval");
  SECTION("all-zero scores occupy a single bin") {
    DifficultyTable t;
    t.entries["a"] = 0.0;
    t.entries["b"] = 0.0;
    const auto path = (dir / "hist0.csv").string();
    export_histogram(t, 0.5, path);
    const auto text = test_util::read_text(path);
    CHECK(text == "bin_lo,bin_hi,count\n0.000000000,0.500000000,2\n");
  }
  SECTION("hand-binned two bins") {
    DifficultyTable t;
    t.entries["a"] = 0.1;
    t.entries["b"] = 0.6;
    const auto path = (dir / "hist1.csv").string();
    export_histogram(t, 0.5, path);
    const auto text = test_util::read_text(path);
    CHECK(text.find("0.000000000,0.500000000,1") != std::string::npos);
    CHECK(text.find("0.500000000,1.000000000,1") != std::string::npos);
  }
  SECTION("counts sum to the table size") {
    Rng rng(3);
    DifficultyTable t;
    for (int i = 0; i < 57; ++i) t.entries["s" + std::to_string(i)] = rng.uniform(0.0, 4.0);
    const auto path = (dir / "hist2.csv").string();
    export_histogram(t, 0.3, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    std::int64_t total = 0;
    while (std::getline(in, line)) total += std::strtoll(line.substr(line.rfind(',') + 1).c_str(), nullptr, 10);
    CHECK(total == 57);
  }
}

TEST_CASE("eval report round trip and comparisons") {
  const auto dir = test_util::scratch_dir("eval");
  EvalReport base;
  base.run_id = "base";
  base.config_echo = {{"loss.lambda", "0"}};
  base.subsets = {{"all", 0.0, 100, 0.5, 1.0}, {"top1", 1.0, 1, 2.0, 4.0}};
  EvalReport better = base;
  better.run_id = "contrastive";
  better.subsets[1].min_fde = 3.6;  // -10% on top1

  const auto p1 = (dir / "base.report").string();
  const auto p2 = (dir / "ours.report").string();
  write_eval_report(base, p1);
  write_eval_report(better, p2);
  const auto loaded = load_eval_report(p1);
  CHECK(loaded.run_id == "base");
  REQUIRE(loaded.subsets.size() == 2);
  CHECK(loaded.subsets[1].min_fde == 4.0);
  CHECK(loaded.config_echo == base.config_echo);

  SECTION("single report compares to itself with zero deltas") {
    const auto table = compare_runs({base}, 0);
    CHECK(table.rows.size() == 1);
    for (double d : table.rows[0].fde_delta_pct) CHECK(d == 0.0);
  }
  SECTION("relative deltas against the baseline row") {
    const auto table = compare_runs({base, better}, 0);
    CHECK(std::abs(table.rows[1].fde_delta_pct[1] + 10.0) < 1e-9);
    CHECK(table.rows[1].fde_delta_pct[0] == 0.0);
  }
  SECTION("mismatched subsets are rejected") {
    EvalReport other = base;
    other.subsets[1].name = "top2";
    CHECK_THROWS_AS(compare_runs({base, other}, 0), std::invalid_argument);
  }
  SECTION("written comparison has a stable column layout") {
    const auto out = (dir / "cmp.tsv").string();
    write_comparison(compare_runs({base, better}, 0), out);
    const auto text = test_util::read_text(out);
    CHECK(text.find("run_id\tall_min_ade\tall_min_fde\tall_dade_pct\tall_dfde_pct\ttop1_min_ade") !=
          std::string::npos);
  }
}
