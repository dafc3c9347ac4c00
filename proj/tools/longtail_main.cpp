// longtail: long-tail aware multi-hypothesis trajectory prediction pipeline.
// Subcommands: gen | score | train | eval | export-embeddings | export-histogram | compare.
// Every stage reads the same flat key-value config (file, then --set overrides, then
// dedicated flags) and echoes the resolved values into its output artifacts.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "longtail/config.hpp"
#include "longtail/eval.hpp"
#include "longtail/trainer.hpp"

namespace {

using namespace longtail;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> overrides;  // key=value assignments
};

void add_common(CLI::App* cmd, CommonOpts* opts) {
  cmd->add_option("--config", opts->config_file, "Key-value config file (key = value per line)");
  cmd->add_option("--set", opts->overrides, "Override a config key, e.g. --set loss.lambda=50")
      ->type_name("KEY=VALUE");
}

ConfigMap resolve_config(const CommonOpts& opts) {
  ConfigMap cfg = make_default_config();
  if (!opts.config_file.empty()) cfg.load_file(opts.config_file);
  for (const auto& assignment : opts.overrides) cfg.set_flag_assignment(assignment);
  return cfg;
}

std::vector<std::string> artifact_header(const ConfigMap& cfg, const std::string& command) {
  std::vector<std::string> lines;
  lines.push_back("longtail " + command);
  for (const auto& line : cfg.echo_lines()) lines.push_back(line);
  return lines;
}

struct PipelineData {
  Scene scene;
  std::vector<TrajectorySample> samples;
  DatasetSplit split;
};

PipelineData load_pipeline_data(const ConfigMap& cfg, const std::string& data_path) {
  PipelineData d;
  d.scene = load_ethucy(data_path, cfg.get_double("data.dt"), cfg.get_int("data.frame_stride"));
  d.samples = extract_samples(d.scene, static_cast<int>(cfg.get_int("data.h")),
                              static_cast<int>(cfg.get_int("data.M")), cfg.get_double("data.neighbor_radius"),
                              static_cast<int>(cfg.get_int("data.max_neighbors")));
  d.split = make_split(d.samples, cfg.get_double("data.train_frac"), cfg.get_double("data.val_frac"),
                       cfg.get_uint("data.split_seed"));
  return d;
}

std::vector<TrajectorySample> select_split(const std::vector<TrajectorySample>& samples,
                                           const DatasetSplit& split, const std::string& name) {
  if (name == "all") return samples;
  const std::vector<std::string>* ids = nullptr;
  if (name == "train") {
    ids = &split.train;
  } else if (name == "val") {
    ids = &split.val;
  } else if (name == "test") {
    ids = &split.test;
  } else {
    throw ConfigError("config: key 'eval.split': expected all|train|val|test, got '" + name + "'");
  }
  std::map<std::string, const TrajectorySample*> by_id;
  for (const auto& s : samples) by_id[s.sample_id] = &s;
  std::vector<TrajectorySample> out;
  out.reserve(ids->size());
  for (const auto& id : *ids) out.push_back(*by_id.at(id));
  return out;
}

void require_file(const std::string& path, const std::string& hint) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing file '" + path + "'; " + hint);
}

int cmd_gen(const CommonOpts& opts, const std::string& out_path) {
  ConfigMap cfg = resolve_config(opts);
  const SyntheticConfig gen_cfg = synthetic_config_from(cfg);
  const Scene scene = generate_synthetic(gen_cfg, cfg.get_uint("gen.seed"));
  write_ethucy(scene, out_path, artifact_header(cfg, "gen"));
  std::size_t n_points = 0;
  for (const auto& t : scene.tracks) n_points += t.points.size();
  std::cerr << "gen: wrote " << scene.tracks.size() << " tracks (" << n_points << " points, "
            << scene.maneuver_labels.size() << " maneuver agents) to " << out_path << "\n";
  return kExitOk;
}

int cmd_score(const CommonOpts& opts, const std::string& data_path, const std::string& out_csv) {
  ConfigMap cfg = resolve_config(opts);
  const PipelineData data = load_pipeline_data(cfg, data_path);
  const DifficultyTable table = score_split(data.samples, kalman_config_from(cfg), "all");
  write_difficulty_csv(table, out_csv, artifact_header(cfg, "score"));
  std::cerr << "score: " << table.entries.size() << " samples scored, written to " << out_csv << "\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& opts, const std::string& data_path, const std::string& scores_csv,
              const std::string& out_dir) {
  ConfigMap cfg = resolve_config(opts);
  require_file(scores_csv, "run `longtail score` on the dataset first");
  const PipelineData data = load_pipeline_data(cfg, data_path);
  const DifficultyTable table = load_difficulty_csv(scores_csv);
  const TrainConfig train_cfg = train_config_from(cfg);

  std::filesystem::create_directories(out_dir);
  const auto header = artifact_header(cfg, "train");
  const auto result = train(train_cfg, data.samples, data.split, table,
                            [&](int stage_k, const ModelParams& params) {
                              save_checkpoint(params, out_dir + "/checkpoint_stage" +
                                                          std::to_string(stage_k) + ".txt",
                                              header);
                            });
  save_checkpoint(result.params, out_dir + "/checkpoint.txt", header);
  RunLog log = result.log;
  log.config_echo = cfg.echo_pairs();
  write_run_log(log, out_dir + "/run_log.txt");
  for (const auto& e : result.log.epochs)
    std::cerr << "epoch " << e.epoch << " k=" << e.k << " total=" << format_fixed(e.total, 6)
              << " wall_ms=" << format_fixed(e.wall_ms, 1) << "\n";
  std::cerr << "train: wrote " << out_dir << "/checkpoint.txt and run_log.txt\n";
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path, const std::string& data_path,
             const std::string& scores_csv, const std::string& out_report) {
  ConfigMap cfg = resolve_config(opts);
  require_file(checkpoint_path, "run `longtail train` first");
  require_file(scores_csv, "run `longtail score` on the dataset first");
  const ModelParams params = load_checkpoint(checkpoint_path);
  const PipelineData data = load_pipeline_data(cfg, data_path);
  const DifficultyTable table = load_difficulty_csv(scores_csv);
  const auto subset = select_split(data.samples, data.split, cfg.raw("eval.split"));
  if (subset.empty()) throw ConfigError("eval: selected split '" + cfg.raw("eval.split") + "' is empty");
  const EvalReport report = evaluate(params, subset, table, cfg.get_double_list("eval.percents"),
                                     checkpoint_path, cfg.echo_pairs());
  write_eval_report(report, out_report);
  for (const auto& s : report.subsets)
    std::cerr << "eval[" << s.name << "] n=" << s.count << " min_ade=" << format_fixed(s.min_ade, 4)
              << " min_fde=" << format_fixed(s.min_fde, 4) << "\n";
  return kExitOk;
}

int cmd_export_embeddings(const CommonOpts& opts, const std::string& checkpoint_path,
                          const std::string& data_path, const std::string& scores_csv,
                          const std::string& out_csv) {
  ConfigMap cfg = resolve_config(opts);
  require_file(checkpoint_path, "run `longtail train` first");
  require_file(scores_csv, "run `longtail score` on the dataset first");
  const ModelParams params = load_checkpoint(checkpoint_path);
  const PipelineData data = load_pipeline_data(cfg, data_path);
  const DifficultyTable table = load_difficulty_csv(scores_csv);
  const auto subset = select_split(data.samples, data.split, cfg.raw("eval.split"));
  export_embeddings(params, subset, table, out_csv, artifact_header(cfg, "export-embeddings"));
  std::cerr << "export-embeddings: " << subset.size() << " rows written to " << out_csv << "\n";
  return kExitOk;
}

int cmd_export_histogram(const CommonOpts& opts, const std::string& scores_csv, double bin_width,
                         const std::string& out_csv) {
  ConfigMap cfg = resolve_config(opts);
  require_file(scores_csv, "run `longtail score` on the dataset first");
  const DifficultyTable table = load_difficulty_csv(scores_csv);
  export_histogram(table, bin_width, out_csv, artifact_header(cfg, "export-histogram"));
  std::cerr << "export-histogram: written to " << out_csv << "\n";
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& report_paths, std::size_t baseline_index,
                const std::string& out_path) {
  std::vector<EvalReport> reports;
  for (const auto& p : report_paths) {
    require_file(p, "eval report not found");
    reports.push_back(load_eval_report(p));
  }
  const ComparisonTable table = compare_runs(reports, baseline_index);
  write_comparison(table, out_path, {"longtail compare, baseline row " + std::to_string(baseline_index)});
  std::cerr << "compare: " << reports.size() << " runs written to " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"longtail: long-tail aware multi-hypothesis trajectory prediction"};
  app.require_subcommand(1);

  CommonOpts gen_opts, score_opts, train_opts, eval_opts, emb_opts, hist_opts;
  std::string gen_out, score_data, score_out, train_data, train_scores, train_out_dir;
  std::string eval_ckpt, eval_data, eval_scores, eval_out;
  std::string emb_ckpt, emb_data, emb_scores, emb_out;
  std::string hist_scores, hist_out;
  double hist_bin_width = 0.5;
  std::vector<std::string> compare_reports;
  std::size_t compare_baseline = 0;
  std::string compare_out;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic long-tailed scene");
  add_common(gen, &gen_opts);
  gen->add_option("--out", gen_out, "Output trajectory file")->required();

  auto* score = app.add_subcommand("score", "Kalman-filter difficulty scores for every sample");
  add_common(score, &score_opts);
  score->add_option("--data", score_data, "Input trajectory file")->required();
  score->add_option("--out", score_out, "Output difficulty CSV")->required();

  auto* tr = app.add_subcommand("train", "Train the multi-hypothesis predictor");
  add_common(tr, &train_opts);
  tr->add_option("--data", train_data, "Input trajectory file")->required();
  tr->add_option("--scores", train_scores, "Difficulty CSV from `longtail score`")->required();
  tr->add_option("--out-dir", train_out_dir, "Output directory for checkpoints and the run log")
      ->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint: min-ADE/min-FDE, overall and top-k%");
  add_common(ev, &eval_opts);
  ev->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  ev->add_option("--data", eval_data, "Input trajectory file")->required();
  ev->add_option("--scores", eval_scores, "Difficulty CSV")->required();
  ev->add_option("--out", eval_out, "Output report file")->required();

  auto* emb = app.add_subcommand("export-embeddings", "Export bottleneck embeddings as CSV");
  add_common(emb, &emb_opts);
  emb->add_option("--checkpoint", emb_ckpt, "Model checkpoint")->required();
  emb->add_option("--data", emb_data, "Input trajectory file")->required();
  emb->add_option("--scores", emb_scores, "Difficulty CSV")->required();
  emb->add_option("--out", emb_out, "Output CSV")->required();

  auto* hist = app.add_subcommand("export-histogram", "Export a difficulty histogram as CSV");
  add_common(hist, &hist_opts);
  hist->add_option("--scores", hist_scores, "Difficulty CSV")->required();
  hist->add_option("--bin-width", hist_bin_width, "Histogram bin width in meters")
      ->capture_default_str();
  hist->add_option("--out", hist_out, "Output CSV")->required();

  auto* cmp = app.add_subcommand("compare", "Tabulate eval reports against a baseline run");
  cmp->add_option("reports", compare_reports, "Eval report files")->required()->expected(-1);
  cmp->add_option("--baseline", compare_baseline, "Index of the baseline report")
      ->capture_default_str();
  cmp->add_option("--out", compare_out, "Output table")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_opts, gen_out);
    if (score->parsed()) return cmd_score(score_opts, score_data, score_out);
    if (tr->parsed()) return cmd_train(train_opts, train_data, train_scores, train_out_dir);
    if (ev->parsed()) return cmd_eval(eval_opts, eval_ckpt, eval_data, eval_scores, eval_out);
    if (emb->parsed()) return cmd_export_embeddings(emb_opts, emb_ckpt, emb_data, emb_scores, emb_out);
    if (hist->parsed()) return cmd_export_histogram(hist_opts, hist_scores, hist_bin_width, hist_out);
    if (cmp->parsed()) return cmd_compare(compare_reports, compare_baseline, compare_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
