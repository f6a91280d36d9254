// Command-line surface for the training pipeline: synthetic data generation,
// patient-grouped splitting, the learning-rate range test, training with
// progressive resizing and warm restarts, the four-variant ablation, and
// report rendering.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tinytrain/config.hpp"
#include "tinytrain/data.hpp"
#include "tinytrain/error.hpp"
#include "tinytrain/metrics.hpp"
#include "tinytrain/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tinytrain;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitDivergence = 2;

std::string resolve_out(const std::string& flag_out, const std::string& config_out,
                        const std::string& leaf) {
  if (!flag_out.empty()) return flag_out;
  if (!config_out.empty()) return config_out;
  if (const char* env = std::getenv("TINYTRAIN_OUT_ROOT")) {
    return (fs::path(env) / leaf).string();
  }
  return leaf;
}

std::string slurp_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

Dataset load_dataset(const RunConfigFile& cfg) {
  if (cfg.manifest.empty() || cfg.dataset_dir.empty()) {
    throw ValidationError("config must set 'manifest' and 'dataset_dir'");
  }
  return Dataset::load(cfg.manifest, cfg.dataset_dir);
}

SplitAssignment load_splits(const RunConfigFile& cfg) {
  if (cfg.splits.empty()) {
    throw ValidationError("config must set 'splits' (generate one with 'tinytrain split')");
  }
  return parse_split_csv(slurp_file(cfg.splits));
}

void print_run_summary(const RunReport& report) {
  for (std::size_t i = 0; i < report.stage_sides.size(); ++i) {
    std::printf("stage %zu/%zu: side %zu", i + 1, report.stage_sides.size(),
                report.stage_sides[i]);
    if (i < report.val_per_stage.size() && report.val_per_stage[i].macro) {
      std::printf("  val macro AUC %.4f", *report.val_per_stage[i].macro);
    }
    std::printf("\n");
  }
  if (report.test.macro) {
    std::printf("test macro AUC %.4f\n", *report.test.macro);
  } else {
    std::printf("test macro AUC undefined\n");
  }
  std::printf("selected lr %.6g (%s), %zu steps, %.1fs\n", report.selected_lr,
              report.lr_was_auto ? "range test" : "fixed", report.trace.size(),
              report.wall_seconds);
}

struct CommonOpts {
  std::string config_path;
  std::string out;
  std::int64_t seed = -1;  // -1: keep config value
};

RunConfigFile load_and_override(const CommonOpts& opts, const std::string& variant_override) {
  RunConfigFile cfg = load_run_config(opts.config_path);
  if (opts.seed >= 0) cfg.pipeline.seed = static_cast<std::uint64_t>(opts.seed);
  if (!variant_override.empty()) {
    auto v = variant_from_name(variant_override);
    if (!v) throw ValidationError("unknown variant '" + variant_override + "'");
    cfg.pipeline.variant = *v;
  }
  return cfg;
}

int run_synth(const std::string& out, std::size_t n, std::size_t side, std::uint64_t seed,
              double noise, double priors, bool force) {
  fs::path dir(out);
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw ValidationError("output directory " + dir.string() +
                          " is not empty (use --force to overwrite)");
  }
  SynthSpec spec;
  spec.n_images = n;
  spec.side = side;
  spec.seed = seed;
  spec.noise_std = noise;
  spec.class_priors.fill(priors);
  auto records = generate_synthetic(spec, dir);
  std::printf("wrote %zu images (side %zu) and manifest.csv to %s\n", records.size(), side,
              dir.string().c_str());
  return kExitOk;
}

int run_split_cmd(const std::string& manifest, std::uint64_t seed, const std::string& out) {
  auto records = parse_manifest(slurp_file(manifest));
  SplitAssignment a = group_split(records, {0.7, 0.1, 0.2}, seed);
  std::ofstream f(out, std::ios::binary);
  if (!f) throw IoError("cannot write " + out);
  f << render_split_csv(a);
  std::size_t train = 0, val = 0, test = 0;
  for (const auto& [p, s] : a.by_patient) {
    if (s == Split::Train) ++train;
    else if (s == Split::Val) ++val;
    else ++test;
  }
  std::printf("split %zu patients into %zu train / %zu val / %zu test -> %s\n",
              a.by_patient.size(), train, val, test, out.c_str());
  return kExitOk;
}

int run_lr_find_cmd(const CommonOpts& opts) {
  RunConfigFile cfg = load_and_override(opts, "");
  Dataset dataset = load_dataset(cfg);
  SplitAssignment splits = load_splits(cfg);
  LrFindResult found = run_lr_find(cfg.pipeline, dataset, splits);

  fs::path out(resolve_out(opts.out, cfg.out_dir, "lr_find"));
  fs::create_directories(out);
  std::ostringstream csv;
  write_sweep_csv(found.sweep, csv);
  {
    std::ofstream f(out / "sweep.csv", std::ios::binary);
    f << csv.str();
  }
  {
    std::ofstream f(out / "sweep.svg", std::ios::binary);
    f << sweep_svg(found.sweep, found.selected);
  }
  std::printf("sweep: %zu points, %s\n", found.sweep.points.size(),
              found.sweep.stop_reason == StopReason::Diverged ? "stopped at divergence"
                                                              : "completed");
  std::printf("selected lr %.8g (wrote %s)\n", found.selected, (out / "sweep.csv").c_str());
  return kExitOk;
}

int run_train_cmd(const CommonOpts& opts, const std::string& variant, const std::string& resume) {
  RunConfigFile cfg = load_and_override(opts, variant);
  std::string leaf = std::string("run_") + variant_name(cfg.pipeline.variant);
  for (auto& c : leaf) c = static_cast<char>(std::tolower(c));
  cfg.out_dir = resolve_out(opts.out, cfg.out_dir, leaf);

  Dataset dataset = load_dataset(cfg);
  SplitAssignment splits = load_splits(cfg);

  RunOptions run_opts;
  run_opts.out_dir = cfg.out_dir;
  run_opts.config_json = render_run_config(cfg);
  if (!resume.empty()) run_opts.resume_from = resume;

  try {
    RunResult result = run_training(cfg.pipeline, dataset, splits, run_opts);
    print_run_summary(result.report);
    std::printf("run directory: %s\n", cfg.out_dir.c_str());
    return kExitOk;
  } catch (const DivergenceError& e) {
    // Keep the partial trace inspectable.
    std::ofstream f(fs::path(cfg.out_dir) / "trace.csv", std::ios::binary);
    f << e.trace_csv();
    throw;
  }
}

int run_ablate_cmd(const CommonOpts& opts) {
  RunConfigFile cfg = load_and_override(opts, "");
  cfg.out_dir = resolve_out(opts.out, cfg.out_dir, "ablation");
  Dataset dataset = load_dataset(cfg);
  SplitAssignment splits = load_splits(cfg);

  std::array<std::string, 4> echoes;
  for (std::size_t i = 0; i < 4; ++i) {
    RunConfigFile sub = cfg;
    sub.pipeline.variant = kAblationVariants[i];
    std::string leaf(variant_name(sub.pipeline.variant));
    for (auto& c : leaf) c = static_cast<char>(std::tolower(c));
    sub.out_dir = (fs::path(cfg.out_dir) / leaf).string();
    echoes[i] = render_run_config(sub);
  }

  AblationReport rep = run_ablation(cfg.pipeline, dataset, splits, cfg.out_dir, echoes);
  std::printf("%s", rep.table_text.c_str());
  for (std::size_t i = 0; i < 4; ++i) {
    if (!rep.errors[i].empty()) {
      std::fprintf(stderr, "variant %s failed: %s\n", variant_name(kAblationVariants[i]),
                   rep.errors[i].c_str());
    }
  }
  std::printf("ablation table: %s\n", (fs::path(cfg.out_dir) / "ablation_table.csv").c_str());
  return kExitOk;
}

int run_eval_cmd(const CommonOpts& opts, const std::string& checkpoint) {
  RunConfigFile cfg = load_and_override(opts, "");
  Dataset dataset = load_dataset(cfg);
  SplitAssignment splits = load_splits(cfg);
  EvalReport rep = evaluate_checkpoint(checkpoint, cfg.pipeline, dataset, splits);
  std::string json = metrics_json(rep);
  if (!opts.out.empty()) {
    std::ofstream f(opts.out, std::ios::binary);
    if (!f) throw IoError("cannot write " + opts.out);
    f << json;
    std::printf("wrote %s\n", opts.out.c_str());
  } else {
    std::printf("%s", json.c_str());
  }
  return kExitOk;
}

int run_report_cmd(const std::vector<std::string>& metric_files,
                   const std::vector<std::string>& names) {
  if (metric_files.empty()) throw ValidationError("report: need at least one metrics file");
  if (!names.empty() && names.size() != metric_files.size()) {
    throw ValidationError("report: --names must match the number of metrics files");
  }
  std::vector<std::string> column_names;
  std::vector<EvalReport> reports;
  for (std::size_t i = 0; i < metric_files.size(); ++i) {
    reports.push_back(parse_metrics_json(slurp_file(metric_files[i])));
    if (!names.empty()) {
      column_names.push_back(names[i]);
    } else {
      fs::path p(metric_files[i]);
      std::string label = p.parent_path().filename().string();
      column_names.push_back(label.empty() ? p.stem().string() : label);
    }
  }
  std::printf("%s", format_table_text(column_names, reports).c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale multi-label training pipeline"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic glyph dataset");
  std::string synth_out;
  std::size_t synth_n = 1000, synth_side = 64;
  std::uint64_t synth_seed = 0;
  double synth_noise = 0.1, synth_priors = 0.1;
  bool synth_force = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n", synth_n, "number of images");
  synth->add_option("--side", synth_side, "image side length (>= 32)");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--noise", synth_noise, "gaussian pixel noise stddev");
  synth->add_option("--priors", synth_priors, "per-class glyph prior");
  synth->add_flag("--force", synth_force, "overwrite a non-empty directory");

  // split
  auto* split = app.add_subcommand("split", "patient-grouped 70/10/20 split");
  std::string split_manifest, split_out;
  std::uint64_t split_seed = 0;
  split->add_option("--manifest", split_manifest, "manifest csv")->required();
  split->add_option("--seed", split_seed, "shuffle seed");
  split->add_option("--out", split_out, "output split csv")->required();

  // shared train-family options
  CommonOpts lrfind_opts, train_opts, ablate_opts, eval_opts;
  std::string train_variant, train_resume, eval_checkpoint;
  std::vector<std::string> report_files, report_names;

  auto add_common = [](CLI::App* cmd, CommonOpts& opts, bool out_help_is_dir = true) {
    cmd->add_option("--config", opts.config_path, "run config json")->required();
    cmd->add_option("--out", opts.out,
                    out_help_is_dir ? "output directory" : "output file");
    cmd->add_option("--seed", opts.seed, "seed override (flag > config > 0)");
  };

  auto* lrfind = app.add_subcommand("lr-find", "learning-rate range test");
  add_common(lrfind, lrfind_opts);

  auto* train = app.add_subcommand("train", "train one pipeline variant");
  add_common(train, train_opts);
  train->add_option("--variant", train_variant, "Proposed | V1 | V2 | V3");
  train->add_option("--resume", train_resume, "resume from a checkpoint file");

  auto* ablate = app.add_subcommand("ablate", "run Proposed, V1, V2, V3 and tabulate");
  add_common(ablate, ablate_opts);

  auto* eval = app.add_subcommand("eval", "recompute test metrics from a checkpoint");
  add_common(eval, eval_opts, false);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();

  auto* report = app.add_subcommand("report", "render metrics files as a table");
  report->add_option("--metrics", report_files, "metrics json files")->required();
  report->add_option("--names", report_names, "column names (one per file)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth->parsed()) {
      return run_synth(synth_out, synth_n, synth_side, synth_seed, synth_noise, synth_priors,
                       synth_force);
    }
    if (split->parsed()) return run_split_cmd(split_manifest, split_seed, split_out);
    if (lrfind->parsed()) return run_lr_find_cmd(lrfind_opts);
    if (train->parsed()) return run_train_cmd(train_opts, train_variant, train_resume);
    if (ablate->parsed()) return run_ablate_cmd(ablate_opts);
    if (eval->parsed()) return run_eval_cmd(eval_opts, eval_checkpoint);
    if (report->parsed()) return run_report_cmd(report_files, report_names);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitValidation;
}
