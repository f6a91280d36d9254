#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tinytrain/checkpoint.hpp"
#include "tinytrain/data.hpp"
#include "tinytrain/error.hpp"
#include "tinytrain/lr_finder.hpp"
#include "tinytrain/metrics.hpp"
#include "tinytrain/model.hpp"
#include "tinytrain/optim.hpp"
#include "tinytrain/svg.hpp"

namespace tinytrain {

enum class Variant { Proposed, V1, V2, V3 };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Proposed: return "Proposed";
    case Variant::V1: return "V1";
    case Variant::V2: return "V2";
    default: return "V3";
  }
}

inline std::optional<Variant> variant_from_name(const std::string& s) {
  if (s == "Proposed" || s == "proposed") return Variant::Proposed;
  if (s == "V1" || s == "v1") return Variant::V1;
  if (s == "V2" || s == "v2") return Variant::V2;
  if (s == "V3" || s == "v3") return Variant::V3;
  return std::nullopt;
}

// Progressive resizing is dropped for V1/V3 (single stage at the largest
// size, with total-epoch parity against the multi-stage variants); cosine
// annealing with restarts is dropped for V2/V3 (constant rate).
inline bool variant_multi_size(Variant v) { return v == Variant::Proposed || v == Variant::V2; }
inline bool variant_annealed(Variant v) { return v == Variant::Proposed || v == Variant::V1; }

struct PipelineConfig {
  Variant variant = Variant::Proposed;
  std::vector<std::size_t> sizes{16, 32, 64};  // the size ladder d
  std::size_t epochs_per_stage = 2;
  std::size_t batch_size = 50;
  std::uint64_t seed = 0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double eta_min = 0.0;
  std::size_t t0 = 0;  // 0: one epoch of steps
  std::size_t t_mult = 2;
  std::optional<double> lr;  // empty: select via the range test
  LrRangeOptions lr_finder;
  LrSelectRule lr_rule = LrSelectRule::Steepest;
  ModelConfig model;

  void validate() const {
    if (sizes.empty()) throw ValidationError("pipeline: size ladder is empty");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (sizes[i] < Model::kMinSide) {
        throw ValidationError("pipeline: stage size " + std::to_string(sizes[i]) +
                              " is below the minimum side " + std::to_string(Model::kMinSide));
      }
      if (i > 0 && sizes[i] <= sizes[i - 1]) {
        throw ValidationError("pipeline: size ladder must be strictly increasing");
      }
    }
    if (epochs_per_stage == 0) throw ValidationError("pipeline: epochs_per_stage must be positive");
    if (batch_size == 0) throw ValidationError("pipeline: batch_size must be positive");
    if (lr && !(*lr > 0.0)) throw ValidationError("pipeline: fixed lr must be positive");
    lr_finder.validate();
  }

  std::vector<std::size_t> stage_sides() const {
    if (variant_multi_size(variant)) return sizes;
    return {*std::max_element(sizes.begin(), sizes.end())};
  }

  std::size_t stage_epochs() const {
    if (variant_multi_size(variant)) return epochs_per_stage;
    return epochs_per_stage * sizes.size();  // total-epoch parity
  }
};

struct Dataset {
  std::vector<ManifestRecord> records;
  ImageStore store;

  static Dataset load(const std::filesystem::path& manifest_path,
                      const std::filesystem::path& images_dir) {
    std::ifstream f(manifest_path, std::ios::binary);
    if (!f) throw IoError("dataset: cannot open manifest " + manifest_path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return Dataset{parse_manifest(text), ImageStore(images_dir)};
  }
};

struct RunOptions {
  std::filesystem::path out_dir;      // empty: no artifacts written
  std::filesystem::path resume_from;  // empty: fresh start
  std::size_t stop_after_steps = 0;   // interrupt after this many optimizer steps (0: never)
  std::string config_json;            // echoed verbatim to <out>/config.json when set
};

struct RunReport {
  Variant variant = Variant::Proposed;
  std::vector<std::size_t> stage_sides;
  std::vector<TraceRow> trace;
  std::vector<EvalReport> val_per_stage;
  EvalReport test;
  double selected_lr = 0.0;
  bool lr_was_auto = false;
  SweepRecord sweep;  // populated when the range test ran in this process
  bool interrupted = false;
  double wall_seconds = 0.0;
  std::set<std::string> update_image_ids;  // images that influenced parameters
};

struct RunResult {
  Model model;
  RunReport report;
};

namespace detail {

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) {
  return (n + batch - 1) / batch;
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
  if (!f) throw IoError("write failed for " + p.string());
}

// Eval batches in record order (no shuffle).
inline std::vector<std::pair<Tensor, Tensor>> eval_batches(
    const std::vector<ManifestRecord>& records, const ImageStore& store, std::size_t batch_size,
    std::size_t side, Normalization norm) {
  std::vector<std::pair<Tensor, Tensor>> out;
  if (records.empty()) return out;
  BatchStream stream(records, store, batch_size, side, norm, 0, 0, false);
  for (std::size_t i = 0; i < stream.num_batches(); ++i) {
    Batch b = stream.get(i);
    out.emplace_back(std::move(b.images), std::move(b.targets));
  }
  return out;
}

inline double train_step_loss(Model& model, const Batch& batch) {
  Graph g;
  int logits = model.forward(g, g.constant(batch.images), Mode::Train);
  int loss = g.bce_loss(g.sigmoid(logits), batch.targets);
  double raw = g.value(loss).data[0];
  if (std::isfinite(raw)) g.backward(loss);
  return raw;
}

inline std::string schedule_svg_from_trace(const std::vector<TraceRow>& trace) {
  std::vector<double> xs, ys;
  for (const auto& r : trace) {
    xs.push_back(static_cast<double>(r.step));
    ys.push_back(r.lr);
  }
  SvgPlotOptions opt;
  opt.title = "learning-rate schedule";
  opt.x_label = "step";
  opt.y_label = "lr";
  return svg_line_plot(xs, ys, opt);
}

}  // namespace detail

struct LrFindResult {
  SweepRecord sweep;
  double selected = 0.0;
};

// The range test, run once prior to training at the first stage's size on a
// throwaway model copy. The sweep grid is capped at one epoch of steps (but
// never below the 10-point minimum); shorter epochs cycle the shuffled
// stream.
inline LrFindResult run_lr_find(const PipelineConfig& config, const Dataset& dataset,
                                const SplitAssignment& splits,
                                std::set<std::string>* consumed_ids = nullptr,
                                const Normalization* norm_in = nullptr) {
  config.validate();
  auto train_records = records_in_split(dataset.records, splits, Split::Train);
  if (train_records.empty()) throw ValidationError("lr_find: training split is empty");

  Normalization norm;
  if (norm_in) {
    norm = *norm_in;
  } else {
    dataset.store.set_phase("normalize");
    norm = compute_normalization(train_records, dataset.store);
  }
  dataset.store.set_phase("lr_find");

  const std::size_t side = config.stage_sides().front();
  const std::size_t spe = detail::steps_per_epoch(train_records.size(), config.batch_size);
  LrRangeOptions sweep_opt = config.lr_finder;
  sweep_opt.num_iters = std::max<std::size_t>(10, std::min(sweep_opt.num_iters, spe));

  ModelConfig model_config = config.model;
  model_config.seed = config.seed;
  Model probe = build_model(model_config);
  Sgdm probe_opt(probe.parameters(), SgdmOptions{config.momentum, config.weight_decay});

  std::uint64_t sweep_seed = mix_seed(config.seed, 0x4C52);  // distinct stream from training
  std::size_t sweep_epoch = 0, sweep_batch = 0;
  BatchStream stream(train_records, dataset.store, config.batch_size, side, norm, sweep_seed,
                     sweep_epoch, true);
  LrFindResult result;
  result.sweep = lr_range_test(
      [&](double lr) {
        if (sweep_batch == stream.num_batches()) {
          sweep_batch = 0;
          ++sweep_epoch;
          stream = BatchStream(train_records, dataset.store, config.batch_size, side, norm,
                               sweep_seed, sweep_epoch, true);
        }
        Batch batch = stream.get(sweep_batch++);
        if (consumed_ids) {
          for (const auto& id : batch.image_ids) consumed_ids->insert(id);
        }
        double raw = detail::train_step_loss(probe, batch);
        if (std::isfinite(raw)) probe_opt.step(lr);
        return raw;
      },
      sweep_opt);
  result.selected = select_lr(result.sweep, config.lr_rule);
  dataset.store.set_phase("");
  return result;
}

// Figure-style training pipeline: optional range test at the first stage
// size, then one stage per ladder entry with SGDR (or a constant rate for
// V2/V3), velocities and schedule reset at stage boundaries, per-stage
// validation, and a final test evaluation at the largest size. Fully
// deterministic for a fixed config.
inline RunResult run_training(const PipelineConfig& config, const Dataset& dataset,
                              const SplitAssignment& splits, const RunOptions& options = {}) {
  auto t_start = std::chrono::steady_clock::now();
  config.validate();
  if (options.stop_after_steps > 0 && options.out_dir.empty()) {
    throw ValidationError("pipeline: stop_after_steps requires an output directory");
  }

  const std::vector<std::size_t> sides = config.stage_sides();
  const std::size_t epochs = config.stage_epochs();

  auto train_records = records_in_split(dataset.records, splits, Split::Train);
  auto val_records = records_in_split(dataset.records, splits, Split::Val);
  auto test_records = records_in_split(dataset.records, splits, Split::Test);
  if (train_records.empty()) throw ValidationError("pipeline: training split is empty");

  const std::size_t spe = detail::steps_per_epoch(train_records.size(), config.batch_size);
  const std::size_t t0 = config.t0 ? config.t0 : spe;

  ModelConfig model_config = config.model;
  model_config.seed = config.seed;

  RunReport report;
  report.variant = config.variant;
  report.stage_sides = sides;

  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir / "checkpoints");
    if (!options.config_json.empty()) {
      detail::write_text_file(options.out_dir / "config.json", options.config_json);
    }
  }

  Model model = build_model(model_config);
  Normalization norm;
  SgdrSchedule schedule;
  TrainPosition pos;

  std::optional<Checkpoint> resume;
  if (!options.resume_from.empty()) {
    resume = load_checkpoint(options.resume_from);
    load_model_state(model, *resume);
    norm = resume->norm;
    schedule = resume->schedule;
    pos = resume->position;
    report.trace = resume->trace;
    report.val_per_stage = resume->val_history;
    report.selected_lr = resume->selected_lr;
    report.lr_was_auto = resume->lr_was_auto;
  } else {
    dataset.store.set_phase("normalize");
    norm = compute_normalization(train_records, dataset.store);
    if (config.lr) {
      report.selected_lr = *config.lr;
      report.lr_was_auto = false;
    } else {
      LrFindResult found = run_lr_find(config, dataset, splits, &report.update_image_ids, &norm);
      report.sweep = std::move(found.sweep);
      report.selected_lr = found.selected;
      report.lr_was_auto = true;
      if (!options.out_dir.empty()) {
        std::ostringstream csv;
        write_sweep_csv(report.sweep, csv);
        detail::write_text_file(options.out_dir / "sweep.csv", csv.str());
        detail::write_text_file(options.out_dir / "sweep.svg",
                                sweep_svg(report.sweep, report.selected_lr));
      }
    }
    schedule = SgdrSchedule{config.eta_min, report.selected_lr, t0, config.t_mult, 0, 0};
    schedule.validate();
  }

  Sgdm optimizer(model.parameters(), SgdmOptions{config.momentum, config.weight_decay});
  if (resume) {
    auto& vel = optimizer.velocities();
    const auto& saved = resume->velocities;
    const auto& params = optimizer.params();
    if (saved.size() != vel.size()) {
      throw ValidationError("checkpoint: velocity count mismatch");
    }
    for (std::size_t i = 0; i < vel.size(); ++i) {
      if (saved[i].first != params[i]->name || saved[i].second.shape != vel[i].shape) {
        throw ValidationError("checkpoint: velocity mismatch for parameter '" +
                              params[i]->name + "'");
      }
      vel[i] = saved[i].second;
    }
  }

  auto make_checkpoint = [&](const TrainPosition& at) {
    Checkpoint ckpt;
    ckpt.model_config = model_config;
    for (auto& [name, tensor] : model.named_state()) ckpt.model_state.emplace_back(name, *tensor);
    const auto& params = optimizer.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.velocities.emplace_back(params[i]->name, optimizer.velocities()[i]);
    }
    ckpt.schedule = schedule;
    ckpt.selected_lr = report.selected_lr;
    ckpt.lr_was_auto = report.lr_was_auto;
    ckpt.norm = norm;
    ckpt.position = at;
    ckpt.trace = report.trace;
    ckpt.val_history = report.val_per_stage;
    return ckpt;
  };

  const double const_lr = report.selected_lr;
  const bool annealed = variant_annealed(config.variant);

  // Resume indices apply to the first stage/epoch only.
  std::size_t start_epoch = pos.epoch_in_stage;
  std::size_t start_batch = pos.batch_in_epoch;
  bool interrupted = false;

  dataset.store.set_phase("train");
  for (std::size_t si = pos.stage_index; si < sides.size() && !interrupted; ++si) {
    std::size_t side = sides[si];
    if (start_epoch == 0 && start_batch == 0) {
      // Stage entry: velocities are stale after the input-distribution shift,
      // and the schedule restarts; BN running stats carry over.
      optimizer = Sgdm(model.parameters(), SgdmOptions{config.momentum, config.weight_decay});
      schedule = SgdrSchedule{config.eta_min, report.selected_lr, t0, config.t_mult, 0, 0};
    }

    for (std::size_t e = start_epoch; e < epochs && !interrupted; ++e) {
      dataset.store.set_phase("train");
      BatchStream stream(train_records, dataset.store, config.batch_size, side, norm, config.seed,
                         pos.global_epoch, true);
      for (std::size_t bi = start_batch; bi < stream.num_batches(); ++bi) {
        Batch batch = stream.get(bi);
        for (const auto& id : batch.image_ids) report.update_image_ids.insert(id);

        double lr = annealed ? schedule.lr() : const_lr;
        double raw = detail::train_step_loss(model, batch);
        report.trace.push_back({pos.global_step, lr, raw});
        if (!std::isfinite(raw)) {
          throw DivergenceError("pipeline: non-finite training loss at step " +
                                    std::to_string(pos.global_step),
                                trace_csv(report.trace));
        }
        try {
          optimizer.step(lr);
        } catch (const DivergenceError& e) {
          throw DivergenceError(e.what(), trace_csv(report.trace));
        }
        schedule.advance();
        ++pos.global_step;

        if (options.stop_after_steps > 0 && pos.global_step == options.stop_after_steps) {
          TrainPosition next{si, e, bi + 1, pos.global_step, pos.global_epoch};
          save_checkpoint(make_checkpoint(next), options.out_dir / "checkpoints" / "interrupt.ckpt");
          interrupted = true;
          break;
        }
      }
      start_batch = 0;
      if (!interrupted) ++pos.global_epoch;
    }
    start_epoch = 0;

    if (!interrupted) {
      dataset.store.set_phase("val");
      EvalReport val = evaluate(
          model, detail::eval_batches(val_records, dataset.store, config.batch_size, side, norm));
      report.val_per_stage.push_back(val);
      if (!options.out_dir.empty()) {
        TrainPosition next{si + 1, 0, 0, pos.global_step, pos.global_epoch};
        save_checkpoint(make_checkpoint(next),
                        options.out_dir / "checkpoints" /
                            ("stage" + std::to_string(si) + ".ckpt"));
      }
    }
  }

  if (!interrupted) {
    dataset.store.set_phase("test");
    std::size_t max_side = *std::max_element(config.sizes.begin(), config.sizes.end());
    report.test = evaluate(model, detail::eval_batches(test_records, dataset.store,
                                                       config.batch_size, max_side, norm));
    if (!options.out_dir.empty()) {
      TrainPosition done{sides.size(), 0, 0, pos.global_step, pos.global_epoch};
      save_checkpoint(make_checkpoint(done), options.out_dir / "checkpoints" / "final.ckpt");
    }
  }
  dataset.store.set_phase("");

  report.interrupted = interrupted;
  if (!options.out_dir.empty()) {
    detail::write_text_file(options.out_dir / "trace.csv", trace_csv(report.trace));
    detail::write_text_file(options.out_dir / "schedule.svg",
                            detail::schedule_svg_from_trace(report.trace));
    if (!interrupted) {
      detail::write_text_file(options.out_dir / "metrics.json", metrics_json(report.test));
      std::string vh = "[\n";
      for (std::size_t i = 0; i < report.val_per_stage.size(); ++i) {
        vh += "  {\"side\": " + std::to_string(sides[i]) +
              ", \"metrics\": " + metrics_json(report.val_per_stage[i]) + "}";
        vh += i + 1 < report.val_per_stage.size() ? ",\n" : "\n";
      }
      vh += "]\n";
      detail::write_text_file(options.out_dir / "val_history.json", vh);
    }
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return RunResult{std::move(model), std::move(report)};
}

struct AblationReport {
  std::array<std::optional<RunReport>, 4> runs;  // Proposed, V1, V2, V3
  std::array<std::string, 4> errors;
  std::string table_csv;
  std::string table_text;
};

inline const std::array<Variant, 4> kAblationVariants = {Variant::Proposed, Variant::V1,
                                                         Variant::V2, Variant::V3};

// Runs all four variants with identical seeds, data, and splits. A diverging
// variant is reported and does not abort the rest.
inline AblationReport run_ablation(const PipelineConfig& base, const Dataset& dataset,
                                   const SplitAssignment& splits,
                                   const std::filesystem::path& out_root = {},
                                   const std::array<std::string, 4>& config_echoes = {}) {
  if (base.variant != Variant::Proposed) {
    throw ValidationError("ablation: base config must be the Proposed variant");
  }
  AblationReport out;
  std::vector<std::string> names;
  std::vector<EvalReport> reports;
  for (std::size_t i = 0; i < 4; ++i) {
    PipelineConfig cfg = base;
    cfg.variant = kAblationVariants[i];
    RunOptions opts;
    if (!out_root.empty()) {
      std::string dir(variant_name(cfg.variant));
      for (auto& ch : dir) ch = static_cast<char>(std::tolower(ch));
      opts.out_dir = out_root / dir;
      opts.config_json = config_echoes[i];
    }
    names.emplace_back(variant_name(cfg.variant));
    try {
      RunResult result = run_training(cfg, dataset, splits, opts);
      reports.push_back(result.report.test);
      out.runs[i] = std::move(result.report);
    } catch (const DivergenceError& e) {
      out.errors[i] = e.what();
      reports.emplace_back();  // all Undefined
    }
  }
  out.table_csv = format_table_csv(names, reports);
  out.table_text = format_table_text(names, reports);
  if (!out_root.empty()) {
    std::filesystem::create_directories(out_root);
    detail::write_text_file(out_root / "ablation_table.csv", out.table_csv);
    detail::write_text_file(out_root / "ablation_table.txt", out.table_text);
  }
  return out;
}

// Test metrics recomputed from a saved checkpoint (same evaluation path as
// the end of training).
inline EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint_path,
                                      const PipelineConfig& config, const Dataset& dataset,
                                      const SplitAssignment& splits) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Model model = build_model(ckpt.model_config);
  load_model_state(model, ckpt);
  auto test_records = records_in_split(dataset.records, splits, Split::Test);
  std::size_t max_side = *std::max_element(config.sizes.begin(), config.sizes.end());
  return evaluate(model, detail::eval_batches(test_records, dataset.store, config.batch_size,
                                              max_side, ckpt.norm));
}

}  // namespace tinytrain
