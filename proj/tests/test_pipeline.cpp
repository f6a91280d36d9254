#include <catch2/catch.hpp>

#include <cmath>
#include <filesystem>

#include "testutil.hpp"
#include "tinytrain/pipeline.hpp"

using namespace tinytrain;

namespace {

struct Fixture {
  testutil::TempDir dir{"pipe"};
  Dataset dataset;
  SplitAssignment splits;

  explicit Fixture(std::size_t n_images = 120) : dataset(make_dataset(n_images)) {
    splits = group_split(dataset.records, {0.7, 0.1, 0.2}, 13);
  }

  Dataset make_dataset(std::size_t n_images) {
    SynthSpec spec;
    spec.n_images = n_images;
    spec.side = 32;
    spec.noise_std = 0.05;
    spec.seed = 100;
    auto records = generate_synthetic(spec, dir.path());
    return Dataset{std::move(records), ImageStore(dir.path() / "images")};
  }
};

PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.sizes = {16, 32};
  cfg.epochs_per_stage = 1;
  cfg.batch_size = 25;
  cfg.seed = 7;
  cfg.lr = 0.05;  // fixed rate keeps these tests independent of the finder
  cfg.model.stem_channels = 4;
  cfg.model.stage_widths = {4, 8};
  cfg.model.blocks_per_stage = 1;
  return cfg;
}

}  // namespace

TEST_CASE("stage plans per variant") {
  PipelineConfig cfg = tiny_config();
  cfg.sizes = {64, 128, 256, 340};

  cfg.variant = Variant::Proposed;
  REQUIRE(cfg.stage_sides() == std::vector<std::size_t>{64, 128, 256, 340});
  REQUIRE(cfg.stage_epochs() == 1);

  cfg.variant = Variant::V1;  // single stage at the largest size
  REQUIRE(cfg.stage_sides() == std::vector<std::size_t>{340});
  REQUIRE(cfg.stage_epochs() == 4);  // total-epoch parity

  cfg.variant = Variant::V2;
  REQUIRE(cfg.stage_sides() == std::vector<std::size_t>{64, 128, 256, 340});

  cfg.variant = Variant::V3;
  REQUIRE(cfg.stage_sides() == std::vector<std::size_t>{340});

  PipelineConfig bad = tiny_config();
  bad.sizes = {32, 16};
  REQUIRE_THROWS_AS(bad.validate(), ValidationError);
  bad.sizes = {8, 16};
  REQUIRE_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("training is deterministic for a fixed seed") {
  Fixture fx;
  PipelineConfig cfg = tiny_config();

  RunResult a = run_training(cfg, fx.dataset, fx.splits);
  RunResult b = run_training(cfg, fx.dataset, fx.splits);

  REQUIRE(a.report.trace.size() == b.report.trace.size());
  for (std::size_t i = 0; i < a.report.trace.size(); ++i) {
    REQUIRE(a.report.trace[i].lr == b.report.trace[i].lr);
    REQUIRE(a.report.trace[i].loss == b.report.trace[i].loss);
  }
  auto pa = a.model.parameters(), pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i]->value.data == pb[i]->value.data);
}

TEST_CASE("proposed lr trace equals the analytic schedule pointwise") {
  Fixture fx;
  PipelineConfig cfg = tiny_config();
  cfg.variant = Variant::Proposed;

  RunResult res = run_training(cfg, fx.dataset, fx.splits);
  const auto& trace = res.report.trace;

  std::size_t train_n = records_in_split(fx.dataset.records, fx.splits, Split::Train).size();
  std::size_t spe = (train_n + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t steps_per_stage = spe * cfg.stage_epochs();
  REQUIRE(trace.size() == steps_per_stage * cfg.stage_sides().size());

  std::size_t row = 0;
  for (std::size_t stage = 0; stage < cfg.stage_sides().size(); ++stage) {
    SgdrSchedule sched{cfg.eta_min, *cfg.lr, spe, cfg.t_mult, 0, 0};
    for (std::size_t i = 0; i < steps_per_stage; ++i, ++row) {
      REQUIRE(trace[row].lr == sched.lr());
      sched.advance();
    }
  }

  // Stage sides never decrease.
  const auto& sides = res.report.stage_sides;
  for (std::size_t i = 1; i < sides.size(); ++i) REQUIRE(sides[i] >= sides[i - 1]);
}

TEST_CASE("V2 and V3 use a constant learning rate") {
  Fixture fx;
  for (Variant v : {Variant::V2, Variant::V3}) {
    PipelineConfig cfg = tiny_config();
    cfg.variant = v;
    RunResult res = run_training(cfg, fx.dataset, fx.splits);
    for (const auto& row : res.report.trace) REQUIRE(row.lr == *cfg.lr);
    if (v == Variant::V3) {
      REQUIRE(res.report.stage_sides == std::vector<std::size_t>{32});
    }
  }
}

TEST_CASE("auto lr mode runs the range test on a throwaway copy") {
  Fixture fx(240);
  PipelineConfig cfg = tiny_config();
  cfg.lr.reset();  // Auto
  cfg.lr_finder.num_iters = 40;
  cfg.lr_finder.lr_end = 1.0;

  RunResult res = run_training(cfg, fx.dataset, fx.splits);
  REQUIRE(res.report.lr_was_auto);
  REQUIRE(res.report.selected_lr > 0.0);
  REQUIRE_FALSE(res.report.sweep.points.empty());
  // The sweep capped its grid at one epoch of steps.
  std::size_t train_n = records_in_split(fx.dataset.records, fx.splits, Split::Train).size();
  std::size_t spe = (train_n + cfg.batch_size - 1) / cfg.batch_size;
  REQUIRE(res.report.sweep.points.size() <= std::max<std::size_t>(10, spe));
  // Training then proceeds at the selected rate as eta_max.
  REQUIRE(res.report.trace.front().lr == res.report.selected_lr);
}

TEST_CASE("the range test leaves the trainee untouched") {
  Fixture fx(240);
  PipelineConfig auto_cfg = tiny_config();
  auto_cfg.lr.reset();
  auto_cfg.lr_finder.num_iters = 30;
  auto_cfg.lr_finder.lr_end = 1.0;
  RunResult with_finder = run_training(auto_cfg, fx.dataset, fx.splits);

  // Training after an auto sweep must be bit-identical to training started
  // directly at the selected rate: the sweep ran on a throwaway copy.
  PipelineConfig fixed_cfg = auto_cfg;
  fixed_cfg.lr = with_finder.report.selected_lr;
  RunResult direct = run_training(fixed_cfg, fx.dataset, fx.splits);

  REQUIRE(with_finder.report.trace.size() == direct.report.trace.size());
  for (std::size_t i = 0; i < direct.report.trace.size(); ++i) {
    REQUIRE(with_finder.report.trace[i].lr == direct.report.trace[i].lr);
    REQUIRE(with_finder.report.trace[i].loss == direct.report.trace[i].loss);
  }
  auto pa = with_finder.model.parameters(), pb = direct.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i]->value.data == pb[i]->value.data);
}

TEST_CASE("no image outside the training split influences updates") {
  Fixture fx;
  PipelineConfig cfg = tiny_config();
  cfg.lr.reset();
  cfg.lr_finder.num_iters = 20;
  cfg.lr_finder.lr_end = 0.5;

  RunResult res = run_training(cfg, fx.dataset, fx.splits);

  std::set<std::string> train_ids;
  for (const auto& rec : records_in_split(fx.dataset.records, fx.splits, Split::Train)) {
    train_ids.insert(rec.image_id);
  }
  REQUIRE_FALSE(res.report.update_image_ids.empty());
  for (const auto& id : res.report.update_image_ids) {
    REQUIRE(train_ids.count(id) == 1);
  }

  // Independent audit through the store's phase log.
  const auto& log = fx.dataset.store.access_log();
  std::set<std::string> test_ids;
  for (const auto& rec : records_in_split(fx.dataset.records, fx.splits, Split::Test)) {
    test_ids.insert(rec.image_id);
  }
  for (const char* phase : {"train", "lr_find", "normalize"}) {
    auto it = log.find(phase);
    if (it == log.end()) continue;
    for (const auto& id : it->second) REQUIRE(test_ids.count(id) == 0);
  }
  REQUIRE(log.count("test") == 1);
}

TEST_CASE("run directory artifacts are written and reruns are byte-identical") {
  Fixture fx;
  testutil::TempDir out1("run1"), out2("run2");
  PipelineConfig cfg = tiny_config();

  RunOptions o1;
  o1.out_dir = out1.path();
  o1.config_json = "{\"note\": \"echo\"}";
  run_training(cfg, fx.dataset, fx.splits, o1);

  REQUIRE(std::filesystem::exists(out1.path() / "trace.csv"));
  REQUIRE(std::filesystem::exists(out1.path() / "metrics.json"));
  REQUIRE(std::filesystem::exists(out1.path() / "schedule.svg"));
  REQUIRE(std::filesystem::exists(out1.path() / "config.json"));
  REQUIRE(std::filesystem::exists(out1.path() / "checkpoints" / "final.ckpt"));

  RunOptions o2;
  o2.out_dir = out2.path();
  run_training(cfg, fx.dataset, fx.splits, o2);
  REQUIRE(testutil::slurp(out1.path() / "trace.csv") == testutil::slurp(out2.path() / "trace.csv"));
  REQUIRE(testutil::slurp(out1.path() / "metrics.json") ==
          testutil::slurp(out2.path() / "metrics.json"));
  REQUIRE(testutil::slurp(out1.path() / "checkpoints" / "final.ckpt") ==
          testutil::slurp(out2.path() / "checkpoints" / "final.ckpt"));
}

TEST_CASE("checkpoint save-load-save is byte-identical") {
  Fixture fx;
  testutil::TempDir out("ckpt");
  PipelineConfig cfg = tiny_config();
  RunOptions opts;
  opts.out_dir = out.path();
  run_training(cfg, fx.dataset, fx.splits, opts);

  auto p1 = out.path() / "checkpoints" / "final.ckpt";
  auto p2 = out.path() / "resaved.ckpt";
  Checkpoint ckpt = load_checkpoint(p1);
  save_checkpoint(ckpt, p2);
  REQUIRE(testutil::slurp(p1) == testutil::slurp(p2));
}

TEST_CASE("interrupt and resume reproduce the uninterrupted run exactly") {
  Fixture fx;
  PipelineConfig cfg = tiny_config();
  testutil::TempDir full("full"), part("part"), resumed("resumed");

  RunOptions uninterrupted;
  uninterrupted.out_dir = full.path();
  run_training(cfg, fx.dataset, fx.splits, uninterrupted);

  // Interrupt mid-epoch (step 3 of 8) and resume.
  RunOptions stop;
  stop.out_dir = part.path();
  stop.stop_after_steps = 3;
  RunResult partial = run_training(cfg, fx.dataset, fx.splits, stop);
  REQUIRE(partial.report.interrupted);
  REQUIRE(partial.report.trace.size() == 3);

  RunOptions cont;
  cont.out_dir = resumed.path();
  cont.resume_from = part.path() / "checkpoints" / "interrupt.ckpt";
  RunResult done = run_training(cfg, fx.dataset, fx.splits, cont);
  REQUIRE_FALSE(done.report.interrupted);

  REQUIRE(testutil::slurp(full.path() / "trace.csv") ==
          testutil::slurp(resumed.path() / "trace.csv"));
  REQUIRE(testutil::slurp(full.path() / "checkpoints" / "final.ckpt") ==
          testutil::slurp(resumed.path() / "checkpoints" / "final.ckpt"));
  REQUIRE(testutil::slurp(full.path() / "metrics.json") ==
          testutil::slurp(resumed.path() / "metrics.json"));

  // Interrupt at a stage boundary as well (stage 0 ends at step 4).
  testutil::TempDir part2("part2"), resumed2("resumed2");
  RunOptions stop2;
  stop2.out_dir = part2.path();
  stop2.stop_after_steps = 4;
  run_training(cfg, fx.dataset, fx.splits, stop2);
  RunOptions cont2;
  cont2.out_dir = resumed2.path();
  cont2.resume_from = part2.path() / "checkpoints" / "interrupt.ckpt";
  run_training(cfg, fx.dataset, fx.splits, cont2);
  REQUIRE(testutil::slurp(full.path() / "trace.csv") ==
          testutil::slurp(resumed2.path() / "trace.csv"));
}

TEST_CASE("loading a checkpoint onto a mismatched architecture names the parameter") {
  Fixture fx;
  testutil::TempDir out("mismatch");
  PipelineConfig cfg = tiny_config();
  RunOptions opts;
  opts.out_dir = out.path();
  run_training(cfg, fx.dataset, fx.splits, opts);

  Checkpoint ckpt = load_checkpoint(out.path() / "checkpoints" / "final.ckpt");
  ModelConfig other = cfg.model;
  other.stage_widths = {4, 16};  // wrong width
  Model wrong = build_model(other);
  REQUIRE_THROWS_WITH(load_model_state(wrong, ckpt),
                      Catch::Contains("stage1.block0.conv1.weight"));

  ModelConfig fewer = cfg.model;
  fewer.blocks_per_stage = 2;
  Model wrong2 = build_model(fewer);
  REQUIRE_THROWS_AS(load_model_state(wrong2, ckpt), ValidationError);
}

TEST_CASE("divergence carries the loss trace") {
  Fixture fx;
  PipelineConfig cfg = tiny_config();
  cfg.variant = Variant::V2;  // constant lr
  // Batch norm keeps activations bounded under a huge bare lr, so force a
  // multiplicative blow-up through the decoupled weight-decay term instead.
  cfg.lr = 1e9;
  cfg.weight_decay = 1e200;
  try {
    run_training(cfg, fx.dataset, fx.splits);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    REQUIRE(std::string(e.what()).find("step") != std::string::npos);
    REQUIRE(e.trace_csv().rfind("step,lr,train_loss", 0) == 0);
    REQUIRE(e.trace_csv().find("\n") != std::string::npos);
  }
}

TEST_CASE("ablation runs all four variants on identical data") {
  Fixture fx;
  testutil::TempDir out("ablation");
  PipelineConfig cfg = tiny_config();

  AblationReport rep = run_ablation(cfg, fx.dataset, fx.splits, out.path());
  for (std::size_t i = 0; i < 4; ++i) {
    INFO("variant " << i << " error: " << rep.errors[i]);
    REQUIRE(rep.runs[i].has_value());
  }
  REQUIRE(rep.runs[1]->stage_sides == std::vector<std::size_t>{32});
  REQUIRE(rep.runs[3]->stage_sides == std::vector<std::size_t>{32});
  for (const auto& row : rep.runs[3]->trace) REQUIRE(row.lr == *cfg.lr);

  // Table shape: header + 15 rows, 4 value columns.
  std::istringstream in(rep.table_csv);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "pathology,Proposed,V1,V2,V3");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  REQUIRE(rows == 15);
  REQUIRE(std::filesystem::exists(out.path() / "ablation_table.csv"));
  REQUIRE(std::filesystem::exists(out.path() / "v1" / "trace.csv"));

  REQUIRE_THROWS_AS(
      [&] {
        PipelineConfig bad = cfg;
        bad.variant = Variant::V1;
        run_ablation(bad, fx.dataset, fx.splits);
      }(),
      ValidationError);
}

TEST_CASE("evaluate_checkpoint reproduces the training metrics") {
  Fixture fx;
  testutil::TempDir out("evalck");
  PipelineConfig cfg = tiny_config();
  RunOptions opts;
  opts.out_dir = out.path();
  RunResult res = run_training(cfg, fx.dataset, fx.splits, opts);

  EvalReport again =
      evaluate_checkpoint(out.path() / "checkpoints" / "final.ckpt", cfg, fx.dataset, fx.splits);
  REQUIRE(metrics_json(again) == metrics_json(res.report.test));
}
