#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tinytrain/error.hpp"
#include "tinytrain/data.hpp"
#include "tinytrain/metrics.hpp"
#include "tinytrain/model.hpp"
#include "tinytrain/optim.hpp"

namespace tinytrain {

struct TraceRow {
  std::size_t step;
  double lr;
  double loss;
};

inline std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::string out = "step,lr,train_loss\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", r.step, r.lr, r.loss);
    out += buf;
  }
  return out;
}

// Where a run stands: indices name the next batch to execute.
struct TrainPosition {
  std::size_t stage_index = 0;
  std::size_t epoch_in_stage = 0;
  std::size_t batch_in_epoch = 0;
  std::size_t global_step = 0;
  std::size_t global_epoch = 0;
};

// Everything needed to continue a run bit-exactly: model tensors (parameters
// and running stats), optimizer velocities, schedule state, the selected
// learning rate, normalization constants, the position, the trace so far,
// and per-stage validation results.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model_config;
  std::vector<std::pair<std::string, Tensor>> model_state;
  std::vector<std::pair<std::string, Tensor>> velocities;
  SgdrSchedule schedule;
  double selected_lr = 0.0;
  bool lr_was_auto = false;
  Normalization norm;
  TrainPosition position;
  std::vector<TraceRow> trace;
  std::vector<EvalReport> val_history;
};

namespace detail {

struct ByteWriter {
  std::string buf;

  void raw(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape) u64(d);
    raw(t.data.data(), t.data.size() * sizeof(double));
  }
};

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) {
    if (pos + n > buf.size()) {
      throw IoError("checkpoint: truncated at byte " + std::to_string(pos) + " (need " +
                    std::to_string(n) + " more bytes)");
    }
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
  Tensor tensor() {
    std::uint32_t nd = u32();
    std::vector<std::size_t> shape(nd);
    for (auto& d : shape) d = u64();
    std::size_t n = Tensor::numel_of(shape);
    std::vector<double> data(n);
    raw(data.data(), n * sizeof(double));
    return Tensor(std::move(shape), std::move(data));
  }
};

inline void write_named_tensors(ByteWriter& w,
                                const std::vector<std::pair<std::string, Tensor>>& items) {
  w.u64(items.size());
  for (const auto& [name, t] : items) {
    w.str(name);
    w.tensor(t);
  }
}

inline std::vector<std::pair<std::string, Tensor>> read_named_tensors(ByteReader& r) {
  std::size_t n = r.u64();
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string name = r.str();
    out.emplace_back(std::move(name), r.tensor());
  }
  return out;
}

inline void write_eval_report(ByteWriter& w, const EvalReport& rep) {
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const AucResult& r = rep.per_class[c];
    w.f64(r.value ? *r.value : std::numeric_limits<double>::quiet_NaN());
    w.u64(r.positives);
    w.u64(r.negatives);
  }
  w.f64(rep.macro ? *rep.macro : std::numeric_limits<double>::quiet_NaN());
}

inline EvalReport read_eval_report(ByteReader& r) {
  EvalReport rep;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    double v = r.f64();
    rep.per_class[c].value = std::isnan(v) ? std::optional<double>{} : std::optional<double>{v};
    rep.per_class[c].positives = r.u64();
    rep.per_class[c].negatives = r.u64();
  }
  double m = r.f64();
  rep.macro = std::isnan(m) ? std::optional<double>{} : std::optional<double>{m};
  return rep;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.raw("TTCK", 4);
  w.u32(Checkpoint::kVersion);

  w.u64(ckpt.model_config.stem_channels);
  w.u64(ckpt.model_config.stage_widths.size());
  for (std::size_t v : ckpt.model_config.stage_widths) w.u64(v);
  w.u64(ckpt.model_config.blocks_per_stage);
  w.u64(ckpt.model_config.num_classes);
  w.u64(ckpt.model_config.seed);

  detail::write_named_tensors(w, ckpt.model_state);
  detail::write_named_tensors(w, ckpt.velocities);

  w.f64(ckpt.schedule.eta_min);
  w.f64(ckpt.schedule.eta_max);
  w.u64(ckpt.schedule.t0);
  w.u64(ckpt.schedule.t_mult);
  w.u64(ckpt.schedule.cycle_index);
  w.u64(ckpt.schedule.step_in_cycle);

  w.f64(ckpt.selected_lr);
  w.u32(ckpt.lr_was_auto ? 1 : 0);
  w.f64(ckpt.norm.mean);
  w.f64(ckpt.norm.stddev);

  w.u64(ckpt.position.stage_index);
  w.u64(ckpt.position.epoch_in_stage);
  w.u64(ckpt.position.batch_in_epoch);
  w.u64(ckpt.position.global_step);
  w.u64(ckpt.position.global_epoch);

  w.u64(ckpt.trace.size());
  for (const auto& row : ckpt.trace) {
    w.u64(row.step);
    w.f64(row.lr);
    w.f64(row.loss);
  }

  w.u64(ckpt.val_history.size());
  for (const auto& rep : ckpt.val_history) detail::write_eval_report(w, rep);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot write " + path.string());
  f.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!f) throw IoError("checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r{buf};

  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "TTCK", 4) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw IoError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                  std::to_string(Checkpoint::kVersion) + ")");
  }

  Checkpoint ckpt;
  ckpt.model_config.stem_channels = r.u64();
  std::size_t n_widths = r.u64();
  ckpt.model_config.stage_widths.resize(n_widths);
  for (auto& v : ckpt.model_config.stage_widths) v = r.u64();
  ckpt.model_config.blocks_per_stage = r.u64();
  ckpt.model_config.num_classes = r.u64();
  ckpt.model_config.seed = r.u64();

  ckpt.model_state = detail::read_named_tensors(r);
  ckpt.velocities = detail::read_named_tensors(r);

  ckpt.schedule.eta_min = r.f64();
  ckpt.schedule.eta_max = r.f64();
  ckpt.schedule.t0 = r.u64();
  ckpt.schedule.t_mult = r.u64();
  ckpt.schedule.cycle_index = r.u64();
  ckpt.schedule.step_in_cycle = r.u64();

  ckpt.selected_lr = r.f64();
  ckpt.lr_was_auto = r.u32() != 0;
  ckpt.norm.mean = r.f64();
  ckpt.norm.stddev = r.f64();

  ckpt.position.stage_index = r.u64();
  ckpt.position.epoch_in_stage = r.u64();
  ckpt.position.batch_in_epoch = r.u64();
  ckpt.position.global_step = r.u64();
  ckpt.position.global_epoch = r.u64();

  std::size_t n_trace = r.u64();
  ckpt.trace.resize(n_trace);
  for (auto& row : ckpt.trace) {
    row.step = r.u64();
    row.lr = r.f64();
    row.loss = r.f64();
  }

  std::size_t n_val = r.u64();
  ckpt.val_history.reserve(n_val);
  for (std::size_t i = 0; i < n_val; ++i) ckpt.val_history.push_back(detail::read_eval_report(r));

  if (r.pos != buf.size()) {
    throw IoError("checkpoint: " + std::to_string(buf.size() - r.pos) +
                  " trailing bytes in " + path.string());
  }
  return ckpt;
}

// Copies checkpointed tensors into a freshly built model, insisting on an
// identical (name, shape) sequence; the first mismatch is reported by name.
inline void load_model_state(Model& model, const Checkpoint& ckpt) {
  auto state = model.named_state();
  if (state.size() != ckpt.model_state.size()) {
    std::size_t n = std::min(state.size(), ckpt.model_state.size());
    std::string where = n < state.size() ? state[n].first : ckpt.model_state[n].first;
    throw ValidationError("checkpoint: architecture mismatch at parameter '" + where +
                          "' (model has " + std::to_string(state.size()) +
                          " tensors, checkpoint has " + std::to_string(ckpt.model_state.size()) +
                          ")");
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& [name, tensor] = ckpt.model_state[i];
    if (name != state[i].first) {
      throw ValidationError("checkpoint: parameter name mismatch: model has '" +
                            state[i].first + "', checkpoint has '" + name + "'");
    }
    if (tensor.shape != state[i].second->shape) {
      throw ValidationError("checkpoint: parameter '" + name + "' shape mismatch: model " +
                            state[i].second->shape_str() + ", checkpoint " + tensor.shape_str());
    }
  }
  for (std::size_t i = 0; i < state.size(); ++i) *state[i].second = ckpt.model_state[i].second;
}

}  // namespace tinytrain
