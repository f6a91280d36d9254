#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "tinytrain/error.hpp"
#include "tinytrain/pipeline.hpp"

namespace tinytrain {

// On-disk run configuration: pipeline hyperparameters plus dataset paths and
// the output directory. Unknown keys are rejected; rendering materializes
// every default so a run directory's echoed config is complete.
struct RunConfigFile {
  PipelineConfig pipeline;
  std::string dataset_dir;  // directory holding <image_id>.pgm files
  std::string manifest;     // manifest csv path
  std::string splits;       // split assignment csv path
  std::string out_dir;      // default output directory
};

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline void reject_unknown_keys(const ordered_json& obj, const std::set<std::string>& known,
                                const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!known.count(key)) {
      throw ValidationError("config: unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace detail

inline RunConfigFile parse_run_config(const std::string& text) {
  detail::ordered_json j;
  try {
    j = detail::ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("config: invalid json: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  detail::reject_unknown_keys(
      j,
      {"dataset_dir", "manifest", "splits", "out_dir", "variant", "sizes", "epochs_per_stage",
       "batch_size", "seed", "momentum", "weight_decay", "eta_min", "t0", "t_mult", "lr",
       "lr_finder", "model"},
      "top level");

  RunConfigFile cfg;
  try {
    cfg.dataset_dir = j.value("dataset_dir", "");
    cfg.manifest = j.value("manifest", "");
    cfg.splits = j.value("splits", "");
    cfg.out_dir = j.value("out_dir", "");

    if (j.contains("variant")) {
      auto v = variant_from_name(j["variant"].get<std::string>());
      if (!v) {
        throw ValidationError("config: unknown variant '" + j["variant"].get<std::string>() +
                              "'");
      }
      cfg.pipeline.variant = *v;
    }
    if (j.contains("sizes")) cfg.pipeline.sizes = j["sizes"].get<std::vector<std::size_t>>();
    cfg.pipeline.epochs_per_stage = j.value("epochs_per_stage", cfg.pipeline.epochs_per_stage);
    cfg.pipeline.batch_size = j.value("batch_size", cfg.pipeline.batch_size);
    cfg.pipeline.seed = j.value("seed", cfg.pipeline.seed);
    cfg.pipeline.momentum = j.value("momentum", cfg.pipeline.momentum);
    cfg.pipeline.weight_decay = j.value("weight_decay", cfg.pipeline.weight_decay);
    cfg.pipeline.eta_min = j.value("eta_min", cfg.pipeline.eta_min);
    cfg.pipeline.t0 = j.value("t0", cfg.pipeline.t0);
    cfg.pipeline.t_mult = j.value("t_mult", cfg.pipeline.t_mult);

    if (j.contains("lr")) {
      if (j["lr"].is_string()) {
        if (j["lr"].get<std::string>() != "auto") {
          throw ValidationError("config: lr must be a number or \"auto\"");
        }
        cfg.pipeline.lr.reset();
      } else {
        cfg.pipeline.lr = j["lr"].get<double>();
      }
    }

    if (j.contains("lr_finder")) {
      const auto& f = j["lr_finder"];
      detail::reject_unknown_keys(
          f, {"lr_start", "lr_end", "num_iters", "beta", "divergence_factor", "rule"},
          "lr_finder");
      cfg.pipeline.lr_finder.lr_start = f.value("lr_start", cfg.pipeline.lr_finder.lr_start);
      cfg.pipeline.lr_finder.lr_end = f.value("lr_end", cfg.pipeline.lr_finder.lr_end);
      cfg.pipeline.lr_finder.num_iters = f.value("num_iters", cfg.pipeline.lr_finder.num_iters);
      cfg.pipeline.lr_finder.beta = f.value("beta", cfg.pipeline.lr_finder.beta);
      cfg.pipeline.lr_finder.divergence_factor =
          f.value("divergence_factor", cfg.pipeline.lr_finder.divergence_factor);
      if (f.contains("rule")) {
        std::string rule = f["rule"].get<std::string>();
        if (rule == "steepest") cfg.pipeline.lr_rule = LrSelectRule::Steepest;
        else if (rule == "min_over_ten") cfg.pipeline.lr_rule = LrSelectRule::MinOverTen;
        else throw ValidationError("config: unknown lr_finder rule '" + rule + "'");
      }
    }

    if (j.contains("model")) {
      const auto& m = j["model"];
      detail::reject_unknown_keys(m, {"stem_channels", "stage_widths", "blocks_per_stage"},
                                  "model");
      cfg.pipeline.model.stem_channels =
          m.value("stem_channels", cfg.pipeline.model.stem_channels);
      if (m.contains("stage_widths")) {
        cfg.pipeline.model.stage_widths = m["stage_widths"].get<std::vector<std::size_t>>();
      }
      cfg.pipeline.model.blocks_per_stage =
          m.value("blocks_per_stage", cfg.pipeline.model.blocks_per_stage);
    }
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline RunConfigFile load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

// Full echo with every default materialized.
inline std::string render_run_config(const RunConfigFile& cfg) {
  detail::ordered_json j;
  j["dataset_dir"] = cfg.dataset_dir;
  j["manifest"] = cfg.manifest;
  j["splits"] = cfg.splits;
  j["out_dir"] = cfg.out_dir;
  j["variant"] = variant_name(cfg.pipeline.variant);
  j["sizes"] = cfg.pipeline.sizes;
  j["epochs_per_stage"] = cfg.pipeline.epochs_per_stage;
  j["batch_size"] = cfg.pipeline.batch_size;
  j["seed"] = cfg.pipeline.seed;
  j["momentum"] = cfg.pipeline.momentum;
  j["weight_decay"] = cfg.pipeline.weight_decay;
  j["eta_min"] = cfg.pipeline.eta_min;
  j["t0"] = cfg.pipeline.t0;
  j["t_mult"] = cfg.pipeline.t_mult;
  if (cfg.pipeline.lr) j["lr"] = *cfg.pipeline.lr;
  else j["lr"] = "auto";
  j["lr_finder"] = {
      {"lr_start", cfg.pipeline.lr_finder.lr_start},
      {"lr_end", cfg.pipeline.lr_finder.lr_end},
      {"num_iters", cfg.pipeline.lr_finder.num_iters},
      {"beta", cfg.pipeline.lr_finder.beta},
      {"divergence_factor", cfg.pipeline.lr_finder.divergence_factor},
      {"rule", cfg.pipeline.lr_rule == LrSelectRule::Steepest ? "steepest" : "min_over_ten"},
  };
  j["model"] = {
      {"stem_channels", cfg.pipeline.model.stem_channels},
      {"stage_widths", cfg.pipeline.model.stage_widths},
      {"blocks_per_stage", cfg.pipeline.model.blocks_per_stage},
  };
  return j.dump(2) + "\n";
}

// Parses a metrics.json document back into an EvalReport (positive/negative
// counts are not stored in the file and stay zero).
inline EvalReport parse_metrics_json(const std::string& text) {
  detail::ordered_json j;
  try {
    j = detail::ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("metrics: invalid json: ") + e.what());
  }
  EvalReport rep;
  if (!j.contains("classes")) throw ValidationError("metrics: missing 'classes'");
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const char* name = kClassNames[c];
    if (!j["classes"].contains(name)) {
      throw ValidationError(std::string("metrics: missing class '") + name + "'");
    }
    const auto& v = j["classes"][name];
    if (!v.is_null()) rep.per_class[c].value = v.get<double>();
  }
  if (j.contains("macro") && !j["macro"].is_null()) rep.macro = j["macro"].get<double>();
  return rep;
}

}  // namespace tinytrain
