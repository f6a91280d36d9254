#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "tinytrain/error.hpp"
#include "tinytrain/svg.hpp"

namespace tinytrain {

struct LrRangeOptions {
  double lr_start = 1e-5;
  double lr_end = 10.0;
  std::size_t num_iters = 200;
  double beta = 0.98;              // smoothing coefficient
  double divergence_factor = 4.0;  // stop once smoothed > factor * best

  void validate() const {
    if (!(lr_start > 0.0 && lr_end > lr_start)) {
      throw ValidationError("lr_range_test: require 0 < lr_start < lr_end");
    }
    if (num_iters < 10) throw ValidationError("lr_range_test: num_iters must be at least 10");
    if (!(beta >= 0.0 && beta < 1.0)) throw ValidationError("lr_range_test: beta must be in [0,1)");
    if (!(divergence_factor > 1.0)) {
      throw ValidationError("lr_range_test: divergence_factor must exceed 1");
    }
  }
};

struct SweepPoint {
  std::size_t iteration;
  double lr;
  double raw_loss;
  double smoothed_loss;
};

enum class StopReason { Completed, Diverged };

struct SweepRecord {
  std::vector<SweepPoint> points;
  StopReason stop_reason = StopReason::Completed;
};

// Exponential sweep from lr_start to lr_end over num_iters steps. step_fn(lr)
// performs one optimization step at that rate on a throwaway copy and returns
// the raw loss observed before the update. Smoothing is the bias-corrected
// exponential average smoothed_i = ema_i / (1 - beta^(i+1)) with
// ema_i = beta * ema_{i-1} + (1 - beta) * raw_i.
template <class StepFn>
SweepRecord lr_range_test(StepFn&& step_fn, const LrRangeOptions& opt) {
  opt.validate();
  SweepRecord record;
  double ratio = opt.lr_end / opt.lr_start;
  double ema = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < opt.num_iters; ++i) {
    double lr;
    if (i == 0) lr = opt.lr_start;
    else if (i == opt.num_iters - 1) lr = opt.lr_end;
    else {
      lr = opt.lr_start * std::pow(ratio, static_cast<double>(i) /
                                              static_cast<double>(opt.num_iters - 1));
    }
    double raw = step_fn(lr);
    ema = opt.beta * ema + (1.0 - opt.beta) * raw;
    double smoothed = ema / (1.0 - std::pow(opt.beta, static_cast<double>(i + 1)));
    record.points.push_back({i, lr, raw, smoothed});
    if (!std::isfinite(raw) || !std::isfinite(smoothed)) {
      record.stop_reason = StopReason::Diverged;
      return record;
    }
    if (smoothed < best) best = smoothed;
    if (smoothed > opt.divergence_factor * best) {
      record.stop_reason = StopReason::Diverged;
      return record;
    }
  }
  record.stop_reason = StopReason::Completed;
  return record;
}

enum class LrSelectRule { Steepest, MinOverTen };

namespace detail {

inline std::size_t sweep_min_index(const SweepRecord& sweep) {
  std::size_t idx = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sweep.points.size(); ++i) {
    double s = sweep.points[i].smoothed_loss;
    if (std::isfinite(s) && s < best) {
      best = s;
      idx = i;
    }
  }
  return idx;
}

}  // namespace detail

// Steepest: the lr at the most negative first difference of smoothed loss
// against ln lr, over the region up to the smoothed-loss minimum. Falls back
// to MinOverTen when fewer than 5 descending points exist there (too noisy a
// derivative estimate). MinOverTen: lr at the smoothed minimum, divided by 10.
inline double select_lr(const SweepRecord& sweep, LrSelectRule rule = LrSelectRule::Steepest) {
  if (sweep.points.size() < 10) {
    throw ValidationError("select_lr: sweep needs at least 10 recorded points, got " +
                          std::to_string(sweep.points.size()));
  }
  std::size_t min_idx = detail::sweep_min_index(sweep);
  if (min_idx == 0) {
    throw ValidationError("select_lr: no descending region (loss never decreased)");
  }

  if (rule == LrSelectRule::Steepest) {
    std::size_t descending = 0;
    for (std::size_t i = 1; i <= min_idx; ++i) {
      if (sweep.points[i].smoothed_loss < sweep.points[i - 1].smoothed_loss) ++descending;
    }
    if (descending >= 5) {
      double best_slope = std::numeric_limits<double>::infinity();
      std::size_t best_i = min_idx;
      for (std::size_t i = 1; i <= min_idx; ++i) {
        double ds = sweep.points[i].smoothed_loss - sweep.points[i - 1].smoothed_loss;
        double dlnlr = std::log(sweep.points[i].lr) - std::log(sweep.points[i - 1].lr);
        double slope = ds / dlnlr;
        if (slope < best_slope) {
          best_slope = slope;
          best_i = i;
        }
      }
      return sweep.points[best_i].lr;
    }
  }
  return sweep.points[min_idx].lr / 10.0;
}

inline void write_sweep_csv(const SweepRecord& sweep, std::ostream& out) {
  out << "iteration,lr,raw_loss,smoothed_loss\n";
  char buf[128];
  for (const auto& p : sweep.points) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", p.iteration, p.lr, p.raw_loss,
                  p.smoothed_loss);
    out << buf;
  }
}

// Smoothed loss against ln lr, with the selected rate marked.
inline std::string sweep_svg(const SweepRecord& sweep, double selected_lr) {
  std::vector<double> xs, ys;
  for (const auto& p : sweep.points) {
    xs.push_back(std::log(p.lr));
    ys.push_back(p.smoothed_loss);
  }
  SvgPlotOptions opt;
  opt.title = "learning-rate range test";
  opt.x_label = "ln(lr)";
  opt.y_label = "smoothed loss";
  opt.marker_x = std::log(selected_lr);
  return svg_line_plot(xs, ys, opt);
}

}  // namespace tinytrain
