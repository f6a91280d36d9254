#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <vector>

#include "tinytrain/autodiff.hpp"
#include "tinytrain/error.hpp"

namespace tinytrain {

// Cosine annealing with warm restarts. Within cycle i (length T_0 *
// T_mult^i) the rate decays from eta_max to eta_min along a half cosine;
// advancing past the cycle end restarts at eta_max with the next, longer,
// cycle.
struct SgdrSchedule {
  double eta_min = 0.0;
  double eta_max = 0.1;
  std::size_t t0 = 1;      // steps in the first cycle
  std::size_t t_mult = 2;  // cycle length multiplier
  std::size_t cycle_index = 0;
  std::size_t step_in_cycle = 0;

  void validate() const {
    if (!(eta_min >= 0.0)) throw ValidationError("sgdr: eta_min must be >= 0");
    if (!(eta_max > eta_min)) throw ValidationError("sgdr: eta_max must exceed eta_min");
    if (t0 == 0) throw ValidationError("sgdr: T_0 must be positive");
    if (t_mult == 0) throw ValidationError("sgdr: T_mult must be positive");
  }

  std::size_t cycle_length() const {
    std::size_t len = t0;
    for (std::size_t i = 0; i < cycle_index; ++i) len *= t_mult;
    return len;
  }

  // eta_min + (eta_max - eta_min)/2 * (1 + cos(pi * t / T_i))
  double lr() const {
    double frac = static_cast<double>(step_in_cycle) / static_cast<double>(cycle_length());
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(3.14159265358979323846 * frac));
  }

  void advance() {
    ++step_in_cycle;
    if (step_in_cycle >= cycle_length()) {
      step_in_cycle = 0;
      ++cycle_index;
    }
  }
};

inline double lr_at(const SgdrSchedule& s) { return s.lr(); }

// CSV trace "global_step,lr" of the schedule stepped `steps` times.
inline void write_schedule_csv(SgdrSchedule schedule, std::size_t steps, std::ostream& out) {
  out << "global_step,lr\n";
  char buf[64];
  for (std::size_t i = 0; i < steps; ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, schedule.lr());
    out << buf;
    schedule.advance();
  }
}

struct SgdmOptions {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// SGD with momentum: g <- grad + weight_decay * p; v <- mu * v + g;
// p <- p - lr * v. Gradients are zeroed after the step.
class Sgdm {
 public:
  Sgdm(std::vector<Parameter*> params, SgdmOptions options)
      : params_(std::move(params)), options_(options) {
    if (!(options_.momentum >= 0.0 && options_.momentum < 1.0)) {
      throw ValidationError("sgdm: momentum must be in [0,1)");
    }
    if (!(options_.weight_decay >= 0.0)) {
      throw ValidationError("sgdm: weight_decay must be >= 0");
    }
    velocity_.reserve(params_.size());
    for (Parameter* p : params_) velocity_.push_back(Tensor::zeros(p->value.shape));
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      if (!p.grad.all_finite()) {
        throw DivergenceError("sgdm: non-finite gradient for parameter '" + p.name + "'");
      }
      Tensor& v = velocity_[i];
      double mu = options_.momentum, wd = options_.weight_decay;
      for (std::size_t j = 0; j < v.numel(); ++j) {
        double g = p.grad.data[j] + wd * p.value.data[j];
        v.data[j] = mu * v.data[j] + g;
        p.value.data[j] -= lr * v.data[j];
      }
      p.grad.zero();
    }
  }

  const std::vector<Parameter*>& params() const { return params_; }
  std::vector<Tensor>& velocities() { return velocity_; }
  const SgdmOptions& options() const { return options_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> velocity_;
  SgdmOptions options_;
};

}  // namespace tinytrain
