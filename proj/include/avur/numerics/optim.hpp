#pragma once

#include "avur/numerics/tape.hpp"

#include <functional>

namespace avur {

struct AdamWConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
  int total_steps = 1000;  // cosine annealing horizon
  int warmup_steps = 0;
  double min_lr_fraction = 0.05;
};

// AdamW with decoupled weight decay (applied to matrices only, not to
// vectors or scalars) and a cosine-annealed learning rate.
class AdamW {
 public:
  AdamW(ParamRefs params, AdamWConfig cfg);

  double learning_rate_at(int step) const;
  // Applies one update from the accumulated grads of requires_grad params,
  // then zeroes all grads. Returns the pre-clip global gradient norm.
  double step();
  void zero_grad();
  int steps_taken() const { return step_; }
  const ParamRefs& params() const { return params_; }

 private:
  ParamRefs params_;
  AdamWConfig cfg_;
  std::vector<Matrix> m_, v_;
  int step_ = 0;
};

// Central-difference gradient of f with respect to every scalar of every
// param; f is re-evaluated 2 * (#scalars) times. Param values are restored.
std::vector<Matrix> finite_diff_grad(const std::function<double()>& f, const ParamRefs& params,
                                     double step = 1e-5);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
};

// Elementwise |a - n| / max(|a|, |n|, floor), maximized over all entries.
GradCheckResult compare_gradients(const std::vector<Matrix>& analytic,
                                  const std::vector<Matrix>& numeric, const ParamRefs& params,
                                  double floor = 1e-6);

// Runs backward on build() and compares with finite differences of the same
// loss, stop-gradient outputs held at their unperturbed values.
GradCheckResult check_gradients(const std::function<Var(Tape&)>& build, const ParamRefs& params,
                                double step = 1e-5);

}  // namespace avur
