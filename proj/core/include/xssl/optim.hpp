#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xssl/params.hpp"
#include "xssl/tensor.hpp"

namespace xssl {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double base_lr = 1e-3;
};

// Decoupled-weight-decay Adam. Moments are keyed by parameter name and
// allocated on first sight of each parameter.
class AdamWState {
 public:
  AdamWState() = default;
  explicit AdamWState(AdamWConfig cfg) : cfg_(cfg) {}

  // p <- p - lr*(mhat/(sqrt(vhat)+eps) + weight_decay*p), reading each
  // parameter's accumulated grad. Throws NumericalError on NaN grads.
  void step(ParamSet& params, double lr);

  int64_t t() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  // Serialization access for checkpoints.
  struct Moments {
    std::vector<double> m, v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(int64_t t, std::map<std::string, Moments> moments);

 private:
  AdamWConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

// Linear warmup to base_lr over warmup_steps, then cosine decay to zero at
// total_steps.
double cosine_lr(int64_t step, int64_t total_steps, double base_lr,
                 int64_t warmup_steps);

struct FdCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
};

// Compares the tape's analytic gradients of build_loss against central
// finite differences over every coordinate of params. build_loss must be a
// deterministic function of the parameter values; this is verified by
// evaluating twice and rejecting on mismatch. Error metric per coordinate:
// |analytic - fd| / max(1, |analytic|).
FdCheckResult finite_difference_check(
    const std::function<Tensor(GradTape&)>& build_loss, std::span<Tensor> params,
    double h);

}  // namespace xssl
