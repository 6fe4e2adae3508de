#include "xssl/optim.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "xssl/rng.hpp"

namespace xssl {

ParamSet clone_params(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params) out.emplace(name, t.clone_detached());
  return out;
}

void set_requires_grad(ParamSet& params, bool v) {
  for (auto& [name, t] : params) t.set_requires_grad(v);
}

void zero_grads(ParamSet& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

int64_t param_count(const ParamSet& params) {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

void ema_update(ParamSet& target, const ParamSet& student, double momentum) {
  if (momentum < 0.0 || momentum > 1.0)
    throw std::invalid_argument("ema_update: momentum must be in [0,1]");
  if (target.size() != student.size())
    throw std::invalid_argument("ema_update: parameter sets differ in size");
  auto it = student.begin();
  for (auto& [name, t] : target) {
    if (it->first != name || it->second.shape() != t.shape())
      throw std::invalid_argument("ema_update: mismatch at parameter '" + name + "'");
    const double* s = it->second.data();
    double* d = t.data();
    const int64_t n = t.size();
    for (int64_t i = 0; i < n; ++i) d[i] = momentum * d[i] + (1.0 - momentum) * s[i];
    ++it;
  }
}

uint64_t params_checksum(const ParamSet& params) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : params) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t.shape().data(), t.shape().size() * sizeof(int64_t), h);
    h = fnv1a(t.data(), static_cast<size_t>(t.size()) * sizeof(double), h);
  }
  return h;
}

void merge_params(ParamSet& dst, const ParamSet& src, const std::string& prefix) {
  for (const auto& [name, t] : src) dst.emplace(prefix + name, t);
}

void AdamWState::step(ParamSet& params, double lr) {
  if (lr < 0.0) throw std::invalid_argument("adamw_step: negative learning rate");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto& mom = moments_[name];
    const size_t n = static_cast<size_t>(p.size());
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    } else if (mom.m.size() != n) {
      throw std::invalid_argument("adamw_step: moment shape mismatch for '" + name + "'");
    }
    const std::span<const double> g = p.grad();
    double* x = p.data();
    for (size_t i = 0; i < n; ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      if (std::isnan(gi))
        throw NumericalError("adamw_step: NaN gradient in parameter '" + name + "'");
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gi;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      x[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * x[i]);
    }
  }
}

void AdamWState::restore(int64_t t, std::map<std::string, Moments> moments) {
  t_ = t;
  moments_ = std::move(moments);
}

double cosine_lr(int64_t step, int64_t total_steps, double base_lr,
                 int64_t warmup_steps) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("cosine_lr: step " + std::to_string(step) + " outside [0," +
                                std::to_string(total_steps) + "]");
  if (step == total_steps) return 0.0;
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

FdCheckResult finite_difference_check(
    const std::function<Tensor(GradTape&)>& build_loss, std::span<Tensor> params,
    double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_check: h must be positive");
  auto eval = [&]() {
    GradTape tape;
    Tensor loss = build_loss(tape);
    return loss.item();
  };
  const double f0 = eval();
  const double f1 = eval();
  if (std::memcmp(&f0, &f1, sizeof(double)) != 0)
    throw std::invalid_argument("finite_difference_check: loss function is not deterministic");

  for (Tensor& p : params) p.zero_grad();
  GradTape tape;
  Tensor loss = build_loss(tape);
  tape.backward(loss);

  FdCheckResult result;
  int64_t param_idx = 0;
  for (Tensor& p : params) {
    const std::span<const double> g = p.grad();
    for (int64_t i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + h;
      const double fp = eval();
      p.data()[i] = saved - h;
      const double fm = eval();
      p.data()[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double analytic = g.empty() ? 0.0 : g[i];
      const double err = std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst_param = "param" + std::to_string(param_idx);
        result.worst_index = i;
      }
    }
    ++param_idx;
  }
  return result;
}

}  // namespace xssl
