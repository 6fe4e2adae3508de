#include "xssl/ssl_hosts.hpp"

#include <cmath>
#include <stdexcept>

namespace xssl {

const char* to_string(HostKind k) {
  return k == HostKind::ijepa ? "ijepa" : "latentmim";
}

HostKind host_from_string(const std::string& s) {
  if (s == "ijepa") return HostKind::ijepa;
  if (s == "latentmim") return HostKind::latentmim;
  throw std::invalid_argument("unknown host '" + s + "'");
}

HostState init_host_state(const HostConfig& cfg, const EncoderConfig& enc_cfg,
                          const HeadConfig& head_cfg, uint64_t seed) {
  HostState state;
  state.cfg = cfg;
  state.enc_cfg = enc_cfg;
  state.head_cfg = head_cfg;
  Rng root(seed);
  Rng enc_rng = root.fork(1);
  Rng head_rng = root.fork(2);
  state.student = init_encoder_params(enc_cfg, enc_rng);
  set_requires_grad(state.student, true);
  state.target = clone_params(state.student);
  state.head = cfg.kind == HostKind::ijepa
                   ? init_predictor_params(enc_cfg, head_cfg, head_rng)
                   : init_decoder_params(enc_cfg, head_cfg, head_rng);
  set_requires_grad(state.head, true);
  return state;
}

SampleMask sample_host_mask(const HostConfig& cfg, const PatchGrid& grid, Rng& rng) {
  if (cfg.kind == HostKind::ijepa) return sample_ijepa_blocks(grid, cfg.blocks, rng).context;
  return sample_random(grid, cfg.visible_ratio, rng);
}

namespace {

void check_mask_partitions(const SampleMask& mask, int64_t n) {
  if (static_cast<int64_t>(mask.visible.size() + mask.masked.size()) != n)
    throw std::invalid_argument("host_loss: mask does not cover the grid");
  std::vector<bool> seen(static_cast<size_t>(n), false);
  for (int64_t i : mask.visible) {
    if (i < 0 || i >= n || seen[static_cast<size_t>(i)])
      throw std::invalid_argument("host_loss: mask is not a partition");
    seen[static_cast<size_t>(i)] = true;
  }
  for (int64_t i : mask.masked) {
    if (i < 0 || i >= n || seen[static_cast<size_t>(i)])
      throw std::invalid_argument("host_loss: mask is not a partition");
    seen[static_cast<size_t>(i)] = true;
  }
}

Tensor gather_rows_const(const Tensor& src, std::span<const int64_t> rows) {
  const int64_t w = src.dim(1);
  Tensor out({static_cast<int64_t>(rows.size()), w});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(src.data() + rows[i] * w, w, out.data() + static_cast<int64_t>(i) * w);
  return out;
}

}  // namespace

Tensor host_loss(GradTape& tape, const Tensor& mr_patch_rows_full,
                 const SampleMask& mask, const HostState& state,
                 const PatchGrid& grid) {
  const int64_t n = grid.num_patches();
  if (mr_patch_rows_full.dim(0) != n)
    throw std::invalid_argument("host_loss: patch rows do not match the grid");
  check_mask_partitions(mask, n);
  if (mask.masked.empty()) throw std::invalid_argument("host_loss: empty masked set");
  if (mask.visible.empty()) throw std::invalid_argument("host_loss: empty visible set");

  // Target path sees the full image and carries no gradient.
  std::vector<int64_t> all(static_cast<size_t>(n));
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
  GradTape target_tape;
  Tensor target_full =
      encode(target_tape, state.target, state.enc_cfg, mr_patch_rows_full, all, grid);
  Tensor target_masked = gather_rows_const(target_full, mask.masked);

  Tensor visible_rows = gather_rows_const(mr_patch_rows_full, mask.visible);
  Tensor student_reps =
      encode(tape, state.student, state.enc_cfg, visible_rows, mask.visible, grid);

  if (state.cfg.kind == HostKind::ijepa) {
    Tensor pred = predict_selfattn(tape, state.head, state.head_cfg, student_reps,
                                   mask.visible, mask.masked, grid);
    return ops::mse(tape, pred, target_masked);
  }
  Tensor pred = decode_crossattn(tape, state.head, state.head_cfg, student_reps,
                                 mask.visible, mask.masked, grid);
  Tensor target_normed = ops::l2_normalize_rows(tape, target_masked);
  return ops::mse(tape, ops::l2_normalize_rows(tape, pred), target_normed);
}

TrainStepResult train_step(std::span<const SceneBatchItem> batch, HostState& state,
                           ParamSet& trainable, AdamWState& opt, double lr,
                           SpatialAffinity* sa, const PatchGrid& grid,
                           const ScalePair& pair, Rng& step_rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");

  GradTape tape;
  zero_grads(trainable);

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Tensor host_sum, gram_sum;
  for (size_t i = 0; i < batch.size(); ++i) {
    const SceneBatchItem& item = batch[i];
    if (item.input_rows == nullptr)
      throw std::invalid_argument("train_step: scene without input rows");
    Rng mask_rng = step_rng.fork(2 * i);
    const SampleMask mask = sample_host_mask(state.cfg, grid, mask_rng);
    Tensor h = host_loss(tape, *item.input_rows, mask, state, grid);
    host_sum = host_sum.defined() ? ops::add(tape, host_sum, h) : h;

    if (sa != nullptr) {
      if (item.hr_rows == nullptr)
        throw std::invalid_argument("train_step: SA attached but scene has no HR rows");
      std::span<const int64_t> cells;
      SampleMask sa_mask;
      if (sa->cfg.sampling == SASampling::sa_block) {
        Rng sa_rng = step_rng.fork(2 * i + 1);
        sa_mask = sample_sa_block(pair.mr_grid, sa->cfg.block_scale, sa_rng);
        cells = sa_mask.visible;
      } else {
        cells = mask.visible;
      }
      Tensor g = sa_forward(tape, *item.input_rows, *item.hr_rows, cells, state.student,
                            state.enc_cfg, *sa, pair);
      gram_sum = gram_sum.defined() ? ops::add(tape, gram_sum, g) : g;
    }
  }

  Tensor host_mean = ops::scale(tape, host_sum, inv_b);
  TrainStepResult result;
  Tensor total;
  if (sa != nullptr) {
    Tensor gram_mean = ops::scale(tape, gram_sum, inv_b);
    result.gram_loss = gram_mean.item();
    total = composite_loss(tape, host_mean, gram_mean, sa->cfg.lambda);
  } else {
    total = host_mean;
  }
  result.host_loss = host_mean.item();
  result.composite_loss = total.item();
  if (!std::isfinite(result.composite_loss))
    throw NumericalError("train_step: non-finite composite loss");

  tape.backward(total);
  opt.step(trainable, lr);
  ema_update(state.target, state.student, state.cfg.ema_momentum);
  if (sa != nullptr) hr_teacher_update(*sa, state.student);
  return result;
}

}  // namespace xssl
