#pragma once

#include <optional>
#include <span>

#include "xssl/optim.hpp"
#include "xssl/params.hpp"
#include "xssl/patch_grid.hpp"
#include "xssl/spatial_affinity.hpp"
#include "xssl/vit.hpp"

namespace xssl {

enum class HostKind { ijepa, latentmim };

const char* to_string(HostKind k);
HostKind host_from_string(const std::string& s);

struct HostConfig {
  HostKind kind = HostKind::ijepa;
  double ema_momentum = 0.996;
  double visible_ratio = 0.1;   // latentmim random sampling
  BlockSamplingConfig blocks;   // ijepa block sampling
};

// Student encoder, its EMA target twin, and the reconstruction head.
// The target never participates in the tape.
struct HostState {
  HostConfig cfg;
  EncoderConfig enc_cfg;
  HeadConfig head_cfg;
  ParamSet student;
  ParamSet target;
  ParamSet head;
};

HostState init_host_state(const HostConfig& cfg, const EncoderConfig& enc_cfg,
                          const HeadConfig& head_cfg, uint64_t seed);

// Draw this host's mask for one scene: block targets for ijepa, ~10% random
// patches for latentmim.
SampleMask sample_host_mask(const HostConfig& cfg, const PatchGrid& grid, Rng& rng);

// Latent reconstruction loss. ijepa: student encodes the context, the
// target encoder sees the full image (stop-gradient), the self-attention
// predictor fills in the masked rows, MSE against the target rows.
// latentmim: same shape with the cross-attention decoder and MSE on
// L2-normalized rows.
Tensor host_loss(GradTape& tape, const Tensor& mr_patch_rows_full,
                 const SampleMask& mask, const HostState& state,
                 const PatchGrid& grid);

// One scene's prepared inputs inside a batch. hr_rows is null when no
// spatial-affinity attachment consumes it.
struct SceneBatchItem {
  const Tensor* input_rows = nullptr;  // full grid, host pretext input
  const Tensor* hr_rows = nullptr;     // full HR grid (real or false HR)
};

struct TrainStepResult {
  double host_loss = 0.0;
  double gram_loss = 0.0;
  double composite_loss = 0.0;
};

// One optimization step over a batch: per-scene composite losses are
// averaged, one backward pass, one AdamW step over `trainable`, one EMA
// update of the target (and of the HR teacher when attached). Mask/sample
// randomness comes from per-scene forks of step_rng, so attaching SA does
// not shift the host's draws.
TrainStepResult train_step(std::span<const SceneBatchItem> batch, HostState& state,
                           ParamSet& trainable, AdamWState& opt, double lr,
                           SpatialAffinity* sa, const PatchGrid& grid,
                           const ScalePair& pair, Rng& step_rng);

using xssl::ema_update;  // target/teacher update lives in params.hpp

}  // namespace xssl
