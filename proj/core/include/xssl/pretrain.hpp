#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xssl/checkpoint.hpp"
#include "xssl/config.hpp"
#include "xssl/synth_data.hpp"

namespace xssl {

// Patchified scene cache. HR rows are materialized lazily and every access
// is counted, so a run can prove it never touched the HR payloads.
class SceneStore {
 public:
  explicit SceneStore(Dataset ds);

  const Dataset& dataset() const { return ds_; }
  int64_t size() const { return static_cast<int64_t>(ds_.scenes.size()); }

  const Tensor& mr_rows(int64_t i);
  const Tensor& hr_rows(int64_t i);        // real HR, audited
  const Tensor& false_hr_rows(int64_t i);  // bilinear-upsampled MR, not an HR read
  // Random crop of the real HR raster at MR pixel size, audited.
  Tensor hr_crop_rows(int64_t i, Rng& rng);

  int64_t hr_payload_reads() const { return hr_payload_reads_; }

 private:
  Dataset ds_;
  std::vector<Tensor> mr_cache_, hr_cache_, false_hr_cache_;
  int64_t hr_payload_reads_ = 0;
};

struct StepMetrics {
  int64_t step = 0;
  double lr = 0.0;
  double host_loss = 0.0;
  double gram_loss = 0.0;
  double composite_loss = 0.0;
  double wall_ms = 0.0;
};

struct PretrainOutcome {
  std::string checkpoint_path;
  std::string metrics_path;
  std::string manifest_path;
  std::vector<StepMetrics> metrics;
  double first_epoch_mean_composite = 0.0;
  double last_epoch_mean_composite = 0.0;
  int64_t hr_payload_reads = 0;
  uint64_t config_digest = 0;
};

// One full pretraining run: dataset load, deterministic epoch shuffles,
// train_step loop under the cosine schedule, checkpoint + metrics CSV +
// manifest in cfg.out_dir. resume_from continues a stop_after_steps
// checkpoint and reproduces the uninterrupted trajectory bit-exactly.
// On a NaN abort the state is dumped next to the outputs and the
// NumericalError names the dump path.
PretrainOutcome run_pretrain(const TrainConfig& cfg, const std::string& resume_from = "");

// Rebuild encoder params/config from checkpoint records ("student.*" and
// the meta.encoder.* scalars).
struct LoadedEncoder {
  ParamSet params;
  EncoderConfig cfg;
  int64_t k_classes = 0;
};
LoadedEncoder load_encoder(const Checkpoint& ckpt);

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& metrics);

}  // namespace xssl
