#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xssl/patch_grid.hpp"
#include "xssl/rng.hpp"

namespace xssl {

// Degradation applied to HR to produce MR: Gaussian blur, s-times area
// average, per-band affine with gain/offset drawn from the given ranges,
// additive Gaussian noise, clip to [0,1].
struct SensorModel {
  double blur_sigma = 1.2;
  double gain_lo = 0.92;
  double gain_hi = 1.08;
  double offset_lo = -0.03;
  double offset_hi = 0.03;
  double noise_sigma = 0.03;
  int64_t s = 2;
};

struct SceneConfig {
  int64_t k_classes = 3;
  int64_t mr_h = 32;
  int64_t mr_w = 32;
  int64_t s = 2;
  int64_t patch_size = 8;  // MR patch size; labels live at this granularity
  double texture_amp = 0.3;
  SensorModel sensor;

  int64_t hr_h() const { return s * mr_h; }
  int64_t hr_w() const { return s * mr_w; }
  int64_t labels_h() const { return mr_h / patch_size; }
  int64_t labels_w() const { return mr_w / patch_size; }
};

// Co-registered HR/MR pair with per-MR-patch class labels. Bands are
// R,G,B,NIR unit-scaled floats; values are float32-representable so the
// on-disk float32 container round-trips bit-exactly.
struct PairedScene {
  Raster hr;                   // 4 x (s*H) x (s*W)
  Raster mr;                   // 4 x H x W
  std::vector<int64_t> labels; // labels_h * labels_w, row-major
  int64_t labels_h = 0;
  int64_t labels_w = 0;
  int64_t s = 2;
  uint64_t seed = 0;
};

inline constexpr int64_t kNumBands = 4;

// Fixed class palette (4-band signatures); per-scene jitter is added on top
// so classes stay identifiable across scenes.
const std::vector<std::vector<double>>& class_signatures();

// Smoothed-noise field quantile-thresholded into K regions, each colored by
// its class signature plus class-scaled high-frequency texture that exists
// only at HR scale; MR is the sensor-degraded HR; labels are the majority
// class per MR patch.
PairedScene generate_scene(uint64_t seed, const SceneConfig& cfg);

Raster sensor_degrade(const Raster& hr, const SensorModel& model, Rng& rng);

// Bilinear upsample by s with half-pixel center alignment.
Raster make_false_hr(const Raster& mr, int64_t s);

// Raster helpers used by the generator (exposed for tests).
Raster gaussian_blur(const Raster& in, double sigma);
Raster area_downsample(const Raster& in, int64_t s);

struct Dataset {
  SceneConfig cfg;
  std::vector<PairedScene> scenes;
};

// Container: magic "XSDS", version u32, count u32, dims (bands, mr_h, mr_w,
// labels_h, labels_w as u32), s u32, K u32, dtype tag u32 (0 = float32),
// then per scene: seed u64, hr payload f32, mr payload f32, labels u16.
// Little-endian throughout.
inline constexpr uint32_t kDatasetVersion = 1;

void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

// Nearest-class-signature classifier on per-patch band means; the reference
// accuracy oracle for comparing HR against MR information content.
double patch_mean_oracle_accuracy(const Raster& image, int64_t patch_size,
                                  const std::vector<int64_t>& labels,
                                  int64_t k_classes);

}  // namespace xssl
