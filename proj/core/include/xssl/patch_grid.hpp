#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xssl/rng.hpp"
#include "xssl/tensor.hpp"

namespace xssl {

// Dense C x H x W raster, row-major within each channel plane.
struct Raster {
  int64_t channels = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> data;

  Raster() = default;
  Raster(int64_t c, int64_t h, int64_t w)
      : channels(c), height(h), width(w),
        data(static_cast<size_t>(c * h * w), 0.0) {}

  double& at(int64_t c, int64_t y, int64_t x) {
    return data[static_cast<size_t>((c * height + y) * width + x)];
  }
  double at(int64_t c, int64_t y, int64_t x) const {
    return data[static_cast<size_t>((c * height + y) * width + x)];
  }
  int64_t size() const { return channels * height * width; }
};

// Non-overlapping P x P patch bookkeeping over an image plane.
struct PatchGrid {
  int64_t image_h = 0;
  int64_t image_w = 0;
  int64_t patch_size = 0;
  int64_t grid_h = 0;
  int64_t grid_w = 0;

  PatchGrid() = default;
  PatchGrid(int64_t image_h, int64_t image_w, int64_t patch_size);

  int64_t num_patches() const { return grid_h * grid_w; }
  int64_t cell_index(int64_t u, int64_t v) const { return u * grid_w + v; }
};

struct GridCoord {
  int64_t u = 0;  // grid row
  int64_t v = 0;  // grid column
  bool operator==(const GridCoord&) const = default;
};

// MR grid and its s-times-finer HR counterpart.
struct ScalePair {
  int64_t s = 1;
  PatchGrid mr_grid;
  PatchGrid hr_grid;

  ScalePair(int64_t s, PatchGrid mr, PatchGrid hr);
};

enum class SampleStrategy { ijepa_block, random, sa_block };

const char* to_string(SampleStrategy s);

// Visible/masked partition of a grid's patch indices, both ascending.
struct SampleMask {
  std::vector<int64_t> visible;
  std::vector<int64_t> masked;
  SampleStrategy strategy = SampleStrategy::random;
};

// Rows in row-major grid order; each row is the channel-major flattening of
// one P x P patch (all pixels of channel 0, then channel 1, ...).
Tensor patchify(const Raster& image, int64_t patch_size);
Raster unpatchify(const Tensor& rows, const PatchGrid& grid, int64_t channels);

// The s^2 HR grid cells covering MR cell (u, v):
// {(s*u + i, s*v + j) | 0 <= i, j < s}, row-major in (i, j).
std::vector<GridCoord> hr_patch_set(int64_t u, int64_t v, int64_t s,
                                    const PatchGrid& mr_grid);
// Same set as flat row-major indices into the HR grid.
std::vector<int64_t> hr_patch_indices(int64_t mr_cell, const ScalePair& pair);

// Uniform without replacement, |visible| = round(visible_ratio * N).
SampleMask sample_random(const PatchGrid& grid, double visible_ratio, Rng& rng);

struct BlockSamplingConfig {
  int64_t n_targets = 4;
  double target_scale_min = 0.15;
  double target_scale_max = 0.2;
  double aspect_min = 0.75;
  double aspect_max = 1.5;
};

struct BlockSample {
  SampleMask context;  // visible = complement of the target union
  std::vector<std::vector<int64_t>> targets;
};

// Rectangular target blocks sampled by area scale and aspect ratio; the
// context is the exact complement of their union. Rejects (with diagnostic)
// after 50 failed attempts to draw a feasible set.
BlockSample sample_ijepa_blocks(const PatchGrid& grid,
                                const BlockSamplingConfig& cfg, Rng& rng);

// One contiguous rectangle of area ~ block_scale * N at a uniform position;
// the rectangle is the visible set.
SampleMask sample_sa_block(const PatchGrid& grid, double block_scale, Rng& rng);

}  // namespace xssl
