#pragma once

#include <span>

#include "xssl/params.hpp"
#include "xssl/patch_grid.hpp"
#include "xssl/tensor.hpp"
#include "xssl/vit.hpp"

namespace xssl {

// N x d patch representations together with their 2-D grid shape.
struct RepGrid {
  Tensor z;
  int64_t grid_h = 0;
  int64_t grid_w = 0;

  RepGrid() = default;
  RepGrid(Tensor z, int64_t grid_h, int64_t grid_w);
  int64_t n() const { return grid_h * grid_w; }
  int64_t dim() const { return z.dim(1); }
};

enum class DownsampleMethod { bilinear, bicubic, linear_projection };
enum class SASampling { host_default, sa_block };

const char* to_string(DownsampleMethod m);
const char* to_string(SASampling s);
DownsampleMethod downsample_from_string(const std::string& s);
SASampling sa_sampling_from_string(const std::string& s);

struct SAConfig {
  int64_t s = 2;
  DownsampleMethod downsample = DownsampleMethod::bilinear;
  double lambda = 1.0;
  double teacher_momentum = 0.996;
  SASampling sampling = SASampling::host_default;
  double block_scale = 0.25;  // only for sa_block sampling
  bool sum_mode = false;      // squared-Frobenius instead of mean over N^2
};

// Gram matrix of L2-normalized rows: symmetric, unit diagonal for nonzero
// rows, entries in [-1, 1].
Tensor gram_matrix(GradTape& tape, const RepGrid& reps);

// Mean (default) or sum over the N^2 entries of the squared difference of
// the two gram matrices.
Tensor gram_loss(GradTape& tape, const RepGrid& student, const RepGrid& teacher,
                 bool sum_mode = false);

// Full-grid separable resize of an (s*h, s*w) representation grid down to
// (h, w), applied per channel with half-pixel center alignment and
// clamp-to-edge; or, for linear_projection, each output cell is the learned
// projection of its s^2 concatenated input rows (row-major block order).
RepGrid downsample_reps(GradTape& tape, const RepGrid& hr_reps,
                        DownsampleMethod method, int64_t s,
                        const Tensor* projection = nullptr);

// Projection initialized to the averaging operator: at s=2 it starts out
// exactly equivalent to bilinear downsampling.
Tensor init_projection(int64_t s, int64_t dim);

// The high-resolution teacher plus the gram-loss configuration.
struct SpatialAffinity {
  SAConfig cfg;
  ParamSet hr_teacher;  // same architecture as the student, EMA-updated
  Tensor projection;    // defined only for linear_projection
};

SpatialAffinity init_spatial_affinity(const SAConfig& cfg, const ParamSet& student,
                                      int64_t encoder_dim);

// Student encodes the sampled MR patches; the HR teacher encodes the full
// HR grid (no gradient); the teacher grid is downsampled and restricted to
// the sampled MR cells; returns the gram loss between the two.
Tensor sa_forward(GradTape& tape, const Tensor& mr_patch_rows_full,
                  const Tensor& hr_patch_rows_full,
                  std::span<const int64_t> sampled_mr_cells,
                  const ParamSet& student, const EncoderConfig& enc_cfg,
                  SpatialAffinity& sa, const ScalePair& pair);

// host + lambda * gram.
Tensor composite_loss(GradTape& tape, const Tensor& host_loss, const Tensor& gram,
                      double lambda);

// Same contract as ema_update: teacher <- m*teacher + (1-m)*student.
void hr_teacher_update(SpatialAffinity& sa, const ParamSet& student);

}  // namespace xssl
