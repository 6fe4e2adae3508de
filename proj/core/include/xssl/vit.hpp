#pragma once

#include <span>

#include "xssl/params.hpp"
#include "xssl/patch_grid.hpp"
#include "xssl/rng.hpp"
#include "xssl/tensor.hpp"

namespace xssl {

struct EncoderConfig {
  int64_t in_channels = 4;
  int64_t patch_size = 8;
  int64_t dim = 64;
  int64_t depth = 2;
  int64_t heads = 4;
  int64_t mlp_ratio = 4;

  int64_t patch_row_width() const { return in_channels * patch_size * patch_size; }
  bool operator==(const EncoderConfig&) const = default;
};

// Width/depth of a reconstruction head (I-JEPA-style predictor or
// LatentMIM-style decoder); both project encoder width in and out.
struct HeadConfig {
  int64_t dim = 48;
  int64_t depth = 2;
  int64_t heads = 4;
  int64_t mlp_ratio = 4;
  bool operator==(const HeadConfig&) const = default;
};

// Truncated-normal(0.02) weights, zero biases; mask token ~ N(0, 0.02^2).
ParamSet init_encoder_params(const EncoderConfig& cfg, Rng& rng);
ParamSet init_predictor_params(const EncoderConfig& enc, const HeadConfig& cfg, Rng& rng);
ParamSet init_decoder_params(const EncoderConfig& enc, const HeadConfig& cfg, Rng& rng);

// Fixed 2-D sin-cos table for a grid, one row per cell in row-major order.
// First half of the row encodes the cell's grid row, second half its grid
// column; dim must be divisible by 4. Cached per (grid_h, grid_w, dim).
Tensor sincos_position_table(int64_t grid_h, int64_t grid_w, int64_t dim);
// Constant tensor of the table rows at the given cell indices.
Tensor position_rows(const Tensor& table, std::span<const int64_t> positions);

// Pre-norm transformer over patch tokens: patch_embed(rows) + pos, then
// depth blocks. No final norm, so depth 0 returns the embedded tokens as-is.
Tensor encode(GradTape& tape, const ParamSet& params, const EncoderConfig& cfg,
              const Tensor& patch_rows, std::span<const int64_t> positions,
              const PatchGrid& grid);

// Self-attention head: context tokens and positioned mask tokens are
// concatenated, run through the blocks together, and the processed mask
// rows are projected back to encoder width.
Tensor predict_selfattn(GradTape& tape, const ParamSet& head_params,
                        const HeadConfig& cfg, const Tensor& context_reps,
                        std::span<const int64_t> context_positions,
                        std::span<const int64_t> masked_positions,
                        const PatchGrid& grid);

// Cross-attention head: mask tokens are the queries; keys/values come from
// the visible representations, which are never updated.
Tensor decode_crossattn(GradTape& tape, const ParamSet& head_params,
                        const HeadConfig& cfg, const Tensor& visible_reps,
                        std::span<const int64_t> visible_positions,
                        std::span<const int64_t> masked_positions,
                        const PatchGrid& grid);

}  // namespace xssl
