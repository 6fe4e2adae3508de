#include "xssl/patch_grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xssl {

PatchGrid::PatchGrid(int64_t image_h_, int64_t image_w_, int64_t patch_size_)
    : image_h(image_h_), image_w(image_w_), patch_size(patch_size_) {
  if (image_h <= 0 || image_w <= 0 || patch_size <= 0)
    throw std::invalid_argument("PatchGrid: extents must be positive");
  if (image_h % patch_size != 0 || image_w % patch_size != 0)
    throw std::invalid_argument("PatchGrid: patch size " + std::to_string(patch_size) +
                                " does not divide " + std::to_string(image_h) + "x" +
                                std::to_string(image_w));
  grid_h = image_h / patch_size;
  grid_w = image_w / patch_size;
}

ScalePair::ScalePair(int64_t s_, PatchGrid mr, PatchGrid hr)
    : s(s_), mr_grid(mr), hr_grid(hr) {
  if (s < 1) throw std::invalid_argument("ScalePair: scale factor must be >= 1");
  if (hr_grid.grid_h != s * mr_grid.grid_h || hr_grid.grid_w != s * mr_grid.grid_w)
    throw std::invalid_argument("ScalePair: HR grid is not s times the MR grid");
}

const char* to_string(SampleStrategy s) {
  switch (s) {
    case SampleStrategy::ijepa_block: return "ijepa_block";
    case SampleStrategy::random: return "random";
    case SampleStrategy::sa_block: return "sa_block";
  }
  return "?";
}

Tensor patchify(const Raster& image, int64_t patch_size) {
  const PatchGrid grid(image.height, image.width, patch_size);
  const int64_t n = grid.num_patches();
  const int64_t row_width = image.channels * patch_size * patch_size;
  Tensor out({n, row_width});
  double* o = out.data();
  for (int64_t u = 0; u < grid.grid_h; ++u) {
    for (int64_t v = 0; v < grid.grid_w; ++v) {
      double* row = o + grid.cell_index(u, v) * row_width;
      int64_t k = 0;
      for (int64_t c = 0; c < image.channels; ++c)
        for (int64_t py = 0; py < patch_size; ++py)
          for (int64_t px = 0; px < patch_size; ++px)
            row[k++] = image.at(c, u * patch_size + py, v * patch_size + px);
    }
  }
  return out;
}

Raster unpatchify(const Tensor& rows, const PatchGrid& grid, int64_t channels) {
  const int64_t p = grid.patch_size;
  const int64_t row_width = channels * p * p;
  if (rows.rank() != 2 || rows.dim(0) != grid.num_patches() || rows.dim(1) != row_width)
    throw std::invalid_argument("unpatchify: rows " + shape_str(rows.shape()) +
                                " do not match grid/channels");
  Raster image(channels, grid.image_h, grid.image_w);
  for (int64_t u = 0; u < grid.grid_h; ++u) {
    for (int64_t v = 0; v < grid.grid_w; ++v) {
      const double* row = rows.data() + grid.cell_index(u, v) * row_width;
      int64_t k = 0;
      for (int64_t c = 0; c < channels; ++c)
        for (int64_t py = 0; py < p; ++py)
          for (int64_t px = 0; px < p; ++px)
            image.at(c, u * p + py, v * p + px) = row[k++];
    }
  }
  return image;
}

std::vector<GridCoord> hr_patch_set(int64_t u, int64_t v, int64_t s,
                                    const PatchGrid& mr_grid) {
  if (s < 1) throw std::invalid_argument("hr_patch_set: s must be >= 1");
  if (u < 0 || u >= mr_grid.grid_h || v < 0 || v >= mr_grid.grid_w)
    throw std::invalid_argument("hr_patch_set: cell (" + std::to_string(u) + "," +
                                std::to_string(v) + ") outside " +
                                std::to_string(mr_grid.grid_h) + "x" +
                                std::to_string(mr_grid.grid_w) + " grid");
  std::vector<GridCoord> coords;
  coords.reserve(static_cast<size_t>(s * s));
  for (int64_t i = 0; i < s; ++i)
    for (int64_t j = 0; j < s; ++j) coords.push_back({s * u + i, s * v + j});
  return coords;
}

std::vector<int64_t> hr_patch_indices(int64_t mr_cell, const ScalePair& pair) {
  const int64_t u = mr_cell / pair.mr_grid.grid_w;
  const int64_t v = mr_cell % pair.mr_grid.grid_w;
  const auto coords = hr_patch_set(u, v, pair.s, pair.mr_grid);
  std::vector<int64_t> idx;
  idx.reserve(coords.size());
  for (const GridCoord& c : coords) idx.push_back(pair.hr_grid.cell_index(c.u, c.v));
  return idx;
}

namespace {

std::vector<int64_t> complement_of(const std::vector<bool>& taken) {
  std::vector<int64_t> out;
  for (size_t i = 0; i < taken.size(); ++i)
    if (!taken[i]) out.push_back(static_cast<int64_t>(i));
  return out;
}

}  // namespace

SampleMask sample_random(const PatchGrid& grid, double visible_ratio, Rng& rng) {
  if (visible_ratio <= 0.0 || visible_ratio >= 1.0)
    throw std::invalid_argument("sample_random: visible_ratio must be in (0,1)");
  const int64_t n = grid.num_patches();
  const int64_t k = std::llround(visible_ratio * static_cast<double>(n));
  if (k <= 0 || k >= n)
    throw std::invalid_argument("sample_random: ratio " + std::to_string(visible_ratio) +
                                " leaves an empty visible or masked set on " +
                                std::to_string(n) + " patches");
  const auto perm = rng.permutation(n);
  std::vector<bool> vis(static_cast<size_t>(n), false);
  for (int64_t i = 0; i < k; ++i) vis[static_cast<size_t>(perm[static_cast<size_t>(i)])] = true;
  SampleMask mask;
  mask.strategy = SampleStrategy::random;
  for (int64_t i = 0; i < n; ++i)
    (vis[static_cast<size_t>(i)] ? mask.visible : mask.masked).push_back(i);
  return mask;
}

BlockSample sample_ijepa_blocks(const PatchGrid& grid,
                                const BlockSamplingConfig& cfg, Rng& rng) {
  if (cfg.n_targets < 1) throw std::invalid_argument("sample_ijepa_blocks: need >= 1 target");
  const int64_t n = grid.num_patches();
  const int64_t area_lo = std::max<int64_t>(
      1, static_cast<int64_t>(std::floor(cfg.target_scale_min * static_cast<double>(n))));
  const int64_t area_hi = std::max(
      area_lo, static_cast<int64_t>(std::ceil(cfg.target_scale_max * static_cast<double>(n))));
  constexpr int kMaxAttempts = 50;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<bool> taken(static_cast<size_t>(n), false);
    std::vector<std::vector<int64_t>> targets;
    bool feasible = true;
    for (int64_t t = 0; t < cfg.n_targets && feasible; ++t) {
      int64_t h = 0, w = 0;
      bool found = false;
      for (int inner = 0; inner < kMaxAttempts; ++inner) {
        const double area = rng.uniform(cfg.target_scale_min, cfg.target_scale_max) *
                            static_cast<double>(n);
        const double aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
        h = std::clamp<int64_t>(std::llround(std::sqrt(area * aspect)), 1, grid.grid_h);
        w = std::clamp<int64_t>(std::llround(std::sqrt(area / aspect)), 1, grid.grid_w);
        if (h * w >= area_lo && h * w <= area_hi) {
          found = true;
          break;
        }
      }
      if (!found) {
        feasible = false;
        break;
      }
      const int64_t u0 = rng.uniform_int(0, grid.grid_h - h);
      const int64_t v0 = rng.uniform_int(0, grid.grid_w - w);
      std::vector<int64_t> block;
      block.reserve(static_cast<size_t>(h * w));
      for (int64_t du = 0; du < h; ++du)
        for (int64_t dv = 0; dv < w; ++dv) {
          const int64_t idx = grid.cell_index(u0 + du, v0 + dv);
          block.push_back(idx);
          taken[static_cast<size_t>(idx)] = true;
        }
      targets.push_back(std::move(block));
    }
    if (!feasible) continue;
    auto context = complement_of(taken);
    if (context.empty()) continue;  // whole grid covered, no visible patches

    BlockSample out;
    out.targets = std::move(targets);
    out.context.strategy = SampleStrategy::ijepa_block;
    out.context.visible = std::move(context);
    out.context.masked = [&] {
      std::vector<int64_t> m;
      for (int64_t i = 0; i < n; ++i)
        if (taken[static_cast<size_t>(i)]) m.push_back(i);
      return m;
    }();
    return out;
  }
  throw std::invalid_argument(
      "sample_ijepa_blocks: no feasible block layout after 50 attempts on " +
      std::to_string(grid.grid_h) + "x" + std::to_string(grid.grid_w) +
      " grid (target scale " + std::to_string(cfg.target_scale_min) + ".." +
      std::to_string(cfg.target_scale_max) + ", " + std::to_string(cfg.n_targets) +
      " targets)");
}

SampleMask sample_sa_block(const PatchGrid& grid, double block_scale, Rng& rng) {
  if (block_scale <= 0.0 || block_scale > 1.0)
    throw std::invalid_argument("sample_sa_block: block_scale must be in (0,1]");
  const int64_t n = grid.num_patches();
  const int64_t want = std::max<int64_t>(1, std::llround(block_scale * static_cast<double>(n)));

  // All rectangle dims whose area is closest to the requested one.
  int64_t best_err = n + 1;
  std::vector<std::pair<int64_t, int64_t>> dims;
  for (int64_t h = 1; h <= grid.grid_h; ++h) {
    for (int64_t w = 1; w <= grid.grid_w; ++w) {
      const int64_t err = std::abs(h * w - want);
      if (err < best_err) {
        best_err = err;
        dims.clear();
      }
      if (err == best_err) dims.emplace_back(h, w);
    }
  }
  const auto [h, w] = dims[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(dims.size()) - 1))];
  const int64_t u0 = rng.uniform_int(0, grid.grid_h - h);
  const int64_t v0 = rng.uniform_int(0, grid.grid_w - w);

  std::vector<bool> vis(static_cast<size_t>(n), false);
  for (int64_t du = 0; du < h; ++du)
    for (int64_t dv = 0; dv < w; ++dv)
      vis[static_cast<size_t>(grid.cell_index(u0 + du, v0 + dv))] = true;

  SampleMask mask;
  mask.strategy = SampleStrategy::sa_block;
  for (int64_t i = 0; i < n; ++i)
    (vis[static_cast<size_t>(i)] ? mask.visible : mask.masked).push_back(i);
  return mask;
}

}  // namespace xssl
