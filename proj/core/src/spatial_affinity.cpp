#include "xssl/spatial_affinity.hpp"

#include <cmath>
#include <stdexcept>

namespace xssl {

RepGrid::RepGrid(Tensor z_, int64_t grid_h_, int64_t grid_w_)
    : z(std::move(z_)), grid_h(grid_h_), grid_w(grid_w_) {
  if (!z.defined() || z.rank() != 2)
    throw std::invalid_argument("RepGrid: needs a rank-2 tensor");
  if (grid_h <= 0 || grid_w <= 0 || z.dim(0) != grid_h * grid_w)
    throw std::invalid_argument("RepGrid: " + shape_str(z.shape()) + " does not match grid " +
                                std::to_string(grid_h) + "x" + std::to_string(grid_w));
}

const char* to_string(DownsampleMethod m) {
  switch (m) {
    case DownsampleMethod::bilinear: return "bilinear";
    case DownsampleMethod::bicubic: return "bicubic";
    case DownsampleMethod::linear_projection: return "linear_projection";
  }
  return "?";
}

const char* to_string(SASampling s) {
  return s == SASampling::host_default ? "host_default" : "sa_block";
}

DownsampleMethod downsample_from_string(const std::string& s) {
  if (s == "bilinear") return DownsampleMethod::bilinear;
  if (s == "bicubic") return DownsampleMethod::bicubic;
  if (s == "linear_projection") return DownsampleMethod::linear_projection;
  throw std::invalid_argument("unknown downsample method '" + s + "'");
}

SASampling sa_sampling_from_string(const std::string& s) {
  if (s == "host_default") return SASampling::host_default;
  if (s == "sa_block") return SASampling::sa_block;
  throw std::invalid_argument("unknown sa sampling mode '" + s + "'");
}

Tensor gram_matrix(GradTape& tape, const RepGrid& reps) {
  Tensor normed = ops::l2_normalize_rows(tape, reps.z);
  return ops::matmul(tape, normed, ops::transpose(tape, normed));
}

Tensor gram_loss(GradTape& tape, const RepGrid& student, const RepGrid& teacher,
                 bool sum_mode) {
  if (student.n() != teacher.n())
    throw std::invalid_argument("gram_loss: row counts differ, " + std::to_string(student.n()) +
                                " vs " + std::to_string(teacher.n()));
  Tensor gs = gram_matrix(tape, student);
  Tensor gt = gram_matrix(tape, teacher);
  Tensor loss = ops::mse(tape, gs, gt);
  if (sum_mode) {
    const double n2 = static_cast<double>(student.n()) * static_cast<double>(student.n());
    loss = ops::scale(tape, loss, n2);
  }
  return loss;
}

namespace {

struct Tap {
  int64_t index;
  double weight;
};

// 1-D resize taps from length s*n down to n, half-pixel centers,
// clamp-to-edge (clamped taps merge their weight into the edge sample).
std::vector<std::vector<Tap>> axis_taps(int64_t n_out, int64_t s, DownsampleMethod method) {
  const int64_t n_in = n_out * s;
  std::vector<std::vector<Tap>> all(static_cast<size_t>(n_out));
  for (int64_t i = 0; i < n_out; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * static_cast<double>(s) - 0.5;
    std::vector<Tap>& taps = all[static_cast<size_t>(i)];
    auto push = [&](int64_t idx, double w) {
      if (w == 0.0) return;
      idx = std::clamp<int64_t>(idx, 0, n_in - 1);
      for (Tap& t : taps)
        if (t.index == idx) {
          t.weight += w;
          return;
        }
      taps.push_back({idx, w});
    };
    if (method == DownsampleMethod::bilinear) {
      const int64_t i0 = static_cast<int64_t>(std::floor(src));
      const double f = src - static_cast<double>(i0);
      push(i0, 1.0 - f);
      push(i0 + 1, f);
    } else {  // bicubic, Keys kernel a = -0.5
      const int64_t i0 = static_cast<int64_t>(std::floor(src));
      const double f = src - static_cast<double>(i0);
      constexpr double a = -0.5;
      auto kernel = [&](double t) {
        t = std::abs(t);
        if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
        if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
        return 0.0;
      };
      for (int64_t k = -1; k <= 2; ++k) push(i0 + k, kernel(f - static_cast<double>(k)));
    }
  }
  return all;
}

// Separable pass along one grid axis of an (gh, gw, d) representation grid.
Tensor resample_axis(GradTape& tape, const Tensor& in, int64_t gh, int64_t gw, int64_t d,
                     bool along_rows, const std::vector<std::vector<Tap>>& taps) {
  const int64_t out_h = along_rows ? static_cast<int64_t>(taps.size()) : gh;
  const int64_t out_w = along_rows ? gw : static_cast<int64_t>(taps.size());
  Tensor out({out_h * out_w, d});
  for (int64_t y = 0; y < out_h; ++y) {
    for (int64_t x = 0; x < out_w; ++x) {
      double* dst = out.data() + (y * out_w + x) * d;
      const auto& ts = taps[static_cast<size_t>(along_rows ? y : x)];
      for (const Tap& t : ts) {
        const int64_t src_cell = along_rows ? t.index * gw + x : y * gw + t.index;
        const double* src = in.data() + src_cell * d;
        for (int64_t c = 0; c < d; ++c) dst[c] += t.weight * src[c];
      }
    }
  }
  if (in.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([in = in, out = out, gh, gw, d, along_rows, taps]() mutable {
      if (!out.has_grad()) return;
      const int64_t out_h = along_rows ? static_cast<int64_t>(taps.size()) : gh;
      const int64_t out_w = along_rows ? gw : static_cast<int64_t>(taps.size());
      const double* go = out.grad_data();
      double* gi = in.grad_data();
      for (int64_t y = 0; y < out_h; ++y)
        for (int64_t x = 0; x < out_w; ++x) {
          const double* g = go + (y * out_w + x) * d;
          const auto& ts = taps[static_cast<size_t>(along_rows ? y : x)];
          for (const Tap& t : ts) {
            const int64_t src_cell = along_rows ? t.index * gw + x : y * gw + t.index;
            double* dst = gi + src_cell * d;
            for (int64_t c = 0; c < d; ++c) dst[c] += t.weight * g[c];
          }
        }
    }, out);
  }
  return out;
}

// Concatenate each MR cell's s^2 HR representation rows (hr_patch_set
// order) into one (s^2*d)-wide row.
Tensor concat_blocks(GradTape& tape, const Tensor& hr, const ScalePair& pair, int64_t d) {
  const int64_t n_mr = pair.mr_grid.num_patches();
  const int64_t s2 = pair.s * pair.s;
  Tensor out({n_mr, s2 * d});
  for (int64_t cell = 0; cell < n_mr; ++cell) {
    const auto idx = hr_patch_indices(cell, pair);
    double* dst = out.data() + cell * s2 * d;
    for (int64_t b = 0; b < s2; ++b)
      std::copy_n(hr.data() + idx[static_cast<size_t>(b)] * d, d, dst + b * d);
  }
  if (hr.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([hr = hr, out = out, pair, d]() mutable {
      if (!out.has_grad()) return;
      const int64_t n_mr = pair.mr_grid.num_patches();
      const int64_t s2 = pair.s * pair.s;
      const double* go = out.grad_data();
      double* gi = hr.grad_data();
      for (int64_t cell = 0; cell < n_mr; ++cell) {
        const auto idx = hr_patch_indices(cell, pair);
        for (int64_t b = 0; b < s2; ++b)
          for (int64_t c = 0; c < d; ++c)
            gi[idx[static_cast<size_t>(b)] * d + c] += go[(cell * s2 + b) * d + c];
      }
    }, out);
  }
  return out;
}

}  // namespace

RepGrid downsample_reps(GradTape& tape, const RepGrid& hr_reps, DownsampleMethod method,
                        int64_t s, const Tensor* projection) {
  if (s < 1) throw std::invalid_argument("downsample_reps: s must be >= 1");
  if (hr_reps.grid_h % s != 0 || hr_reps.grid_w % s != 0)
    throw std::invalid_argument("downsample_reps: grid " + std::to_string(hr_reps.grid_h) + "x" +
                                std::to_string(hr_reps.grid_w) + " not divisible by s=" +
                                std::to_string(s));
  const int64_t out_h = hr_reps.grid_h / s;
  const int64_t out_w = hr_reps.grid_w / s;
  const int64_t d = hr_reps.dim();

  if (method == DownsampleMethod::linear_projection) {
    if (projection == nullptr || !projection->defined())
      throw std::invalid_argument("downsample_reps: linear_projection needs a projection matrix");
    if (projection->rank() != 2 || projection->dim(0) != s * s * d || projection->dim(1) != d)
      throw std::invalid_argument("downsample_reps: projection " +
                                  shape_str(projection->shape()) + " must be " +
                                  std::to_string(s * s * d) + "x" + std::to_string(d));
    const PatchGrid mr_grid(out_h, out_w, 1);
    const PatchGrid hr_grid(hr_reps.grid_h, hr_reps.grid_w, 1);
    const ScalePair pair(s, mr_grid, hr_grid);
    Tensor blocks = concat_blocks(tape, hr_reps.z, pair, d);
    return RepGrid(ops::matmul(tape, blocks, *projection), out_h, out_w);
  }

  // Width pass then height pass; with exact power-of-two weights (s=2
  // bilinear) this reproduces per-block pairwise means bit-exactly.
  const auto w_taps = axis_taps(out_w, s, method);
  const auto h_taps = axis_taps(out_h, s, method);
  Tensor mid = resample_axis(tape, hr_reps.z, hr_reps.grid_h, hr_reps.grid_w, d, false, w_taps);
  Tensor out = resample_axis(tape, mid, hr_reps.grid_h, out_w, d, true, h_taps);
  return RepGrid(std::move(out), out_h, out_w);
}

Tensor init_projection(int64_t s, int64_t dim) {
  Tensor p({s * s * dim, dim});
  const double w = 1.0 / static_cast<double>(s * s);
  for (int64_t b = 0; b < s * s; ++b)
    for (int64_t c = 0; c < dim; ++c) p.data()[(b * dim + c) * dim + c] = w;
  return p;
}

SpatialAffinity init_spatial_affinity(const SAConfig& cfg, const ParamSet& student,
                                      int64_t encoder_dim) {
  SpatialAffinity sa;
  sa.cfg = cfg;
  sa.hr_teacher = clone_params(student);
  if (cfg.downsample == DownsampleMethod::linear_projection) {
    sa.projection = init_projection(cfg.s, encoder_dim);
    sa.projection.set_requires_grad(true);
  }
  return sa;
}

Tensor sa_forward(GradTape& tape, const Tensor& mr_patch_rows_full,
                  const Tensor& hr_patch_rows_full,
                  std::span<const int64_t> sampled_mr_cells,
                  const ParamSet& student, const EncoderConfig& enc_cfg,
                  SpatialAffinity& sa, const ScalePair& pair) {
  if (pair.s != sa.cfg.s)
    throw std::invalid_argument("sa_forward: scene scale " + std::to_string(pair.s) +
                                " != configured s " + std::to_string(sa.cfg.s));
  if (sampled_mr_cells.empty())
    throw std::invalid_argument("sa_forward: no sampled MR cells");
  if (mr_patch_rows_full.dim(0) != pair.mr_grid.num_patches() ||
      hr_patch_rows_full.dim(0) != pair.hr_grid.num_patches())
    throw std::invalid_argument("sa_forward: patch rows do not match the scale pair grids");
  for (int64_t cell : sampled_mr_cells)
    if (cell < 0 || cell >= pair.mr_grid.num_patches())
      throw std::invalid_argument("sa_forward: sampled cell " + std::to_string(cell) +
                                  " outside MR grid");

  const int64_t d = enc_cfg.dim;
  const int64_t n_sampled = static_cast<int64_t>(sampled_mr_cells.size());

  // Student side: encode only the sampled MR patches.
  Tensor mr_rows({n_sampled, mr_patch_rows_full.dim(1)});
  for (int64_t i = 0; i < n_sampled; ++i)
    std::copy_n(mr_patch_rows_full.data() + sampled_mr_cells[static_cast<size_t>(i)] *
                                                mr_patch_rows_full.dim(1),
                mr_patch_rows_full.dim(1), mr_rows.data() + i * mr_patch_rows_full.dim(1));
  Tensor z_student = encode(tape, student, enc_cfg, mr_rows, sampled_mr_cells, pair.mr_grid);

  // Teacher side: full HR grid, no gradient into the teacher encoder.
  std::vector<int64_t> all_hr(static_cast<size_t>(pair.hr_grid.num_patches()));
  for (size_t i = 0; i < all_hr.size(); ++i) all_hr[i] = static_cast<int64_t>(i);
  GradTape teacher_tape;  // records nothing: teacher params never require grad
  Tensor z_teacher_full =
      encode(teacher_tape, sa.hr_teacher, enc_cfg, hr_patch_rows_full, all_hr, pair.hr_grid);

  Tensor z_teacher_rows;
  if (sa.cfg.downsample == DownsampleMethod::linear_projection) {
    // Restrict-then-project: blocks are independent, so this matches the
    // full-grid projection on the sampled cells while keeping the matmul
    // small. The projection matrix does receive gradient.
    const int64_t s2 = pair.s * pair.s;
    Tensor blocks({n_sampled, s2 * d});
    for (int64_t i = 0; i < n_sampled; ++i) {
      const auto idx = hr_patch_indices(sampled_mr_cells[static_cast<size_t>(i)], pair);
      for (int64_t b = 0; b < s2; ++b)
        std::copy_n(z_teacher_full.data() + idx[static_cast<size_t>(b)] * d, d,
                    blocks.data() + (i * s2 + b) * d);
    }
    z_teacher_rows = ops::matmul(tape, blocks, sa.projection);
  } else {
    RepGrid down = downsample_reps(tape, RepGrid(z_teacher_full, pair.hr_grid.grid_h,
                                                 pair.hr_grid.grid_w),
                                   sa.cfg.downsample, pair.s);
    z_teacher_rows = Tensor({n_sampled, d});
    for (int64_t i = 0; i < n_sampled; ++i)
      std::copy_n(down.z.data() + sampled_mr_cells[static_cast<size_t>(i)] * d, d,
                  z_teacher_rows.data() + i * d);
  }

  // Both sides are plain row lists over the same sampled cells; gram_loss
  // only needs matching row counts, so treat them as 1 x n_sampled grids.
  return gram_loss(tape, RepGrid(z_student, 1, n_sampled),
                   RepGrid(z_teacher_rows, 1, n_sampled), sa.cfg.sum_mode);
}

Tensor composite_loss(GradTape& tape, const Tensor& host_loss, const Tensor& gram,
                      double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("composite_loss: lambda must be >= 0");
  return ops::add(tape, host_loss, ops::scale(tape, gram, lambda));
}

void hr_teacher_update(SpatialAffinity& sa, const ParamSet& student) {
  ema_update(sa.hr_teacher, student, sa.cfg.teacher_momentum);
}

}  // namespace xssl
