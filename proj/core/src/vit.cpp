#include "xssl/vit.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

namespace xssl {

namespace {

Tensor trunc_normal(std::vector<int64_t> shape, Rng& rng, double stddev = 0.02) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.truncated_normal(stddev);
  return t;
}

void init_blocks(ParamSet& p, int64_t dim, int64_t depth, int64_t mlp_ratio, Rng& rng) {
  const int64_t hidden = dim * mlp_ratio;
  for (int64_t i = 0; i < depth; ++i) {
    const std::string b = "block" + std::to_string(i) + ".";
    p.emplace(b + "ln1.g", Tensor({dim}, 1.0));
    p.emplace(b + "ln1.b", Tensor({dim}, 0.0));
    p.emplace(b + "attn.wqkv", trunc_normal({dim, 3 * dim}, rng));
    p.emplace(b + "attn.bqkv", Tensor({3 * dim}, 0.0));
    p.emplace(b + "attn.wo", trunc_normal({dim, dim}, rng));
    p.emplace(b + "attn.bo", Tensor({dim}, 0.0));
    p.emplace(b + "ln2.g", Tensor({dim}, 1.0));
    p.emplace(b + "ln2.b", Tensor({dim}, 0.0));
    p.emplace(b + "mlp.w1", trunc_normal({dim, hidden}, rng));
    p.emplace(b + "mlp.b1", Tensor({hidden}, 0.0));
    p.emplace(b + "mlp.w2", trunc_normal({hidden, dim}, rng));
    p.emplace(b + "mlp.b2", Tensor({dim}, 0.0));
  }
}

const Tensor& param(const ParamSet& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::invalid_argument("missing parameter '" + name + "'");
  return it->second;
}

Tensor ln_affine(GradTape& tape, const Tensor& x, const Tensor& g, const Tensor& b) {
  return ops::add(tape, ops::mul(tape, ops::layer_norm(tape, x), g), b);
}

Tensor self_attention(GradTape& tape, const Tensor& x, const ParamSet& p,
                      const std::string& prefix, int64_t heads) {
  const int64_t dim = x.dim(1);
  const int64_t hd = dim / heads;
  Tensor qkv = ops::add(tape, ops::matmul(tape, x, param(p, prefix + "wqkv")),
                        param(p, prefix + "bqkv"));
  std::vector<Tensor> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int64_t h = 0; h < heads; ++h) {
    Tensor q = ops::slice_cols(tape, qkv, h * hd, (h + 1) * hd);
    Tensor k = ops::slice_cols(tape, qkv, dim + h * hd, dim + (h + 1) * hd);
    Tensor v = ops::slice_cols(tape, qkv, 2 * dim + h * hd, 2 * dim + (h + 1) * hd);
    Tensor att = ops::softmax_rows(
        tape, ops::scale(tape, ops::matmul_nt(tape, q, k), inv_sqrt));
    ctx.push_back(ops::matmul(tape, att, v));
  }
  Tensor merged = ops::concat_last_dim(tape, ctx);
  return ops::add(tape, ops::matmul(tape, merged, param(p, prefix + "wo")),
                  param(p, prefix + "bo"));
}

// Queries from q_tokens, keys/values from kv_tokens. The same fused qkv
// weights are reused: the q block projects queries, the k/v blocks project
// the kv side.
Tensor cross_attention(GradTape& tape, const Tensor& q_tokens, const Tensor& kv_tokens,
                       const ParamSet& p, const std::string& prefix, int64_t heads) {
  const int64_t dim = q_tokens.dim(1);
  const int64_t hd = dim / heads;
  const Tensor& wqkv = param(p, prefix + "wqkv");
  const Tensor& bqkv = param(p, prefix + "bqkv");
  Tensor wq = ops::slice_cols(tape, wqkv, 0, dim);
  Tensor wkv = ops::slice_cols(tape, wqkv, dim, 3 * dim);
  Tensor bq = ops::slice_cols(tape, bqkv, 0, dim);
  Tensor bkv = ops::slice_cols(tape, bqkv, dim, 3 * dim);
  Tensor q_all = ops::add(tape, ops::matmul(tape, q_tokens, wq), bq);
  Tensor kv_all = ops::add(tape, ops::matmul(tape, kv_tokens, wkv), bkv);

  std::vector<Tensor> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int64_t h = 0; h < heads; ++h) {
    Tensor q = ops::slice_cols(tape, q_all, h * hd, (h + 1) * hd);
    Tensor k = ops::slice_cols(tape, kv_all, h * hd, (h + 1) * hd);
    Tensor v = ops::slice_cols(tape, kv_all, dim + h * hd, dim + (h + 1) * hd);
    Tensor att = ops::softmax_rows(
        tape, ops::scale(tape, ops::matmul_nt(tape, q, k), inv_sqrt));
    ctx.push_back(ops::matmul(tape, att, v));
  }
  Tensor merged = ops::concat_last_dim(tape, ctx);
  return ops::add(tape, ops::matmul(tape, merged, param(p, prefix + "wo")),
                  param(p, prefix + "bo"));
}

Tensor mlp(GradTape& tape, const Tensor& x, const ParamSet& p, const std::string& prefix) {
  Tensor h = ops::gelu(tape, ops::add(tape, ops::matmul(tape, x, param(p, prefix + "w1")),
                                      param(p, prefix + "b1")));
  return ops::add(tape, ops::matmul(tape, h, param(p, prefix + "w2")),
                  param(p, prefix + "b2"));
}

Tensor transformer_blocks(GradTape& tape, Tensor x, const ParamSet& p, int64_t depth,
                          int64_t heads) {
  for (int64_t i = 0; i < depth; ++i) {
    const std::string b = "block" + std::to_string(i) + ".";
    Tensor normed = ln_affine(tape, x, param(p, b + "ln1.g"), param(p, b + "ln1.b"));
    x = ops::add(tape, x, self_attention(tape, normed, p, b + "attn.", heads));
    Tensor normed2 = ln_affine(tape, x, param(p, b + "ln2.g"), param(p, b + "ln2.b"));
    x = ops::add(tape, x, mlp(tape, normed2, p, b + "mlp."));
  }
  return x;
}

void check_positions(const char* op, std::span<const int64_t> positions,
                     const PatchGrid& grid) {
  const int64_t n = grid.num_patches();
  for (int64_t idx : positions)
    if (idx < 0 || idx >= n)
      throw std::invalid_argument(std::string(op) + ": position " + std::to_string(idx) +
                                  " outside grid of " + std::to_string(n) + " patches");
}

}  // namespace

ParamSet init_encoder_params(const EncoderConfig& cfg, Rng& rng) {
  if (cfg.dim % cfg.heads != 0)
    throw std::invalid_argument("encoder dim must be divisible by heads");
  if (cfg.dim % 4 != 0)
    throw std::invalid_argument("encoder dim must be divisible by 4 for sin-cos positions");
  ParamSet p;
  p.emplace("embed.w", trunc_normal({cfg.patch_row_width(), cfg.dim}, rng));
  p.emplace("embed.b", Tensor({cfg.dim}, 0.0));
  init_blocks(p, cfg.dim, cfg.depth, cfg.mlp_ratio, rng);
  return p;
}

namespace {

ParamSet init_head_params(int64_t enc_dim, const HeadConfig& cfg, Rng& rng) {
  if (cfg.dim % cfg.heads != 0)
    throw std::invalid_argument("head dim must be divisible by heads");
  if (cfg.dim % 4 != 0)
    throw std::invalid_argument("head dim must be divisible by 4 for sin-cos positions");
  ParamSet p;
  p.emplace("in.w", trunc_normal({enc_dim, cfg.dim}, rng));
  p.emplace("in.b", Tensor({cfg.dim}, 0.0));
  p.emplace("mask_token", trunc_normal({cfg.dim}, rng));
  init_blocks(p, cfg.dim, cfg.depth, cfg.mlp_ratio, rng);
  p.emplace("out.w", trunc_normal({cfg.dim, enc_dim}, rng));
  p.emplace("out.b", Tensor({enc_dim}, 0.0));
  return p;
}

}  // namespace

ParamSet init_predictor_params(const EncoderConfig& enc, const HeadConfig& cfg, Rng& rng) {
  return init_head_params(enc.dim, cfg, rng);
}

ParamSet init_decoder_params(const EncoderConfig& enc, const HeadConfig& cfg, Rng& rng) {
  return init_head_params(enc.dim, cfg, rng);
}

Tensor sincos_position_table(int64_t grid_h, int64_t grid_w, int64_t dim) {
  if (dim % 4 != 0) throw std::invalid_argument("sincos table dim must be divisible by 4");
  static std::mutex mu;
  static std::map<std::tuple<int64_t, int64_t, int64_t>, Tensor> cache;
  {
    std::lock_guard lock(mu);
    auto it = cache.find({grid_h, grid_w, dim});
    if (it != cache.end()) return it->second;
  }
  const int64_t quarter = dim / 4;
  Tensor table({grid_h * grid_w, dim});
  for (int64_t u = 0; u < grid_h; ++u) {
    for (int64_t v = 0; v < grid_w; ++v) {
      double* row = table.data() + (u * grid_w + v) * dim;
      for (int64_t i = 0; i < quarter; ++i) {
        const double omega =
            1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        row[i] = std::sin(omega * static_cast<double>(u));
        row[quarter + i] = std::cos(omega * static_cast<double>(u));
        row[2 * quarter + i] = std::sin(omega * static_cast<double>(v));
        row[3 * quarter + i] = std::cos(omega * static_cast<double>(v));
      }
    }
  }
  std::lock_guard lock(mu);
  return cache.emplace(std::make_tuple(grid_h, grid_w, dim), table).first->second;
}

Tensor position_rows(const Tensor& table, std::span<const int64_t> positions) {
  const int64_t dim = table.dim(1);
  Tensor out({static_cast<int64_t>(positions.size()), dim});
  for (size_t i = 0; i < positions.size(); ++i) {
    const int64_t idx = positions[i];
    if (idx < 0 || idx >= table.dim(0))
      throw std::invalid_argument("position_rows: index " + std::to_string(idx) +
                                  " outside table of " + std::to_string(table.dim(0)) + " rows");
    std::copy_n(table.data() + idx * dim, dim, out.data() + static_cast<int64_t>(i) * dim);
  }
  return out;
}

Tensor encode(GradTape& tape, const ParamSet& params, const EncoderConfig& cfg,
              const Tensor& patch_rows, std::span<const int64_t> positions,
              const PatchGrid& grid) {
  if (patch_rows.rank() != 2 || patch_rows.dim(1) != cfg.patch_row_width())
    throw std::invalid_argument("encode: patch rows " + shape_str(patch_rows.shape()) +
                                " do not match patch width " +
                                std::to_string(cfg.patch_row_width()));
  if (patch_rows.dim(0) != static_cast<int64_t>(positions.size()))
    throw std::invalid_argument("encode: row count " + std::to_string(patch_rows.dim(0)) +
                                " != position count " + std::to_string(positions.size()));
  check_positions("encode", positions, grid);
  Tensor pos_table = sincos_position_table(grid.grid_h, grid.grid_w, cfg.dim);
  Tensor x = ops::add(tape, ops::matmul(tape, patch_rows, param(params, "embed.w")),
                      param(params, "embed.b"));
  x = ops::add(tape, x, position_rows(pos_table, positions));
  return transformer_blocks(tape, x, params, cfg.depth, cfg.heads);
}

Tensor predict_selfattn(GradTape& tape, const ParamSet& head_params,
                        const HeadConfig& cfg, const Tensor& context_reps,
                        std::span<const int64_t> context_positions,
                        std::span<const int64_t> masked_positions,
                        const PatchGrid& grid) {
  if (masked_positions.empty())
    throw std::invalid_argument("predict_selfattn: no masked positions");
  if (!context_reps.defined() || context_reps.dim(0) == 0 || context_positions.empty())
    throw std::invalid_argument("predict_selfattn: empty context");
  if (context_reps.dim(0) != static_cast<int64_t>(context_positions.size()))
    throw std::invalid_argument("predict_selfattn: context rows != positions");
  check_positions("predict_selfattn", context_positions, grid);
  check_positions("predict_selfattn", masked_positions, grid);

  const int64_t n_ctx = context_reps.dim(0);
  const int64_t n_mask = static_cast<int64_t>(masked_positions.size());
  Tensor pos_table = sincos_position_table(grid.grid_h, grid.grid_w, cfg.dim);

  Tensor ctx = ops::add(tape, ops::matmul(tape, context_reps, param(head_params, "in.w")),
                        param(head_params, "in.b"));
  ctx = ops::add(tape, ctx, position_rows(pos_table, context_positions));
  Tensor masked = ops::broadcast_rows(tape, param(head_params, "mask_token"), n_mask);
  masked = ops::add(tape, masked, position_rows(pos_table, masked_positions));

  std::vector<Tensor> parts{ctx, masked};
  Tensor tokens = ops::concat_rows(tape, parts);
  tokens = transformer_blocks(tape, tokens, head_params, cfg.depth, cfg.heads);
  Tensor mask_out = ops::slice_rows(tape, tokens, n_ctx, n_ctx + n_mask);
  return ops::add(tape, ops::matmul(tape, mask_out, param(head_params, "out.w")),
                  param(head_params, "out.b"));
}

Tensor decode_crossattn(GradTape& tape, const ParamSet& head_params,
                        const HeadConfig& cfg, const Tensor& visible_reps,
                        std::span<const int64_t> visible_positions,
                        std::span<const int64_t> masked_positions,
                        const PatchGrid& grid) {
  if (masked_positions.empty())
    throw std::invalid_argument("decode_crossattn: no masked positions");
  if (!visible_reps.defined() || visible_reps.dim(0) == 0 || visible_positions.empty())
    throw std::invalid_argument("decode_crossattn: empty visible set");
  if (visible_reps.dim(0) != static_cast<int64_t>(visible_positions.size()))
    throw std::invalid_argument("decode_crossattn: visible rows != positions");
  check_positions("decode_crossattn", visible_positions, grid);
  check_positions("decode_crossattn", masked_positions, grid);

  const int64_t n_mask = static_cast<int64_t>(masked_positions.size());
  Tensor pos_table = sincos_position_table(grid.grid_h, grid.grid_w, cfg.dim);

  Tensor kv = ops::add(tape, ops::matmul(tape, visible_reps, param(head_params, "in.w")),
                       param(head_params, "in.b"));
  kv = ops::add(tape, kv, position_rows(pos_table, visible_positions));
  Tensor q = ops::broadcast_rows(tape, param(head_params, "mask_token"), n_mask);
  q = ops::add(tape, q, position_rows(pos_table, masked_positions));

  for (int64_t i = 0; i < cfg.depth; ++i) {
    const std::string b = "block" + std::to_string(i) + ".";
    Tensor normed = ln_affine(tape, q, param(head_params, b + "ln1.g"),
                              param(head_params, b + "ln1.b"));
    q = ops::add(tape, q, cross_attention(tape, normed, kv, head_params, b + "attn.", cfg.heads));
    Tensor normed2 = ln_affine(tape, q, param(head_params, b + "ln2.g"),
                               param(head_params, b + "ln2.b"));
    q = ops::add(tape, q, mlp(tape, normed2, head_params, b + "mlp."));
  }
  return ops::add(tape, ops::matmul(tape, q, param(head_params, "out.w")),
                  param(head_params, "out.b"));
}

}  // namespace xssl
