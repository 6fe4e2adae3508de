#include <benchmark/benchmark.h>

#include "xssl/optim.hpp"
#include "xssl/patch_grid.hpp"
#include "xssl/rng.hpp"
#include "xssl/spatial_affinity.hpp"
#include "xssl/ssl_hosts.hpp"
#include "xssl/synth_data.hpp"

using namespace xssl;

namespace {

Tensor rand_tensor(std::vector<int64_t> shape, Rng& rng) {
  Tensor t(std::move(shape), Tensor::uninit_t{});
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = rand_tensor({n, n}, rng);
  Tensor b = rand_tensor({n, n}, rng);
  GradTape tape;
  for (auto _ : state) {
    Tensor c = ops::matmul(tape, a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_gelu(benchmark::State& state) {
  Rng rng(2);
  Tensor x = rand_tensor({64, 256}, rng);
  GradTape tape;
  for (auto _ : state) {
    Tensor y = ops::gelu(tape, x);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_gelu);

void BM_encoder_forward(benchmark::State& state) {
  const EncoderConfig cfg;
  Rng rng(3);
  ParamSet params = init_encoder_params(cfg, rng);
  const PatchGrid grid(64, 64, cfg.patch_size);
  Tensor rows = rand_tensor({grid.num_patches(), cfg.patch_row_width()}, rng);
  std::vector<int64_t> pos(static_cast<size_t>(grid.num_patches()));
  for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int64_t>(i);
  for (auto _ : state) {
    GradTape tape;
    Tensor reps = encode(tape, params, cfg, rows, pos, grid);
    benchmark::DoNotOptimize(reps.data());
  }
}
BENCHMARK(BM_encoder_forward);

void BM_gram_loss(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(4);
  Tensor zs = rand_tensor({n, 64}, rng);
  zs.set_requires_grad(true);
  Tensor zt = rand_tensor({n, 64}, rng);
  for (auto _ : state) {
    GradTape tape;
    Tensor loss = gram_loss(tape, RepGrid(zs, 1, n), RepGrid(zt, 1, n));
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
    zs.zero_grad();
  }
}
BENCHMARK(BM_gram_loss)->Arg(16)->Arg(64)->Arg(256);

void BM_train_step(benchmark::State& state) {
  const bool with_sa = state.range(0) != 0;
  const EncoderConfig enc;
  const HeadConfig head;
  HostConfig hc;
  HostState host = init_host_state(hc, enc, head, 0);
  SceneConfig scfg;
  const PatchGrid mr_grid(scfg.mr_h, scfg.mr_w, scfg.patch_size);
  const PatchGrid hr_grid(scfg.hr_h(), scfg.hr_w(), scfg.patch_size);
  const ScalePair pair(scfg.s, mr_grid, hr_grid);
  SAConfig sacfg;
  SpatialAffinity sa = init_spatial_affinity(sacfg, host.student, enc.dim);
  ParamSet trainable;
  merge_params(trainable, host.student, "student.");
  merge_params(trainable, host.head, "head.");
  AdamWState opt(AdamWConfig{.weight_decay = 0.04, .base_lr = 2.5e-4});

  std::vector<PairedScene> scenes;
  std::vector<Tensor> mr, hr;
  for (uint64_t i = 0; i < 16; ++i) {
    scenes.push_back(generate_scene(i, scfg));
    mr.push_back(patchify(scenes.back().mr, scfg.patch_size));
    hr.push_back(patchify(scenes.back().hr, scfg.patch_size));
  }
  std::vector<SceneBatchItem> batch;
  for (size_t i = 0; i < 16; ++i) batch.push_back({&mr[i], &hr[i]});

  uint64_t step = 0;
  for (auto _ : state) {
    Rng step_rng = Rng(0).fork(0x52).fork(step++);
    const auto r = train_step(batch, host, trainable, opt, 2.5e-4,
                              with_sa ? &sa : nullptr, mr_grid, pair, step_rng);
    benchmark::DoNotOptimize(r.composite_loss);
  }
}
BENCHMARK(BM_train_step)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
