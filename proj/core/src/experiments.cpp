#include "xssl/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include "xssl/optim.hpp"
#include "xssl/spatial_affinity.hpp"
#include "xssl/ssl_hosts.hpp"

namespace xssl {

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0,
                     bool requires_grad = true) {
  Tensor t(std::move(shape), Tensor::uninit_t{});
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.uniform(-1.0, 1.0);
  t.set_requires_grad(requires_grad);
  return t;
}

// Reduce an op output to a scalar whose gradient touches every coordinate.
Tensor to_loss(GradTape& tape, const Tensor& y, const Tensor& target) {
  return ops::mse(tape, y, target);
}

struct CheckCase {
  std::string name;
  double tolerance;
  std::function<FdCheckResult()> run;
};

FdCheckResult fd_over(const std::function<Tensor(GradTape&)>& build,
                      std::vector<Tensor> params) {
  return finite_difference_check(build, params, 1e-6);
}

}  // namespace

GradcheckReport run_gradcheck(uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng root(seed);
  std::vector<CheckCase> cases;
  constexpr double kOpTol = 1e-5;
  constexpr double kModuleTol = 1e-4;

  auto add_case = [&](std::string name, double tol, std::function<FdCheckResult()> fn) {
    cases.push_back({std::move(name), tol, std::move(fn)});
  };

  {
    Rng rng = root.fork(1);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    Tensor tgt = random_tensor({3, 2}, rng, 1.0, false);
    add_case("matmul", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::matmul(t, a, b), tgt); }, {a, b});
    });
  }
  {
    Rng rng = root.fork(2);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({2, 4}, rng);
    Tensor tgt = random_tensor({3, 2}, rng, 1.0, false);
    add_case("matmul_nt", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::matmul_nt(t, a, b), tgt); }, {a, b});
    });
  }
  {
    Rng rng = root.fork(3);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    Tensor v = random_tensor({4}, rng);
    Tensor tgt = random_tensor({3, 4}, rng, 1.0, false);
    add_case("add", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::add(t, a, b), tgt); }, {a, b});
    });
    add_case("add_row_broadcast", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::add(t, a, v), tgt); }, {a, v});
    });
    add_case("mul", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::mul(t, a, b), tgt); }, {a, b});
    });
    add_case("mul_row_broadcast", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::mul(t, a, v), tgt); }, {a, v});
    });
    add_case("scale", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::scale(t, a, 1.7), tgt); }, {a});
    });
  }
  {
    Rng rng = root.fork(4);
    Tensor a = random_tensor({3, 5}, rng, 2.0);
    Tensor tgt = random_tensor({3, 5}, rng, 1.0, false);
    add_case("softmax_rows", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::softmax_rows(t, a), tgt); }, {a});
    });
  }
  {
    Rng rng = root.fork(5);
    Tensor a = random_tensor({3, 6}, rng, 2.0);
    Tensor tgt = random_tensor({3, 6}, rng, 1.0, false);
    add_case("layer_norm", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::layer_norm(t, a), tgt); }, {a});
    });
  }
  {
    Rng rng = root.fork(6);
    Tensor a = random_tensor({3, 4}, rng, 2.0);
    Tensor tgt = random_tensor({3, 4}, rng, 1.0, false);
    add_case("gelu", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::gelu(t, a), tgt); }, {a});
    });
    add_case("l2_normalize_rows", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::l2_normalize_rows(t, a), tgt); }, {a});
    });
    Rng rng_t = root.fork(61);
    Tensor tt = random_tensor({4, 3}, rng_t, 1.0, false);
    add_case("transpose", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::transpose(t, a), tt); }, {a});
    });
  }
  {
    Rng rng = root.fork(7);
    Tensor a = random_tensor({3, 2}, rng), b = random_tensor({3, 3}, rng);
    Tensor tgt = random_tensor({3, 5}, rng, 1.0, false);
    add_case("concat_last_dim", kOpTol, [=]() {
      return fd_over(
          [=](GradTape& t) {
            std::vector<Tensor> parts{a, b};
            return to_loss(t, ops::concat_last_dim(t, parts), tgt);
          },
          {a, b});
    });
    Tensor c = random_tensor({2, 4}, rng), d = random_tensor({1, 4}, rng);
    Tensor tgt2 = random_tensor({3, 4}, rng, 1.0, false);
    add_case("concat_rows", kOpTol, [=]() {
      return fd_over(
          [=](GradTape& t) {
            std::vector<Tensor> parts{c, d};
            return to_loss(t, ops::concat_rows(t, parts), tgt2);
          },
          {c, d});
    });
  }
  {
    Rng rng = root.fork(8);
    Tensor a = random_tensor({3, 6}, rng);
    Tensor tgt = random_tensor({3, 3}, rng, 1.0, false);
    Tensor tgt_r = random_tensor({2, 6}, rng, 1.0, false);
    add_case("slice_cols", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::slice_cols(t, a, 1, 4), tgt); }, {a});
    });
    add_case("slice_rows", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::slice_rows(t, a, 1, 3), tgt_r); }, {a});
    });
    Tensor v = random_tensor({5}, rng);
    Tensor tgt_b = random_tensor({4, 5}, rng, 1.0, false);
    add_case("broadcast_rows", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return to_loss(t, ops::broadcast_rows(t, v, 4), tgt_b); }, {v});
    });
    Tensor m1 = random_tensor({3, 4}, rng), m2 = random_tensor({3, 4}, rng);
    add_case("mse", kOpTol, [=]() {
      return fd_over([=](GradTape& t) { return ops::mse(t, m1, m2); }, {m1, m2});
    });
  }
  // downsample_reps: all three methods, gradient through the input grid
  for (auto method : {DownsampleMethod::bilinear, DownsampleMethod::bicubic,
                      DownsampleMethod::linear_projection}) {
    Rng rng = root.fork(9 + static_cast<uint64_t>(method));
    const int64_t d = 3;
    Tensor hr = random_tensor({16, d}, rng);
    Tensor proj = init_projection(2, d);
    proj.set_requires_grad(true);
    Tensor tgt = random_tensor({4, d}, rng, 1.0, false);
    std::string name = std::string("downsample_reps_") + to_string(method);
    add_case(name, kOpTol, [=]() {
      std::vector<Tensor> params{hr};
      if (method == DownsampleMethod::linear_projection) params.push_back(proj);
      return fd_over(
          [=](GradTape& t) {
            RepGrid in(hr, 4, 4);
            RepGrid out = downsample_reps(t, in, method, 2,
                                          method == DownsampleMethod::linear_projection
                                              ? &proj
                                              : nullptr);
            return to_loss(t, out.z, tgt);
          },
          params);
    });
  }
  {
    Rng rng = root.fork(20);
    Tensor zs = random_tensor({4, 3}, rng), zt = random_tensor({4, 3}, rng);
    add_case("gram_loss", kModuleTol, [=]() {
      return fd_over(
          [=](GradTape& t) { return gram_loss(t, RepGrid(zs, 2, 2), RepGrid(zt, 2, 2)); },
          {zs, zt});
    });
  }

  // module-level: encoder, heads, hosts, composites on a tiny instance
  const EncoderConfig enc{.in_channels = 2, .patch_size = 2, .dim = 8, .depth = 1, .heads = 2,
                          .mlp_ratio = 2};
  const HeadConfig headc{.dim = 8, .depth = 1, .heads = 2, .mlp_ratio = 2};
  const PatchGrid mr_grid(8, 8, 2);    // 4x4 patch grid
  const PatchGrid hr_grid(16, 16, 2);  // 8x8 patch grid
  const ScalePair pair(2, mr_grid, hr_grid);

  auto host_case = [&](HostKind kind, uint64_t case_seed) {
    Rng rng = root.fork(case_seed);
    HostConfig hc;
    hc.kind = kind;
    hc.visible_ratio = 0.25;
    hc.blocks = {.n_targets = 1, .target_scale_min = 0.2, .target_scale_max = 0.3};
    HostState state = init_host_state(hc, enc, headc, rng.next_u64());
    Tensor mr_rows = random_tensor({mr_grid.num_patches(), enc.patch_row_width()}, rng, 0.5, false);
    Tensor hr_rows = random_tensor({hr_grid.num_patches(), enc.patch_row_width()}, rng, 0.5, false);
    Rng mask_rng = rng.fork(1);
    SampleMask mask = sample_host_mask(hc, mr_grid, mask_rng);
    SAConfig sacfg;
    sacfg.downsample = DownsampleMethod::linear_projection;
    auto sa = std::make_shared<SpatialAffinity>(
        init_spatial_affinity(sacfg, state.student, enc.dim));
    auto st = std::make_shared<HostState>(std::move(state));
    std::vector<Tensor> params;
    for (auto& [n, t] : st->student) params.push_back(t);
    for (auto& [n, t] : st->head) params.push_back(t);
    params.push_back(sa->projection);
    const std::string host_name = to_string(kind);
    add_case("host_loss_" + host_name, kModuleTol, [=]() {
      return fd_over(
          [=](GradTape& t) { return host_loss(t, mr_rows, mask, *st, mr_grid); }, params);
    });
    add_case("composite_" + host_name, kModuleTol, [=]() {
      return fd_over(
          [=](GradTape& t) {
            Tensor h = host_loss(t, mr_rows, mask, *st, mr_grid);
            Tensor g = sa_forward(t, mr_rows, hr_rows, mask.visible, st->student, enc, *sa, pair);
            return composite_loss(t, h, g, 0.7);
          },
          params);
    });
  };
  host_case(HostKind::ijepa, 30);
  host_case(HostKind::latentmim, 31);

  {
    Rng rng = root.fork(40);
    HostConfig hc;
    HostState state = init_host_state(hc, enc, headc, rng.next_u64());
    Tensor reps = random_tensor({3, enc.dim}, rng, 0.5);
    std::vector<int64_t> ctx_pos{0, 5, 9}, mask_pos{2, 7};
    auto st = std::make_shared<HostState>(std::move(state));
    std::vector<Tensor> eparams;
    for (auto& [n, t] : st->student) eparams.push_back(t);
    Tensor patch_rows = random_tensor({3, enc.patch_row_width()}, rng, 0.5, false);
    Tensor tgt_e = random_tensor({3, enc.dim}, rng, 1.0, false);
    add_case("encode", kModuleTol, [=]() {
      return fd_over(
          [=](GradTape& t) {
            return to_loss(t, encode(t, st->student, enc, patch_rows, ctx_pos, mr_grid), tgt_e);
          },
          eparams);
    });
    Rng rng2 = root.fork(41);
    ParamSet pred = init_predictor_params(enc, headc, rng2);
    set_requires_grad(pred, true);
    auto predp = std::make_shared<ParamSet>(std::move(pred));
    std::vector<Tensor> pparams{reps};
    for (auto& [n, t] : *predp) pparams.push_back(t);
    Tensor tgt_m = random_tensor({2, enc.dim}, rng2, 1.0, false);
    add_case("predict_selfattn", kModuleTol, [=]() {
      return fd_over(
          [=](GradTape& t) {
            return to_loss(
                t, predict_selfattn(t, *predp, headc, reps, ctx_pos, mask_pos, mr_grid), tgt_m);
          },
          pparams);
    });
    Rng rng3 = root.fork(42);
    ParamSet dec = init_decoder_params(enc, headc, rng3);
    set_requires_grad(dec, true);
    auto decp = std::make_shared<ParamSet>(std::move(dec));
    std::vector<Tensor> dparams{reps};
    for (auto& [n, t] : *decp) dparams.push_back(t);
    add_case("decode_crossattn", kModuleTol, [=]() {
      return fd_over(
          [=](GradTape& t) {
            return to_loss(
                t, decode_crossattn(t, *decp, headc, reps, ctx_pos, mask_pos, mr_grid), tgt_m);
          },
          dparams);
    });
  }

  // probe head closed-form gradient vs finite differences
  {
    Rng rng = root.fork(50);
    const int64_t n = 6, d = 4, k = 3;
    Tensor x = random_tensor({n, d}, rng, 1.0, false);
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < n; ++i) labels.push_back(rng.uniform_int(0, k - 1));
    Tensor w = random_tensor({d, k}, rng, 0.5, false);
    Tensor b = random_tensor({k}, rng, 0.5, false);
    add_case("probe_softmax_ce", kOpTol, [=]() mutable {
      std::vector<double> gw(static_cast<size_t>(d * k)), gb(static_cast<size_t>(k));
      probe_loss_and_grads(x, labels, w, b, gw.data(), gb.data(), k);
      FdCheckResult r;
      const double h = 1e-6;
      auto eval = [&]() {
        std::vector<double> tw(static_cast<size_t>(d * k)), tb(static_cast<size_t>(k));
        return probe_loss_and_grads(x, labels, w, b, tw.data(), tb.data(), k);
      };
      auto check_coord = [&](double* slot, double analytic, const char* which, int64_t idx) {
        const double saved = *slot;
        *slot = saved + h;
        const double fp = eval();
        *slot = saved - h;
        const double fm = eval();
        *slot = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
        if (err > r.max_rel_err) {
          r.max_rel_err = err;
          r.worst_param = which;
          r.worst_index = idx;
        }
      };
      for (int64_t i = 0; i < d * k; ++i) check_coord(w.data() + i, gw[static_cast<size_t>(i)], "w", i);
      for (int64_t i = 0; i < k; ++i) check_coord(b.data() + i, gb[static_cast<size_t>(i)], "b", i);
      return r;
    });
  }

  GradcheckReport report;
  report.all_pass = true;
  for (CheckCase& c : cases) {
    GradcheckEntry e;
    e.name = c.name;
    e.tolerance = c.tolerance;
    e.max_rel_err = c.run().max_rel_err;
    e.pass = e.max_rel_err <= c.tolerance;
    report.all_pass = report.all_pass && e.pass;
    report.entries.push_back(std::move(e));
  }
  report.elapsed_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

namespace {

// Stack full-grid representations and labels over a dataset split.
void build_probe_features(const ParamSet& encoder, const EncoderConfig& enc_cfg,
                          const Dataset& ds, Tensor& features, std::vector<int64_t>& labels) {
  if (ds.scenes.empty()) throw std::invalid_argument("probe: empty dataset");
  const PatchGrid grid(ds.cfg.mr_h, ds.cfg.mr_w, enc_cfg.patch_size);
  if (grid.grid_h != ds.cfg.labels_h() || grid.grid_w != ds.cfg.labels_w())
    throw std::invalid_argument(
        "probe: label grid does not match the encoder patch grid (labels are per patch)");
  const int64_t n_per = grid.num_patches();
  const int64_t total = n_per * static_cast<int64_t>(ds.scenes.size());
  features = Tensor({total, enc_cfg.dim}, Tensor::uninit_t{});
  labels.clear();
  labels.reserve(static_cast<size_t>(total));
  for (size_t i = 0; i < ds.scenes.size(); ++i) {
    Tensor reps = encode_scene_mr(encoder, enc_cfg, ds.scenes[i]);
    std::copy_n(reps.data(), reps.size(),
                features.data() + static_cast<int64_t>(i) * n_per * enc_cfg.dim);
    for (int64_t l : ds.scenes[i].labels) labels.push_back(l);
  }
}

}  // namespace

ProbeOutcome run_probe(const ParamSet& encoder, const EncoderConfig& enc_cfg,
                       const Dataset& probe_train, const Dataset& probe_test,
                       const ProbeConfig& cfg) {
  ProbeOutcome out;
  out.probe_seed = cfg.seed;
  out.encoder_checksum_before = params_checksum(encoder);

  const int64_t k = probe_train.cfg.k_classes;
  Tensor train_x;
  std::vector<int64_t> train_y;
  build_probe_features(encoder, enc_cfg, probe_train, train_x, train_y);
  const ProbeHead head = train_probe(train_x, train_y, k, cfg);
  out.train_accuracy = probe_accuracy(head, train_x, train_y);

  Tensor test_x;
  std::vector<int64_t> test_y;
  build_probe_features(encoder, enc_cfg, probe_test, test_x, test_y);
  const auto preds = probe_predict(head, test_x);
  const MiouResult miou = compute_miou(preds, test_y, k);
  out.miou = miou.mean;
  out.per_class = miou.per_class;

  out.encoder_checksum_after = params_checksum(encoder);
  return out;
}

std::vector<ProbeOutcome> run_probe_on_checkpoint(const std::string& checkpoint_path,
                                                  const std::string& probe_train_path,
                                                  const std::string& probe_test_path,
                                                  std::span<const uint64_t> probe_seeds) {
  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  const LoadedEncoder enc = load_encoder(ckpt);
  const Dataset train = read_dataset(probe_train_path);
  const Dataset test = read_dataset(probe_test_path);
  std::vector<ProbeOutcome> outs;
  for (uint64_t seed : probe_seeds) {
    ProbeConfig pc;
    pc.seed = seed;
    outs.push_back(run_probe(enc.params, enc.cfg, train, test, pc));
  }
  return outs;
}

void write_probe_csv(const std::string& path, const std::string& model_variant,
                     std::span<const ProbeOutcome> outcomes) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "run_seed,model_variant,dataset_split,miou,per_class_ious\n";
  auto per_class_str = [](std::span<const double> ious) {
    std::string s;
    for (size_t i = 0; i < ious.size(); ++i) {
      if (i) s += ";";
      s += std::isnan(ious[i]) ? "absent" : format_double(ious[i]);
    }
    return s;
  };
  double sum = 0.0, mn = 1e300, mx = -1e300;
  for (const ProbeOutcome& o : outcomes) {
    out << o.probe_seed << "," << model_variant << ",probe_test," << format_double(o.miou)
        << "," << per_class_str(o.per_class) << "\n";
    sum += o.miou;
    mn = std::min(mn, o.miou);
    mx = std::max(mx, o.miou);
  }
  if (!outcomes.empty()) {
    const double mean = sum / static_cast<double>(outcomes.size());
    out << "summary," << model_variant << ",probe_test," << format_double(mean) << ",min="
        << format_double(mn) << ";max=" << format_double(mx) << "\n";
  }
}

std::vector<CellSpec> matrix_cells(const std::string& experiment, const std::string& data_dir,
                                   const std::string& out_dir,
                                   std::span<const uint64_t> seeds) {
  const std::string train_path = data_dir + "/train.xsds";
  auto make = [&](HostKind host, Variant variant, DownsampleMethod ds, SASampling sampling,
                  uint64_t seed, const std::string& cell_label) {
    TrainConfig cfg = default_config(host);
    cfg.variant = variant;
    cfg.seed = seed;
    cfg.data_path = train_path;
    cfg.sa.downsample = ds;
    cfg.sa.sampling = sampling;
    cfg.out_dir = out_dir + "/" + experiment + "/" + cell_label + "_s" + std::to_string(seed);
    CellSpec spec;
    spec.experiment = experiment;
    spec.cell = cell_label;
    spec.cfg = cfg;
    return spec;
  };

  std::vector<CellSpec> specs;
  if (experiment == "table1") {
    for (HostKind host : {HostKind::ijepa, HostKind::latentmim})
      for (Variant v : {Variant::mr_only, Variant::hr_only, Variant::sa})
        for (uint64_t s : seeds)
          specs.push_back(make(host, v, DownsampleMethod::bilinear, SASampling::host_default, s,
                               std::string(to_string(host)) + "/" + to_string(v)));
  } else if (experiment == "table2") {
    for (HostKind host : {HostKind::ijepa, HostKind::latentmim})
      for (Variant v : {Variant::sa, Variant::sa_false_hr})
        for (uint64_t s : seeds)
          specs.push_back(make(host, v, DownsampleMethod::bilinear, SASampling::host_default, s,
                               std::string(to_string(host)) + "/" + to_string(v)));
  } else if (experiment == "table3") {
    for (DownsampleMethod ds : {DownsampleMethod::bilinear, DownsampleMethod::bicubic,
                                DownsampleMethod::linear_projection})
      for (uint64_t s : seeds)
        specs.push_back(make(HostKind::ijepa, Variant::sa, ds, SASampling::host_default, s,
                             std::string("ijepa/sa_") + to_string(ds)));
  } else if (experiment == "table4") {
    for (SASampling sampling : {SASampling::host_default, SASampling::sa_block})
      for (uint64_t s : seeds)
        specs.push_back(make(HostKind::latentmim, Variant::sa, DownsampleMethod::bilinear,
                             sampling, s, std::string("latentmim/sa_") + to_string(sampling)));
  } else {
    throw std::invalid_argument("unknown experiment '" + experiment +
                                "' (expected table1..table4)");
  }
  return specs;
}

std::vector<CellOutcome> run_cells(std::span<const CellSpec> specs,
                                   const std::string& probe_train_path,
                                   const std::string& probe_test_path, int threads,
                                   std::ostream* log) {
  const Dataset probe_train = read_dataset(probe_train_path);
  const Dataset probe_test = read_dataset(probe_test_path);

  std::vector<CellOutcome> outcomes(specs.size());
  std::atomic<size_t> next{0};
  std::mutex log_mu;
  std::exception_ptr first_error;
  std::mutex err_mu;

  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      try {
        CellOutcome& out = outcomes[i];
        out.spec = specs[i];
        out.train = run_pretrain(specs[i].cfg);
        const Checkpoint ckpt = read_checkpoint(out.train.checkpoint_path);
        const LoadedEncoder enc = load_encoder(ckpt);
        ProbeConfig pc;  // fixed probe seed; run seeds vary by pretraining
        out.probe = run_probe(enc.params, enc.cfg, probe_train, probe_test, pc);
        if (log != nullptr) {
          std::lock_guard lock(log_mu);
          (*log) << specs[i].experiment << " " << specs[i].cell << " seed "
                 << specs[i].cfg.seed << ": loss " << out.train.first_epoch_mean_composite
                 << " -> " << out.train.last_epoch_mean_composite << ", miou "
                 << out.probe.miou << "\n"
                 << std::flush;
        }
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const int n_workers = std::max(1, std::min<int>(threads, static_cast<int>(specs.size())));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(n_workers));
  for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return outcomes;
}

void write_matrix_csv(const std::string& path, std::span<const CellOutcome> cells) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "experiment,host,variant,downsample,sampling,seed,miou\n";
  std::map<std::string, std::pair<double, int>> agg;
  for (const CellOutcome& c : cells) {
    const TrainConfig& cfg = c.spec.cfg;
    out << c.spec.experiment << "," << to_string(cfg.host) << "," << to_string(cfg.variant)
        << "," << to_string(cfg.sa.downsample) << "," << to_string(cfg.sa.sampling) << ","
        << cfg.seed << "," << format_double(c.probe.miou) << "\n";
    auto& [sum, n] = agg[c.spec.experiment + "," + std::string(to_string(cfg.host)) + "," +
                         to_string(cfg.variant) + "," + to_string(cfg.sa.downsample) + "," +
                         to_string(cfg.sa.sampling)];
    sum += c.probe.miou;
    ++n;
  }
  for (const auto& [key, sn] : agg)
    out << key << ",mean," << format_double(sn.first / sn.second) << "\n";
}

int resolve_thread_count() {
  if (const char* env = std::getenv("XSSL_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

}  // namespace xssl
