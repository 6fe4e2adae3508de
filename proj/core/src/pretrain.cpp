#include "xssl/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "xssl/optim.hpp"
#include "xssl/patch_grid.hpp"
#include "xssl/ssl_hosts.hpp"

namespace xssl {

namespace {

// Stream tags for per-purpose rng forks; every draw in a run is addressed
// by (seed, tag, step/epoch, scene slot), so runs are resumable and
// attaching extra consumers never shifts existing streams.
constexpr uint64_t kShuffleStream = 0x51;
constexpr uint64_t kStepStream = 0x52;
constexpr uint64_t kCropStream = 0x53;

}  // namespace

SceneStore::SceneStore(Dataset ds) : ds_(std::move(ds)) {
  const int64_t n = size();
  mr_cache_.resize(static_cast<size_t>(n));
  hr_cache_.resize(static_cast<size_t>(n));
  false_hr_cache_.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    mr_cache_[static_cast<size_t>(i)] = patchify(ds_.scenes[static_cast<size_t>(i)].mr, ds_.cfg.patch_size);
}

const Tensor& SceneStore::mr_rows(int64_t i) { return mr_cache_[static_cast<size_t>(i)]; }

const Tensor& SceneStore::hr_rows(int64_t i) {
  ++hr_payload_reads_;
  Tensor& slot = hr_cache_[static_cast<size_t>(i)];
  if (!slot.defined())
    slot = patchify(ds_.scenes[static_cast<size_t>(i)].hr, ds_.cfg.patch_size);
  return slot;
}

const Tensor& SceneStore::false_hr_rows(int64_t i) {
  Tensor& slot = false_hr_cache_[static_cast<size_t>(i)];
  if (!slot.defined())
    slot = patchify(make_false_hr(ds_.scenes[static_cast<size_t>(i)].mr, ds_.cfg.s),
                    ds_.cfg.patch_size);
  return slot;
}

Tensor SceneStore::hr_crop_rows(int64_t i, Rng& rng) {
  ++hr_payload_reads_;
  const PairedScene& scene = ds_.scenes[static_cast<size_t>(i)];
  const int64_t ch = ds_.cfg.mr_h, cw = ds_.cfg.mr_w;
  const int64_t y0 = rng.uniform_int(0, scene.hr.height - ch);
  const int64_t x0 = rng.uniform_int(0, scene.hr.width - cw);
  Raster crop(scene.hr.channels, ch, cw);
  for (int64_t c = 0; c < crop.channels; ++c)
    for (int64_t y = 0; y < ch; ++y)
      for (int64_t x = 0; x < cw; ++x) crop.at(c, y, x) = scene.hr.at(c, y0 + y, x0 + x);
  return patchify(crop, ds_.cfg.patch_size);
}

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& metrics) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "step,lr,host_loss,gram_loss,composite_loss,wall_ms\n";
  for (const StepMetrics& m : metrics) {
    out << m.step << "," << format_double(m.lr) << "," << format_double(m.host_loss) << ","
        << format_double(m.gram_loss) << "," << format_double(m.composite_loss) << ","
        << format_double(m.wall_ms) << "\n";
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

namespace {

void put_scalar(ParamSet& records, const std::string& name, double v) {
  records.emplace(name, Tensor::scalar(v));
}

Checkpoint build_checkpoint(const TrainConfig& cfg, const HostState& state,
                            const SpatialAffinity* sa, const AdamWState& opt,
                            int64_t step) {
  Checkpoint ckpt;
  ckpt.config_digest = config_digest(cfg);
  merge_params(ckpt.records, state.student, "student.");
  merge_params(ckpt.records, state.target, "target.");
  merge_params(ckpt.records, state.head, "head.");
  if (sa != nullptr) {
    merge_params(ckpt.records, sa->hr_teacher, "hr_teacher.");
    if (sa->projection.defined()) ckpt.records.emplace("sa.projection", sa->projection);
  }
  for (const auto& [name, mom] : opt.moments()) {
    ckpt.records.emplace("opt.m." + name,
                         Tensor::from_data({static_cast<int64_t>(mom.m.size())}, mom.m));
    ckpt.records.emplace("opt.v." + name,
                         Tensor::from_data({static_cast<int64_t>(mom.v.size())}, mom.v));
  }
  put_scalar(ckpt.records, "meta.step", static_cast<double>(step));
  put_scalar(ckpt.records, "meta.opt_t", static_cast<double>(opt.t()));
  put_scalar(ckpt.records, "meta.host", cfg.host == HostKind::ijepa ? 0.0 : 1.0);
  put_scalar(ckpt.records, "meta.variant", static_cast<double>(static_cast<int>(cfg.variant)));
  put_scalar(ckpt.records, "meta.encoder.channels", static_cast<double>(cfg.encoder.in_channels));
  put_scalar(ckpt.records, "meta.encoder.patch", static_cast<double>(cfg.encoder.patch_size));
  put_scalar(ckpt.records, "meta.encoder.dim", static_cast<double>(cfg.encoder.dim));
  put_scalar(ckpt.records, "meta.encoder.depth", static_cast<double>(cfg.encoder.depth));
  put_scalar(ckpt.records, "meta.encoder.heads", static_cast<double>(cfg.encoder.heads));
  put_scalar(ckpt.records, "meta.encoder.mlp_ratio", static_cast<double>(cfg.encoder.mlp_ratio));
  put_scalar(ckpt.records, "meta.head.dim", static_cast<double>(cfg.head.dim));
  put_scalar(ckpt.records, "meta.head.depth", static_cast<double>(cfg.head.depth));
  put_scalar(ckpt.records, "meta.head.heads", static_cast<double>(cfg.head.heads));
  put_scalar(ckpt.records, "meta.head.mlp_ratio", static_cast<double>(cfg.head.mlp_ratio));
  return ckpt;
}

void restore_group(ParamSet& dst, const Checkpoint& ckpt, const std::string& prefix) {
  const ParamSet loaded = ckpt.group(prefix);
  if (loaded.size() != dst.size())
    throw std::runtime_error("checkpoint group '" + prefix + "' has " +
                             std::to_string(loaded.size()) + " records, expected " +
                             std::to_string(dst.size()));
  for (auto& [name, t] : dst) {
    auto it = loaded.find(name);
    if (it == loaded.end() || it->second.shape() != t.shape())
      throw std::runtime_error("checkpoint group '" + prefix + "' missing or mismatched '" +
                               name + "'");
    std::copy_n(it->second.data(), t.size(), t.data());
  }
}

}  // namespace

LoadedEncoder load_encoder(const Checkpoint& ckpt) {
  LoadedEncoder enc;
  enc.cfg.in_channels = static_cast<int64_t>(ckpt.scalar("meta.encoder.channels"));
  enc.cfg.patch_size = static_cast<int64_t>(ckpt.scalar("meta.encoder.patch"));
  enc.cfg.dim = static_cast<int64_t>(ckpt.scalar("meta.encoder.dim"));
  enc.cfg.depth = static_cast<int64_t>(ckpt.scalar("meta.encoder.depth"));
  enc.cfg.heads = static_cast<int64_t>(ckpt.scalar("meta.encoder.heads"));
  enc.cfg.mlp_ratio = static_cast<int64_t>(ckpt.scalar("meta.encoder.mlp_ratio"));
  enc.params = ckpt.group("student");
  if (enc.params.empty()) throw std::runtime_error("checkpoint has no student encoder records");
  return enc;
}

PretrainOutcome run_pretrain(const TrainConfig& cfg, const std::string& resume_from) {
  if (cfg.batch < 1) throw std::invalid_argument("pretrain: batch must be >= 1");
  if (cfg.epochs < 1) throw std::invalid_argument("pretrain: epochs must be >= 1");
  if (cfg.data_path.empty()) throw std::invalid_argument("pretrain: no dataset path");

  SceneStore store(read_dataset(cfg.data_path));
  const SceneConfig& scfg = store.dataset().cfg;
  if (scfg.mr_h % cfg.encoder.patch_size != 0 || scfg.mr_w % cfg.encoder.patch_size != 0)
    throw std::invalid_argument("pretrain: encoder patch size does not divide the MR dims");
  if (cfg.uses_sa() && scfg.s != cfg.sa.s)
    throw std::invalid_argument("pretrain: dataset scale s=" + std::to_string(scfg.s) +
                                " != sa.s=" + std::to_string(cfg.sa.s));

  const PatchGrid mr_grid(scfg.mr_h, scfg.mr_w, cfg.encoder.patch_size);
  const PatchGrid hr_grid(scfg.hr_h(), scfg.hr_w(), cfg.encoder.patch_size);
  const ScalePair pair(scfg.s, mr_grid, hr_grid);
  // hr_only with crops trains on MR-sized inputs; without crops it runs at
  // the full HR grid.
  const PatchGrid input_grid =
      (cfg.variant == Variant::hr_only && !cfg.hr_only_crop) ? hr_grid : mr_grid;

  const int64_t n_scenes = store.size();
  const int64_t steps_per_epoch = n_scenes / cfg.batch;
  if (steps_per_epoch < 1)
    throw std::invalid_argument("pretrain: batch larger than the dataset");
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  const int64_t warmup_steps = std::llround(cfg.warmup_frac * static_cast<double>(total_steps));

  HostState state = init_host_state(cfg.host_cfg, cfg.encoder, cfg.head, cfg.seed);
  SpatialAffinity sa;
  if (cfg.uses_sa()) sa = init_spatial_affinity(cfg.sa, state.student, cfg.encoder.dim);

  ParamSet trainable;
  merge_params(trainable, state.student, "student.");
  merge_params(trainable, state.head, "head.");
  if (cfg.uses_sa() && sa.projection.defined()) trainable.emplace("sa.projection", sa.projection);

  AdamWState opt(AdamWConfig{.weight_decay = cfg.weight_decay, .base_lr = cfg.lr});

  int64_t start_step = 0;
  if (!resume_from.empty()) {
    const Checkpoint ckpt = read_checkpoint(resume_from);
    if (ckpt.config_digest != config_digest(cfg))
      throw std::runtime_error("resume: checkpoint config digest " +
                               std::to_string(ckpt.config_digest) + " != current config " +
                               std::to_string(config_digest(cfg)));
    restore_group(state.student, ckpt, "student");
    restore_group(state.target, ckpt, "target");
    restore_group(state.head, ckpt, "head");
    if (cfg.uses_sa()) {
      restore_group(sa.hr_teacher, ckpt, "hr_teacher");
      if (sa.projection.defined()) {
        auto it = ckpt.records.find("sa.projection");
        if (it == ckpt.records.end())
          throw std::runtime_error("resume: checkpoint lacks sa.projection");
        std::copy_n(it->second.data(), sa.projection.size(), sa.projection.data());
      }
    }
    std::map<std::string, AdamWState::Moments> moments;
    for (const auto& [name, t] : trainable) {
      auto mit = ckpt.records.find("opt.m." + name);
      auto vit = ckpt.records.find("opt.v." + name);
      if (mit == ckpt.records.end() || vit == ckpt.records.end())
        throw std::runtime_error("resume: checkpoint lacks optimizer moments for '" + name + "'");
      moments[name] = {
          std::vector<double>(mit->second.data(), mit->second.data() + mit->second.size()),
          std::vector<double>(vit->second.data(), vit->second.data() + vit->second.size())};
    }
    opt.restore(static_cast<int64_t>(ckpt.scalar("meta.opt_t")), std::move(moments));
    start_step = static_cast<int64_t>(ckpt.scalar("meta.step"));
  }

  std::filesystem::create_directories(cfg.out_dir);
  const std::string ckpt_path = cfg.out_dir + "/checkpoint.xssl";
  const std::string metrics_path = cfg.out_dir + "/metrics.csv";
  const std::string manifest_path = cfg.out_dir + "/manifest.txt";
  const std::string started = utc_timestamp();

  const Rng root(cfg.seed);
  const int64_t stop_step =
      cfg.stop_after_steps > 0 ? std::min(cfg.stop_after_steps, total_steps) : total_steps;

  PretrainOutcome outcome;
  std::vector<int64_t> epoch_order;
  int64_t epoch_of_order = -1;
  for (int64_t step = start_step; step < stop_step; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const int64_t epoch = step / steps_per_epoch;
    const int64_t slot = step % steps_per_epoch;
    if (epoch != epoch_of_order) {
      Rng shuffle_rng = root.fork(kShuffleStream).fork(static_cast<uint64_t>(epoch));
      epoch_order = shuffle_rng.permutation(n_scenes);
      epoch_of_order = epoch;
    }

    std::vector<Tensor> crop_storage;  // keeps hr_only crop rows alive
    std::vector<SceneBatchItem> batch;
    batch.reserve(static_cast<size_t>(cfg.batch));
    if (cfg.variant == Variant::hr_only && cfg.hr_only_crop)
      crop_storage.reserve(static_cast<size_t>(cfg.batch));
    for (int64_t b = 0; b < cfg.batch; ++b) {
      const int64_t scene = epoch_order[static_cast<size_t>(slot * cfg.batch + b)];
      SceneBatchItem item;
      switch (cfg.variant) {
        case Variant::mr_only:
          item.input_rows = &store.mr_rows(scene);
          break;
        case Variant::hr_only:
          if (cfg.hr_only_crop) {
            Rng crop_rng = root.fork(kCropStream)
                               .fork(static_cast<uint64_t>(step))
                               .fork(static_cast<uint64_t>(b));
            crop_storage.push_back(store.hr_crop_rows(scene, crop_rng));
            item.input_rows = &crop_storage.back();
          } else {
            item.input_rows = &store.hr_rows(scene);
          }
          break;
        case Variant::sa:
          item.input_rows = &store.mr_rows(scene);
          item.hr_rows = &store.hr_rows(scene);
          break;
        case Variant::sa_false_hr:
          item.input_rows = &store.mr_rows(scene);
          item.hr_rows = &store.false_hr_rows(scene);
          break;
      }
      batch.push_back(item);
    }

    const double lr = cosine_lr(step, total_steps, cfg.lr, warmup_steps);
    Rng step_rng = root.fork(kStepStream).fork(static_cast<uint64_t>(step));
    TrainStepResult r;
    try {
      r = train_step(batch, state, trainable, opt, lr, cfg.uses_sa() ? &sa : nullptr,
                     input_grid, pair, step_rng);
    } catch (const NumericalError& e) {
      const std::string dump = cfg.out_dir + "/abort_state.xssl";
      write_checkpoint(dump,
                       build_checkpoint(cfg, state, cfg.uses_sa() ? &sa : nullptr, opt, step));
      throw NumericalError(std::string(e.what()) + " (state dumped to " + dump + ")");
    }

    StepMetrics m;
    m.step = step;
    m.lr = lr;
    m.host_loss = r.host_loss;
    m.gram_loss = r.gram_loss;
    m.composite_loss = r.composite_loss;
    m.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    outcome.metrics.push_back(m);
  }

  write_checkpoint(ckpt_path,
                   build_checkpoint(cfg, state, cfg.uses_sa() ? &sa : nullptr, opt, stop_step));
  write_metrics_csv(metrics_path, outcome.metrics);

  outcome.checkpoint_path = ckpt_path;
  outcome.metrics_path = metrics_path;
  outcome.manifest_path = manifest_path;
  outcome.hr_payload_reads = store.hr_payload_reads();
  outcome.config_digest = config_digest(cfg);

  auto epoch_mean = [&](int64_t epoch) {
    double sum = 0.0;
    int64_t n = 0;
    for (const StepMetrics& m : outcome.metrics)
      if (m.step / steps_per_epoch == epoch) {
        sum += m.composite_loss;
        ++n;
      }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
  };
  outcome.first_epoch_mean_composite = epoch_mean(0);
  outcome.last_epoch_mean_composite = epoch_mean((stop_step - 1) / steps_per_epoch);

  write_manifest(manifest_path,
                 {{"config_digest", std::to_string(outcome.config_digest)},
                  {"dataset_hash", std::to_string(file_content_hash(cfg.data_path))},
                  {"started_utc", started},
                  {"finished_utc", utc_timestamp()},
                  {"checkpoint", ckpt_path},
                  {"metrics", metrics_path},
                  {"steps", std::to_string(stop_step - start_step)},
                  {"hr_payload_reads", std::to_string(outcome.hr_payload_reads)}});
  std::ofstream cfg_echo(cfg.out_dir + "/config.txt", std::ios::trunc);
  cfg_echo << canonical_config_text(cfg);
  return outcome;
}

}  // namespace xssl
