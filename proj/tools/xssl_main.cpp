// xssl: cross-scale self-supervised pretraining workbench.
//
// Subcommands: gen-data, pretrain, probe, cluster, gradcheck, matrix.
// Exit codes: 0 success, 1 validation error, 2 numerical abort.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "xssl/checkpoint.hpp"
#include "xssl/config.hpp"
#include "xssl/eval_probe.hpp"
#include "xssl/experiments.hpp"
#include "xssl/pretrain.hpp"
#include "xssl/synth_data.hpp"

namespace fs = std::filesystem;
using namespace xssl;

namespace {

// Defaults mirror SceneConfig{} so the desk dataset is defined in one place.
struct GenDataArgs {
  SceneConfig desk{};
  std::string out_dir = "data";
  uint64_t seed = 0;
  int64_t train_scenes = 512;
  int64_t probe_train_scenes = 128;
  int64_t probe_test_scenes = 128;
  int64_t mr_size = desk.mr_h;
  int64_t s = desk.s;
  int64_t patch = desk.patch_size;
  int64_t k_classes = desk.k_classes;
  double texture_amp = desk.texture_amp;
  double blur_sigma = desk.sensor.blur_sigma;
  double noise_sigma = desk.sensor.noise_sigma;
  double gain_jitter = desk.sensor.gain_hi - 1.0;
  double offset_jitter = desk.sensor.offset_hi;
  bool force = false;
};

void write_split(const std::string& path, const SceneConfig& cfg, uint64_t seed_base,
                 int64_t count) {
  Dataset ds;
  ds.cfg = cfg;
  ds.scenes.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i)
    ds.scenes.push_back(generate_scene(seed_base + static_cast<uint64_t>(i), cfg));
  write_dataset(path, ds);
  write_manifest(path + ".manifest",
                 {{"scenes", std::to_string(count)},
                  {"seed_base", std::to_string(seed_base)},
                  {"mr_h", std::to_string(cfg.mr_h)},
                  {"mr_w", std::to_string(cfg.mr_w)},
                  {"s", std::to_string(cfg.s)},
                  {"patch_size", std::to_string(cfg.patch_size)},
                  {"k_classes", std::to_string(cfg.k_classes)},
                  {"texture_amp", format_double(cfg.texture_amp)},
                  {"blur_sigma", format_double(cfg.sensor.blur_sigma)},
                  {"noise_sigma", format_double(cfg.sensor.noise_sigma)},
                  {"gain_lo", format_double(cfg.sensor.gain_lo)},
                  {"gain_hi", format_double(cfg.sensor.gain_hi)},
                  {"offset_lo", format_double(cfg.sensor.offset_lo)},
                  {"offset_hi", format_double(cfg.sensor.offset_hi)},
                  {"content_hash", std::to_string(file_content_hash(path))}});
}

int cmd_gen_data(const GenDataArgs& args) {
  if (args.train_scenes <= 0 || args.probe_train_scenes <= 0 || args.probe_test_scenes <= 0) {
    std::cerr << "gen-data: scene counts must be positive\n";
    return 1;
  }
  SceneConfig cfg;
  cfg.k_classes = args.k_classes;
  cfg.mr_h = cfg.mr_w = args.mr_size;
  cfg.s = args.s;
  cfg.patch_size = args.patch;
  cfg.texture_amp = args.texture_amp;
  cfg.sensor.blur_sigma = args.blur_sigma;
  cfg.sensor.noise_sigma = args.noise_sigma;
  cfg.sensor.gain_lo = 1.0 - args.gain_jitter;
  cfg.sensor.gain_hi = 1.0 + args.gain_jitter;
  cfg.sensor.offset_lo = -args.offset_jitter;
  cfg.sensor.offset_hi = args.offset_jitter;
  cfg.sensor.s = args.s;

  const std::string train = args.out_dir + "/train.xsds";
  const std::string ptrain = args.out_dir + "/probe_train.xsds";
  const std::string ptest = args.out_dir + "/probe_test.xsds";
  for (const std::string& p : {train, ptrain, ptest}) {
    if (fs::exists(p) && !args.force) {
      std::cerr << "gen-data: '" << p << "' exists (use --force to overwrite)\n";
      return 1;
    }
  }
  fs::create_directories(args.out_dir);
  // Disjoint seed ranges per split.
  const uint64_t base = args.seed * 1000000ull;
  write_split(train, cfg, base, args.train_scenes);
  write_split(ptrain, cfg, base + 500000ull, args.probe_train_scenes);
  write_split(ptest, cfg, base + 700000ull, args.probe_test_scenes);
  std::cout << "wrote " << train << " (" << args.train_scenes << "), " << ptrain << " ("
            << args.probe_train_scenes << "), " << ptest << " (" << args.probe_test_scenes
            << ")\n";
  return 0;
}

TrainConfig resolve_train_config(const std::string& config_path, const std::string& host,
                                 int64_t seed, const std::string& out_dir) {
  TrainConfig cfg =
      config_path.empty() ? default_config(host_from_string(host)) : load_config_file(config_path);
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-scale self-supervised pretraining workbench"};
  app.require_subcommand(1);

  // gen-data
  GenDataArgs gen;
  auto* cgen = app.add_subcommand("gen-data", "generate synthetic HR/MR scene datasets");
  cgen->add_option("--out", gen.out_dir, "output directory");
  cgen->add_option("--seed", gen.seed, "dataset seed");
  cgen->add_option("--scenes", gen.train_scenes, "training scenes");
  cgen->add_option("--probe-train-scenes", gen.probe_train_scenes, "probe training scenes");
  cgen->add_option("--probe-test-scenes", gen.probe_test_scenes, "probe test scenes");
  cgen->add_option("--mr-size", gen.mr_size, "MR image height/width");
  cgen->add_option("--scale", gen.s, "HR/MR scale factor s");
  cgen->add_option("--patch", gen.patch, "MR patch size (label granularity)");
  cgen->add_option("--classes", gen.k_classes, "number of classes");
  cgen->add_option("--texture-amp", gen.texture_amp, "HR-only texture amplitude");
  cgen->add_option("--blur-sigma", gen.blur_sigma, "sensor blur sigma");
  cgen->add_option("--noise-sigma", gen.noise_sigma, "sensor noise sigma");
  cgen->add_option("--gain-jitter", gen.gain_jitter, "sensor gain jitter half-range");
  cgen->add_option("--offset-jitter", gen.offset_jitter, "sensor offset jitter half-range");
  cgen->add_flag("--force", gen.force, "overwrite existing outputs");

  // pretrain
  std::string pre_config, pre_out, pre_host = "ijepa", pre_resume, pre_data, pre_variant;
  int64_t pre_seed = -1;
  auto* cpre = app.add_subcommand("pretrain", "run one pretraining configuration");
  cpre->add_option("--config", pre_config, "key=value config file");
  cpre->add_option("--host", pre_host, "host when no config file: ijepa|latentmim");
  cpre->add_option("--variant", pre_variant, "variant override: mr_only|hr_only|sa|sa_false_hr");
  cpre->add_option("--data", pre_data, "training dataset (.xsds)");
  cpre->add_option("--seed", pre_seed, "seed override");
  cpre->add_option("--out", pre_out, "output directory override");
  cpre->add_option("--resume", pre_resume, "checkpoint to resume from");

  // probe
  std::string probe_ckpt, probe_train, probe_test, probe_out = "probe_results.csv";
  std::vector<uint64_t> probe_seeds{0, 1, 2};
  auto* cprobe = app.add_subcommand("probe", "linear-probe a frozen checkpoint encoder");
  cprobe->add_option("--checkpoint", probe_ckpt, "checkpoint path")->required();
  cprobe->add_option("--probe-train", probe_train, "probe training dataset")->required();
  cprobe->add_option("--probe-test", probe_test, "probe test dataset")->required();
  cprobe->add_option("--seeds", probe_seeds, "probe head seeds");
  cprobe->add_option("--out", probe_out, "results CSV path");

  // cluster
  std::string cl_ckpt, cl_data, cl_out = "cluster_map.pgm";
  int64_t cl_scene = 0, cl_k = 3;
  auto* ccl = app.add_subcommand("cluster", "hierarchical-cluster patch representations");
  ccl->add_option("--checkpoint", cl_ckpt, "checkpoint path")->required();
  ccl->add_option("--data", cl_data, "dataset with the scene to cluster")->required();
  ccl->add_option("--scene", cl_scene, "scene index");
  ccl->add_option("-k,--clusters", cl_k, "number of clusters");
  ccl->add_option("--out", cl_out, "P5 map output path");

  // gradcheck
  auto* cgrad = app.add_subcommand("gradcheck", "finite-difference check of every op");

  // matrix
  std::string mx_experiment, mx_data = "data", mx_out = "runs";
  std::vector<uint64_t> mx_seeds{0, 1, 2};
  auto* cmx = app.add_subcommand("matrix", "run a comparison experiment grid");
  cmx->add_option("experiment", mx_experiment, "table1|table2|table3|table4")->required();
  cmx->add_option("--data", mx_data, "gen-data output directory");
  cmx->add_option("--out", mx_out, "runs output directory");
  cmx->add_option("--seeds", mx_seeds, "pretraining seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cgen->parsed()) return cmd_gen_data(gen);

    if (cpre->parsed()) {
      TrainConfig cfg = resolve_train_config(pre_config, pre_host, pre_seed, pre_out);
      if (!pre_data.empty()) cfg.data_path = pre_data;
      if (!pre_variant.empty()) cfg.variant = variant_from_string(pre_variant);
      const PretrainOutcome out = run_pretrain(cfg, pre_resume);
      std::cout << "checkpoint: " << out.checkpoint_path << "\nmetrics: " << out.metrics_path
                << "\ncomposite " << format_double(out.first_epoch_mean_composite) << " -> "
                << format_double(out.last_epoch_mean_composite) << "\n";
      return 0;
    }

    if (cprobe->parsed()) {
      const auto outs = run_probe_on_checkpoint(probe_ckpt, probe_train, probe_test, probe_seeds);
      const Checkpoint ckpt = read_checkpoint(probe_ckpt);
      const auto variant =
          to_string(static_cast<Variant>(static_cast<int>(ckpt.scalar("meta.variant"))));
      write_probe_csv(probe_out, variant, outs);
      for (const ProbeOutcome& o : outs) {
        std::cout << "probe seed " << o.probe_seed << ": miou " << format_double(o.miou)
                  << " (encoder checksum " << o.encoder_checksum_before
                  << (o.encoder_checksum_before == o.encoder_checksum_after ? ", frozen"
                                                                            : ", MUTATED")
                  << ")\n";
      }
      std::cout << "results: " << probe_out << "\n";
      return 0;
    }

    if (ccl->parsed()) {
      const Checkpoint ckpt = read_checkpoint(cl_ckpt);
      const LoadedEncoder enc = load_encoder(ckpt);
      const Dataset ds = read_dataset(cl_data);
      if (cl_scene < 0 || cl_scene >= static_cast<int64_t>(ds.scenes.size())) {
        std::cerr << "cluster: scene index out of range\n";
        return 1;
      }
      const PairedScene& scene = ds.scenes[static_cast<size_t>(cl_scene)];
      const Tensor reps = encode_scene_mr(enc.params, enc.cfg, scene);
      const auto labels = hierarchical_cluster(reps, cl_k);
      const PatchGrid grid(ds.cfg.mr_h, ds.cfg.mr_w, enc.cfg.patch_size);
      export_cluster_map(labels, grid.grid_h, grid.grid_w, cl_k, cl_out);
      std::cout << "wrote " << cl_out << " (" << grid.grid_w << "x" << grid.grid_h << ", k="
                << cl_k << ")\n";
      return 0;
    }

    if (cgrad->parsed()) {
      const GradcheckReport report = run_gradcheck();
      for (const GradcheckEntry& e : report.entries)
        std::cout << (e.pass ? "PASS" : "FAIL") << "  " << e.name << "  max_rel_err="
                  << format_double(e.max_rel_err) << "  tol=" << format_double(e.tolerance)
                  << "\n";
      std::cout << (report.all_pass ? "gradcheck: all passed" : "gradcheck: FAILURES") << " ("
                << format_double(report.elapsed_s) << " s)\n";
      return report.all_pass ? 0 : 1;
    }

    if (cmx->parsed()) {
      const auto specs = matrix_cells(mx_experiment, mx_data, mx_out, mx_seeds);
      const auto cells = run_cells(specs, mx_data + "/probe_train.xsds",
                                   mx_data + "/probe_test.xsds", resolve_thread_count(),
                                   &std::cout);
      const std::string csv = mx_out + "/" + mx_experiment + ".csv";
      fs::create_directories(mx_out);
      write_matrix_csv(csv, cells);
      std::cout << "wrote " << csv << "\n";
      return 0;
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
