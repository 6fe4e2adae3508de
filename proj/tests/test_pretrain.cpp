#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "xssl/experiments.hpp"
#include "xssl/pretrain.hpp"

using namespace xssl;
namespace fs = std::filesystem;

namespace {

// Small shared dataset: 32 scenes, 16x16 MR, patch 4 -> 4x4 grid.
struct PretrainFixture {
  fs::path dir;
  std::string data_path;

  PretrainFixture() {
    dir = fs::temp_directory_path() / "xssl_pretrain_tests";
    fs::create_directories(dir);
    data_path = (dir / "train.xsds").string();
    if (!fs::exists(data_path)) {
      SceneConfig cfg;
      cfg.mr_h = cfg.mr_w = 16;
      cfg.patch_size = 4;
      Dataset ds;
      ds.cfg = cfg;
      for (uint64_t seed = 0; seed < 32; ++seed) ds.scenes.push_back(generate_scene(seed, cfg));
      write_dataset(data_path, ds);
    }
  }

  TrainConfig tiny_config(HostKind host, Variant variant, const std::string& out) const {
    TrainConfig cfg = default_config(host);
    cfg.variant = variant;
    cfg.data_path = data_path;
    cfg.out_dir = (dir / out).string();
    cfg.epochs = 2;
    cfg.batch = 8;
    cfg.encoder = EncoderConfig{.in_channels = 4, .patch_size = 4, .dim = 16, .depth = 1,
                                .heads = 2, .mlp_ratio = 2};
    cfg.head = HeadConfig{.dim = 16, .depth = 1, .heads = 2, .mlp_ratio = 2};
    cfg.host_cfg.visible_ratio = 0.25;
    cfg.host_cfg.blocks = {.n_targets = 2, .target_scale_min = 0.15, .target_scale_max = 0.25};
    cfg.lr = 1e-3;
    return cfg;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// CSV text with the wall_ms column removed (timings are not deterministic).
std::string strip_wall_ms(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    const size_t last = line.rfind(',');
    out += line.substr(0, last);
    out += "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("pretrain produces checkpoint, metrics, and manifest") {
  PretrainFixture f;
  const TrainConfig cfg = f.tiny_config(HostKind::ijepa, Variant::sa, "basic");
  const PretrainOutcome out = run_pretrain(cfg);
  CHECK(fs::exists(out.checkpoint_path));
  CHECK(fs::exists(out.metrics_path));
  CHECK(fs::exists(out.manifest_path));
  CHECK(out.metrics.size() == 8);  // 32 scenes / 8 batch * 2 epochs
  for (const StepMetrics& m : out.metrics) {
    CHECK(m.composite_loss >= 0.0);
    CHECK(m.host_loss >= 0.0);
  }
  const auto manifest = read_manifest(out.manifest_path);
  CHECK(manifest.at("config_digest") == std::to_string(config_digest(cfg)));
  CHECK(manifest.at("dataset_hash") == std::to_string(file_content_hash(cfg.data_path)));

  // checkpoint carries the digest and is self-describing
  const Checkpoint ckpt = read_checkpoint(out.checkpoint_path);
  CHECK(ckpt.config_digest == config_digest(cfg));
  const LoadedEncoder enc = load_encoder(ckpt);
  CHECK(enc.cfg.dim == 16);
  CHECK(enc.cfg.depth == 1);
}

TEST_CASE("repeated pretraining is byte-identical apart from timings") {
  PretrainFixture f;
  TrainConfig cfg = f.tiny_config(HostKind::latentmim, Variant::sa, "det_a");
  run_pretrain(cfg);
  TrainConfig cfg2 = cfg;
  cfg2.out_dir = (f.dir / "det_b").string();
  run_pretrain(cfg2);
  CHECK(read_file((f.dir / "det_a/checkpoint.xssl").string()) !=
        "");  // sanity: files exist and are nonempty
  // checkpoints differ only in the config digest (out.dir differs), so
  // compare the record payloads via re-serialization under a fixed digest
  Checkpoint a = read_checkpoint((f.dir / "det_a/checkpoint.xssl").string());
  Checkpoint b = read_checkpoint((f.dir / "det_b/checkpoint.xssl").string());
  REQUIRE(a.records.size() == b.records.size());
  auto ia = a.records.begin();
  for (const auto& [name, t] : b.records) {
    CHECK(ia->first == name);
    REQUIRE(ia->second.size() == t.size());
    const auto* pa = ia->second.data();
    for (int64_t i = 0; i < t.size(); ++i) CHECK(pa[i] == t.data()[i]);
    ++ia;
  }
  CHECK(strip_wall_ms(read_file((f.dir / "det_a/metrics.csv").string())) ==
        strip_wall_ms(read_file((f.dir / "det_b/metrics.csv").string())));
}

TEST_CASE("mr_only never reads HR payloads") {
  PretrainFixture f;
  const TrainConfig cfg = f.tiny_config(HostKind::ijepa, Variant::mr_only, "audit");
  const PretrainOutcome out = run_pretrain(cfg);
  CHECK(out.hr_payload_reads == 0);
}

TEST_CASE("sa and hr variants do read HR payloads, false-HR does not") {
  PretrainFixture f;
  CHECK(run_pretrain(f.tiny_config(HostKind::ijepa, Variant::sa, "audit_sa")).hr_payload_reads >
        0);
  CHECK(run_pretrain(f.tiny_config(HostKind::ijepa, Variant::hr_only, "audit_hr"))
            .hr_payload_reads > 0);
  CHECK(run_pretrain(f.tiny_config(HostKind::ijepa, Variant::sa_false_hr, "audit_fhr"))
            .hr_payload_reads == 0);
}

TEST_CASE("lambda 0 SA trajectory is bit-equal to mr_only under a shared seed") {
  PretrainFixture f;
  for (HostKind host : {HostKind::ijepa, HostKind::latentmim}) {
    CAPTURE(to_string(host));
    TrainConfig mr = f.tiny_config(host, Variant::mr_only, std::string("l0_mr_") + to_string(host));
    TrainConfig sa = f.tiny_config(host, Variant::sa, std::string("l0_sa_") + to_string(host));
    sa.sa.lambda = 0.0;
    const PretrainOutcome mr_out = run_pretrain(mr);
    const PretrainOutcome sa_out = run_pretrain(sa);
    REQUIRE(mr_out.metrics.size() == sa_out.metrics.size());
    for (size_t i = 0; i < mr_out.metrics.size(); ++i) {
      CHECK(mr_out.metrics[i].host_loss == sa_out.metrics[i].host_loss);
      CHECK(mr_out.metrics[i].composite_loss == sa_out.metrics[i].composite_loss);
    }
    // student, target, and head records agree bit-for-bit
    const Checkpoint a = read_checkpoint(mr_out.checkpoint_path);
    const Checkpoint b = read_checkpoint(sa_out.checkpoint_path);
    for (const std::string prefix : {"student", "target", "head"}) {
      const ParamSet pa = a.group(prefix);
      const ParamSet pb = b.group(prefix);
      REQUIRE(pa.size() == pb.size());
      auto it = pb.begin();
      for (const auto& [name, t] : pa) {
        for (int64_t i = 0; i < t.size(); ++i) CHECK(t.data()[i] == it->second.data()[i]);
        ++it;
      }
    }
  }
}

TEST_CASE("resume reproduces the uninterrupted trajectory bit-exactly") {
  PretrainFixture f;
  TrainConfig full = f.tiny_config(HostKind::ijepa, Variant::sa, "resume_full");
  full.epochs = 4;
  const PretrainOutcome full_out = run_pretrain(full);

  TrainConfig part = full;
  part.out_dir = (f.dir / "resume_part").string();
  part.stop_after_steps = 7;
  const PretrainOutcome part_out = run_pretrain(part);
  CHECK(part_out.metrics.size() == 7);

  TrainConfig cont = full;
  cont.out_dir = (f.dir / "resume_cont").string();
  const PretrainOutcome cont_out = run_pretrain(cont, part_out.checkpoint_path);
  CHECK(cont_out.metrics.size() == full_out.metrics.size() - 7);

  // the tail losses match the uninterrupted run exactly
  for (size_t i = 0; i < cont_out.metrics.size(); ++i) {
    CHECK(cont_out.metrics[i].step == full_out.metrics[i + 7].step);
    CHECK(cont_out.metrics[i].composite_loss == full_out.metrics[i + 7].composite_loss);
  }
  // final parameter records are byte-identical
  const Checkpoint a = read_checkpoint(full_out.checkpoint_path);
  const Checkpoint b = read_checkpoint(cont_out.checkpoint_path);
  REQUIRE(a.records.size() == b.records.size());
  auto ib = b.records.begin();
  for (const auto& [name, t] : a.records) {
    CHECK(name == ib->first);
    for (int64_t i = 0; i < t.size(); ++i) CHECK(t.data()[i] == ib->second.data()[i]);
    ++ib;
  }
}

TEST_CASE("resume rejects a drifted config") {
  PretrainFixture f;
  TrainConfig cfg = f.tiny_config(HostKind::ijepa, Variant::sa, "drift_a");
  cfg.stop_after_steps = 2;
  const PretrainOutcome out = run_pretrain(cfg);
  TrainConfig drifted = cfg;
  drifted.lr *= 2.0;
  CHECK_THROWS_WITH_AS(run_pretrain(drifted, out.checkpoint_path), doctest::Contains("digest"),
                       std::runtime_error);
}

TEST_CASE("probe on a checkpoint leaves the encoder frozen and writes the CSV") {
  PretrainFixture f;
  const TrainConfig cfg = f.tiny_config(HostKind::ijepa, Variant::mr_only, "probe_run");
  const PretrainOutcome out = run_pretrain(cfg);
  const std::vector<uint64_t> seeds{0, 1, 2};
  const auto probes =
      run_probe_on_checkpoint(out.checkpoint_path, f.data_path, f.data_path, seeds);
  REQUIRE(probes.size() == 3);
  for (const ProbeOutcome& p : probes) {
    CHECK(p.encoder_checksum_before == p.encoder_checksum_after);
    CHECK(p.miou >= 0.0);
    CHECK(p.miou <= 1.0);
  }
  const std::string csv_path = (f.dir / "probe.csv").string();
  write_probe_csv(csv_path, "mr_only", probes);
  std::ifstream in(csv_path);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 5);  // header + 3 seeds + summary
}

TEST_CASE("matrix cell grids have the documented shapes") {
  const std::vector<uint64_t> seeds{0, 1, 2};
  CHECK(matrix_cells("table1", "d", "o", seeds).size() == 18);  // 6 cells x 3 seeds
  CHECK(matrix_cells("table2", "d", "o", seeds).size() == 12);
  const auto t3 = matrix_cells("table3", "d", "o", seeds);
  CHECK(t3.size() == 9);
  for (const CellSpec& s : t3) CHECK(s.cfg.host == HostKind::ijepa);
  const auto t4 = matrix_cells("table4", "d", "o", seeds);
  CHECK(t4.size() == 6);
  for (const CellSpec& s : t4) CHECK(s.cfg.host == HostKind::latentmim);
  CHECK_THROWS_AS(matrix_cells("table9", "d", "o", seeds), std::invalid_argument);
}
