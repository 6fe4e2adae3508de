#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "xssl/rng.hpp"
#include "xssl/synth_data.hpp"

using namespace xssl;

namespace {

SceneConfig tiny_config() {
  SceneConfig cfg;
  cfg.mr_h = cfg.mr_w = 16;
  cfg.patch_size = 4;
  return cfg;
}

}  // namespace

TEST_CASE("degenerate sensor: MR equals the area-averaged blur of HR exactly") {
  SceneConfig cfg = tiny_config();
  cfg.texture_amp = 0.0;
  cfg.sensor.noise_sigma = 0.0;
  cfg.sensor.gain_lo = cfg.sensor.gain_hi = 1.0;
  cfg.sensor.offset_lo = cfg.sensor.offset_hi = 0.0;
  const PairedScene scene = generate_scene(7, cfg);
  const Raster expect = area_downsample(gaussian_blur(scene.hr, cfg.sensor.blur_sigma), cfg.s);
  REQUIRE(scene.mr.data.size() == expect.data.size());
  for (size_t i = 0; i < expect.data.size(); ++i) {
    // the scene is float32-quantized on both paths
    CHECK(scene.mr.data[i] == static_cast<double>(static_cast<float>(
                                  std::clamp(expect.data[i], 0.0, 1.0))));
  }
}

TEST_CASE("same seed gives a bit-identical scene") {
  const SceneConfig cfg = tiny_config();
  const PairedScene a = generate_scene(123, cfg);
  const PairedScene b = generate_scene(123, cfg);
  CHECK(a.hr.data == b.hr.data);
  CHECK(a.mr.data == b.mr.data);
  CHECK(a.labels == b.labels);
  const PairedScene c = generate_scene(124, cfg);
  CHECK(a.hr.data != c.hr.data);
}

TEST_CASE("class pixel shares stay near 1/K over many seeds") {
  const SceneConfig cfg = tiny_config();
  const int64_t k = cfg.k_classes;
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  int64_t total = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const PairedScene scene = generate_scene(seed, cfg);
    // labels are the per-patch majority; shares at label level track the
    // quantile construction
    for (int64_t label : scene.labels) {
      ++counts[static_cast<size_t>(label)];
      ++total;
    }
  }
  for (int64_t c = 0; c < k; ++c) {
    const double share = static_cast<double>(counts[static_cast<size_t>(c)]) / total;
    CHECK(share >= 0.5 / static_cast<double>(k));
    CHECK(share <= 2.0 / static_cast<double>(k));
  }
}

TEST_CASE("sensor_degrade") {
  SUBCASE("identity model on a constant raster keeps the constant") {
    Raster hr(4, 8, 8);
    for (double& v : hr.data) v = 0.42;
    SensorModel model;
    model.blur_sigma = 0.0;
    model.gain_lo = model.gain_hi = 1.0;
    model.offset_lo = model.offset_hi = 0.0;
    model.noise_sigma = 0.0;
    Rng rng(1);
    const Raster mr = sensor_degrade(hr, model, rng);
    for (double v : mr.data) CHECK(v == 0.42);
  }
  SUBCASE("gain 2 saturates a 0.8 band to 1.0") {
    Raster hr(4, 4, 4);
    for (double& v : hr.data) v = 0.8;
    SensorModel model;
    model.blur_sigma = 0.0;
    model.gain_lo = model.gain_hi = 2.0;
    model.offset_lo = model.offset_hi = 0.0;
    model.noise_sigma = 0.0;
    Rng rng(2);
    const Raster mr = sensor_degrade(hr, model, rng);
    for (double v : mr.data) CHECK(v == 1.0);
  }
  SUBCASE("band mean tracks gain*mean + offset within noise tolerance") {
    Rng field_rng(3);
    Raster hr(4, 64, 64);
    for (double& v : hr.data) v = field_rng.uniform(0.3, 0.6);
    SensorModel model;
    model.blur_sigma = 0.0;
    model.gain_lo = model.gain_hi = 1.1;
    model.offset_lo = model.offset_hi = 0.05;
    model.noise_sigma = 0.02;
    Rng rng(4);
    const Raster mr = sensor_degrade(hr, model, rng);
    for (int64_t b = 0; b < 4; ++b) {
      double in_mean = 0.0, out_mean = 0.0;
      for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x) in_mean += hr.at(b, y, x);
      in_mean /= 64.0 * 64.0;
      for (int64_t y = 0; y < 32; ++y)
        for (int64_t x = 0; x < 32; ++x) out_mean += mr.at(b, y, x);
      out_mean /= 32.0 * 32.0;
      const double expected = 1.1 * in_mean + 0.05;
      CHECK(std::abs(out_mean - expected) <= 3.0 * 0.02 / 32.0);
    }
  }
}

TEST_CASE("make_false_hr") {
  SUBCASE("constant raster stays constant and dims scale by s") {
    Raster mr(4, 8, 8);
    for (double& v : mr.data) v = 0.55;
    const Raster up = make_false_hr(mr, 2);
    CHECK(up.height == 16);
    CHECK(up.width == 16);
    for (double v : up.data) CHECK(v == doctest::Approx(0.55).epsilon(1e-15));
  }
  SUBCASE("area downsample approximately inverts it on low-frequency fields") {
    Raster mr(1, 32, 32);
    for (int64_t y = 0; y < 32; ++y)
      for (int64_t x = 0; x < 32; ++x)
        mr.at(0, y, x) = 0.5 + 3e-5 * std::sin(2 * M_PI * y / 32.0) * std::sin(2 * M_PI * x / 32.0);
    const Raster round = area_downsample(make_false_hr(mr, 2), 2);
    for (size_t i = 0; i < mr.data.size(); ++i)
      CHECK(std::abs(round.data[i] - mr.data[i]) <= 1e-6);
  }
}

TEST_CASE("degradation is non-invertible under noise") {
  SceneConfig cfg = tiny_config();
  double total_mse = 0.0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const PairedScene scene = generate_scene(seed, cfg);
    // re-degrading the interpolated MR cannot reproduce the MR
    SensorModel model = cfg.sensor;
    Rng rng(seed + 1000);
    const Raster redeg = sensor_degrade(make_false_hr(scene.mr, cfg.s), model, rng);
    double mse = 0.0;
    for (size_t i = 0; i < scene.mr.data.size(); ++i) {
      const double d = redeg.data[i] - scene.mr.data[i];
      mse += d * d;
    }
    total_mse += mse / static_cast<double>(scene.mr.data.size());
  }
  CHECK(total_mse / 10.0 > 1e-5);
}

TEST_CASE("HR carries more label-relevant information than MR when textured") {
  SceneConfig cfg = tiny_config();
  cfg.texture_amp = 0.25;
  double hr_acc = 0.0, mr_acc = 0.0;
  const int n_seeds = 100;
  for (uint64_t seed = 0; seed < n_seeds; ++seed) {
    const PairedScene scene = generate_scene(seed, cfg);
    hr_acc += patch_mean_oracle_accuracy(scene.hr, cfg.patch_size * cfg.s, scene.labels,
                                         cfg.k_classes);
    mr_acc += patch_mean_oracle_accuracy(scene.mr, cfg.patch_size, scene.labels, cfg.k_classes);
  }
  hr_acc /= n_seeds;
  mr_acc /= n_seeds;
  CAPTURE(hr_acc);
  CAPTURE(mr_acc);
  CHECK(hr_acc > mr_acc);
}

TEST_CASE("dataset container") {
  const SceneConfig cfg = tiny_config();
  Dataset ds;
  ds.cfg = cfg;
  for (uint64_t seed = 0; seed < 3; ++seed) ds.scenes.push_back(generate_scene(seed, cfg));
  const std::string path =
      (std::filesystem::temp_directory_path() / "xssl_ds_test.xsds").string();

  SUBCASE("write then read round-trips bit exactly") {
    write_dataset(path, ds);
    const Dataset back = read_dataset(path);
    REQUIRE(back.scenes.size() == 3);
    CHECK(back.cfg.mr_h == cfg.mr_h);
    CHECK(back.cfg.k_classes == cfg.k_classes);
    CHECK(back.cfg.patch_size == cfg.patch_size);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(back.scenes[i].seed == ds.scenes[i].seed);
      CHECK(back.scenes[i].hr.data == ds.scenes[i].hr.data);
      CHECK(back.scenes[i].mr.data == ds.scenes[i].mr.data);
      CHECK(back.scenes[i].labels == ds.scenes[i].labels);
    }
  }
  SUBCASE("truncated file names the byte offset") {
    write_dataset(path, ds);
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 100);
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("byte offset"),
                         std::runtime_error);
  }
  SUBCASE("bad magic rejected at offset zero") {
    std::ofstream bad(path, std::ios::binary | std::ios::trunc);
    bad << "JUNKJUNKJUNK";
    bad.close();
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("magic"), std::runtime_error);
  }
  SUBCASE("empty dataset is a valid file") {
    Dataset empty;
    empty.cfg = cfg;
    write_dataset(path, empty);
    const Dataset back = read_dataset(path);
    CHECK(back.scenes.empty());
  }
  std::remove(path.c_str());
}

TEST_CASE("generate_scene validates inputs") {
  SceneConfig cfg = tiny_config();
  cfg.k_classes = 1;
  CHECK_THROWS_AS(generate_scene(0, cfg), std::invalid_argument);
  cfg = tiny_config();
  cfg.patch_size = 5;
  CHECK_THROWS_AS(generate_scene(0, cfg), std::invalid_argument);
}

TEST_CASE("labels live at MR patch granularity") {
  const SceneConfig cfg = tiny_config();
  const PairedScene scene = generate_scene(5, cfg);
  CHECK(scene.labels_h == cfg.mr_h / cfg.patch_size);
  CHECK(scene.labels_w == cfg.mr_w / cfg.patch_size);
  for (int64_t label : scene.labels) {
    CHECK(label >= 0);
    CHECK(label < cfg.k_classes);
  }
}
