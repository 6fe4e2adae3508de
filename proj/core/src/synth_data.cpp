#include "xssl/synth_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "dataset container is little-endian; big-endian hosts need byte swaps");

namespace xssl {

namespace {

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void quantize_raster(Raster& r) {
  for (double& v : r.data) v = quantize_f32(v);
}

// One horizontal+vertical box blur pass of the given radius, clamp-to-edge.
void box_blur_pass(std::vector<double>& plane, int64_t h, int64_t w, int64_t radius,
                   std::vector<double>& scratch) {
  const double inv = 1.0 / static_cast<double>(2 * radius + 1);
  scratch.resize(plane.size());
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int64_t d = -radius; d <= radius; ++d)
        s += plane[static_cast<size_t>(y * w + std::clamp<int64_t>(x + d, 0, w - 1))];
      scratch[static_cast<size_t>(y * w + x)] = s * inv;
    }
  }
  for (int64_t x = 0; x < w; ++x) {
    for (int64_t y = 0; y < h; ++y) {
      double s = 0.0;
      for (int64_t d = -radius; d <= radius; ++d)
        s += scratch[static_cast<size_t>(std::clamp<int64_t>(y + d, 0, h - 1) * w + x)];
      plane[static_cast<size_t>(y * w + x)] = s * inv;
    }
  }
}

// Smooth random field in roughly [0,1]: white noise through a 3-pass box
// blur stack, then min/max rescaled.
std::vector<double> random_field(int64_t h, int64_t w, int64_t radius, Rng& rng) {
  std::vector<double> field(static_cast<size_t>(h * w));
  for (double& v : field) v = rng.uniform();
  std::vector<double> scratch;
  for (int pass = 0; pass < 3; ++pass) box_blur_pass(field, h, w, radius, scratch);
  const auto [mn, mx] = std::minmax_element(field.begin(), field.end());
  const double span = std::max(*mx - *mn, 1e-12);
  for (double& v : field) v = (v - *mn) / span;
  return field;
}

}  // namespace

const std::vector<std::vector<double>>& class_signatures() {
  static const std::vector<std::vector<double>> sigs = {
      {0.10, 0.16, 0.30, 0.06},  // water-like: dark, NIR-absorbing
      {0.12, 0.34, 0.16, 0.62},  // vegetation-like: green + NIR peak
      {0.46, 0.40, 0.32, 0.36},  // bare-soil-like
      {0.70, 0.68, 0.66, 0.52},  // built-up-like
      {0.28, 0.24, 0.20, 0.44},
      {0.55, 0.30, 0.18, 0.25},
      {0.20, 0.45, 0.50, 0.15},
      {0.78, 0.52, 0.30, 0.70},
  };
  return sigs;
}

Raster gaussian_blur(const Raster& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int64_t d = -radius; d <= radius; ++d) {
    const double v = std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
    kernel[static_cast<size_t>(d + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  Raster tmp(in.channels, in.height, in.width);
  Raster out(in.channels, in.height, in.width);
  for (int64_t c = 0; c < in.channels; ++c) {
    for (int64_t y = 0; y < in.height; ++y)
      for (int64_t x = 0; x < in.width; ++x) {
        double s = 0.0;
        for (int64_t d = -radius; d <= radius; ++d)
          s += kernel[static_cast<size_t>(d + radius)] *
               in.at(c, y, std::clamp<int64_t>(x + d, 0, in.width - 1));
        tmp.at(c, y, x) = s;
      }
    for (int64_t y = 0; y < in.height; ++y)
      for (int64_t x = 0; x < in.width; ++x) {
        double s = 0.0;
        for (int64_t d = -radius; d <= radius; ++d)
          s += kernel[static_cast<size_t>(d + radius)] *
               tmp.at(c, std::clamp<int64_t>(y + d, 0, in.height - 1), x);
        out.at(c, y, x) = s;
      }
  }
  return out;
}

Raster area_downsample(const Raster& in, int64_t s) {
  if (s < 1 || in.height % s != 0 || in.width % s != 0)
    throw std::invalid_argument("area_downsample: factor " + std::to_string(s) +
                                " does not divide " + std::to_string(in.height) + "x" +
                                std::to_string(in.width));
  Raster out(in.channels, in.height / s, in.width / s);
  const double inv = 1.0 / static_cast<double>(s * s);
  for (int64_t c = 0; c < in.channels; ++c)
    for (int64_t y = 0; y < out.height; ++y)
      for (int64_t x = 0; x < out.width; ++x) {
        double acc = 0.0;
        for (int64_t dy = 0; dy < s; ++dy)
          for (int64_t dx = 0; dx < s; ++dx) acc += in.at(c, y * s + dy, x * s + dx);
        out.at(c, y, x) = acc * inv;
      }
  return out;
}

Raster sensor_degrade(const Raster& hr, const SensorModel& model, Rng& rng) {
  Raster blurred = gaussian_blur(hr, model.blur_sigma);
  Raster mr = area_downsample(blurred, model.s);
  for (int64_t c = 0; c < mr.channels; ++c) {
    const double gain = rng.uniform(model.gain_lo, model.gain_hi);
    const double offset = rng.uniform(model.offset_lo, model.offset_hi);
    for (int64_t y = 0; y < mr.height; ++y)
      for (int64_t x = 0; x < mr.width; ++x) mr.at(c, y, x) = gain * mr.at(c, y, x) + offset;
  }
  if (model.noise_sigma > 0.0)
    for (double& v : mr.data) v += rng.normal(0.0, model.noise_sigma);
  for (double& v : mr.data) v = std::clamp(v, 0.0, 1.0);
  return mr;
}

Raster make_false_hr(const Raster& mr, int64_t s) {
  if (s < 1) throw std::invalid_argument("make_false_hr: s must be >= 1");
  Raster out(mr.channels, mr.height * s, mr.width * s);
  for (int64_t c = 0; c < mr.channels; ++c)
    for (int64_t y = 0; y < out.height; ++y)
      for (int64_t x = 0; x < out.width; ++x) {
        // half-pixel center alignment
        const double sy = (static_cast<double>(y) + 0.5) / static_cast<double>(s) - 0.5;
        const double sx = (static_cast<double>(x) + 0.5) / static_cast<double>(s) - 0.5;
        const int64_t y0 = static_cast<int64_t>(std::floor(sy));
        const int64_t x0 = static_cast<int64_t>(std::floor(sx));
        const double fy = sy - static_cast<double>(y0);
        const double fx = sx - static_cast<double>(x0);
        auto clampy = [&](int64_t yy) { return std::clamp<int64_t>(yy, 0, mr.height - 1); };
        auto clampx = [&](int64_t xx) { return std::clamp<int64_t>(xx, 0, mr.width - 1); };
        const double v00 = mr.at(c, clampy(y0), clampx(x0));
        const double v01 = mr.at(c, clampy(y0), clampx(x0 + 1));
        const double v10 = mr.at(c, clampy(y0 + 1), clampx(x0));
        const double v11 = mr.at(c, clampy(y0 + 1), clampx(x0 + 1));
        out.at(c, y, x) = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                          fy * ((1.0 - fx) * v10 + fx * v11);
      }
  return out;
}

PairedScene generate_scene(uint64_t seed, const SceneConfig& cfg) {
  if (cfg.k_classes < 2) throw std::invalid_argument("generate_scene: need K >= 2 classes");
  if (cfg.k_classes > static_cast<int64_t>(class_signatures().size()))
    throw std::invalid_argument("generate_scene: at most " +
                                std::to_string(class_signatures().size()) + " classes");
  if (cfg.mr_h % cfg.patch_size != 0 || cfg.mr_w % cfg.patch_size != 0)
    throw std::invalid_argument("generate_scene: patch size must divide MR dims");
  if (cfg.s < 1) throw std::invalid_argument("generate_scene: s must be >= 1");
  if (cfg.sensor.s != cfg.s)
    throw std::invalid_argument("generate_scene: sensor downsample factor != scene s");

  const int64_t hh = cfg.hr_h(), hw = cfg.hr_w();
  Rng root(seed);
  Rng field_rng = root.fork(1);
  Rng jitter_rng = root.fork(2);
  Rng texture_rng = root.fork(3);
  Rng sensor_rng = root.fork(4);

  // Region layout from a smoothed noise field split at K-quantiles, so every
  // class covers ~1/K of the scene.
  const int64_t radius = std::max<int64_t>(1, std::min(hh, hw) / 12);
  std::vector<double> field = random_field(hh, hw, radius, field_rng);
  std::vector<double> sorted = field;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> thresholds;
  for (int64_t k = 1; k < cfg.k_classes; ++k)
    thresholds.push_back(sorted[static_cast<size_t>(k * hh * hw / cfg.k_classes)]);
  std::vector<int64_t> class_map(static_cast<size_t>(hh * hw));
  for (size_t i = 0; i < class_map.size(); ++i) {
    int64_t k = 0;
    while (k < cfg.k_classes - 1 && field[i] >= thresholds[static_cast<size_t>(k)]) ++k;
    class_map[i] = k;
  }

  // Per-scene signature jitter keeps scenes varied without moving classes
  // out of recognition range.
  std::vector<std::vector<double>> sigs;
  for (int64_t k = 0; k < cfg.k_classes; ++k) {
    auto sig = class_signatures()[static_cast<size_t>(k)];
    for (double& v : sig) v += jitter_rng.uniform(-0.03, 0.03);
    sigs.push_back(std::move(sig));
  }

  // High-frequency texture, one field per band, amplitude scaled per class:
  // detail that exists only at HR resolution and correlates with the label.
  PairedScene scene;
  scene.seed = seed;
  scene.s = cfg.s;
  scene.hr = Raster(kNumBands, hh, hw);
  std::vector<std::vector<double>> hf(static_cast<size_t>(kNumBands));
  if (cfg.texture_amp > 0.0) {
    std::vector<double> scratch;
    for (auto& plane : hf) {
      plane.resize(static_cast<size_t>(hh * hw));
      for (double& v : plane) v = texture_rng.uniform(-1.0, 1.0);
      box_blur_pass(plane, hh, hw, 1, scratch);
    }
  }
  for (int64_t b = 0; b < kNumBands; ++b)
    for (int64_t y = 0; y < hh; ++y)
      for (int64_t x = 0; x < hw; ++x) {
        const int64_t k = class_map[static_cast<size_t>(y * hw + x)];
        double v = sigs[static_cast<size_t>(k)][static_cast<size_t>(b)];
        if (cfg.texture_amp > 0.0) {
          const double class_gain =
              0.5 + static_cast<double>(k) / static_cast<double>(cfg.k_classes - 1);
          v += cfg.texture_amp * class_gain * hf[static_cast<size_t>(b)][static_cast<size_t>(y * hw + x)];
        }
        scene.hr.at(b, y, x) = std::clamp(v, 0.0, 1.0);
      }

  // The stored (float32-representable) HR is the sensor input, so the MR
  // can be reproduced exactly from the container contents.
  quantize_raster(scene.hr);
  scene.mr = sensor_degrade(scene.hr, cfg.sensor, sensor_rng);

  // Majority class per MR patch, ties to the smaller class index.
  scene.labels_h = cfg.labels_h();
  scene.labels_w = cfg.labels_w();
  scene.labels.resize(static_cast<size_t>(scene.labels_h * scene.labels_w));
  const int64_t hr_patch = cfg.patch_size * cfg.s;
  for (int64_t pu = 0; pu < scene.labels_h; ++pu)
    for (int64_t pv = 0; pv < scene.labels_w; ++pv) {
      std::vector<int64_t> counts(static_cast<size_t>(cfg.k_classes), 0);
      for (int64_t y = pu * hr_patch; y < (pu + 1) * hr_patch; ++y)
        for (int64_t x = pv * hr_patch; x < (pv + 1) * hr_patch; ++x)
          ++counts[static_cast<size_t>(class_map[static_cast<size_t>(y * hw + x)])];
      scene.labels[static_cast<size_t>(pu * scene.labels_w + pv)] = static_cast<int64_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
    }

  quantize_raster(scene.mr);
  return scene;
}

namespace {

constexpr char kDatasetMagic[4] = {'X', 'S', 'D', 'S'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void write_raster_f32(std::ofstream& out, const Raster& r) {
  std::vector<float> buf(r.data.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(r.data[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

class Reader {
 public:
  Reader(std::ifstream& in, const std::string& path) : in_(in), path_(path) {}
  template <typename T>
  T read(const char* what) {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check(what);
    offset_ += sizeof(T);
    return v;
  }
  void read_bytes(void* dst, size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    check(what);
    offset_ += n;
  }
  size_t offset() const { return offset_; }

 private:
  void check(const char* what) {
    if (!in_)
      throw std::runtime_error(path_ + ": truncated reading " + what + " at byte offset " +
                               std::to_string(offset_) + " (expected " + what + ")");
  }
  std::ifstream& in_;
  std::string path_;
  size_t offset_ = 0;
};

}  // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
  const SceneConfig& cfg = ds.cfg;
  for (const PairedScene& s : ds.scenes) {
    if (s.mr.height != cfg.mr_h || s.mr.width != cfg.mr_w || s.hr.height != cfg.hr_h() ||
        s.hr.width != cfg.hr_w() || s.labels_h != cfg.labels_h() ||
        s.labels_w != cfg.labels_w() || s.s != cfg.s)
      throw std::invalid_argument("write_dataset: scene dims inconsistent with config");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(kDatasetMagic, 4);
  write_pod(out, kDatasetVersion);
  write_pod(out, static_cast<uint32_t>(ds.scenes.size()));
  write_pod(out, static_cast<uint32_t>(kNumBands));
  write_pod(out, static_cast<uint32_t>(cfg.mr_h));
  write_pod(out, static_cast<uint32_t>(cfg.mr_w));
  write_pod(out, static_cast<uint32_t>(cfg.labels_h()));
  write_pod(out, static_cast<uint32_t>(cfg.labels_w()));
  write_pod(out, static_cast<uint32_t>(cfg.s));
  write_pod(out, static_cast<uint32_t>(cfg.k_classes));
  write_pod(out, static_cast<uint32_t>(0));  // dtype tag: 0 = float32
  for (const PairedScene& s : ds.scenes) {
    write_pod(out, s.seed);
    write_raster_f32(out, s.hr);
    write_raster_f32(out, s.mr);
    for (int64_t label : s.labels) write_pod(out, static_cast<uint16_t>(label));
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  Reader r(in, path);
  char magic[4];
  r.read_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw std::runtime_error(path + ": bad magic at byte offset 0");
  const auto version = r.read<uint32_t>("version");
  if (version != kDatasetVersion)
    throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
  const auto count = r.read<uint32_t>("scene count");
  const auto bands = r.read<uint32_t>("band count");
  if (bands != kNumBands)
    throw std::runtime_error(path + ": expected " + std::to_string(kNumBands) + " bands, got " +
                             std::to_string(bands));
  Dataset ds;
  ds.cfg.mr_h = r.read<uint32_t>("mr height");
  ds.cfg.mr_w = r.read<uint32_t>("mr width");
  const auto labels_h = r.read<uint32_t>("labels height");
  const auto labels_w = r.read<uint32_t>("labels width");
  ds.cfg.s = r.read<uint32_t>("scale factor");
  ds.cfg.k_classes = r.read<uint32_t>("class count");
  const auto dtype = r.read<uint32_t>("dtype tag");
  if (dtype != 0)
    throw std::runtime_error(path + ": unsupported dtype tag " + std::to_string(dtype));
  if (labels_h == 0 || ds.cfg.mr_h % labels_h != 0 || labels_w == 0 ||
      ds.cfg.mr_w % labels_w != 0)
    throw std::runtime_error(path + ": label grid does not divide MR dims");
  ds.cfg.patch_size = ds.cfg.mr_h / labels_h;
  ds.cfg.sensor.s = ds.cfg.s;

  const int64_t hr_n = kNumBands * ds.cfg.hr_h() * ds.cfg.hr_w();
  const int64_t mr_n = kNumBands * ds.cfg.mr_h * ds.cfg.mr_w;
  const int64_t lab_n = static_cast<int64_t>(labels_h) * labels_w;
  std::vector<float> fbuf;
  for (uint32_t i = 0; i < count; ++i) {
    PairedScene s;
    s.seed = r.read<uint64_t>("scene seed");
    s.s = ds.cfg.s;
    s.hr = Raster(kNumBands, ds.cfg.hr_h(), ds.cfg.hr_w());
    fbuf.resize(static_cast<size_t>(hr_n));
    r.read_bytes(fbuf.data(), sizeof(float) * static_cast<size_t>(hr_n), "hr payload");
    for (int64_t j = 0; j < hr_n; ++j) s.hr.data[static_cast<size_t>(j)] = fbuf[static_cast<size_t>(j)];
    s.mr = Raster(kNumBands, ds.cfg.mr_h, ds.cfg.mr_w);
    fbuf.resize(static_cast<size_t>(mr_n));
    r.read_bytes(fbuf.data(), sizeof(float) * static_cast<size_t>(mr_n), "mr payload");
    for (int64_t j = 0; j < mr_n; ++j) s.mr.data[static_cast<size_t>(j)] = fbuf[static_cast<size_t>(j)];
    s.labels_h = labels_h;
    s.labels_w = labels_w;
    s.labels.resize(static_cast<size_t>(lab_n));
    for (int64_t j = 0; j < lab_n; ++j)
      s.labels[static_cast<size_t>(j)] = r.read<uint16_t>("label");
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

double patch_mean_oracle_accuracy(const Raster& image, int64_t patch_size,
                                  const std::vector<int64_t>& labels,
                                  int64_t k_classes) {
  const PatchGrid grid(image.height, image.width, patch_size);
  if (static_cast<int64_t>(labels.size()) != grid.num_patches())
    throw std::invalid_argument("patch_mean_oracle_accuracy: label count mismatch");
  int64_t correct = 0;
  for (int64_t u = 0; u < grid.grid_h; ++u)
    for (int64_t v = 0; v < grid.grid_w; ++v) {
      std::vector<double> mean(static_cast<size_t>(image.channels), 0.0);
      for (int64_t c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int64_t y = u * patch_size; y < (u + 1) * patch_size; ++y)
          for (int64_t x = v * patch_size; x < (v + 1) * patch_size; ++x)
            acc += image.at(c, y, x);
        mean[static_cast<size_t>(c)] = acc / static_cast<double>(patch_size * patch_size);
      }
      int64_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int64_t k = 0; k < k_classes; ++k) {
        double d = 0.0;
        for (int64_t c = 0; c < image.channels; ++c) {
          const double diff = mean[static_cast<size_t>(c)] -
                              class_signatures()[static_cast<size_t>(k)][static_cast<size_t>(c)];
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (best == labels[static_cast<size_t>(grid.cell_index(u, v))]) ++correct;
    }
  return static_cast<double>(correct) / static_cast<double>(grid.num_patches());
}

}  // namespace xssl
