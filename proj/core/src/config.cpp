#include "xssl/config.hpp"

#include <charconv>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xssl/rng.hpp"

namespace xssl {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::mr_only: return "mr_only";
    case Variant::hr_only: return "hr_only";
    case Variant::sa: return "sa";
    case Variant::sa_false_hr: return "sa_false_hr";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "mr_only") return Variant::mr_only;
  if (s == "hr_only") return Variant::hr_only;
  if (s == "sa") return Variant::sa;
  if (s == "sa_false_hr") return Variant::sa_false_hr;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

TrainConfig default_config(HostKind host) {
  TrainConfig cfg;
  cfg.host = host;
  cfg.host_cfg.kind = host;
  if (host == HostKind::ijepa) {
    cfg.lr = 0.001 * 16.0 / 64.0;  // paper lr rescaled to batch 16
    cfg.weight_decay = 0.04;
  } else {
    cfg.lr = 0.00015 * 16.0 / 128.0;
    cfg.weight_decay = 0.05;
  }
  return cfg;
}

TrainConfig paper_config(HostKind host) {
  TrainConfig cfg;
  cfg.host = host;
  cfg.host_cfg.kind = host;
  cfg.encoder = EncoderConfig{.in_channels = 4,
                              .patch_size = host == HostKind::ijepa ? 14 : 16,
                              .dim = 384,
                              .depth = 12,
                              .heads = 6,
                              .mlp_ratio = 4};
  if (host == HostKind::ijepa) {
    cfg.lr = 0.001;
    cfg.weight_decay = 0.04;
    cfg.batch = 64;
    cfg.head = HeadConfig{.dim = 384, .depth = 12, .heads = 6, .mlp_ratio = 4};
  } else {
    cfg.lr = 0.00015;
    cfg.weight_decay = 0.05;
    cfg.batch = 128;
    cfg.head = HeadConfig{.dim = 384, .depth = 3, .heads = 6, .mlp_ratio = 4};
  }
  cfg.epochs = 300;
  return cfg;
}

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected boolean, got '" + v + "'");
}

int64_t parse_int(const std::string& v) {
  int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw std::invalid_argument("expected integer, got '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& v) {
  uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw std::invalid_argument("expected unsigned integer, got '" + v + "'");
  return out;
}

double parse_f64(const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw std::invalid_argument("expected number, got '" + v + "'");
  }
}

void apply_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "host.kind") {
    cfg.host = host_from_string(value);
    cfg.host_cfg.kind = cfg.host;
  } else if (key == "variant") {
    cfg.variant = variant_from_string(value);
  } else if (key == "seed") {
    cfg.seed = parse_u64(value);
  } else if (key == "data.path") {
    cfg.data_path = value;
  } else if (key == "out.dir") {
    cfg.out_dir = value;
  } else if (key == "opt.lr") {
    cfg.lr = parse_f64(value);
  } else if (key == "opt.weight_decay") {
    cfg.weight_decay = parse_f64(value);
  } else if (key == "opt.batch") {
    cfg.batch = parse_int(value);
  } else if (key == "opt.epochs") {
    cfg.epochs = parse_int(value);
  } else if (key == "opt.warmup_frac") {
    cfg.warmup_frac = parse_f64(value);
  } else if (key == "opt.stop_after_steps") {
    cfg.stop_after_steps = parse_int(value);
  } else if (key == "host.ema_momentum") {
    cfg.host_cfg.ema_momentum = parse_f64(value);
  } else if (key == "host.visible_ratio") {
    cfg.host_cfg.visible_ratio = parse_f64(value);
  } else if (key == "host.n_targets") {
    cfg.host_cfg.blocks.n_targets = parse_int(value);
  } else if (key == "host.target_scale_min") {
    cfg.host_cfg.blocks.target_scale_min = parse_f64(value);
  } else if (key == "host.target_scale_max") {
    cfg.host_cfg.blocks.target_scale_max = parse_f64(value);
  } else if (key == "host.aspect_min") {
    cfg.host_cfg.blocks.aspect_min = parse_f64(value);
  } else if (key == "host.aspect_max") {
    cfg.host_cfg.blocks.aspect_max = parse_f64(value);
  } else if (key == "encoder.preset") {
    if (value == "desk") {
      cfg.encoder = EncoderConfig{};
      cfg.head = HeadConfig{};
    } else if (value == "paper") {
      const TrainConfig p = paper_config(cfg.host);
      cfg.encoder = p.encoder;
      cfg.head = p.head;
    } else {
      throw std::invalid_argument("unknown encoder preset '" + value + "'");
    }
  } else if (key == "encoder.channels") {
    cfg.encoder.in_channels = parse_int(value);
  } else if (key == "encoder.patch") {
    cfg.encoder.patch_size = parse_int(value);
  } else if (key == "encoder.dim") {
    cfg.encoder.dim = parse_int(value);
  } else if (key == "encoder.depth") {
    cfg.encoder.depth = parse_int(value);
  } else if (key == "encoder.heads") {
    cfg.encoder.heads = parse_int(value);
  } else if (key == "encoder.mlp_ratio") {
    cfg.encoder.mlp_ratio = parse_int(value);
  } else if (key == "head.dim") {
    cfg.head.dim = parse_int(value);
  } else if (key == "head.depth") {
    cfg.head.depth = parse_int(value);
  } else if (key == "head.heads") {
    cfg.head.heads = parse_int(value);
  } else if (key == "head.mlp_ratio") {
    cfg.head.mlp_ratio = parse_int(value);
  } else if (key == "sa.lambda") {
    cfg.sa.lambda = parse_f64(value);
  } else if (key == "sa.downsample") {
    cfg.sa.downsample = downsample_from_string(value);
  } else if (key == "sa.sampling") {
    cfg.sa.sampling = sa_sampling_from_string(value);
  } else if (key == "sa.block_scale") {
    cfg.sa.block_scale = parse_f64(value);
  } else if (key == "sa.momentum") {
    cfg.sa.teacher_momentum = parse_f64(value);
  } else if (key == "sa.sum_mode") {
    cfg.sa.sum_mode = parse_bool(value);
  } else if (key == "sa.s") {
    cfg.sa.s = parse_int(value);
  } else if (key == "hr_only.crop") {
    cfg.hr_only_crop = parse_bool(value);
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  const size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  // host.kind decides per-host defaults, so resolve it before other keys.
  HostKind host = HostKind::ijepa;
  {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      line = trim(line);
      if (line.rfind("host.kind=", 0) == 0) host = host_from_string(trim(line.substr(10)));
    }
  }
  TrainConfig cfg = default_config(host);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    try {
      apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string canonical_config_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "host.kind=" << to_string(cfg.host) << "\n";
  os << "variant=" << to_string(cfg.variant) << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "data.path=" << cfg.data_path << "\n";
  os << "out.dir=" << cfg.out_dir << "\n";
  os << "opt.lr=" << format_double(cfg.lr) << "\n";
  os << "opt.weight_decay=" << format_double(cfg.weight_decay) << "\n";
  os << "opt.batch=" << cfg.batch << "\n";
  os << "opt.epochs=" << cfg.epochs << "\n";
  os << "opt.warmup_frac=" << format_double(cfg.warmup_frac) << "\n";
  os << "host.ema_momentum=" << format_double(cfg.host_cfg.ema_momentum) << "\n";
  os << "host.visible_ratio=" << format_double(cfg.host_cfg.visible_ratio) << "\n";
  os << "host.n_targets=" << cfg.host_cfg.blocks.n_targets << "\n";
  os << "host.target_scale_min=" << format_double(cfg.host_cfg.blocks.target_scale_min) << "\n";
  os << "host.target_scale_max=" << format_double(cfg.host_cfg.blocks.target_scale_max) << "\n";
  os << "host.aspect_min=" << format_double(cfg.host_cfg.blocks.aspect_min) << "\n";
  os << "host.aspect_max=" << format_double(cfg.host_cfg.blocks.aspect_max) << "\n";
  os << "encoder.channels=" << cfg.encoder.in_channels << "\n";
  os << "encoder.patch=" << cfg.encoder.patch_size << "\n";
  os << "encoder.dim=" << cfg.encoder.dim << "\n";
  os << "encoder.depth=" << cfg.encoder.depth << "\n";
  os << "encoder.heads=" << cfg.encoder.heads << "\n";
  os << "encoder.mlp_ratio=" << cfg.encoder.mlp_ratio << "\n";
  os << "head.dim=" << cfg.head.dim << "\n";
  os << "head.depth=" << cfg.head.depth << "\n";
  os << "head.heads=" << cfg.head.heads << "\n";
  os << "head.mlp_ratio=" << cfg.head.mlp_ratio << "\n";
  os << "sa.s=" << cfg.sa.s << "\n";
  os << "sa.lambda=" << format_double(cfg.sa.lambda) << "\n";
  os << "sa.downsample=" << to_string(cfg.sa.downsample) << "\n";
  os << "sa.sampling=" << to_string(cfg.sa.sampling) << "\n";
  os << "sa.block_scale=" << format_double(cfg.sa.block_scale) << "\n";
  os << "sa.momentum=" << format_double(cfg.sa.teacher_momentum) << "\n";
  os << "sa.sum_mode=" << (cfg.sa.sum_mode ? "true" : "false") << "\n";
  os << "hr_only.crop=" << (cfg.hr_only_crop ? "true" : "false") << "\n";
  return os.str();
}

uint64_t config_digest(const TrainConfig& cfg) {
  // out.dir is a run location, not experiment identity: a resumed run may
  // write elsewhere, and drift detection should not fire on that.
  std::istringstream in(canonical_config_text(cfg));
  std::string line, filtered;
  while (std::getline(in, line))
    if (line.rfind("out.dir=", 0) != 0) {
      filtered += line;
      filtered += '\n';
    }
  return fnv1a(filtered.data(), filtered.size());
}

uint64_t file_content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for hashing");
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
  return h;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& [k, v] : entries) out << k << "=" << v << "\n";
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const size_t eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace xssl
