#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xssl/ssl_hosts.hpp"

namespace xssl {

enum class Variant { mr_only, hr_only, sa, sa_false_hr };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

// Full description of one pretraining run. Serialized as flat key=value
// text with section prefixes; the digest is over the canonical rendering.
struct TrainConfig {
  HostKind host = HostKind::ijepa;
  Variant variant = Variant::sa;
  uint64_t seed = 0;
  std::string data_path;
  std::string out_dir = "runs/run0";

  double lr = 2.5e-4;
  double weight_decay = 0.04;
  int64_t batch = 16;
  int64_t epochs = 50;
  double warmup_frac = 0.1;
  // Run control only (excluded from the digest): stop and checkpoint after
  // this many steps, 0 = run to completion. Resuming such a checkpoint
  // reproduces the uninterrupted trajectory.
  int64_t stop_after_steps = 0;

  HostConfig host_cfg;
  EncoderConfig encoder;
  HeadConfig head;
  SAConfig sa;
  bool hr_only_crop = true;

  bool uses_sa() const { return variant == Variant::sa || variant == Variant::sa_false_hr; }
};

// Desk-scale defaults: paper optimizer settings rescaled linearly to batch
// 16, 50 epochs.
TrainConfig default_config(HostKind host);
// Paper-scale preset (ViT-Small, 300 epochs); documented, not exercised by
// the test suites.
TrainConfig paper_config(HostKind host);

// Parses key=value lines (# comments, blank lines ignored) on top of the
// given base (defaults for the selected host when absent). Unknown keys are
// rejected.
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);

// Every key in a fixed order with normalized value formatting.
std::string canonical_config_text(const TrainConfig& cfg);
uint64_t config_digest(const TrainConfig& cfg);

uint64_t file_content_hash(const std::string& path);
std::string utc_timestamp();

// key=value sidecar, one pair per line, written in the given order.
void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& entries);
std::map<std::string, std::string> read_manifest(const std::string& path);

// Shortest round-trip decimal rendering; used everywhere a double lands in
// a CSV or manifest so reruns are byte-identical.
std::string format_double(double v);

}  // namespace xssl
