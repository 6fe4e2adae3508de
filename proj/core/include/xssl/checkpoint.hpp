#pragma once

#include <cstdint>
#include <string>

#include "xssl/params.hpp"

namespace xssl {

// Little-endian container: magic "XSSL", version u32, config digest u64,
// then named records until EOF. Record: name length u16, name bytes,
// rank u8, extents u32 each, float64 payload. Scalars are rank 0 with a
// single payload value.
struct Checkpoint {
  uint64_t config_digest = 0;
  ParamSet records;

  double scalar(const std::string& name) const;
  bool has(const std::string& name) const { return records.count(name) > 0; }
  // Records under "prefix." with the prefix stripped.
  ParamSet group(const std::string& prefix) const;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace xssl
