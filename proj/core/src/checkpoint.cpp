#include "xssl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts need byte swaps");

namespace xssl {

namespace {

constexpr char kMagic[4] = {'X', 'S', 'S', 'L'};

class Reader {
 public:
  Reader(std::ifstream& in, const std::string& path) : in_(in), path_(path) {}

  template <typename T>
  T read(const char* what) {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_)
      throw std::runtime_error(path_ + ": truncated reading " + what + " at byte offset " +
                               std::to_string(offset_));
    offset_ += sizeof(T);
    return v;
  }

  void read_bytes(void* dst, size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_)
      throw std::runtime_error(path_ + ": truncated reading " + what + " at byte offset " +
                               std::to_string(offset_));
    offset_ += n;
  }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

  size_t offset() const { return offset_; }

 private:
  std::ifstream& in_;
  std::string path_;
  size_t offset_ = 0;
};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

double Checkpoint::scalar(const std::string& name) const {
  auto it = records.find(name);
  if (it == records.end())
    throw std::runtime_error("checkpoint: missing record '" + name + "'");
  return it->second.item();
}

ParamSet Checkpoint::group(const std::string& prefix) const {
  ParamSet out;
  const std::string p = prefix + ".";
  for (const auto& [name, t] : records)
    if (name.rfind(p, 0) == 0) out.emplace(name.substr(p.size()), t);
  return out;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_pod(out, kCheckpointVersion);
  write_pod(out, ckpt.config_digest);
  for (const auto& [name, t] : ckpt.records) {
    if (name.size() > 0xffff)
      throw std::invalid_argument("checkpoint record name too long: " + name);
    write_pod(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    // rank 0 encodes a scalar record
    const bool is_scalar = t.rank() == 1 && t.size() == 1;
    const uint8_t rank = is_scalar ? 0 : static_cast<uint8_t>(t.rank());
    write_pod(out, rank);
    if (!is_scalar)
      for (int64_t e : t.shape()) write_pod(out, static_cast<uint32_t>(e));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.size())));
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  Reader r(in, path);
  char magic[4];
  r.read_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path + ": bad magic at byte offset 0");
  const auto version = r.read<uint32_t>("version");
  if (version != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_digest = r.read<uint64_t>("config digest");
  while (!r.at_eof()) {
    const auto name_len = r.read<uint16_t>("record name length");
    std::string name(name_len, '\0');
    r.read_bytes(name.data(), name_len, "record name");
    const auto rank = r.read<uint8_t>("record rank");
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (uint8_t i = 0; i < rank; ++i) {
      const auto e = r.read<uint32_t>("record extent");
      shape.push_back(static_cast<int64_t>(e));
      numel *= e;
    }
    if (rank == 0) shape = {1};
    std::vector<double> data(static_cast<size_t>(numel));
    r.read_bytes(data.data(), sizeof(double) * static_cast<size_t>(numel), "record payload");
    ckpt.records.emplace(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return ckpt;
}

}  // namespace xssl
