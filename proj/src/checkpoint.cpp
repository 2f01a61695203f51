#include "riunet/checkpoint.hpp"

#include <fstream>
#include <limits>
#include <stdexcept>

#include "riunet/wire.hpp"

namespace riunet {

static const char kMagic[4] = {'R', 'I', 'U', 'W'};

int64_t NamedArray::size() const {
  int64_t n = 1;
  for (uint32_t e : extents) n *= static_cast<int64_t>(e);
  return n;
}

void write_checkpoint(const std::string& path, const std::vector<NamedArray>& entries) {
  for (const NamedArray& e : entries) {
    if (e.name.empty()) throw std::invalid_argument("write_checkpoint: empty entry name");
    if (e.extents.empty()) throw std::invalid_argument("write_checkpoint: rank-0 entry " + e.name);
    if (e.size() != static_cast<int64_t>(e.data.size()))
      throw std::invalid_argument("write_checkpoint: extents/data mismatch in " + e.name);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_checkpoint: cannot open " + path);
  wire::put_bytes(os, kMagic, 4);
  wire::put_u32(os, kCheckpointVersion);
  wire::put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const NamedArray& e : entries) {
    wire::put_u32(os, static_cast<uint32_t>(e.name.size()));
    wire::put_bytes(os, e.name.data(), e.name.size());
    wire::put_u32(os, static_cast<uint32_t>(e.extents.size()));
    for (uint32_t ext : e.extents) wire::put_u32(os, ext);
    wire::put_f32_array(os, e.data.data(), e.data.size());
  }
  os.flush();
  if (!os) throw std::runtime_error("write_checkpoint: write failed for " + path);
}

std::vector<NamedArray> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_checkpoint: cannot open " + path);
  char magic[4];
  wire::get_bytes(is, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("read_checkpoint: bad magic in " + path);
  const uint32_t version = wire::get_u32(is, "checkpoint version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("read_checkpoint: unsupported version " + std::to_string(version));
  const uint32_t count = wire::get_u32(is, "entry count");
  std::vector<NamedArray> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedArray e;
    const uint32_t name_len = wire::get_u32(is, "entry name length");
    if (name_len == 0 || name_len > 4096) throw std::runtime_error("read_checkpoint: implausible name length");
    e.name.resize(name_len);
    wire::get_bytes(is, e.name.data(), name_len, "entry name");
    const uint32_t rank = wire::get_u32(is, "entry rank");
    if (rank == 0 || rank > 8) throw std::runtime_error("read_checkpoint: implausible rank in " + e.name);
    e.extents.resize(rank);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      e.extents[d] = wire::get_u32(is, "entry extent");
      n *= static_cast<int64_t>(e.extents[d]);
      if (n > std::numeric_limits<int32_t>::max())
        throw std::runtime_error("read_checkpoint: implausible entry size in " + e.name);
    }
    e.data.resize(static_cast<size_t>(n));
    wire::get_f32_array(is, e.data.data(), e.data.size(), e.name.c_str());
    entries.push_back(std::move(e));
  }
  wire::expect_eof(is, "checkpoint entries");
  return entries;
}

const NamedArray* find_entry(const std::vector<NamedArray>& entries, const std::string& name) {
  for (const NamedArray& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

}  // namespace riunet
