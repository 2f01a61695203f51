#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace riunet {

struct NamedArray {
  std::string name;
  std::vector<uint32_t> extents;
  std::vector<float> data;  // product of extents values

  int64_t size() const;
};

// Checkpoint container: magic "RIUW", then little-endian u32 fields —
// version, entry count, and per entry name length, name bytes, rank,
// extents — followed by the raw little-endian f32 payload.
//
// Weight entries use the parameter name verbatim. Optimizer state rides
// along under reserved suffixes (".adam_m", ".adam_v", ".adam_t"); batchnorm
// running stats are regular named entries; "__config.*" / "__trainer.*"
// entries carry scalar metadata.
inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const std::vector<NamedArray>& entries);

// Throws std::runtime_error with the offending detail on bad magic, version,
// truncation, trailing bytes, or extent/payload mismatch.
std::vector<NamedArray> read_checkpoint(const std::string& path);

// nullptr when absent.
const NamedArray* find_entry(const std::vector<NamedArray>& entries, const std::string& name);

}  // namespace riunet
