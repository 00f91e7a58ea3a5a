#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "metaprompter/tensor.hpp"

namespace mpr {

/// Named tensors plus a JSON metadata object.
///
/// On-disk layout (all integers little-endian):
///   bytes 0..7   magic "MPRCKPT\0"
///   u32          format version (1)
///   u64          header length H
///   H bytes      UTF-8 JSON {"kind", "meta", "tensors": [{"name", "shape"}...]}
///   then each tensor's data as raw IEEE-754 f64, in header order.
struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws ParseError on a malformed file, ValidationError if it is missing.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace mpr
