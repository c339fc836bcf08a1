#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "oneshot/layers.hpp"

namespace oneshot {

// Checkpoint container, all integers little-endian:
//
//   offset 0   8 bytes  magic "OSCKPT\0\1"
//   offset 8   u32      format version (1)
//   offset 12  u64      manifest byte length L
//   offset 20  L bytes  UTF-8 JSON manifest; manifest["parameters"] lists
//                       {"name", "shape"} in storage order
//   then       float64  parameter values, concatenated in manifest order

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<NamedParameter> parameters;
};

/// Writes `manifest` (with a "parameters" list added) followed by the buffers.
void write_checkpoint(const std::filesystem::path& path, nlohmann::json manifest,
                      const std::vector<NamedParameter>& parameters);

/// Throws FormatError on bad magic, version, or truncation.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `targets` matched by name; ShapeError on any mismatch.
void assign_parameters(const std::vector<NamedParameter>& source, const std::vector<NamedParameter>& targets);

}  // namespace oneshot
