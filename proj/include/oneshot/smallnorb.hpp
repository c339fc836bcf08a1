#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oneshot/dataset.hpp"

namespace oneshot {

// Binary matrix container: little-endian i32 magic, i32 ndim, then
// max(ndim, 3) i32 extents (unused trailing extents are stored as 1),
// then the row-major payload.
inline constexpr std::int32_t kNorbByteMatrix = 0x1E3D4C55;
inline constexpr std::int32_t kNorbIntMatrix = 0x1E3D4C54;

struct NorbHeader {
  std::int32_t magic = 0;
  std::vector<std::int32_t> stored_dims;  // as written, including padding extents
  std::int32_t ndim = 0;

  std::vector<std::size_t> dims() const;  // the first ndim extents
  std::size_t element_size() const;
  std::size_t element_count() const;
  std::size_t header_bytes() const { return 8 + 4 * stored_dims.size(); }
};

struct NorbMatrix {
  NorbHeader header;
  std::vector<unsigned char> payload;  // raw little-endian elements
};

NorbHeader read_norb_header(std::istream& is, const std::string& origin);
/// FormatError on bad magic, unsupported ndim, truncation, or trailing bytes.
NorbMatrix read_norb_matrix(const std::filesystem::path& path);
void write_norb_matrix(const std::filesystem::path& path, const NorbMatrix& m);

enum class NorbIdentity { instance, category };

std::string to_string(NorbIdentity id);
NorbIdentity norb_identity_from_string(const std::string& name);

struct SmallNorbOptions {
  /// Class ids: instance gives category * 10 + instance (a physical toy);
  /// category gives the category alone.
  NorbIdentity identity = NorbIdentity::instance;
  std::size_t downscale = 1;             // block-average factor applied at load
  std::size_t expected_examples = 24300;  // per split; 0 accepts any count
  std::size_t expected_categories = 5;    // 0 accepts any count
};

/// File names of the published distribution for split "training" or "testing".
struct SmallNorbFiles {
  std::filesystem::path dat, cat, info;
};
SmallNorbFiles smallnorb_files(const std::filesystem::path& dir, const std::string& split);

/// One split as [96, 96, 2] images (both cameras as channels), values in
/// [0, 1]. Attributes: category, instance, elevation, azimuth, lighting.
/// A full split holds about 1.8 GB of pixels at downscale 1.
Dataset load_smallnorb_split(const std::filesystem::path& dir, const std::string& split,
                             const SmallNorbOptions& options = {});

struct SmallNorbData {
  Dataset train;
  Dataset test;
};
SmallNorbData load_smallnorb(const std::filesystem::path& dir, const SmallNorbOptions& options = {});

/// Writes a structurally faithful stand-in for one split: same file names,
/// headers, extents, label layout and instance assignment (training toys 4, 6,
/// 7, 8, 9; testing toys 0, 1, 2, 3, 5), with procedurally drawn pixels.
/// `image_size` below 96 writes a smaller fixture for quick tests.
void write_smallnorb_fixture(const std::filesystem::path& dir, const std::string& split, std::uint64_t seed,
                             std::size_t image_size = 96);

}  // namespace oneshot
