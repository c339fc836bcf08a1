#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oneshot/dataset.hpp"
#include "oneshot/image.hpp"

namespace oneshot {

/// Two images and whether they show the same identity (1) or not (0).
struct PairSample {
  Image a;
  Image b;
  int label = 0;
  std::size_t index_a = 0;  // positions in the source dataset
  std::size_t index_b = 0;
};

enum class MergeMode { stacked, h_join, v_join };

std::string to_string(MergeMode mode);
MergeMode merge_mode_from_string(const std::string& name);

struct MergedImage {
  Image data;
  MergeMode mode;
};

/// Luminance 0.299 R + 0.587 G + 0.114 B; single-channel input passes through.
Image to_grayscale(const Image& img);

/// stacked: [H, W, Ca + Cb] with a's channels first; h_join: [H, 2W, C] with a
/// in columns [0, W); v_join: [2H, W, C] with a in rows [0, H).
MergedImage merge(const Image& a, const Image& b, MergeMode mode);

/// Per-sample [C, H, W] shape the merge of two images of `image_shape` ([H, W, C]) produces.
Shape merged_input_shape(const Shape& image_shape, MergeMode mode);

/// Draws exactly n_pairs pairs, round(balance * n_pairs) of them same-class,
/// never pairing an image with itself. Pairs may repeat when n_pairs exceeds
/// the distinct combinations. DataError when the class structure cannot
/// provide the requested kinds.
std::vector<PairSample> sample_pairs(const Dataset& data, std::size_t n_pairs, double balance, std::uint64_t seed);

/// Pairs whose first image comes from `queries` and second from `gallery`
/// (assumed to hold different images). index_a refers to queries, index_b to
/// gallery. Lets a fold with a single image per class still form same-pairs.
std::vector<PairSample> sample_query_pairs(const Dataset& queries, const Dataset& gallery, std::size_t n_pairs,
                                           double balance, std::uint64_t seed);

/// Appends, for every pair, the copy with a and b exchanged.
std::vector<PairSample> with_swapped(const std::vector<PairSample>& pairs);

struct ClassSplit {
  std::vector<int> train_classes;
  std::vector<int> test_classes;
};

/// Seeded partition of the dataset's classes; test classes never appear in training.
ClassSplit holdout_split(const Dataset& data, std::size_t held_out_classes, std::uint64_t seed);

struct PairManifestEntry {
  std::string path_a;
  std::string path_b;
  int label = 0;
};

// Pair manifest: UTF-8 text, LF line endings, one "<path_a>\t<path_b>\t<label>" per line.
void write_pair_manifest(const std::filesystem::path& path, const std::vector<PairManifestEntry>& entries);
std::vector<PairManifestEntry> read_pair_manifest(const std::filesystem::path& path);
/// Manifest entries for pairs drawn from a dataset with per-image sources.
std::vector<PairManifestEntry> manifest_entries(const Dataset& data, const std::vector<PairSample>& pairs);

}  // namespace oneshot
