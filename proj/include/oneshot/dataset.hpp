#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oneshot/image.hpp"

namespace oneshot {

/// Labelled images of one shape. Pixel values are in [0, 1].
struct Dataset {
  std::string name;
  bool synthetic = false;
  std::vector<Image> images;
  std::vector<int> class_ids;
  /// Per-image origin (file path or generator tag); empty or one entry per image.
  std::vector<std::string> sources;
  /// Optional extra per-image labels, e.g. "category" or "instance".
  std::map<std::string, std::vector<int>> attributes;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  Shape image_shape() const;

  /// DataError if sizes disagree or images differ in shape.
  void validate() const;

  /// Sorted distinct class ids.
  std::vector<int> classes() const;
  std::map<int, std::vector<std::size_t>> indices_by_class() const;

  Dataset subset(const std::vector<std::size_t>& indices) const;
  Dataset subset_classes(const std::vector<int>& classes) const;
  /// Replaces class_ids with attributes[key]; DataError if absent.
  Dataset relabelled(const std::string& key) const;
  /// Concatenation; shapes must agree.
  Dataset merged_with(const Dataset& other) const;
};

/// FNV-1a over shape, labels, and pixel bits; used in run manifests.
std::string content_hash(const Dataset& data);

struct SyntheticAnodeSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t min_stubs = 3;
  std::size_t max_stubs = 6;
  double min_stub_radius = 1.5;  // pixels
  double max_stub_radius = 3.0;
  double texture_noise = 0.08;      // amplitude of the per-anode surface texture
  double bake_brightness = 0.12;    // per-view brightness shift drawn from [-b, b]
  double bake_texture = 0.03;       // per-view texture change amplitude
  std::uint64_t seed = 1;

  void validate() const;
};

struct Stub {
  double y, x, radius;  // pixel coordinates, centre of pixel (i, j) at (i + 0.5, j + 0.5)
};

/// The identity-defining part of one synthetic anode.
struct AnodeGeometry {
  double top, left, bottom, right;  // block extent
  double base_brightness;
  std::vector<Stub> stubs;
};

AnodeGeometry anode_geometry(const SyntheticAnodeSpec& spec, std::size_t class_index);
/// Row-major mask of pixels whose centre lies inside a stub.
std::vector<bool> stub_mask(const AnodeGeometry& geometry, std::size_t height, std::size_t width);

/// Each class is one procedurally generated anode face: a textured block with
/// stub holes at random positions. Views of a class keep the geometry exactly
/// and differ by a simulated baking change in brightness and fine texture.
Dataset generate_synthetic_anodes(const SyntheticAnodeSpec& spec, std::size_t n_classes, std::size_t views_per_class);

struct FoldSplit {
  Dataset train;
  Dataset validation;
  std::vector<std::size_t> validation_indices;  // into the source dataset
};

/// Class-stratified k-fold split. Each class's images are shuffled with the
/// seed and dealt round-robin into k folds; fold `fold_index` is validation.
/// ConfigError if k < 2, fold_index >= k, or k exceeds the smallest class.
FoldSplit kfold_split(const Dataset& data, std::size_t k, std::size_t fold_index, std::uint64_t seed);

}  // namespace oneshot
