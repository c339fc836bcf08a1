#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oneshot/augment.hpp"
#include "oneshot/dataset.hpp"
#include "oneshot/models.hpp"
#include "oneshot/smallnorb.hpp"
#include "oneshot/trainer.hpp"

namespace oneshot {

/// Sectioned `key = value` text. '#' starts a comment; keys before any
/// `[section]` header belong to section "". Duplicate keys are an error.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<recipe>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  const std::string* find(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& section, const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& section, const std::string& key,
                                     const std::vector<std::size_t>& fallback) const;

  /// ConfigError naming the first key a reader never asked about.
  void reject_unread() const;
  const std::string& origin() const { return origin_; }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
    mutable bool read = false;
  };
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::string origin_;
};

enum class DatasetKind { synthetic_anodes, att_faces, smallnorb };

std::string to_string(DatasetKind d);
DatasetKind dataset_kind_from_string(const std::string& name);

enum class Protocol { holdout, kfold, published_split };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& name);

/// One experiment: what to train, on which data, evaluated how.
struct ExperimentRecipe {
  std::string name = "experiment";
  std::uint64_t seed = 1;

  DatasetKind dataset = DatasetKind::synthetic_anodes;
  std::string data_dir;  // for att-faces and smallnorb
  SyntheticAnodeSpec synthetic;
  std::size_t synthetic_classes = 40;
  std::size_t synthetic_views = 4;
  NorbIdentity norb_identity = NorbIdentity::instance;
  std::size_t downscale = 1;
  bool grayscale = false;
  /// Keep at most this many classes (0 keeps all), chosen with the seed.
  std::size_t max_classes = 0;

  Protocol protocol = Protocol::holdout;
  std::size_t holdout_classes = 5;
  std::size_t validation_classes = 5;
  std::size_t folds = 10;
  std::size_t train_pairs = 2000;
  std::size_t validation_pairs = 400;
  std::size_t test_pairs = 1000;
  double pair_balance = 0.5;
  bool swap_pairs = false;

  ModelSpec model;  // image_shape is filled in from the data
  TrainConfig train;

  bool augment = false;
  AugmentConfig augmentation;

  /// Generated-image retraining: a CapsNet learns to reconstruct the training
  /// images, its decoder generates extra images, and the pair model is trained
  /// on the union.
  bool generate = false;
  std::size_t generate_count = 0;  // 0 = as many as there are training images
  ReconstructionConfig reconstruction;
  GenerationOptions generation;
  CapsNetConfig generator;  // input_shape is filled in from the data

  /// ConfigError describing the first violated precondition.
  void validate() const;
  /// Canonical text; parse(to_text()) reproduces the recipe.
  std::string to_text() const;

  static ExperimentRecipe parse(const std::string& text, const std::string& origin = "<recipe>");
  static ExperimentRecipe load(const std::filesystem::path& path);
};

/// The [augment] section alone, as read by the augment command.
AugmentConfig parse_augment_config(const KeyValueFile& file);

}  // namespace oneshot
