#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oneshot/capsules.hpp"
#include "oneshot/layers.hpp"
#include "oneshot/losses.hpp"
#include "oneshot/pairing.hpp"

namespace oneshot {

enum class Approach { merged, siamese_cnn, siamese_capsnet };

std::string to_string(Approach a);
Approach approach_from_string(const std::string& name);

enum class LossKind { cross_entropy, contrastive };

std::string to_string(LossKind k);
/// merged pairs with cross-entropy, both siamese kinds with contrastive.
LossKind loss_for(Approach a);

/// Everything needed to rebuild a pair model's architecture.
struct ModelSpec {
  Approach approach = Approach::merged;
  Shape image_shape;  // [H, W, C] of one input image
  MergeMode merge_mode = MergeMode::stacked;
  MergedCnnOptions merged;
  SiameseTowerOptions tower;
  CapsNetConfig capsnet;  // input_shape is derived from image_shape
  ContrastiveConfig contrastive;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

/// A model that scores image pairs.
///
/// Scores: for merged models the logit gap z_same - z_different (predict same
/// iff > 0); for siamese models the embedding distance D (predict same iff
/// D < threshold). Both towers of a siamese model are the same parameter set.
class PairModel {
 public:
  PairModel(const ModelSpec& spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }
  Approach approach() const { return spec_.approach; }
  LossKind loss_kind() const { return loss_for(spec_.approach); }
  /// True when larger scores mean "same".
  bool higher_is_same() const { return spec_.approach == Approach::merged; }

  struct Output {
    Tensor loss;  // batch mean
    std::vector<double> scores;
  };
  Output forward(Tape& tape, std::span<const PairSample> batch) const;
  /// Inference-only scores, evaluated in chunks of `batch_size`.
  std::vector<double> scores(std::span<const PairSample> pairs, std::size_t batch_size = 64) const;
  /// Inference-only mean loss and scores.
  Output evaluate(std::span<const PairSample> pairs, std::size_t batch_size = 64) const;

  std::vector<NamedParameter> parameters() const;
  std::size_t parameter_count() const { return count_parameters(parameters()); }

  /// Embedding network of siamese models; ShapeError for merged models.
  Tensor embed(Tape& tape, const Tensor& images) const;

  CapsNet* capsnet() { return caps_ ? &*caps_ : nullptr; }
  const CapsNet* capsnet() const { return caps_ ? &*caps_ : nullptr; }

  /// Checkpoint with manifest {"model": spec, "extra": extra}.
  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  struct Loaded;
  static Loaded load(const std::filesystem::path& path);

 private:
  Tensor merged_batch(std::span<const PairSample> batch) const;

  ModelSpec spec_;
  std::optional<LayerStack> net_;  // merged CNN or siamese tower
  std::optional<CapsNet> caps_;
};

struct PairModel::Loaded {
  PairModel model;
  nlohmann::json extra;
};

/// Pair of images stacked into [B, C, H, W] batches: a images and b images.
std::pair<Tensor, Tensor> split_batches(std::span<const PairSample> batch);
std::vector<int> pair_labels(std::span<const PairSample> batch);

}  // namespace oneshot
