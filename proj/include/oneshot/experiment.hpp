#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "oneshot/recipe.hpp"

namespace oneshot {

// Seed scheme. Every random choice in an experiment derives from the recipe
// seed S:
//   class subset (max_classes)   derive_seed(S, "split", 0)
//   held-out test classes        derive_seed(S, "split", 1)
//   validation classes           derive_seed(S, "split", 2)
//   k-fold partition             derive_seed(S, "split", 3)
//   fold f run seed              F = derive_seed(S, "fold", f)   (else F = S)
//   train / val / test pairs     derive_seed(F, "pairs", 0 / 1 / 2)
//   model initialization         derive_seed(F, "init")
//   epoch shuffles               derive_seed(F, "epoch", e)
//   augmentation                 derive_seed(S, "augment", augment.seed)
//   generator init and training  derive_seed(S, "init", 1)
//   generation noise             derive_seed(S, "noise")

struct ExperimentContext {
  /// Overrides the recipe's data directory when non-empty.
  std::filesystem::path data_dir;
  std::size_t jobs = 1;
  /// Progress lines (may be empty).
  std::function<void(const std::string&)> log;
};

/// The dataset a recipe names, after class subsetting, grayscale conversion
/// and downscaling. For the published smallNORB split `test` holds the testing
/// half; otherwise it is empty.
struct RecipeData {
  Dataset data;
  Dataset test;
};
RecipeData load_recipe_data(const ExperimentRecipe& recipe, const ExperimentContext& ctx);

struct ExperimentResult {
  std::vector<RunReport> runs;  // one per fold, or one
  double accuracy = 0.0;        // test accuracy, averaged over folds
  double accuracy_std = 0.0;    // across folds; 0 for a single run
  nlohmann::json manifest;      // seeds, dataset hashes, sizes
  /// The trained model of a single-run protocol (holdout, published split).
  std::optional<PairModel> model;
  std::optional<ReconstructionReport> reconstruction;
};

ExperimentResult run_experiment(const ExperimentRecipe& recipe, const ExperimentContext& ctx);

struct MergingComparison {
  RunReport stacked;
  RunReport h_join;
  nlohmann::json manifest;
};

/// Trains the recipe's merged CNN once per merge mode (stacked, h-join) with
/// identical seeds and data, and reports both test accuracies.
MergingComparison compare_merging(const ExperimentRecipe& recipe, const ExperimentContext& ctx);

/// Library version, compiler and target flags, recorded in run manifests.
std::string build_version();

}  // namespace oneshot
