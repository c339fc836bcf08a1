#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oneshot/capsules.hpp"
#include "oneshot/models.hpp"

namespace oneshot {

struct RmsPropConfig {
  double rho = 0.9;
  double eps = 1e-8;
};

struct EarlyStoppingConfig {
  bool enabled = true;
  std::size_t patience = 5;
  double min_delta = 1e-4;
  /// "val_loss" or "train_loss"; val_loss falls back to train_loss when
  /// there are no validation pairs.
  std::string monitor = "val_loss";
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  double learning_rate = 1e-4;
  RmsPropConfig rmsprop;
  EarlyStoppingConfig early_stopping;
  std::uint64_t seed = 1;
  std::string precision = "float64";  // the only supported value

  void validate() const;
  nlohmann::json to_json() const;
};

/// s <- rho s + (1 - rho) g^2;  p <- p - lr g / (sqrt(s) + eps). ShapeError on length mismatch.
void rmsprop_step(std::span<double> params, std::span<const double> grads, std::span<double> state, double lr,
                  double rho, double eps);

/// Per-parameter accumulators for one run.
class RmsProp {
 public:
  RmsProp(std::vector<NamedParameter> params, double lr, RmsPropConfig config);
  /// Applies one update from the parameters' accumulated gradients, then clears them.
  void step();
  const Tensor& accumulator(std::size_t i) const { return state_.at(i); }

 private:
  std::vector<NamedParameter> params_;
  std::vector<Tensor> state_;
  double lr_;
  RmsPropConfig config_;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();
};

struct RunReport {
  std::string name;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<EpochMetrics> epochs;
  bool stopped_early = false;
  /// Siamese decision threshold, fitted on the validation pairs (NaN for merged models).
  double threshold = std::numeric_limits<double>::quiet_NaN();
  std::string threshold_source;
  double validation_accuracy = std::numeric_limits<double>::quiet_NaN();
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::size_t train_pairs = 0, validation_pairs = 0, test_pairs = 0;
  double wall_seconds = 0.0;
  std::vector<std::string> notes;

  /// `epoch,train_loss,train_acc,val_loss,val_acc`, values printed with %.17g.
  std::string epoch_csv() const;
  /// key=value lines; includes wall time, so not byte-stable across runs.
  std::string summary() const;
  void write(const std::filesystem::path& dir) const;  // epochs.csv + report.txt
};

/// Fraction of pairs classified correctly. Merged scores predict same iff
/// > 0; siamese scores (distances) predict same iff < threshold.
double pair_accuracy(std::span<const double> scores, std::span<const int> labels, bool higher_is_same,
                     double threshold = 0.0);

/// Threshold maximizing accuracy of "same iff distance < t", swept over the
/// midpoints of the sorted distances (plus one point beyond each end).
/// Ties go to the smallest threshold.
double fit_threshold(std::span<const double> distances, std::span<const int> labels);

/// Evaluates a trained model. For siamese models `threshold` must be finite.
/// DataError when pairs is empty.
double evaluate_pairs(const PairModel& model, std::span<const PairSample> pairs, double threshold = 0.0);

/// Identify-among-batch result for one query image.
struct Identification {
  std::string query;
  std::string best;            // highest-ranked candidate
  std::size_t true_rank = 0;   // 1-based rank of the best-ranked true partner, 0 if none is labelled
  std::size_t candidates = 0;
};

/// Groups manifest entries by path_a (in first-appearance order) and ranks
/// each query's candidates by score, most likely "same" first. Ties keep
/// manifest order.
std::vector<Identification> identify(const std::vector<PairManifestEntry>& entries, std::span<const double> scores,
                                     bool higher_is_same);

/// Runs the optimization loop and fills the per-epoch report. If test pairs
/// are given they are scored once with the final weights. NumericError on a
/// non-finite loss, annotated with epoch and batch.
RunReport train(PairModel& model, const std::vector<PairSample>& train_pairs, const std::vector<PairSample>& val_pairs,
                LossKind loss, const TrainConfig& config, const std::vector<PairSample>& test_pairs = {});

struct CrossValidation {
  std::vector<RunReport> folds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation
};

/// Runs `run_fold(i)` for i in [0, k) on up to `jobs` threads. Each fold must
/// be self-contained. The summary uses each report's test_accuracy. Errors are
/// rethrown with the fold index attached.
CrossValidation crossvalidate(const std::function<RunReport(std::size_t)>& run_fold, std::size_t k, std::size_t jobs = 1);

struct ReconstructionConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double loss_weight = 0.0005;
  RmsPropConfig rmsprop;
  std::uint64_t seed = 1;
};

struct ReconstructionReport {
  std::vector<double> epoch_mse;  // mean per-pixel squared error after each epoch
  double final_mse = 0.0;
};

/// Trains a CapsNet end to end on decoding its own inputs through the longest
/// capsule, then records the final mean per-pixel error on the model.
ReconstructionReport train_reconstruction(CapsNet& model, std::span<const Image> images, const ReconstructionConfig& config);
/// Mean per-pixel squared error of decode(encode(x)) with the longest-capsule mask.
double reconstruction_mse(const CapsNet& model, std::span<const Image> images, std::size_t batch_size = 32);

}  // namespace oneshot
