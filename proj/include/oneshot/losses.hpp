#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "oneshot/tensor.hpp"

namespace oneshot {

struct ContrastiveConfig {
  double margin = 1.0;
  void validate() const;
};

/// Euclidean distance between rows of e1 and e2 ([d] or [B, d]); gradient is
/// stabilised at zero distance.
Tensor embedding_distance(Tape& tape, const Tensor& e1, const Tensor& e2);

/// y * D^2 / 2 + (1 - y) * max(0, m - D)^2 / 2 with D = |e1 - e2|.
/// Embeddings are [d] (one label) or [B, d] (B labels); batched losses are averaged.
Tensor contrastive_loss(Tape& tape, const Tensor& e1, const Tensor& e2, std::span<const int> labels,
                        const ContrastiveConfig& config = {});
Tensor contrastive_loss(Tape& tape, const Tensor& e1, const Tensor& e2, int label, const ContrastiveConfig& config = {});

/// Mean softmax cross-entropy of logits [B, 2] against binary labels.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);

struct CenterState {
  Tensor centroids;       // [classes, feature_dim]
  double update_rate = 0.5;
  double balance = 0.01;  // lambda_2

  CenterState(std::size_t classes, std::size_t feature_dim, double update_rate = 0.5, double balance = 0.01);
  std::size_t classes() const { return centroids.dim(0); }
  std::size_t feature_dim() const { return centroids.dim(1); }
};

/// Softmax cross-entropy over z = x W + b summed over the batch, plus
/// balance * sum_i |x_i - c_{y_i}|^2. Centroids enter as constants.
/// features [B, d], weight [d, classes], bias [classes].
Tensor center_loss(Tape& tape, const Tensor& features, const Tensor& weight, const Tensor& bias,
                   std::span<const int> labels, const CenterState& state);

/// Moves each centroid toward the mean feature of its class in the batch:
/// c <- c + rate * (mean - c). Classes absent from the batch are untouched.
void update_centroids(CenterState& state, const Tensor& features, std::span<const int> labels);

/// weight * sum((decoded - original)^2)
Tensor reconstruction_loss(Tape& tape, const Tensor& decoded, const Tensor& original, double weight = 0.0005);

}  // namespace oneshot
