#include "oneshot/losses.hpp"

#include <string>

#include "oneshot/errors.hpp"
#include "oneshot/ops.hpp"

namespace oneshot {

void ContrastiveConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("contrastive margin must be > 0");
}

Tensor embedding_distance(Tape& tape, const Tensor& e1, const Tensor& e2) {
  if (e1.shape() != e2.shape()) {
    throw ShapeError("embedding shapes differ: " + to_string(e1.shape()) + " vs " + to_string(e2.shape()));
  }
  if (e1.rank() < 1 || e1.rank() > 2 || e1.shape().back() == 0) {
    throw ShapeError("embeddings must be [d] or [B, d] with d > 0, got " + to_string(e1.shape()));
  }
  return vector_norm(tape, sub(tape, e1, e2), 1e-8);
}

Tensor contrastive_loss(Tape& tape, const Tensor& e1, const Tensor& e2, std::span<const int> labels,
                        const ContrastiveConfig& config) {
  config.validate();
  const Tensor dist = embedding_distance(tape, e1, e2);
  if (labels.size() != dist.size()) {
    throw ShapeError("contrastive_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(dist.size()) + " pairs");
  }
  std::vector<double> same(labels.size()), diff(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw IndexError("contrastive label must be 0 or 1");
    same[i] = 0.5 * labels[i];
    diff[i] = 0.5 * (1 - labels[i]);
  }
  const Tensor y_same(dist.shape(), std::move(same));
  const Tensor y_diff(dist.shape(), std::move(diff));
  const Tensor pull = mul(tape, y_same, square(tape, dist));
  const Tensor hinge = relu(tape, sub(tape, Tensor::scalar(config.margin), dist));
  const Tensor push = mul(tape, y_diff, square(tape, hinge));
  return mean(tape, add(tape, pull, push));
}

Tensor contrastive_loss(Tape& tape, const Tensor& e1, const Tensor& e2, int label, const ContrastiveConfig& config) {
  const int labels[1] = {label};
  return contrastive_loss(tape, e1, e2, labels, config);
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(1) != 2) {
    throw ShapeError("cross_entropy expects logits [B, 2], got " + to_string(logits.shape()));
  }
  if (labels.size() != logits.dim(0)) throw ShapeError("cross_entropy: label count differs from batch size");
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw IndexError("cross_entropy label " + std::to_string(labels[i]) + " outside {0, 1}");
    }
    idx[i] = static_cast<std::size_t>(labels[i]);
  }
  return scale(tape, mean(tape, pick(tape, log_softmax(tape, logits, 1), idx)), -1.0);
}

CenterState::CenterState(std::size_t classes, std::size_t feature_dim, double rate, double lambda)
    : centroids(Shape{classes, feature_dim}, 0.0), update_rate(rate), balance(lambda) {
  if (classes == 0 || feature_dim == 0) throw ConfigError("center loss needs classes and features");
  if (balance < 0.0) throw ConfigError("center loss balance must be >= 0");
}

namespace {

void check_labels(std::span<const int> labels, std::size_t classes, std::size_t batch) {
  if (labels.size() != batch) throw ShapeError("label count differs from batch size");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace

Tensor center_loss(Tape& tape, const Tensor& features, const Tensor& weight, const Tensor& bias,
                   std::span<const int> labels, const CenterState& state) {
  if (features.rank() != 2 || features.dim(1) != state.feature_dim()) {
    throw ShapeError("center_loss features must be [B, " + std::to_string(state.feature_dim()) + "]");
  }
  if (weight.rank() != 2 || weight.dim(1) != state.classes()) {
    throw ShapeError("center_loss weight must be [d, " + std::to_string(state.classes()) + "]");
  }
  const std::size_t b = features.dim(0), d = features.dim(1);
  check_labels(labels, state.classes(), b);

  const Tensor z = add_bias(tape, matmul(tape, features, weight), bias);
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  const Tensor softmax_term = scale(tape, sum(tape, pick(tape, log_softmax(tape, z, 1), idx)), -1.0);

  std::vector<double> targets(b * d);
  auto cv = state.centroids.values();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < d; ++k) targets[i * d + k] = cv[static_cast<std::size_t>(labels[i]) * d + k];
  const Tensor centers(Shape{b, d}, std::move(targets));
  const Tensor center_term = sum(tape, square(tape, sub(tape, features, centers)));
  return add(tape, softmax_term, scale(tape, center_term, state.balance));
}

void update_centroids(CenterState& state, const Tensor& features, std::span<const int> labels) {
  if (features.rank() != 2 || features.dim(1) != state.feature_dim()) throw ShapeError("update_centroids: bad features");
  const std::size_t b = features.dim(0), d = features.dim(1);
  check_labels(labels, state.classes(), b);
  std::vector<double> sums(state.classes() * d, 0.0);
  std::vector<std::size_t> counts(state.classes(), 0);
  auto fv = features.values();
  for (std::size_t i = 0; i < b; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    ++counts[y];
    for (std::size_t k = 0; k < d; ++k) sums[y * d + k] += fv[i * d + k];
  }
  auto cv = state.centroids.mutable_values();
  const double rate = state.update_rate;
  for (std::size_t c = 0; c < state.classes(); ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t k = 0; k < d; ++k) {
      const double m = sums[c * d + k] / static_cast<double>(counts[c]);
      cv[c * d + k] = (1.0 - rate) * cv[c * d + k] + rate * m;
    }
  }
}

Tensor reconstruction_loss(Tape& tape, const Tensor& decoded, const Tensor& original, double weight) {
  if (decoded.shape() != original.shape()) {
    throw ShapeError("reconstruction shapes differ: " + to_string(decoded.shape()) + " vs " + to_string(original.shape()));
  }
  return scale(tape, sum(tape, square(tape, sub(tape, decoded, original))), weight);
}

}  // namespace oneshot
