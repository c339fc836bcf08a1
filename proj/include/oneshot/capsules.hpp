#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "oneshot/image.hpp"
#include "oneshot/layers.hpp"
#include "oneshot/random.hpp"
#include "oneshot/tensor.hpp"

namespace oneshot {

/// Number of primary capsules formed from an h x w x n_m feature volume when
/// every capsule groups n_p maps: h * w * n_m / n_p. ConfigError unless n_p divides n_m.
std::size_t primary_capsule_count(std::size_t map_h, std::size_t map_w, std::size_t feature_maps,
                                  std::size_t capsule_dim);

/// Squashing nonlinearity over the last axis: (|g|^2 / (1 + |g|^2)) * g / (|g| + eps).
/// Maps the zero vector to zero; output length is always below 1.
Tensor squash(Tape& tape, const Tensor& g, double eps = 1e-8);

/// [B, n_m, h, w] -> [B, h*w*n_m/n_p, n_p]. Capsule (g, y, x) holds maps
/// g*n_p .. g*n_p+n_p-1 at location (y, x); capsules are ordered g-major.
Tensor group_capsules(Tape& tape, const Tensor& features, std::size_t capsule_dim);

/// Prediction vectors u_hat[b,i,j] = W[i,j] * u[b,i] for u [B, N_p, n_p] and
/// W [N_p, J, d_out, n_p]. Result: [B, N_p, J, d_out].
Tensor capsule_predictions(Tape& tape, const Tensor& u, const Tensor& weights);

/// s[b,j] = sum_i c[b,i,j] * u_hat[b,i,j] for c [B, N_p, J]; result [B, J, d].
Tensor routing_weighted_sum(Tape& tape, const Tensor& couplings, const Tensor& u_hat);

/// a[b,i,j] = u_hat[b,i,j] . v[b,j]; result [B, N_p, J].
Tensor routing_agreement(Tape& tape, const Tensor& u_hat, const Tensor& v);

struct RoutingState {
  Tensor logits;     // b_ij after the last update that fed the final couplings
  Tensor couplings;  // c_ij used for the final output
  std::size_t iterations = 0;
  std::vector<Tensor> coupling_history;  // c_ij of every iteration, detached
};

struct RoutingResult {
  Tensor v;
  RoutingState state;
};

/// Routing-by-agreement between primary and high-level capsules.
///
/// u_hat is [N_p, J, d] or batched [B, N_p, J, d]; v has shape [J, d] or [B, J, d].
/// Logits start at zero on every call. Gradients flow through all unrolled iterations.
RoutingResult dynamic_route(Tape& tape, const Tensor& u_hat, std::size_t iterations);

struct CapsNetConfig {
  Shape input_shape{1, 28, 28};  // [C, H, W]
  std::size_t conv1_filters = 256;
  std::size_t conv1_kernel = 9;
  std::size_t conv1_stride = 1;
  std::size_t feature_maps = 256;  // n_m
  std::size_t conv2_kernel = 9;
  std::size_t conv2_stride = 2;
  std::size_t capsule_dim = 8;      // n_p
  std::size_t capsules = 10;        // J
  std::size_t capsule_out_dim = 16; // d_out
  std::size_t routing_iterations = 3;
  double leak = 0.01;
  std::vector<std::size_t> decoder_hidden{512, 1024};

  void validate() const;
  nlohmann::json to_json() const;
  static CapsNetConfig from_json(const nlohmann::json& j);
};

/// Conv -> conv -> primary capsules -> routed high-level capsules, plus the
/// reconstruction decoder.
class CapsNet {
 public:
  CapsNet(const CapsNetConfig& config, Rng& rng);

  struct Encoding {
    Tensor capsules;  // [B, J, d_out]
    RoutingState routing;
  };

  const CapsNetConfig& config() const { return config_; }
  /// Shape [h_m, w_m] of the feature maps entering the primary capsules.
  std::pair<std::size_t, std::size_t> feature_map_extent() const { return map_extent_; }
  std::size_t primary_capsules() const { return primary_count_; }
  std::size_t embedding_size() const { return config_.capsules * config_.capsule_out_dim; }

  /// batch [B, C, H, W]
  Encoding encode(Tape& tape, const Tensor& batch) const;
  /// Class score of capsule j is |v_j|: [B, J, d] -> [B, J].
  Tensor class_scores(Tape& tape, const Tensor& capsules) const;
  /// Concatenated capsule vectors [B, J*d] used as the siamese embedding.
  Tensor embed(Tape& tape, const Tensor& batch) const;

  /// Zeroes every capsule except masks[b], then decodes to [B, C, H, W] in [0, 1].
  Tensor decode(Tape& tape, const Tensor& capsules, std::span<const std::size_t> masks) const;
  /// Single-sample form: capsules [J, d] -> image tensor [C, H, W].
  Tensor decode(Tape& tape, const Tensor& capsules, std::size_t mask) const;
  /// Index of the longest capsule per sample.
  std::vector<std::size_t> longest_capsules(const Tensor& capsules) const;

  std::vector<NamedParameter> parameters() const;
  std::vector<NamedParameter> encoder_parameters() const;
  nlohmann::json manifest() const;
  static CapsNet from_manifest(const nlohmann::json& manifest);

  /// Mean per-pixel squared reconstruction error recorded by the last reconstruction training.
  std::optional<double> reconstruction_error() const { return reconstruction_error_; }
  void set_reconstruction_error(double mse) { reconstruction_error_ = mse; }

  /// Same parameters, shared.
  CapsNet share() const;

 private:
  CapsNet(const CapsNetConfig& config, Conv2d conv1, Conv2d conv2, Tensor weights, LayerStack decoder);

  CapsNetConfig config_;
  Conv2d conv1_;
  Conv2d conv2_;
  Tensor routing_weights_;  // [N_p, J, d_out, n_p], no bias
  LayerStack decoder_;
  std::pair<std::size_t, std::size_t> map_extent_;
  std::size_t primary_count_;
  std::optional<double> reconstruction_error_;
};

struct GenerationOptions {
  double noise_scale = 0.05;  // perturbation drawn from U(-scale, scale) per dimension
  std::uint64_t seed = 0;
  double max_reconstruction_error = 0.02;
};

/// Encodes seed images (cycled), perturbs the longest capsule, and decodes.
/// StateError unless the model's recorded reconstruction error is at or below
/// options.max_reconstruction_error.
std::vector<Image> generate_images(const CapsNet& model, std::span<const Image> seeds, std::size_t count,
                                   const GenerationOptions& options);

}  // namespace oneshot
