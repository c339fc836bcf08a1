#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "oneshot/ops.hpp"
#include "oneshot/random.hpp"
#include "oneshot/tensor.hpp"

namespace oneshot {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

std::size_t count_parameters(const std::vector<NamedParameter>& params);

enum class Activation { relu, leaky_relu, sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// One differentiable stage of a tower. Shapes passed to output_shape() are
/// per-sample; forward() receives a batch with a leading sample axis.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor forward(Tape& tape, const Tensor& batch) const = 0;
  virtual std::vector<NamedParameter> parameters() const { return {}; }
  virtual nlohmann::json config() const = 0;
  /// A copy that references the same parameter tensors.
  virtual std::unique_ptr<Layer> share() const = 0;
};

class Conv2d final : public Layer {
 public:
  struct Options {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 3;
    std::size_t kernel_w = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;
  };

  /// He-uniform weights, zero bias.
  Conv2d(const Options& options, Rng& rng);
  Conv2d(const Options& options, Tensor weight, Tensor bias);

  std::string kind() const override { return "conv2d"; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(Tape& tape, const Tensor& batch) const override;
  std::vector<NamedParameter> parameters() const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer> share() const override;

  const Options& options() const { return options_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Options options_;
  Tensor weight_;  // [out, in, kh, kw]
  Tensor bias_;    // [out]
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {}

  std::string kind() const override { return "maxpool2d"; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(Tape& tape, const Tensor& batch) const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer> share() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  std::size_t window_;
  std::size_t stride_;
};

/// y = x W + b with W of shape [in, out].
class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, Rng& rng);
  Dense(Tensor weight, Tensor bias);

  std::string kind() const override { return "dense"; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(Tape& tape, const Tensor& batch) const override;
  std::vector<NamedParameter> parameters() const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer> share() const override;

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

class ActivationLayer final : public Layer {
 public:
  explicit ActivationLayer(Activation fn, double slope = 0.01) : fn_(fn), slope_(slope) {}

  std::string kind() const override { return "activation"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(Tape& tape, const Tensor& batch) const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer> share() const override { return std::make_unique<ActivationLayer>(*this); }

 private:
  Activation fn_;
  double slope_;
};

class Flatten final : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Shape output_shape(const Shape& input) const override { return {shape_size(input)}; }
  Tensor forward(Tape& tape, const Tensor& batch) const override;
  nlohmann::json config() const override { return {{"kind", kind()}}; }
  std::unique_ptr<Layer> share() const override { return std::make_unique<Flatten>(); }
};

Tensor apply_activation(Tape& tape, const Tensor& x, Activation fn, double slope = 0.01);

/// Ordered layers validated against a declared per-sample input shape.
class LayerStack {
 public:
  explicit LayerStack(Shape input_shape);

  LayerStack(LayerStack&&) noexcept = default;
  LayerStack& operator=(LayerStack&&) noexcept = default;

  /// Appends a layer; throws ShapeError if it cannot consume the current output shape.
  LayerStack& add(std::unique_ptr<Layer> layer);

  template <class L, class... Args>
  LayerStack& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  /// batch: [N, input_shape...] -> [N, output_shape...]
  Tensor forward(Tape& tape, const Tensor& batch) const;

  /// Names are "<layer index>.<param>", e.g. "0.weight".
  std::vector<NamedParameter> parameters() const;
  std::size_t parameter_count() const { return count_parameters(parameters()); }

  /// Second tower over the same parameter registry.
  LayerStack share() const;

  nlohmann::json manifest() const;
  /// Rebuilds the architecture with zero-valued parameters.
  static LayerStack from_manifest(const nlohmann::json& manifest);

 private:
  Shape input_shape_;
  Shape output_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

struct MergedCnnOptions {
  std::vector<std::size_t> filters{32, 32, 64, 64};
  /// Indices of conv layers followed by a max pool.
  std::vector<std::size_t> pool_after{1, 3};
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t pool_window = 2;
  std::size_t pool_stride = 2;
  std::size_t hidden = 128;
  std::size_t outputs = 2;
};

/// Conv tower for merged image pairs; input_shape is [C, H, W] of the merged image.
LayerStack build_merged_cnn(const Shape& input_shape, Rng& rng, const MergedCnnOptions& options = {});

struct SiameseTowerOptions {
  std::vector<std::size_t> filters{4, 8, 8};
  std::vector<std::size_t> pool_after{};
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t pool_window = 2;
  std::size_t pool_stride = 2;
  std::vector<std::size_t> dense{500, 500, 5};
};

/// Embedding tower for one grayscale image; input_shape is [1, H, W].
LayerStack build_siamese_tower(const Shape& input_shape, Rng& rng, const SiameseTowerOptions& options = {});

}  // namespace oneshot
