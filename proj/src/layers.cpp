#include "oneshot/layers.hpp"

#include <algorithm>
#include <cmath>

#include "oneshot/errors.hpp"

namespace oneshot {

std::size_t count_parameters(const std::vector<NamedParameter>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::leaky_relu:
      return "leaky_relu";
    case Activation::sigmoid:
      return "sigmoid";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + name + "'");
}

Tensor apply_activation(Tape& tape, const Tensor& x, Activation fn, double slope) {
  switch (fn) {
    case Activation::relu:
      return relu(tape, x);
    case Activation::leaky_relu:
      return leaky_relu(tape, x, slope);
    case Activation::sigmoid:
      return sigmoid(tape, x);
  }
  throw ConfigError("unhandled activation");
}

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-limit, limit);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor zeros_param(Shape shape) {
  Tensor t(std::move(shape), 0.0);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

// Conv2d

Conv2d::Conv2d(const Options& options, Rng& rng)
    : options_(options),
      weight_(he_uniform({options.out_channels, options.in_channels, options.kernel_h, options.kernel_w},
                         options.in_channels * options.kernel_h * options.kernel_w, rng)),
      bias_(zeros_param({options.out_channels})) {}

Conv2d::Conv2d(const Options& options, Tensor weight, Tensor bias)
    : options_(options), weight_(std::move(weight)), bias_(std::move(bias)) {
  const Shape expect{options.out_channels, options.in_channels, options.kernel_h, options.kernel_w};
  if (weight_.shape() != expect || bias_.shape() != Shape{options.out_channels}) {
    throw ShapeError("conv2d parameters do not match options");
  }
}

Shape Conv2d::output_shape(const Shape& input) const {
  if (input.size() != 3) throw ShapeError("conv2d expects [C,H,W], got " + to_string(input));
  if (input[0] != options_.in_channels) {
    throw ShapeError("conv2d expects " + std::to_string(options_.in_channels) + " channels, got " +
                     std::to_string(input[0]));
  }
  return {options_.out_channels, conv_output_extent(input[1], options_.kernel_h, options_.stride, options_.padding),
          conv_output_extent(input[2], options_.kernel_w, options_.stride, options_.padding)};
}

Tensor Conv2d::forward(Tape& tape, const Tensor& batch) const {
  return conv2d(tape, batch, weight_, bias_, {options_.stride, options_.padding});
}

std::vector<NamedParameter> Conv2d::parameters() const { return {{"weight", weight_}, {"bias", bias_}}; }

nlohmann::json Conv2d::config() const {
  return {{"kind", kind()},
          {"in", options_.in_channels},
          {"out", options_.out_channels},
          {"kernel_h", options_.kernel_h},
          {"kernel_w", options_.kernel_w},
          {"stride", options_.stride},
          {"padding", options_.padding}};
}

std::unique_ptr<Layer> Conv2d::share() const { return std::make_unique<Conv2d>(options_, weight_, bias_); }

// MaxPool2d

Shape MaxPool2d::output_shape(const Shape& input) const {
  if (input.size() != 3) throw ShapeError("maxpool2d expects [C,H,W], got " + to_string(input));
  return {input[0], conv_output_extent(input[1], window_, stride_, 0),
          conv_output_extent(input[2], window_, stride_, 0)};
}

Tensor MaxPool2d::forward(Tape& tape, const Tensor& batch) const {
  return maxpool2d(tape, batch, window_, stride_);
}

nlohmann::json MaxPool2d::config() const { return {{"kind", kind()}, {"window", window_}, {"stride", stride_}}; }

// Dense

Dense::Dense(std::size_t in, std::size_t out, Rng& rng)
    : weight_(he_uniform({in, out}, in, rng)), bias_(zeros_param({out})) {}

Dense::Dense(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2 || bias_.shape() != Shape{weight_.dim(1)}) {
    throw ShapeError("dense parameters have inconsistent shapes");
  }
}

Shape Dense::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] != weight_.dim(0)) {
    throw ShapeError("dense expects [" + std::to_string(weight_.dim(0)) + "], got " + to_string(input));
  }
  return {weight_.dim(1)};
}

Tensor Dense::forward(Tape& tape, const Tensor& batch) const {
  return add_bias(tape, matmul(tape, batch, weight_), bias_);
}

std::vector<NamedParameter> Dense::parameters() const { return {{"weight", weight_}, {"bias", bias_}}; }

nlohmann::json Dense::config() const { return {{"kind", kind()}, {"in", weight_.dim(0)}, {"out", weight_.dim(1)}}; }

std::unique_ptr<Layer> Dense::share() const { return std::make_unique<Dense>(weight_, bias_); }

// Activation / Flatten

Tensor ActivationLayer::forward(Tape& tape, const Tensor& batch) const {
  return apply_activation(tape, batch, fn_, slope_);
}

nlohmann::json ActivationLayer::config() const {
  return {{"kind", kind()}, {"fn", to_string(fn_)}, {"slope", slope_}};
}

Tensor Flatten::forward(Tape& tape, const Tensor& batch) const {
  if (batch.rank() == 0) throw ShapeError("flatten needs a batch axis");
  const std::size_t n = batch.dim(0);
  return reshape(tape, batch, {n, n ? batch.size() / n : 0});
}

// LayerStack

LayerStack::LayerStack(Shape input_shape) : input_shape_(std::move(input_shape)), output_shape_(input_shape_) {
  if (input_shape_.empty() || shape_size(input_shape_) == 0) {
    throw ShapeError("layer stack needs a non-empty input shape");
  }
}

LayerStack& LayerStack::add(std::unique_ptr<Layer> layer) {
  Shape next = layer->output_shape(output_shape_);
  for (auto d : next) {
    if (d == 0) throw ShapeError(layer->kind() + " produces an empty output " + to_string(next));
  }
  output_shape_ = std::move(next);
  layers_.push_back(std::move(layer));
  return *this;
}

Tensor LayerStack::forward(Tape& tape, const Tensor& batch) const {
  if (batch.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
    throw ShapeError("layer stack expects [N, " + to_string(input_shape_) + "], got " + to_string(batch.shape()));
  }
  Tensor x = batch;
  for (const auto& layer : layers_) x = layer->forward(tape, x);
  return x;
}

std::vector<NamedParameter> LayerStack::parameters() const {
  std::vector<NamedParameter> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& p : layers_[i]->parameters()) out.push_back({std::to_string(i) + "." + p.name, p.tensor});
  }
  return out;
}

LayerStack LayerStack::share() const {
  LayerStack s(input_shape_);
  for (const auto& l : layers_) s.add(l->share());
  return s;
}

nlohmann::json LayerStack::manifest() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back(l->config());
  return {{"input_shape", input_shape_}, {"layers", layers}};
}

LayerStack LayerStack::from_manifest(const nlohmann::json& manifest) {
  try {
    LayerStack s(manifest.at("input_shape").get<Shape>());
    for (const auto& cfg : manifest.at("layers")) {
      const auto kind = cfg.at("kind").get<std::string>();
      if (kind == "conv2d") {
        Conv2d::Options o{cfg.at("in"),       cfg.at("out"),    cfg.at("kernel_h"),
                          cfg.at("kernel_w"), cfg.at("stride"), cfg.at("padding")};
        auto w = zeros_param({o.out_channels, o.in_channels, o.kernel_h, o.kernel_w});
        s.emplace<Conv2d>(o, w, zeros_param({o.out_channels}));
      } else if (kind == "maxpool2d") {
        s.emplace<MaxPool2d>(cfg.at("window").get<std::size_t>(), cfg.at("stride").get<std::size_t>());
      } else if (kind == "dense") {
        const std::size_t in = cfg.at("in"), out = cfg.at("out");
        s.emplace<Dense>(zeros_param({in, out}), zeros_param({out}));
      } else if (kind == "activation") {
        s.emplace<ActivationLayer>(activation_from_string(cfg.at("fn")), cfg.at("slope").get<double>());
      } else if (kind == "flatten") {
        s.emplace<Flatten>();
      } else {
        throw ConfigError("unknown layer kind '" + kind + "'");
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed layer manifest: ") + e.what());
  }
}

// Architectures

namespace {

void add_conv_block(LayerStack& s, const std::vector<std::size_t>& filters, const std::vector<std::size_t>& pool_after,
                    std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t pool_window,
                    std::size_t pool_stride, Rng& rng) {
  for (std::size_t i = 0; i < filters.size(); ++i) {
    const std::size_t in = s.output_shape()[0];
    s.emplace<Conv2d>(Conv2d::Options{in, filters[i], kernel, kernel, stride, padding}, rng);
    s.emplace<ActivationLayer>(Activation::relu);
    if (std::find(pool_after.begin(), pool_after.end(), i) != pool_after.end()) {
      s.emplace<MaxPool2d>(pool_window, pool_stride);
    }
  }
}

}  // namespace

LayerStack build_merged_cnn(const Shape& input_shape, Rng& rng, const MergedCnnOptions& o) {
  if (input_shape.size() != 3) throw ShapeError("merged CNN input must be [C,H,W], got " + to_string(input_shape));
  LayerStack s(input_shape);
  add_conv_block(s, o.filters, o.pool_after, o.kernel, o.stride, o.padding, o.pool_window, o.pool_stride, rng);
  s.emplace<Flatten>();
  s.emplace<Dense>(s.output_shape()[0], o.hidden, rng);
  s.emplace<ActivationLayer>(Activation::relu);
  s.emplace<Dense>(o.hidden, o.outputs, rng);
  return s;
}

LayerStack build_siamese_tower(const Shape& input_shape, Rng& rng, const SiameseTowerOptions& o) {
  if (input_shape.size() != 3) throw ShapeError("siamese tower input must be [C,H,W], got " + to_string(input_shape));
  if (o.dense.empty()) throw ConfigError("siamese tower needs at least one dense layer");
  LayerStack s(input_shape);
  add_conv_block(s, o.filters, o.pool_after, o.kernel, o.stride, o.padding, o.pool_window, o.pool_stride, rng);
  s.emplace<Flatten>();
  for (std::size_t i = 0; i < o.dense.size(); ++i) {
    s.emplace<Dense>(s.output_shape()[0], o.dense[i], rng);
    if (i + 1 < o.dense.size()) s.emplace<ActivationLayer>(Activation::relu);
  }
  return s;
}

}  // namespace oneshot
