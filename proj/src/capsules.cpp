#include "oneshot/capsules.hpp"

#include <cmath>

#include "oneshot/errors.hpp"
#include "oneshot/ops.hpp"

namespace oneshot {

std::size_t primary_capsule_count(std::size_t map_h, std::size_t map_w, std::size_t feature_maps,
                                  std::size_t capsule_dim) {
  if (capsule_dim == 0 || feature_maps % capsule_dim != 0) {
    throw ConfigError("capsule size n_p=" + std::to_string(capsule_dim) + " must divide the feature map count n_m=" +
                      std::to_string(feature_maps));
  }
  return map_h * map_w * (feature_maps / capsule_dim);
}

Tensor squash(Tape& tape, const Tensor& g, double eps) {
  if (g.rank() == 0) throw ShapeError("squash needs a capsule axis");
  const std::size_t d = g.shape().back();
  if (d == 0) throw ShapeError("squash over an empty capsule axis");
  const std::size_t rows = g.size() / d;
  auto gv = g.values();
  std::vector<double> out(g.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) sq += gv[r * d + k] * gv[r * d + k];
    const double n = std::sqrt(sq);
    norms[r] = n;
    const double f = sq / ((1.0 + sq) * (n + eps));
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = f * gv[r * d + k];
  }
  require_finite("squash", out);
  Tensor result(g.shape(), std::move(out));

  if (tape.should_record({&g})) {
    tape.record("squash", {g}, result, [g, norms = std::move(norms), d, eps](std::span<const double> up) {
      auto gg = grad_target(g);
      auto gv = g.values();
      for (std::size_t r = 0; r < norms.size(); ++r) {
        const double n = norms[r];
        if (n == 0.0) continue;  // output is O(|g|^3) near the origin
        const double sq = n * n;
        const double f = sq / ((1.0 + sq) * (n + eps));
        // d out_k / d g_j = f delta_kj + h g_k g_j
        const double h = 2.0 / ((1.0 + sq) * (n + eps)) - 2.0 * sq / ((1.0 + sq) * (1.0 + sq) * (n + eps)) -
                         n / ((1.0 + sq) * (n + eps) * (n + eps));
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += up[r * d + k] * gv[r * d + k];
        for (std::size_t k = 0; k < d; ++k) gg[r * d + k] += f * up[r * d + k] + h * dot * gv[r * d + k];
      }
    });
  }
  return result;
}

Tensor group_capsules(Tape& tape, const Tensor& features, std::size_t capsule_dim) {
  if (features.rank() != 4) throw ShapeError("group_capsules expects [B, n_m, h, w], got " + to_string(features.shape()));
  const std::size_t b = features.dim(0), maps = features.dim(1), h = features.dim(2), w = features.dim(3);
  const std::size_t count = primary_capsule_count(h, w, maps, capsule_dim);
  const std::size_t groups = maps / capsule_dim;
  // index[o] = source offset within one sample for output offset o
  std::vector<std::size_t> index(count * capsule_dim);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t cap = (g * h + y) * w + x;
        for (std::size_t k = 0; k < capsule_dim; ++k) index[cap * capsule_dim + k] = ((g * capsule_dim + k) * h + y) * w + x;
      }
  const std::size_t per = maps * h * w;
  std::vector<double> out(b * per);
  auto fv = features.values();
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t o = 0; o < per; ++o) out[s * per + o] = fv[s * per + index[o]];
  Tensor result(Shape{b, count, capsule_dim}, std::move(out));

  if (tape.should_record({&features})) {
    tape.record("group_capsules", {features}, result, [features, index = std::move(index), per, b](std::span<const double> g) {
      auto gf = grad_target(features);
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t o = 0; o < per; ++o) gf[s * per + index[o]] += g[s * per + o];
    });
  }
  return result;
}

Tensor capsule_predictions(Tape& tape, const Tensor& u, const Tensor& weights) {
  if (u.rank() != 3 || weights.rank() != 4 || weights.dim(0) != u.dim(1) || weights.dim(3) != u.dim(2)) {
    throw ShapeError("capsule_predictions: u " + to_string(u.shape()) + " incompatible with W " +
                     to_string(weights.shape()));
  }
  const std::size_t b = u.dim(0), np = u.dim(1), in = u.dim(2), J = weights.dim(1), d = weights.dim(2);
  Tensor result(Shape{b, np, J, d});
  auto uv = u.values();
  auto wv = weights.values();
  auto out = result.mutable_values();
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < np; ++i) {
      const double* ui = uv.data() + (s * np + i) * in;
      for (std::size_t j = 0; j < J; ++j) {
        const double* W = wv.data() + (i * J + j) * d * in;
        double* o = out.data() + ((s * np + i) * J + j) * d;
        for (std::size_t r = 0; r < d; ++r) {
          double acc = 0.0;
          for (std::size_t k = 0; k < in; ++k) acc += W[r * in + k] * ui[k];
          o[r] = acc;
        }
      }
    }
  require_finite("capsule_predictions", result.values());

  if (tape.should_record({&u, &weights})) {
    tape.record("capsule_predictions", {u, weights}, result, [u, weights, b, np, in, J, d](std::span<const double> g) {
      auto gu = grad_target(u);
      auto gw = grad_target(weights);
      auto uv = u.values();
      auto wv = weights.values();
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t i = 0; i < np; ++i) {
          const double* ui = uv.data() + (s * np + i) * in;
          for (std::size_t j = 0; j < J; ++j) {
            const double* gij = g.data() + ((s * np + i) * J + j) * d;
            const std::size_t woff = (i * J + j) * d * in;
            for (std::size_t r = 0; r < d; ++r) {
              if (!gw.empty())
                for (std::size_t k = 0; k < in; ++k) gw[woff + r * in + k] += gij[r] * ui[k];
              if (!gu.empty())
                for (std::size_t k = 0; k < in; ++k) gu[(s * np + i) * in + k] += gij[r] * wv[woff + r * in + k];
            }
          }
        }
    });
  }
  return result;
}

Tensor routing_weighted_sum(Tape& tape, const Tensor& couplings, const Tensor& u_hat) {
  if (u_hat.rank() != 4 || couplings.rank() != 3 || couplings.dim(0) != u_hat.dim(0) ||
      couplings.dim(1) != u_hat.dim(1) || couplings.dim(2) != u_hat.dim(2)) {
    throw ShapeError("routing_weighted_sum: couplings " + to_string(couplings.shape()) + " vs predictions " +
                     to_string(u_hat.shape()));
  }
  const std::size_t b = u_hat.dim(0), np = u_hat.dim(1), J = u_hat.dim(2), d = u_hat.dim(3);
  Tensor result(Shape{b, J, d});
  auto cv = couplings.values();
  auto uv = u_hat.values();
  auto out = result.mutable_values();
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        const double c = cv[(s * np + i) * J + j];
        const double* u = uv.data() + ((s * np + i) * J + j) * d;
        double* o = out.data() + (s * J + j) * d;
        for (std::size_t k = 0; k < d; ++k) o[k] += c * u[k];
      }
  require_finite("routing_weighted_sum", result.values());

  if (tape.should_record({&couplings, &u_hat})) {
    tape.record("routing_weighted_sum", {couplings, u_hat}, result, [couplings, u_hat, b, np, J, d](std::span<const double> g) {
      auto gc = grad_target(couplings);
      auto gu = grad_target(u_hat);
      auto cv = couplings.values();
      auto uv = u_hat.values();
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t i = 0; i < np; ++i)
          for (std::size_t j = 0; j < J; ++j) {
            const std::size_t ci = (s * np + i) * J + j;
            const double* gs = g.data() + (s * J + j) * d;
            const std::size_t uo = ci * d;
            if (!gc.empty()) {
              double dot = 0.0;
              for (std::size_t k = 0; k < d; ++k) dot += gs[k] * uv[uo + k];
              gc[ci] += dot;
            }
            if (!gu.empty())
              for (std::size_t k = 0; k < d; ++k) gu[uo + k] += cv[ci] * gs[k];
          }
    });
  }
  return result;
}

Tensor routing_agreement(Tape& tape, const Tensor& u_hat, const Tensor& v) {
  if (u_hat.rank() != 4 || v.rank() != 3 || v.dim(0) != u_hat.dim(0) || v.dim(1) != u_hat.dim(2) ||
      v.dim(2) != u_hat.dim(3)) {
    throw ShapeError("routing_agreement: predictions " + to_string(u_hat.shape()) + " vs outputs " + to_string(v.shape()));
  }
  const std::size_t b = u_hat.dim(0), np = u_hat.dim(1), J = u_hat.dim(2), d = u_hat.dim(3);
  Tensor result(Shape{b, np, J});
  auto uv = u_hat.values();
  auto vv = v.values();
  auto out = result.mutable_values();
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        const double* u = uv.data() + ((s * np + i) * J + j) * d;
        const double* vj = vv.data() + (s * J + j) * d;
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += u[k] * vj[k];
        out[(s * np + i) * J + j] = dot;
      }
  require_finite("routing_agreement", result.values());

  if (tape.should_record({&u_hat, &v})) {
    tape.record("routing_agreement", {u_hat, v}, result, [u_hat, v, b, np, J, d](std::span<const double> g) {
      auto gu = grad_target(u_hat);
      auto gv = grad_target(v);
      auto uv = u_hat.values();
      auto vv = v.values();
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t i = 0; i < np; ++i)
          for (std::size_t j = 0; j < J; ++j) {
            const double gij = g[(s * np + i) * J + j];
            const std::size_t uo = ((s * np + i) * J + j) * d;
            const std::size_t vo = (s * J + j) * d;
            for (std::size_t k = 0; k < d; ++k) {
              if (!gu.empty()) gu[uo + k] += gij * vv[vo + k];
              if (!gv.empty()) gv[vo + k] += gij * uv[uo + k];
            }
          }
    });
  }
  return result;
}

RoutingResult dynamic_route(Tape& tape, const Tensor& u_hat, std::size_t iterations) {
  if (iterations < 1) throw ConfigError("dynamic routing needs at least one iteration");
  const bool batched = u_hat.rank() == 4;
  if (!batched && u_hat.rank() != 3) {
    throw ShapeError("dynamic_route expects [N_p, J, d] or [B, N_p, J, d], got " + to_string(u_hat.shape()));
  }
  const Tensor u = batched ? u_hat : reshape(tape, u_hat, {1, u_hat.dim(0), u_hat.dim(1), u_hat.dim(2)});
  const std::size_t b = u.dim(0), np = u.dim(1), J = u.dim(2);

  Tensor logits(Shape{b, np, J}, 0.0);
  Tensor couplings;
  Tensor v;
  RoutingState state;
  for (std::size_t it = 0; it < iterations; ++it) {
    couplings = softmax(tape, logits, 2);
    state.coupling_history.push_back(couplings.detach());
    v = squash(tape, routing_weighted_sum(tape, couplings, u));
    if (it + 1 < iterations) logits = add(tape, logits, routing_agreement(tape, u, v));
  }
  state.iterations = iterations;
  if (batched) {
    state.logits = logits;
    state.couplings = couplings;
    return {v, std::move(state)};
  }
  state.logits = reshape(tape, logits, {np, J});
  state.couplings = reshape(tape, couplings, {np, J});
  for (auto& c : state.coupling_history) c = Tensor(Shape{np, J}, std::vector<double>(c.values().begin(), c.values().end()));
  return {reshape(tape, v, {v.dim(1), v.dim(2)}), std::move(state)};
}

// CapsNetConfig

void CapsNetConfig::validate() const {
  if (input_shape.size() != 3) throw ConfigError("capsnet input shape must be [C,H,W]");
  if (routing_iterations < 1) throw ConfigError("routing iterations must be >= 1");
  if (capsules < 1 || capsule_out_dim < 1) throw ConfigError("capsule layer must be non-empty");
  if (conv1_filters < 1 || feature_maps < 1) throw ConfigError("conv filters must be >= 1");
  if (capsule_dim == 0 || feature_maps % capsule_dim != 0) {
    throw ConfigError("capsule size n_p=" + std::to_string(capsule_dim) + " must divide n_m=" +
                      std::to_string(feature_maps));
  }
}

nlohmann::json CapsNetConfig::to_json() const {
  return {{"input_shape", input_shape},
          {"conv1_filters", conv1_filters},
          {"conv1_kernel", conv1_kernel},
          {"conv1_stride", conv1_stride},
          {"feature_maps", feature_maps},
          {"conv2_kernel", conv2_kernel},
          {"conv2_stride", conv2_stride},
          {"capsule_dim", capsule_dim},
          {"capsules", capsules},
          {"capsule_out_dim", capsule_out_dim},
          {"routing_iterations", routing_iterations},
          {"leak", leak},
          {"decoder_hidden", decoder_hidden}};
}

CapsNetConfig CapsNetConfig::from_json(const nlohmann::json& j) {
  CapsNetConfig c;
  try {
    c.input_shape = j.at("input_shape").get<Shape>();
    c.conv1_filters = j.at("conv1_filters");
    c.conv1_kernel = j.at("conv1_kernel");
    c.conv1_stride = j.at("conv1_stride");
    c.feature_maps = j.at("feature_maps");
    c.conv2_kernel = j.at("conv2_kernel");
    c.conv2_stride = j.at("conv2_stride");
    c.capsule_dim = j.at("capsule_dim");
    c.capsules = j.at("capsules");
    c.capsule_out_dim = j.at("capsule_out_dim");
    c.routing_iterations = j.at("routing_iterations");
    c.leak = j.at("leak");
    c.decoder_hidden = j.at("decoder_hidden").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed capsnet config: ") + e.what());
  }
  c.validate();
  return c;
}

// CapsNet

namespace {

LayerStack build_decoder(const CapsNetConfig& c, Rng& rng) {
  LayerStack s(Shape{c.capsules * c.capsule_out_dim});
  for (auto width : c.decoder_hidden) {
    s.emplace<Dense>(s.output_shape()[0], width, rng);
    s.emplace<ActivationLayer>(Activation::leaky_relu, c.leak);
  }
  s.emplace<Dense>(s.output_shape()[0], shape_size(c.input_shape), rng);
  s.emplace<ActivationLayer>(Activation::sigmoid);
  return s;
}

Tensor init_routing_weights(const CapsNetConfig& c, std::size_t np, Rng& rng) {
  // Glorot-style uniform over the per-pair transform.
  const double limit = std::sqrt(6.0 / static_cast<double>(c.capsule_dim + c.capsule_out_dim));
  std::vector<double> v(np * c.capsules * c.capsule_out_dim * c.capsule_dim);
  for (double& x : v) x = rng.uniform(-limit, limit);
  Tensor t(Shape{np, c.capsules, c.capsule_out_dim, c.capsule_dim}, std::move(v));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

CapsNet::CapsNet(const CapsNetConfig& config, Rng& rng)
    : config_((config.validate(), config)),
      conv1_(Conv2d::Options{config.input_shape[0], config.conv1_filters, config.conv1_kernel, config.conv1_kernel,
                             config.conv1_stride, 0},
             rng),
      conv2_(Conv2d::Options{config.conv1_filters, config.feature_maps, config.conv2_kernel, config.conv2_kernel,
                             config.conv2_stride, 0},
             rng),
      decoder_(build_decoder(config, rng)) {
  const Shape maps = conv2_.output_shape(conv1_.output_shape(config_.input_shape));
  map_extent_ = {maps[1], maps[2]};
  primary_count_ = primary_capsule_count(maps[1], maps[2], config_.feature_maps, config_.capsule_dim);
  routing_weights_ = init_routing_weights(config_, primary_count_, rng);
}

CapsNet::CapsNet(const CapsNetConfig& config, Conv2d conv1, Conv2d conv2, Tensor weights, LayerStack decoder)
    : config_(config),
      conv1_(std::move(conv1)),
      conv2_(std::move(conv2)),
      routing_weights_(std::move(weights)),
      decoder_(std::move(decoder)) {
  const Shape maps = conv2_.output_shape(conv1_.output_shape(config_.input_shape));
  map_extent_ = {maps[1], maps[2]};
  primary_count_ = primary_capsule_count(maps[1], maps[2], config_.feature_maps, config_.capsule_dim);
}

CapsNet CapsNet::share() const {
  CapsNet net(config_, Conv2d(conv1_.options(), conv1_.weight(), conv1_.bias()),
              Conv2d(conv2_.options(), conv2_.weight(), conv2_.bias()), routing_weights_, decoder_.share());
  net.reconstruction_error_ = reconstruction_error_;
  return net;
}

CapsNet::Encoding CapsNet::encode(Tape& tape, const Tensor& batch) const {
  Tensor h = leaky_relu(tape, conv1_.forward(tape, batch), config_.leak);
  h = leaky_relu(tape, conv2_.forward(tape, h), config_.leak);
  const Tensor primary = squash(tape, group_capsules(tape, h, config_.capsule_dim));
  const Tensor u_hat = capsule_predictions(tape, primary, routing_weights_);
  auto routed = dynamic_route(tape, u_hat, config_.routing_iterations);
  return {routed.v, std::move(routed.state)};
}

Tensor CapsNet::class_scores(Tape& tape, const Tensor& capsules) const { return vector_norm(tape, capsules); }

Tensor CapsNet::embed(Tape& tape, const Tensor& batch) const {
  const Tensor v = encode(tape, batch).capsules;
  return reshape(tape, v, {v.dim(0), v.dim(1) * v.dim(2)});
}

Tensor CapsNet::decode(Tape& tape, const Tensor& capsules, std::span<const std::size_t> masks) const {
  if (capsules.rank() != 3 || capsules.dim(1) != config_.capsules || capsules.dim(2) != config_.capsule_out_dim) {
    throw ShapeError("decode expects [B, " + std::to_string(config_.capsules) + ", " +
                     std::to_string(config_.capsule_out_dim) + "], got " + to_string(capsules.shape()));
  }
  const std::size_t b = capsules.dim(0), J = capsules.dim(1), d = capsules.dim(2);
  if (masks.size() != b) throw ShapeError("decode needs one mask per sample");
  Tensor keep(capsules.shape(), 0.0);
  auto kv = keep.mutable_values();
  for (std::size_t s = 0; s < b; ++s) {
    if (masks[s] >= J) {
      throw IndexError("capsule mask " + std::to_string(masks[s]) + " out of range [0, " + std::to_string(J) + ")");
    }
    for (std::size_t k = 0; k < d; ++k) kv[(s * J + masks[s]) * d + k] = 1.0;
  }
  const Tensor masked = reshape(tape, mul(tape, capsules, keep), {b, J * d});
  const Tensor flat = decoder_.forward(tape, masked);
  Shape out{b};
  out.insert(out.end(), config_.input_shape.begin(), config_.input_shape.end());
  return reshape(tape, flat, out);
}

Tensor CapsNet::decode(Tape& tape, const Tensor& capsules, std::size_t mask) const {
  if (capsules.rank() != 2) throw ShapeError("single-sample decode expects [J, d]");
  const std::size_t m[1] = {mask};
  const Tensor img = decode(tape, reshape(tape, capsules, {1, capsules.dim(0), capsules.dim(1)}), m);
  return reshape(tape, img, config_.input_shape);
}

std::vector<std::size_t> CapsNet::longest_capsules(const Tensor& capsules) const {
  const std::size_t b = capsules.dim(0), J = capsules.dim(1), d = capsules.dim(2);
  std::vector<std::size_t> out(b, 0);
  auto v = capsules.values();
  for (std::size_t s = 0; s < b; ++s) {
    double best = -1.0;
    for (std::size_t j = 0; j < J; ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) sq += v[(s * J + j) * d + k] * v[(s * J + j) * d + k];
      if (sq > best) {
        best = sq;
        out[s] = j;
      }
    }
  }
  return out;
}

std::vector<NamedParameter> CapsNet::encoder_parameters() const {
  return {{"conv1.weight", conv1_.weight()},
          {"conv1.bias", conv1_.bias()},
          {"conv2.weight", conv2_.weight()},
          {"conv2.bias", conv2_.bias()},
          {"routing.weights", routing_weights_}};
}

std::vector<NamedParameter> CapsNet::parameters() const {
  auto out = encoder_parameters();
  for (auto& p : decoder_.parameters()) out.push_back({"decoder." + p.name, p.tensor});
  return out;
}

nlohmann::json CapsNet::manifest() const {
  nlohmann::json m{{"kind", "capsnet"},
                   {"config", config_.to_json()},
                   {"primary_capsules", primary_count_},
                   {"routing_iterations", config_.routing_iterations}};
  if (reconstruction_error_) m["reconstruction_error"] = *reconstruction_error_;
  return m;
}

CapsNet CapsNet::from_manifest(const nlohmann::json& manifest) {
  Rng rng(0);
  CapsNet net(CapsNetConfig::from_json(manifest.at("config")), rng);
  if (manifest.contains("reconstruction_error")) net.reconstruction_error_ = manifest.at("reconstruction_error").get<double>();
  return net;
}

std::vector<Image> generate_images(const CapsNet& model, std::span<const Image> seeds, std::size_t count,
                                   const GenerationOptions& options) {
  const auto err = model.reconstruction_error();
  if (!err || *err > options.max_reconstruction_error) {
    throw StateError("capsnet decoder is not trained to the required reconstruction error (" +
                     (err ? std::to_string(*err) : std::string("untrained")) + " > " +
                     std::to_string(options.max_reconstruction_error) + ")");
  }
  if (count > 0 && seeds.empty()) throw DataError("generate_images needs at least one seed image");
  const Shape& in = model.config().input_shape;
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const Image& seed = seeds[k % seeds.size()];
    if (seed.channels() != in[0] || seed.height() != in[1] || seed.width() != in[2]) {
      throw ShapeError("seed image does not match the model input shape " + to_string(in));
    }
    Tape tape = Tape::inference();
    auto enc = model.encode(tape, to_batch(std::span<const Image>(&seed, 1)));
    const auto mask = model.longest_capsules(enc.capsules);
    Tensor caps = enc.capsules.detach();
    if (options.noise_scale != 0.0) {
      Rng rng(derive_seed(options.seed, "noise", k));
      auto cv = caps.mutable_values();
      const std::size_t d = caps.dim(2);
      for (std::size_t i = 0; i < d; ++i) cv[mask[0] * d + i] += rng.uniform(-options.noise_scale, options.noise_scale);
    }
    const Tensor img = model.decode(tape, caps, mask);
    out.push_back(Image::from_chw(img.values(), in[0], in[1], in[2]));
  }
  return out;
}

}  // namespace oneshot
