#include "oneshot/models.hpp"

#include "oneshot/checkpoint.hpp"
#include "oneshot/errors.hpp"
#include "oneshot/ops.hpp"
#include "oneshot/random.hpp"

using nlohmann::json;

namespace oneshot {

std::string to_string(Approach a) {
  switch (a) {
    case Approach::merged:
      return "merged";
    case Approach::siamese_cnn:
      return "siamese-cnn";
    case Approach::siamese_capsnet:
      return "siamese-capsnet";
  }
  return "?";
}

Approach approach_from_string(const std::string& name) {
  if (name == "merged") return Approach::merged;
  if (name == "siamese-cnn") return Approach::siamese_cnn;
  if (name == "siamese-capsnet") return Approach::siamese_capsnet;
  throw ConfigError("unknown approach '" + name + "' (expected merged, siamese-cnn, siamese-capsnet)");
}

std::string to_string(LossKind k) { return k == LossKind::cross_entropy ? "cross-entropy" : "contrastive"; }

LossKind loss_for(Approach a) { return a == Approach::merged ? LossKind::cross_entropy : LossKind::contrastive; }

namespace {

Shape chw(const Shape& hwc) {
  if (hwc.size() != 3) throw ShapeError("image shape must be [H, W, C], got " + to_string(hwc));
  return {hwc[2], hwc[0], hwc[1]};
}

json merged_json(const MergedCnnOptions& o) {
  return {{"filters", o.filters},         {"pool_after", o.pool_after}, {"kernel", o.kernel},
          {"stride", o.stride},           {"padding", o.padding},       {"pool_window", o.pool_window},
          {"pool_stride", o.pool_stride}, {"hidden", o.hidden},         {"outputs", o.outputs}};
}

MergedCnnOptions merged_from_json(const json& j) {
  MergedCnnOptions o;
  o.filters = j.at("filters").get<std::vector<std::size_t>>();
  o.pool_after = j.at("pool_after").get<std::vector<std::size_t>>();
  o.kernel = j.at("kernel");
  o.stride = j.at("stride");
  o.padding = j.at("padding");
  o.pool_window = j.at("pool_window");
  o.pool_stride = j.at("pool_stride");
  o.hidden = j.at("hidden");
  o.outputs = j.at("outputs");
  return o;
}

json tower_json(const SiameseTowerOptions& o) {
  return {{"filters", o.filters}, {"pool_after", o.pool_after},   {"kernel", o.kernel},
          {"stride", o.stride},   {"padding", o.padding},         {"pool_window", o.pool_window},
          {"pool_stride", o.pool_stride}, {"dense", o.dense}};
}

SiameseTowerOptions tower_from_json(const json& j) {
  SiameseTowerOptions o;
  o.filters = j.at("filters").get<std::vector<std::size_t>>();
  o.pool_after = j.at("pool_after").get<std::vector<std::size_t>>();
  o.kernel = j.at("kernel");
  o.stride = j.at("stride");
  o.padding = j.at("padding");
  o.pool_window = j.at("pool_window");
  o.pool_stride = j.at("pool_stride");
  o.dense = j.at("dense").get<std::vector<std::size_t>>();
  return o;
}

}  // namespace

void ModelSpec::validate() const {
  if (image_shape.size() != 3 || shape_size(image_shape) == 0) {
    throw ConfigError("model image shape must be a non-empty [H, W, C], got " + to_string(image_shape));
  }
  contrastive.validate();
  if (approach == Approach::siamese_capsnet) {
    CapsNetConfig c = capsnet;
    c.input_shape = chw(image_shape);
    c.validate();
  }
  if (approach == Approach::merged && merged.outputs != 2) throw ConfigError("merged CNN needs exactly 2 outputs");
}

json ModelSpec::to_json() const {
  json j = {{"approach", to_string(approach)}, {"image_shape", image_shape}, {"margin", contrastive.margin}};
  switch (approach) {
    case Approach::merged:
      j["merge_mode"] = to_string(merge_mode);
      j["merged"] = merged_json(merged);
      break;
    case Approach::siamese_cnn:
      j["tower"] = tower_json(tower);
      break;
    case Approach::siamese_capsnet: {
      CapsNetConfig c = capsnet;
      c.input_shape = chw(image_shape);
      j["capsnet"] = c.to_json();
      break;
    }
  }
  return j;
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec s;
  try {
    s.approach = approach_from_string(j.at("approach"));
    s.image_shape = j.at("image_shape").get<Shape>();
    s.contrastive.margin = j.at("margin");
    if (j.contains("merge_mode")) s.merge_mode = merge_mode_from_string(j.at("merge_mode"));
    if (j.contains("merged")) s.merged = merged_from_json(j.at("merged"));
    if (j.contains("tower")) s.tower = tower_from_json(j.at("tower"));
    if (j.contains("capsnet")) s.capsnet = CapsNetConfig::from_json(j.at("capsnet"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model description: ") + e.what());
  }
  return s;
}

PairModel::PairModel(const ModelSpec& spec, std::uint64_t init_seed) : spec_(spec) {
  spec_.validate();
  Rng rng(derive_seed(init_seed, "init"));
  const Shape input = chw(spec_.image_shape);
  switch (spec_.approach) {
    case Approach::merged:
      net_.emplace(build_merged_cnn(merged_input_shape(spec_.image_shape, spec_.merge_mode), rng, spec_.merged));
      break;
    case Approach::siamese_cnn:
      net_.emplace(build_siamese_tower(input, rng, spec_.tower));
      break;
    case Approach::siamese_capsnet: {
      spec_.capsnet.input_shape = input;
      caps_.emplace(spec_.capsnet, rng);
      break;
    }
  }
}

std::pair<Tensor, Tensor> split_batches(std::span<const PairSample> batch) {
  std::vector<Image> a, b;
  a.reserve(batch.size());
  b.reserve(batch.size());
  for (const auto& p : batch) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  return {to_batch(a), to_batch(b)};
}

std::vector<int> pair_labels(std::span<const PairSample> batch) {
  std::vector<int> y;
  y.reserve(batch.size());
  for (const auto& p : batch) y.push_back(p.label);
  return y;
}

Tensor PairModel::merged_batch(std::span<const PairSample> batch) const {
  const Shape per = merged_input_shape(spec_.image_shape, spec_.merge_mode);
  std::vector<double> values;
  values.reserve(batch.size() * shape_size(per));
  for (const auto& p : batch) {
    if (p.a.shape() != spec_.image_shape) {
      throw ShapeError("pair image shape " + to_string(p.a.shape()) + " differs from model input " +
                       to_string(spec_.image_shape));
    }
    merge(p.a, p.b, spec_.merge_mode).data.append_chw(values);
  }
  Shape shape{batch.size()};
  shape.insert(shape.end(), per.begin(), per.end());
  return Tensor(shape, std::move(values));
}

Tensor PairModel::embed(Tape& tape, const Tensor& images) const {
  switch (spec_.approach) {
    case Approach::siamese_cnn:
      return net_->forward(tape, images);
    case Approach::siamese_capsnet:
      return caps_->embed(tape, images);
    case Approach::merged:
      break;
  }
  throw ShapeError("merged models have no per-image embedding");
}

PairModel::Output PairModel::forward(Tape& tape, std::span<const PairSample> batch) const {
  if (batch.empty()) throw DataError("empty pair batch");
  const std::vector<int> labels = pair_labels(batch);
  Output out;
  if (spec_.approach == Approach::merged) {
    const Tensor logits = net_->forward(tape, merged_batch(batch));
    out.loss = cross_entropy(tape, logits, labels);
    auto z = logits.values();
    for (std::size_t i = 0; i < batch.size(); ++i) out.scores.push_back(z[2 * i + 1] - z[2 * i]);
    return out;
  }
  for (const auto& p : batch) {
    if (p.a.shape() != spec_.image_shape || p.b.shape() != spec_.image_shape) {
      throw ShapeError("pair image shape differs from model input " + to_string(spec_.image_shape));
    }
  }
  const auto [xa, xb] = split_batches(batch);
  const Tensor ea = embed(tape, xa);
  const Tensor eb = embed(tape, xb);
  out.loss = contrastive_loss(tape, ea, eb, labels, spec_.contrastive);
  Tape probe = Tape::inference();
  const Tensor d = embedding_distance(probe, ea.detach(), eb.detach());
  out.scores.assign(d.values().begin(), d.values().end());
  return out;
}

PairModel::Output PairModel::evaluate(std::span<const PairSample> pairs, std::size_t batch_size) const {
  if (pairs.empty()) throw DataError("no pairs to evaluate");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  Output total;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, pairs.size() - start);
    Tape tape = Tape::inference();
    Output o = forward(tape, pairs.subspan(start, n));
    loss_sum += o.loss.item() * static_cast<double>(n);
    total.scores.insert(total.scores.end(), o.scores.begin(), o.scores.end());
  }
  total.loss = Tensor::scalar(loss_sum / static_cast<double>(pairs.size()));
  return total;
}

std::vector<double> PairModel::scores(std::span<const PairSample> pairs, std::size_t batch_size) const {
  return evaluate(pairs, batch_size).scores;
}

std::vector<NamedParameter> PairModel::parameters() const { return caps_ ? caps_->parameters() : net_->parameters(); }

void PairModel::save(const std::filesystem::path& path, const json& extra) const {
  write_checkpoint(path, json{{"kind", "pair-model"}, {"model", spec_.to_json()}, {"extra", extra}}, parameters());
}

PairModel::Loaded PairModel::load(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.manifest.value("kind", "") != "pair-model" || !ck.manifest.contains("model")) {
    throw FormatError(path.string() + " is not a pair-model checkpoint");
  }
  PairModel model(ModelSpec::from_json(ck.manifest.at("model")), 0);
  assign_parameters(ck.parameters, model.parameters());
  json extra = ck.manifest.value("extra", json::object());
  if (model.caps_ && extra.contains("reconstruction_error")) {
    model.caps_->set_reconstruction_error(extra.at("reconstruction_error").get<double>());
  }
  return {std::move(model), std::move(extra)};
}

}  // namespace oneshot
