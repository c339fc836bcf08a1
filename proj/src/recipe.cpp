#include "oneshot/recipe.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "oneshot/errors.hpp"

namespace oneshot {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile f;
  f.origin_ = origin;
  std::istringstream is(text);
  std::string raw, section;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    auto& sec = f.sections_[section];
    if (sec.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    sec[key] = Entry{trim(line.substr(eq + 1)), lineno, false};
  }
  return f;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + path.string());
  return parse(std::string(std::istreambuf_iterator<char>(is), {}), path.string());
}

const std::string* KeyValueFile::find(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  k->second.read = true;
  return &k->second.value;
}

bool KeyValueFile::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key);
}

namespace {

[[noreturn]] void bad_value(const std::string& origin, const std::string& section, const std::string& key,
                            const std::string& value, const char* expected) {
  throw ConfigError(origin + ": [" + section + "] " + key + " = '" + value + "' is not " + expected);
}

}  // namespace

std::string KeyValueFile::get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
  const std::string* v = find(section, key);
  return v ? *v : fallback;
}

double KeyValueFile::get_double(const std::string& section, const std::string& key, double fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v->c_str(), &end);
  if (v->empty() || *end != '\0' || errno == ERANGE) bad_value(origin_, section, key, *v, "a number");
  return d;
}

std::uint64_t KeyValueFile::get_uint(const std::string& section, const std::string& key, std::uint64_t fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  if (v->empty() || v->front() == '-') bad_value(origin_, section, key, *v, "a non-negative integer");
  char* end = nullptr;
  errno = 0;
  const unsigned long long u = std::strtoull(v->c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) bad_value(origin_, section, key, *v, "a non-negative integer");
  return u;
}

bool KeyValueFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "yes" || *v == "1" || *v == "on") return true;
  if (*v == "false" || *v == "no" || *v == "0" || *v == "off") return false;
  bad_value(origin_, section, key, *v, "a boolean");
}

std::vector<std::size_t> KeyValueFile::get_sizes(const std::string& section, const std::string& key,
                                                 const std::vector<std::size_t>& fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  if (trim(*v).empty() || *v == "none") return out;
  std::istringstream is(*v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    char* end = nullptr;
    if (item.empty() || item.front() == '-') bad_value(origin_, section, key, *v, "a comma-separated list of integers");
    const unsigned long long u = std::strtoull(item.c_str(), &end, 10);
    if (*end != '\0') bad_value(origin_, section, key, *v, "a comma-separated list of integers");
    out.push_back(u);
  }
  return out;
}

void KeyValueFile::reject_unread() const {
  for (const auto& [section, entries] : sections_)
    for (const auto& [key, entry] : entries)
      if (!entry.read) {
        throw ConfigError(origin_ + ":" + std::to_string(entry.line) + ": unknown key '" + key + "' in section [" +
                          section + "]");
      }
}

std::string to_string(DatasetKind d) {
  switch (d) {
    case DatasetKind::synthetic_anodes:
      return "synthetic-anodes";
    case DatasetKind::att_faces:
      return "att-faces";
    case DatasetKind::smallnorb:
      return "smallnorb";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& name) {
  if (name == "synthetic-anodes") return DatasetKind::synthetic_anodes;
  if (name == "att-faces") return DatasetKind::att_faces;
  if (name == "smallnorb") return DatasetKind::smallnorb;
  throw ConfigError("unknown dataset '" + name + "' (expected synthetic-anodes, att-faces, smallnorb)");
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::holdout:
      return "holdout";
    case Protocol::kfold:
      return "kfold";
    case Protocol::published_split:
      return "published-split";
  }
  return "?";
}

Protocol protocol_from_string(const std::string& name) {
  if (name == "holdout") return Protocol::holdout;
  if (name == "kfold") return Protocol::kfold;
  if (name == "published-split") return Protocol::published_split;
  throw ConfigError("unknown protocol '" + name + "' (expected holdout, kfold, published-split)");
}

namespace {

void read_capsnet(const KeyValueFile& f, const std::string& sec, CapsNetConfig& c) {
  c.conv1_filters = f.get_uint(sec, "caps_conv1_filters", c.conv1_filters);
  c.conv1_kernel = f.get_uint(sec, "caps_conv1_kernel", c.conv1_kernel);
  c.conv1_stride = f.get_uint(sec, "caps_conv1_stride", c.conv1_stride);
  c.feature_maps = f.get_uint(sec, "caps_feature_maps", c.feature_maps);
  c.conv2_kernel = f.get_uint(sec, "caps_conv2_kernel", c.conv2_kernel);
  c.conv2_stride = f.get_uint(sec, "caps_conv2_stride", c.conv2_stride);
  c.capsule_dim = f.get_uint(sec, "caps_capsule_dim", c.capsule_dim);
  c.capsules = f.get_uint(sec, "caps_capsules", c.capsules);
  c.capsule_out_dim = f.get_uint(sec, "caps_out_dim", c.capsule_out_dim);
  c.routing_iterations = f.get_uint(sec, "caps_routing_iterations", c.routing_iterations);
  c.leak = f.get_double(sec, "caps_leak", c.leak);
  c.decoder_hidden = f.get_sizes(sec, "caps_decoder_hidden", c.decoder_hidden);
}

void write_capsnet(std::ostringstream& os, const CapsNetConfig& c) {
  os << "caps_conv1_filters = " << c.conv1_filters << "\n"
     << "caps_conv1_kernel = " << c.conv1_kernel << "\n"
     << "caps_conv1_stride = " << c.conv1_stride << "\n"
     << "caps_feature_maps = " << c.feature_maps << "\n"
     << "caps_conv2_kernel = " << c.conv2_kernel << "\n"
     << "caps_conv2_stride = " << c.conv2_stride << "\n"
     << "caps_capsule_dim = " << c.capsule_dim << "\n"
     << "caps_capsules = " << c.capsules << "\n"
     << "caps_out_dim = " << c.capsule_out_dim << "\n"
     << "caps_routing_iterations = " << c.routing_iterations << "\n"
     << "caps_leak = " << num(c.leak) << "\n"
     << "caps_decoder_hidden = " << sizes(c.decoder_hidden) << "\n";
}

}  // namespace

AugmentConfig parse_augment_config(const KeyValueFile& f) {
  AugmentConfig a;
  const std::string s = "augment";
  a.multiplier = f.get_uint(s, "multiplier", a.multiplier);
  a.rotation_deg = {f.get_double(s, "rotation_min", a.rotation_deg.lo), f.get_double(s, "rotation_max", a.rotation_deg.hi)};
  a.brightness = {f.get_double(s, "brightness_min", a.brightness.lo), f.get_double(s, "brightness_max", a.brightness.hi)};
  a.circle_count = {f.get_double(s, "circles_min", a.circle_count.lo), f.get_double(s, "circles_max", a.circle_count.hi)};
  a.circle_radius = {f.get_double(s, "radius_min", a.circle_radius.lo), f.get_double(s, "radius_max", a.circle_radius.hi)};
  a.circle_intensity = {f.get_double(s, "intensity_min", a.circle_intensity.lo),
                        f.get_double(s, "intensity_max", a.circle_intensity.hi)};
  a.blur_sigma = f.get_double(s, "blur_sigma", a.blur_sigma);
  a.contour_noise = f.get_double(s, "contour_noise", a.contour_noise);
  a.contour_sigma = f.get_double(s, "contour_sigma", a.contour_sigma);
  a.background = static_cast<float>(f.get_double(s, "background", a.background));
  a.seed = f.get_uint(s, "seed", a.seed);
  a.validate();
  return a;
}

ExperimentRecipe ExperimentRecipe::parse(const std::string& text, const std::string& origin) {
  const KeyValueFile f = KeyValueFile::parse(text, origin);
  ExperimentRecipe r;
  const std::string ex = "experiment", da = "data", mo = "model", tr = "train", ge = "generate";

  r.name = f.get_string(ex, "name", r.name);
  r.seed = f.get_uint(ex, "seed", r.seed);
  r.model.approach = approach_from_string(f.get_string(ex, "approach", to_string(r.model.approach)));
  r.protocol = protocol_from_string(f.get_string(ex, "protocol", to_string(r.protocol)));
  r.holdout_classes = f.get_uint(ex, "holdout_classes", r.holdout_classes);
  r.validation_classes = f.get_uint(ex, "validation_classes", r.validation_classes);
  r.folds = f.get_uint(ex, "folds", r.folds);
  r.train_pairs = f.get_uint(ex, "train_pairs", r.train_pairs);
  r.validation_pairs = f.get_uint(ex, "validation_pairs", r.validation_pairs);
  r.test_pairs = f.get_uint(ex, "test_pairs", r.test_pairs);
  r.pair_balance = f.get_double(ex, "pair_balance", r.pair_balance);
  r.swap_pairs = f.get_bool(ex, "swap_pairs", r.swap_pairs);

  r.dataset = dataset_kind_from_string(f.get_string(da, "dataset", to_string(r.dataset)));
  r.data_dir = f.get_string(da, "dir", r.data_dir);
  r.synthetic_classes = f.get_uint(da, "classes", r.synthetic_classes);
  r.synthetic_views = f.get_uint(da, "views", r.synthetic_views);
  auto& s = r.synthetic;
  s.height = f.get_uint(da, "height", s.height);
  s.width = f.get_uint(da, "width", s.width);
  s.min_stubs = f.get_uint(da, "min_stubs", s.min_stubs);
  s.max_stubs = f.get_uint(da, "max_stubs", s.max_stubs);
  s.min_stub_radius = f.get_double(da, "min_stub_radius", s.min_stub_radius);
  s.max_stub_radius = f.get_double(da, "max_stub_radius", s.max_stub_radius);
  s.texture_noise = f.get_double(da, "texture_noise", s.texture_noise);
  s.bake_brightness = f.get_double(da, "bake_brightness", s.bake_brightness);
  s.bake_texture = f.get_double(da, "bake_texture", s.bake_texture);
  s.seed = f.get_uint(da, "synthetic_seed", s.seed);
  r.norb_identity = norb_identity_from_string(f.get_string(da, "norb_identity", to_string(r.norb_identity)));
  r.downscale = f.get_uint(da, "downscale", r.downscale);
  r.grayscale = f.get_bool(da, "grayscale", r.grayscale);
  r.max_classes = f.get_uint(da, "max_classes", r.max_classes);

  auto& m = r.model;
  m.merge_mode = merge_mode_from_string(f.get_string(mo, "merge_mode", to_string(m.merge_mode)));
  m.merged.filters = f.get_sizes(mo, "merged_filters", m.merged.filters);
  m.merged.pool_after = f.get_sizes(mo, "merged_pool_after", m.merged.pool_after);
  m.merged.kernel = f.get_uint(mo, "merged_kernel", m.merged.kernel);
  m.merged.hidden = f.get_uint(mo, "merged_hidden", m.merged.hidden);
  m.tower.filters = f.get_sizes(mo, "tower_filters", m.tower.filters);
  m.tower.pool_after = f.get_sizes(mo, "tower_pool_after", m.tower.pool_after);
  m.tower.kernel = f.get_uint(mo, "tower_kernel", m.tower.kernel);
  m.tower.dense = f.get_sizes(mo, "tower_dense", m.tower.dense);
  m.contrastive.margin = f.get_double(mo, "margin", m.contrastive.margin);
  read_capsnet(f, mo, m.capsnet);

  auto& t = r.train;
  t.batch_size = f.get_uint(tr, "batch_size", t.batch_size);
  t.epochs = f.get_uint(tr, "epochs", t.epochs);
  t.learning_rate = f.get_double(tr, "learning_rate", t.learning_rate);
  t.rmsprop.rho = f.get_double(tr, "rho", t.rmsprop.rho);
  t.rmsprop.eps = f.get_double(tr, "epsilon", t.rmsprop.eps);
  t.early_stopping.enabled = f.get_bool(tr, "early_stopping", t.early_stopping.enabled);
  t.early_stopping.patience = f.get_uint(tr, "patience", t.early_stopping.patience);
  t.early_stopping.min_delta = f.get_double(tr, "min_delta", t.early_stopping.min_delta);
  t.early_stopping.monitor = f.get_string(tr, "monitor", t.early_stopping.monitor);
  t.precision = f.get_string(tr, "precision", t.precision);

  r.augment = f.get_bool("augment", "enabled", r.augment);
  r.augmentation = parse_augment_config(f);

  r.generate = f.get_bool(ge, "enabled", r.generate);
  r.generate_count = f.get_uint(ge, "count", r.generate_count);
  r.reconstruction.epochs = f.get_uint(ge, "recon_epochs", r.reconstruction.epochs);
  r.reconstruction.batch_size = f.get_uint(ge, "recon_batch_size", r.reconstruction.batch_size);
  r.reconstruction.learning_rate = f.get_double(ge, "recon_learning_rate", r.reconstruction.learning_rate);
  r.reconstruction.loss_weight = f.get_double(ge, "recon_loss_weight", r.reconstruction.loss_weight);
  r.generation.noise_scale = f.get_double(ge, "noise_scale", r.generation.noise_scale);
  r.generation.max_reconstruction_error =
      f.get_double(ge, "max_reconstruction_error", r.generation.max_reconstruction_error);
  read_capsnet(f, ge, r.generator);

  f.reject_unread();
  r.train.seed = r.seed;
  r.validate();
  return r;
}

ExperimentRecipe ExperimentRecipe::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read recipe " + path.string());
  return parse(std::string(std::istreambuf_iterator<char>(is), {}), path.string());
}

void ExperimentRecipe::validate() const {
  if (name.empty() || name.find_first_of("/\\\n") != std::string::npos) throw ConfigError("recipe name must be a plain word");
  if (!(pair_balance >= 0.0 && pair_balance <= 1.0)) throw ConfigError("pair_balance must be in [0, 1]");
  if (train_pairs == 0) throw ConfigError("train_pairs must be >= 1");
  if (test_pairs == 0) throw ConfigError("test_pairs must be >= 1");
  if (downscale == 0) throw ConfigError("downscale must be >= 1");
  train.validate();
  if (augment) augmentation.validate();
  model.contrastive.validate();
  if (model.approach == Approach::merged && model.merged.outputs != 2) throw ConfigError("merged CNN needs 2 outputs");
  if (model.approach == Approach::siamese_capsnet) {
    // the real input shape is only known after loading, the structural checks do not need it
    CapsNetConfig c = model.capsnet;
    c.input_shape = {1, 1, 1};
    c.validate();
  }

  if (dataset == DatasetKind::synthetic_anodes) {
    synthetic.validate();
    if (synthetic_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
    if (synthetic_views < 2) throw ConfigError("synthetic dataset needs at least 2 views per class for same-pairs");
  }
  const std::size_t per_class = dataset == DatasetKind::synthetic_anodes ? synthetic_views
                                : dataset == DatasetKind::att_faces     ? 10
                                                                        : 0;
  switch (protocol) {
    case Protocol::published_split:
      if (dataset != DatasetKind::smallnorb) throw ConfigError("protocol published-split applies to smallnorb only");
      break;
    case Protocol::kfold:
      if (folds < 2) throw ConfigError("kfold protocol needs folds >= 2");
      if (per_class != 0 && folds > per_class) {
        throw ConfigError("folds = " + std::to_string(folds) + " exceeds the " + std::to_string(per_class) +
                          " images per class of " + to_string(dataset) + " (k must not exceed the smallest class)");
      }
      break;
    case Protocol::holdout: {
      if (holdout_classes < 1) throw ConfigError("holdout protocol needs holdout_classes >= 1");
      std::size_t classes = dataset == DatasetKind::synthetic_anodes ? synthetic_classes
                            : dataset == DatasetKind::att_faces     ? 40
                                                                    : 0;
      if (max_classes != 0 && classes != 0) classes = std::min(classes, max_classes);
      if (classes != 0 && holdout_classes + validation_classes + 2 > classes) {
        throw ConfigError("holdout_classes + validation_classes = " +
                          std::to_string(holdout_classes + validation_classes) + " leaves fewer than 2 of " +
                          std::to_string(classes) + " classes for training");
      }
      if (validation_classes == 1 && pair_balance < 1.0) {
        throw ConfigError("validation_classes = 1 cannot provide different-class pairs");
      }
      if (holdout_classes == 1 && pair_balance < 1.0) throw ConfigError("holdout_classes = 1 cannot provide different-class pairs");
      break;
    }
  }
  if (generate) {
    if (reconstruction.epochs == 0 || reconstruction.batch_size == 0) {
      throw ConfigError("generate: recon_epochs and recon_batch_size must be >= 1");
    }
    if (!(generation.noise_scale >= 0.0)) throw ConfigError("generate: noise_scale must be >= 0");
  }
}

std::string ExperimentRecipe::to_text() const {
  std::ostringstream os;
  os << "[experiment]\n"
     << "name = " << name << "\n"
     << "seed = " << seed << "\n"
     << "approach = " << to_string(model.approach) << "\n"
     << "protocol = " << to_string(protocol) << "\n"
     << "holdout_classes = " << holdout_classes << "\n"
     << "validation_classes = " << validation_classes << "\n"
     << "folds = " << folds << "\n"
     << "train_pairs = " << train_pairs << "\n"
     << "validation_pairs = " << validation_pairs << "\n"
     << "test_pairs = " << test_pairs << "\n"
     << "pair_balance = " << num(pair_balance) << "\n"
     << "swap_pairs = " << (swap_pairs ? "true" : "false") << "\n\n";
  os << "[data]\n"
     << "dataset = " << to_string(dataset) << "\n";
  if (!data_dir.empty()) os << "dir = " << data_dir << "\n";
  os << "classes = " << synthetic_classes << "\n"
     << "views = " << synthetic_views << "\n"
     << "height = " << synthetic.height << "\n"
     << "width = " << synthetic.width << "\n"
     << "min_stubs = " << synthetic.min_stubs << "\n"
     << "max_stubs = " << synthetic.max_stubs << "\n"
     << "min_stub_radius = " << num(synthetic.min_stub_radius) << "\n"
     << "max_stub_radius = " << num(synthetic.max_stub_radius) << "\n"
     << "texture_noise = " << num(synthetic.texture_noise) << "\n"
     << "bake_brightness = " << num(synthetic.bake_brightness) << "\n"
     << "bake_texture = " << num(synthetic.bake_texture) << "\n"
     << "synthetic_seed = " << synthetic.seed << "\n"
     << "norb_identity = " << to_string(norb_identity) << "\n"
     << "downscale = " << downscale << "\n"
     << "grayscale = " << (grayscale ? "true" : "false") << "\n"
     << "max_classes = " << max_classes << "\n\n";
  os << "[model]\n"
     << "merge_mode = " << to_string(model.merge_mode) << "\n"
     << "merged_filters = " << sizes(model.merged.filters) << "\n"
     << "merged_pool_after = " << (model.merged.pool_after.empty() ? "none" : sizes(model.merged.pool_after)) << "\n"
     << "merged_kernel = " << model.merged.kernel << "\n"
     << "merged_hidden = " << model.merged.hidden << "\n"
     << "tower_filters = " << sizes(model.tower.filters) << "\n"
     << "tower_pool_after = " << (model.tower.pool_after.empty() ? "none" : sizes(model.tower.pool_after)) << "\n"
     << "tower_kernel = " << model.tower.kernel << "\n"
     << "tower_dense = " << sizes(model.tower.dense) << "\n"
     << "margin = " << num(model.contrastive.margin) << "\n";
  write_capsnet(os, model.capsnet);
  os << "\n[train]\n"
     << "batch_size = " << train.batch_size << "\n"
     << "epochs = " << train.epochs << "\n"
     << "learning_rate = " << num(train.learning_rate) << "\n"
     << "rho = " << num(train.rmsprop.rho) << "\n"
     << "epsilon = " << num(train.rmsprop.eps) << "\n"
     << "early_stopping = " << (train.early_stopping.enabled ? "true" : "false") << "\n"
     << "patience = " << train.early_stopping.patience << "\n"
     << "min_delta = " << num(train.early_stopping.min_delta) << "\n"
     << "monitor = " << train.early_stopping.monitor << "\n"
     << "precision = " << train.precision << "\n\n";
  const auto& a = augmentation;
  os << "[augment]\n"
     << "enabled = " << (augment ? "true" : "false") << "\n"
     << "multiplier = " << a.multiplier << "\n"
     << "rotation_min = " << num(a.rotation_deg.lo) << "\n"
     << "rotation_max = " << num(a.rotation_deg.hi) << "\n"
     << "brightness_min = " << num(a.brightness.lo) << "\n"
     << "brightness_max = " << num(a.brightness.hi) << "\n"
     << "circles_min = " << num(a.circle_count.lo) << "\n"
     << "circles_max = " << num(a.circle_count.hi) << "\n"
     << "radius_min = " << num(a.circle_radius.lo) << "\n"
     << "radius_max = " << num(a.circle_radius.hi) << "\n"
     << "intensity_min = " << num(a.circle_intensity.lo) << "\n"
     << "intensity_max = " << num(a.circle_intensity.hi) << "\n"
     << "blur_sigma = " << num(a.blur_sigma) << "\n"
     << "contour_noise = " << num(a.contour_noise) << "\n"
     << "contour_sigma = " << num(a.contour_sigma) << "\n"
     << "background = " << num(a.background) << "\n"
     << "seed = " << a.seed << "\n\n";
  os << "[generate]\n"
     << "enabled = " << (generate ? "true" : "false") << "\n"
     << "count = " << generate_count << "\n"
     << "recon_epochs = " << reconstruction.epochs << "\n"
     << "recon_batch_size = " << reconstruction.batch_size << "\n"
     << "recon_learning_rate = " << num(reconstruction.learning_rate) << "\n"
     << "recon_loss_weight = " << num(reconstruction.loss_weight) << "\n"
     << "noise_scale = " << num(generation.noise_scale) << "\n"
     << "max_reconstruction_error = " << num(generation.max_reconstruction_error) << "\n";
  write_capsnet(os, generator);
  return os.str();
}

}  // namespace oneshot
