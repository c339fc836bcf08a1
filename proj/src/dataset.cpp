#include "oneshot/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "oneshot/errors.hpp"
#include "oneshot/random.hpp"

namespace oneshot {

Shape Dataset::image_shape() const {
  if (images.empty()) throw DataError("dataset '" + name + "' is empty");
  return images.front().shape();
}

void Dataset::validate() const {
  if (images.size() != class_ids.size()) {
    throw DataError("dataset '" + name + "': " + std::to_string(images.size()) + " images but " +
                    std::to_string(class_ids.size()) + " labels");
  }
  if (!sources.empty() && sources.size() != images.size()) {
    throw DataError("dataset '" + name + "': source list length differs from image count");
  }
  for (const auto& [key, values] : attributes) {
    if (values.size() != images.size()) throw DataError("dataset '" + name + "': attribute '" + key + "' has wrong length");
  }
  for (const auto& img : images) {
    if (img.shape() != images.front().shape()) {
      throw DataError("dataset '" + name + "': ragged image shapes " + to_string(img.shape()) + " vs " +
                      to_string(images.front().shape()));
    }
  }
}

std::vector<int> Dataset::classes() const {
  std::vector<int> out(class_ids);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::map<int, std::vector<std::size_t>> Dataset::indices_by_class() const {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < class_ids.size(); ++i) out[class_ids[i]].push_back(i);
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.name = name;
  out.synthetic = synthetic;
  for (std::size_t i : indices) {
    if (i >= images.size()) throw IndexError("subset index " + std::to_string(i) + " out of range");
    out.images.push_back(images[i]);
    out.class_ids.push_back(class_ids[i]);
    if (!sources.empty()) out.sources.push_back(sources[i]);
    for (const auto& [key, values] : attributes) out.attributes[key].push_back(values[i]);
  }
  return out;
}

Dataset Dataset::subset_classes(const std::vector<int>& keep) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), class_ids[i]) != keep.end()) idx.push_back(i);
  }
  return subset(idx);
}

Dataset Dataset::relabelled(const std::string& key) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) throw DataError("dataset '" + name + "' has no attribute '" + key + "'");
  Dataset out = *this;
  out.class_ids = it->second;
  return out;
}

Dataset Dataset::merged_with(const Dataset& other) const {
  if (!empty() && !other.empty() && image_shape() != other.image_shape()) {
    throw DataError("cannot merge datasets with image shapes " + to_string(image_shape()) + " and " +
                    to_string(other.image_shape()));
  }
  if (sources.empty() != other.sources.empty() && !empty() && !other.empty()) {
    throw DataError("cannot merge a dataset with sources and one without");
  }
  Dataset out = *this;
  out.synthetic = synthetic || other.synthetic;
  out.images.insert(out.images.end(), other.images.begin(), other.images.end());
  out.class_ids.insert(out.class_ids.end(), other.class_ids.begin(), other.class_ids.end());
  out.sources.insert(out.sources.end(), other.sources.begin(), other.sources.end());
  for (auto& [key, values] : out.attributes) {
    auto it = other.attributes.find(key);
    if (it == other.attributes.end()) throw DataError("attribute '" + key + "' missing from merged dataset");
    values.insert(values.end(), it->second.begin(), it->second.end());
  }
  return out;
}

namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
};

}  // namespace

std::string content_hash(const Dataset& data) {
  Fnv f;
  f.u64(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& img = data.images[i];
    f.u64(img.height());
    f.u64(img.width());
    f.u64(img.channels());
    f.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(data.class_ids[i])));
    auto px = img.pixels();
    f.bytes(px.data(), px.size() * sizeof(float));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(f.h));
  return buf;
}

void SyntheticAnodeSpec::validate() const {
  if (height < 8 || width < 8) throw ConfigError("synthetic anode images must be at least 8x8");
  if (min_stubs < 1 || max_stubs < min_stubs) throw ConfigError("stub count range must satisfy 1 <= min <= max");
  if (!(min_stub_radius > 0.0) || max_stub_radius < min_stub_radius) {
    throw ConfigError("stub radius range must satisfy 0 < min <= max");
  }
  if (2.0 * max_stub_radius + 2.0 > 0.8 * static_cast<double>(std::min(height, width))) {
    throw ConfigError("stub radius too large for the image");
  }
  if (texture_noise < 0.0 || bake_brightness < 0.0 || bake_texture < 0.0) {
    throw ConfigError("noise and baking amplitudes must be >= 0");
  }
}

AnodeGeometry anode_geometry(const SyntheticAnodeSpec& spec, std::size_t class_index) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "class", class_index));
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  AnodeGeometry g;
  g.top = std::floor(0.1 * h);
  g.left = std::floor(0.1 * w);
  g.bottom = h - g.top;
  g.right = w - g.left;
  g.base_brightness = rng.uniform(0.45, 0.65);
  const auto n = static_cast<std::size_t>(rng.between(static_cast<long>(spec.min_stubs), static_cast<long>(spec.max_stubs)));
  for (std::size_t s = 0; s < n; ++s) {
    const double r = rng.uniform(spec.min_stub_radius, spec.max_stub_radius);
    const double cy = rng.uniform(g.top + r + 1.0, g.bottom - r - 1.0);
    const double cx = rng.uniform(g.left + r + 1.0, g.right - r - 1.0);
    g.stubs.push_back({cy, cx, r});
  }
  return g;
}

namespace {

// Separable blur with a 3-tap [1 2 1]/4 kernel, edges clamped.
std::vector<double> smooth(const std::vector<double>& in, std::size_t h, std::size_t w) {
  std::vector<double> tmp(in.size()), out(in.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xl = x == 0 ? 0 : x - 1, xr = x + 1 == w ? x : x + 1;
      tmp[y * w + x] = 0.25 * in[y * w + xl] + 0.5 * in[y * w + x] + 0.25 * in[y * w + xr];
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t yu = y == 0 ? 0 : y - 1, yd = y + 1 == h ? y : y + 1;
      out[y * w + x] = 0.25 * tmp[yu * w + x] + 0.5 * tmp[y * w + x] + 0.25 * tmp[yd * w + x];
    }
  return out;
}

std::vector<double> noise_field(Rng& rng, std::size_t h, std::size_t w, double amplitude) {
  std::vector<double> f(h * w);
  for (auto& v : f) v = rng.normal();
  f = smooth(smooth(f, h, w), h, w);
  // two passes per axis give the 5-tap kernel [1 4 6 4 1]/16, whose 2-D
  // version scales the noise standard deviation by 70/256
  for (auto& v : f) v *= amplitude * 256.0 / 70.0;
  return f;
}

}  // namespace

std::vector<bool> stub_mask(const AnodeGeometry& g, std::size_t height, std::size_t width) {
  std::vector<bool> mask(height * width, false);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
      for (const auto& s : g.stubs) {
        if ((py - s.y) * (py - s.y) + (px - s.x) * (px - s.x) <= s.radius * s.radius) {
          mask[y * width + x] = true;
          break;
        }
      }
    }
  return mask;
}

Dataset generate_synthetic_anodes(const SyntheticAnodeSpec& spec, std::size_t n_classes, std::size_t views_per_class) {
  spec.validate();
  if (n_classes == 0 || views_per_class == 0) throw ConfigError("need at least one class and one view");
  const std::size_t h = spec.height, w = spec.width;
  Dataset data;
  data.name = "synthetic-anodes";
  data.synthetic = true;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const AnodeGeometry g = anode_geometry(spec, c);
    const std::vector<bool> stubs = stub_mask(g, h, w);
    Rng texture_rng(derive_seed(spec.seed, "class", c, 1));
    const std::vector<double> texture = noise_field(texture_rng, h, w, spec.texture_noise);
    for (std::size_t v = 0; v < views_per_class; ++v) {
      Rng view_rng(derive_seed(spec.seed, "view", c, v));
      const double shift = view_rng.uniform(-spec.bake_brightness, spec.bake_brightness);
      const std::vector<double> baked = noise_field(view_rng, h, w, spec.bake_texture);
      std::vector<float> px(h * w);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t i = y * w + x;
          const double fy = static_cast<double>(y) + 0.5, fx = static_cast<double>(x) + 0.5;
          const bool on_block = fy >= g.top && fy < g.bottom && fx >= g.left && fx < g.right;
          double value;
          if (!on_block) {
            value = 0.0;
          } else if (stubs[i]) {
            value = 0.1 + 0.25 * shift;
          } else {
            value = g.base_brightness + shift + texture[i] + baked[i];
            value = std::max(value, 0.3);
          }
          px[i] = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
      data.images.emplace_back(h, w, 1, std::move(px));
      data.class_ids.push_back(static_cast<int>(c));
      data.sources.push_back("synthetic:seed=" + std::to_string(spec.seed) + ":class=" + std::to_string(c) +
                             ":view=" + std::to_string(v));
    }
  }
  return data;
}

FoldSplit kfold_split(const Dataset& data, std::size_t k, std::size_t fold_index, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2, got " + std::to_string(k));
  if (fold_index >= k) throw ConfigError("fold index " + std::to_string(fold_index) + " >= k=" + std::to_string(k));
  data.validate();
  const auto by_class = data.indices_by_class();
  for (const auto& [cls, idx] : by_class) {
    if (idx.size() < k) {
      throw ConfigError("k=" + std::to_string(k) + " exceeds the smallest class size (class " + std::to_string(cls) +
                        " has " + std::to_string(idx.size()) + " images)");
    }
  }
  std::vector<std::size_t> train_idx, val_idx;
  for (const auto& [cls, idx] : by_class) {
    std::vector<std::size_t> order(idx);
    Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(static_cast<std::int64_t>(cls))));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t j = 0; j < order.size(); ++j) (j % k == fold_index ? val_idx : train_idx).push_back(order[j]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  return {data.subset(train_idx), data.subset(val_idx), val_idx};
}

}  // namespace oneshot
