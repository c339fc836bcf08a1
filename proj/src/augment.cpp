#include "oneshot/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "oneshot/errors.hpp"
#include "oneshot/random.hpp"

namespace oneshot {

void AugmentConfig::validate() const {
  auto ordered = [](const Range& r, const char* name) {
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
      throw ConfigError(std::string(name) + " range must satisfy lo <= hi");
    }
  };
  ordered(rotation_deg, "rotation");
  ordered(brightness, "brightness");
  ordered(circle_count, "circle count");
  ordered(circle_radius, "circle radius");
  ordered(circle_intensity, "circle intensity");
  if (brightness.lo < -1.0 || brightness.hi > 1.0) throw ConfigError("brightness deltas must lie in [-1, 1]");
  if (circle_count.lo < 0.0 || circle_count.lo != std::floor(circle_count.lo) ||
      circle_count.hi != std::floor(circle_count.hi)) {
    throw ConfigError("circle count range must hold non-negative integers");
  }
  if (circle_radius.lo < 1.0) throw ConfigError("circle radii must be >= 1 pixel");
  if (blur_sigma < 0.0 || contour_sigma < 0.0) throw ConfigError("blur sigmas must be >= 0");
  if (contour_noise < 0.0) throw ConfigError("contour noise amplitude must be >= 0");
  if (background < 0.0f || background > 1.0f) throw ConfigError("background must lie in [0, 1]");
  if (multiplier == 0) throw ConfigError("augmentation multiplier must be >= 1");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.rotation_deg = {0.0, 0.0};
  c.brightness = {0.0, 0.0};
  c.circle_count = {0.0, 0.0};
  c.contour_noise = 0.0;
  return c;
}

Image rotate_center(const Image& img, double angle_deg, float background) {
  if (!std::isfinite(angle_deg)) throw ConfigError("rotation angle must be finite");
  if (angle_deg == 0.0 || img.empty()) return img;
  const std::size_t h = img.height(), w = img.width(), c = img.channels();
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  const double tol = 1e-9;
  const double ymax = static_cast<double>(h - 1), xmax = static_cast<double>(w - 1);
  std::vector<float> out(img.size(), background);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      double sx = cx + ct * dx - st * dy;
      double sy = cy + st * dx + ct * dy;
      if (sx < -tol || sy < -tol || sx > xmax + tol || sy > ymax + tol) continue;
      sx = std::clamp(sx, 0.0, xmax);
      sy = std::clamp(sy, 0.0, ymax);
      const auto x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t k = 0; k < c; ++k) {
        const double v = (1 - fy) * ((1 - fx) * img.at(y0, x0, k) + fx * img.at(y0, x1, k)) +
                         fy * ((1 - fx) * img.at(y1, x0, k) + fx * img.at(y1, x1, k));
        out[(y * w + x) * c + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return Image(h, w, c, std::move(out));
}

Image adjust_brightness(const Image& img, double delta) {
  if (!(std::abs(delta) <= 1.0)) throw ConfigError("brightness delta must lie in [-1, 1]");
  if (delta == 0.0) return img;
  std::vector<float> out(img.pixels().begin(), img.pixels().end());
  for (auto& p : out) p = static_cast<float>(std::clamp(static_cast<double>(p) + delta, 0.0, 1.0));
  return Image(img.height(), img.width(), img.channels(), std::move(out));
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

// Blurs an H x W x C field in place; edges clamp.
void blur_field(std::vector<double>& f, std::size_t h, std::size_t w, std::size_t c, double sigma) {
  if (sigma <= 0.0) return;
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(f.size());
  const auto clampi = [](long v, long hi) { return static_cast<std::size_t>(std::clamp(v, 0L, hi)); };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (long t = -r; t <= r; ++t) {
          s += k[static_cast<std::size_t>(t + r)] * f[(y * w + clampi(static_cast<long>(x) + t, static_cast<long>(w) - 1)) * c + ch];
        }
        tmp[(y * w + x) * c + ch] = s;
      }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (long t = -r; t <= r; ++t) {
          s += k[static_cast<std::size_t>(t + r)] * tmp[(clampi(static_cast<long>(y) + t, static_cast<long>(h) - 1) * w + x) * c + ch];
        }
        f[(y * w + x) * c + ch] = s;
      }
}

// Adds a single-channel H x W layer to every channel, clamping to [0, 1].
Image add_layer(const Image& img, const std::vector<double>& layer) {
  const std::size_t c = img.channels();
  auto px = img.pixels();
  std::vector<float> out(px.size());
  for (std::size_t i = 0; i < img.height() * img.width(); ++i)
    for (std::size_t k = 0; k < c; ++k) {
      out[i * c + k] = static_cast<float>(std::clamp(static_cast<double>(px[i * c + k]) + layer[i], 0.0, 1.0));
    }
  return Image(img.height(), img.width(), c, std::move(out));
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  std::vector<double> f(img.pixels().begin(), img.pixels().end());
  blur_field(f, img.height(), img.width(), img.channels(), sigma);
  std::vector<float> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = static_cast<float>(std::clamp(f[i], 0.0, 1.0));
  return Image(img.height(), img.width(), img.channels(), std::move(out));
}

Image overlay_blurred_circles(const Image& img, std::size_t count, Range radii, Range intensities, double sigma,
                              std::uint64_t seed) {
  if (count == 0 || img.empty()) return img;
  if (radii.lo > radii.hi || intensities.lo > intensities.hi) throw ConfigError("circle ranges must satisfy lo <= hi");
  const std::size_t h = img.height(), w = img.width();
  Rng rng(seed);
  std::vector<double> layer(h * w, 0.0);
  for (std::size_t n = 0; n < count; ++n) {
    const double cy = rng.uniform(0.0, static_cast<double>(h));
    const double cx = rng.uniform(0.0, static_cast<double>(w));
    const double r = rng.uniform(radii.lo, radii.hi);
    const double a = rng.uniform(intensities.lo, intensities.hi);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
        if (dy * dy + dx * dx <= r * r) layer[y * w + x] += a;
      }
  }
  blur_field(layer, h, w, 1, sigma);
  return add_layer(img, layer);
}

Image add_contour_noise(const Image& img, double amplitude, double sigma, std::uint64_t seed) {
  if (amplitude <= 0.0 || img.empty()) return img;
  Rng rng(seed);
  std::vector<double> layer(img.height() * img.width());
  for (auto& v : layer) v = amplitude * rng.normal();
  blur_field(layer, img.height(), img.width(), 1, sigma);
  return add_layer(img, layer);
}

AugmentDraw draw_augment(const AugmentConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  AugmentDraw d;
  d.angle_deg = rng.uniform(config.rotation_deg.lo, config.rotation_deg.hi);
  d.brightness = rng.uniform(config.brightness.lo, config.brightness.hi);
  d.circles = static_cast<std::size_t>(
      rng.between(static_cast<long>(config.circle_count.lo), static_cast<long>(config.circle_count.hi)));
  d.circle_seed = rng.next();
  d.noise_seed = rng.next();
  return d;
}

Image apply_augment(const Image& img, const AugmentConfig& config, const AugmentDraw& d) {
  Image out = rotate_center(img, d.angle_deg, config.background);
  out = adjust_brightness(out, d.brightness);
  out = add_contour_noise(out, config.contour_noise, config.contour_sigma, d.noise_seed);
  return overlay_blurred_circles(out, d.circles, config.circle_radius, config.circle_intensity, config.blur_sigma,
                                 d.circle_seed);
}

Image augment_pipeline(const Image& img, const AugmentConfig& config) {
  return apply_augment(img, config, draw_augment(config, config.seed));
}

Dataset augment_dataset(const Dataset& data, const AugmentConfig& config) {
  config.validate();
  data.validate();
  Dataset out;
  out.name = data.name + "+augmented";
  out.synthetic = data.synthetic;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t m = 0; m < config.multiplier; ++m) {
      const std::uint64_t seed = derive_seed(config.seed, "augment", i, m);
      out.images.push_back(apply_augment(data.images[i], config, draw_augment(config, seed)));
      out.class_ids.push_back(data.class_ids[i]);
      if (!data.sources.empty()) out.sources.push_back("augmented:" + data.sources[i] + ":" + std::to_string(m));
      for (const auto& [key, values] : data.attributes) out.attributes[key].push_back(values[i]);
    }
  return out;
}

void write_provenance(const std::filesystem::path& path, const Provenance& p) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "source=" << p.source << '\n'
     << "seed=" << p.seed << '\n'
     << "angle_deg=" << num(p.draw.angle_deg) << '\n'
     << "brightness=" << num(p.draw.brightness) << '\n'
     << "circles=" << p.draw.circles << '\n'
     << "circle_seed=" << p.draw.circle_seed << '\n'
     << "noise_seed=" << p.draw.noise_seed << '\n';
}

Provenance read_provenance(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(path.string() + ": missing '" + key + "'");
    return it->second;
  };
  Provenance p;
  try {
    p.source = get("source");
    p.seed = std::stoull(get("seed"));
    p.draw.angle_deg = std::stod(get("angle_deg"));
    p.draw.brightness = std::stod(get("brightness"));
    p.draw.circles = std::stoull(get("circles"));
    p.draw.circle_seed = std::stoull(get("circle_seed"));
    p.draw.noise_seed = std::stoull(get("noise_seed"));
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed provenance value");
  }
  return p;
}

}  // namespace oneshot
