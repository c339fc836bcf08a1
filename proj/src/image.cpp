#include "oneshot/image.hpp"

#include <algorithm>
#include <cmath>

#include "oneshot/errors.hpp"

namespace oneshot {

Image::Image(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> pixels)
    : height_(height), width_(width), channels_(channels) {
  if (pixels.size() != height * width * channels) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels) +
                     " cannot hold " + std::to_string(pixels.size()) + " pixels");
  }
  data_ = std::make_shared<const std::vector<float>>(std::move(pixels));
}

Image::Image(std::size_t height, std::size_t width, std::size_t channels, float fill)
    : Image(height, width, channels, std::vector<float>(height * width * channels, fill)) {}

std::span<const float> Image::pixels() const {
  if (!data_) return {};
  return *data_;
}

Tensor Image::to_tensor() const {
  auto p = pixels();
  return Tensor(shape(), std::vector<double>(p.begin(), p.end()));
}

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 2 && t.rank() != 3) throw ShapeError("image tensor must be [H,W] or [H,W,C]");
  const std::size_t c = t.rank() == 3 ? t.dim(2) : 1;
  std::vector<float> px(t.size());
  auto v = t.values();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(std::clamp(v[i], 0.0, 1.0));
  return Image(t.dim(0), t.dim(1), c, std::move(px));
}

Image Image::from_chw(std::span<const double> values, std::size_t channels, std::size_t height, std::size_t width) {
  if (values.size() != channels * height * width) throw ShapeError("from_chw: size mismatch");
  std::vector<float> px(values.size());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        px[(y * width + x) * channels + c] =
            static_cast<float>(std::clamp(values[(c * height + y) * width + x], 0.0, 1.0));
  return Image(height, width, channels, std::move(px));
}

void Image::append_chw(std::vector<double>& out) const {
  auto p = pixels();
  for (std::size_t c = 0; c < channels_; ++c)
    for (std::size_t i = 0; i < height_ * width_; ++i) out.push_back(p[i * channels_ + c]);
}

bool Image::operator==(const Image& other) const {
  if (shape() != other.shape()) return false;
  auto a = pixels();
  auto b = other.pixels();
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

Image resize(const Image& img, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ShapeError("resize to an empty image");
  if (height == img.height() && width == img.width()) return img;
  const std::size_t c = img.channels();
  std::vector<float> out(height * width * c);
  const double sy = static_cast<double>(img.height()) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width()) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height() - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width() - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = (1 - wx) * img.at(y0, x0, ch) + wx * img.at(y0, x1, ch);
        const double bottom = (1 - wx) * img.at(y1, x0, ch) + wx * img.at(y1, x1, ch);
        out[(y * width + x) * c + ch] = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return Image(height, width, c, std::move(out));
}

Image downscale(const Image& img, std::size_t factor) {
  if (factor == 0) throw ConfigError("downscale factor must be >= 1");
  if (factor == 1) return img;
  const std::size_t h = img.height() / factor, w = img.width() / factor, c = img.channels();
  if (h == 0 || w == 0) throw ShapeError("downscale factor larger than the image");
  std::vector<float> out(h * w * c);
  const double norm = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) s += img.at(y * factor + dy, x * factor + dx, ch);
        out[(y * w + x) * c + ch] = static_cast<float>(s * norm);
      }
  return Image(h, w, c, std::move(out));
}

Tensor to_batch(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("cannot batch zero images");
  const Shape s = images[0].shape();
  std::vector<double> v;
  v.reserve(images.size() * images[0].size());
  for (const auto& img : images) {
    if (img.shape() != s) throw ShapeError("batch images differ in shape");
    img.append_chw(v);
  }
  return Tensor(Shape{images.size(), s[2], s[0], s[1]}, std::move(v));
}

}  // namespace oneshot
