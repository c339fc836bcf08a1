#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "oneshot/tensor.hpp"

namespace oneshot {

/// Immutable H x W x C image with pixel values in [0, 1], stored interleaved (HWC).
///
/// Copies share the pixel buffer; every transform returns a new Image.
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> pixels);
  Image(std::size_t height, std::size_t width, std::size_t channels, float fill);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return height_ * width_ * channels_; }
  bool empty() const { return size() == 0; }
  Shape shape() const { return {height_, width_, channels_}; }

  std::span<const float> pixels() const;
  float at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return (*data_)[(y * width_ + x) * channels_ + c];
  }

  /// [H, W, C]
  Tensor to_tensor() const;
  /// Builds from a [H, W, C] or [H, W] tensor; values are clamped to [0, 1].
  static Image from_tensor(const Tensor& t);
  /// Builds from a [C, H, W] tensor; values are clamped to [0, 1].
  static Image from_chw(std::span<const double> values, std::size_t channels, std::size_t height, std::size_t width);

  /// Appends the pixels in [C, H, W] order.
  void append_chw(std::vector<double>& out) const;

  bool operator==(const Image& other) const;

 private:
  std::size_t height_ = 0, width_ = 0, channels_ = 0;
  std::shared_ptr<const std::vector<float>> data_;
};

/// Bilinear resize to the requested extent (channel count unchanged).
Image resize(const Image& img, std::size_t height, std::size_t width);

/// Averages each factor x factor block; trailing rows/columns that do not fill a block are dropped.
Image downscale(const Image& img, std::size_t factor);

/// Stacks images into a [N, C, H, W] batch tensor; all images must share a shape.
Tensor to_batch(std::span<const Image> images);

}  // namespace oneshot
