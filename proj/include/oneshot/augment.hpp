#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "oneshot/dataset.hpp"
#include "oneshot/image.hpp"

namespace oneshot {

/// Closed interval [lo, hi]; lo == hi pins the value.
struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Ranges for the simulated manufacturing changes. The defaults are
/// moderate values picked for the synthetic anode images; nothing about them
/// is calibrated against real kiln data.
struct AugmentConfig {
  Range rotation_deg{-10.0, 10.0};
  Range brightness{-0.1, 0.1};          // fraction of full scale
  Range circle_count{0.0, 3.0};         // integers drawn uniformly
  Range circle_radius{1.5, 4.0};        // pixels
  Range circle_intensity{-0.3, 0.3};    // added before blurring
  double blur_sigma = 1.0;              // pixels, for the circles
  double contour_noise = 0.02;          // std of the pre-blur noise
  double contour_sigma = 0.8;           // pixels
  float background = 0.0f;              // fill for regions rotated into view
  std::size_t multiplier = 1;           // augmented copies per input image
  std::uint64_t seed = 1;

  /// ConfigError on reversed ranges, radii below 1 pixel, negative sigmas or
  /// amplitudes, brightness beyond [-1, 1], or a zero multiplier.
  void validate() const;
  /// Every range pinned at the value that leaves the image untouched.
  static AugmentConfig identity();
};

/// Rotation about the image centre, positive angles counterclockwise as
/// displayed (rows grow downward). Bilinear resampling; source points outside
/// the frame take `background`.
Image rotate_center(const Image& img, double angle_deg, float background = 0.0f);

/// clamp(img + delta, 0, 1). ConfigError if |delta| > 1.
Image adjust_brightness(const Image& img, double delta);

/// Separable Gaussian blur, kernel truncated at 3 sigma, edges clamped.
/// sigma <= 0 returns the input.
Image gaussian_blur(const Image& img, double sigma);

/// Adds `count` discs at seeded positions with radii and intensities drawn
/// from the ranges, blurred as one layer with `sigma`, then clamps to [0, 1].
Image overlay_blurred_circles(const Image& img, std::size_t count, Range radii, Range intensities, double sigma,
                              std::uint64_t seed);

/// Adds Gaussian noise of std `amplitude`, blurred with `sigma`, then clamps.
Image add_contour_noise(const Image& img, double amplitude, double sigma, std::uint64_t seed);

/// The random choices of one pipeline application.
struct AugmentDraw {
  double angle_deg = 0.0;
  double brightness = 0.0;
  std::size_t circles = 0;
  std::uint64_t circle_seed = 0;
  std::uint64_t noise_seed = 0;
};

AugmentDraw draw_augment(const AugmentConfig& config, std::uint64_t seed);
/// rotate -> brightness -> contour noise -> blurred circles.
Image apply_augment(const Image& img, const AugmentConfig& config, const AugmentDraw& draw);
/// apply_augment with parameters drawn from config.seed.
Image augment_pipeline(const Image& img, const AugmentConfig& config);

/// config.multiplier augmented copies of every image, keeping labels. Copy m
/// of image i uses derive_seed(config.seed, "augment", i, m).
Dataset augment_dataset(const Dataset& data, const AugmentConfig& config);

struct Provenance {
  std::string source;
  std::uint64_t seed = 0;
  AugmentDraw draw;
};

/// Line-oriented key=value sidecar next to an augmented image.
void write_provenance(const std::filesystem::path& path, const Provenance& p);
Provenance read_provenance(const std::filesystem::path& path);

}  // namespace oneshot
