#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oneshot/augment.hpp"
#include "oneshot/errors.hpp"
#include "oneshot/random.hpp"

using namespace oneshot;

namespace {

Image noise_image(std::size_t n, std::uint64_t seed, std::size_t channels = 1) {
  Rng rng(seed);
  std::vector<float> px(n * n * channels);
  for (auto& p : px) p = static_cast<float>(rng.uniform());
  return Image(n, n, channels, px);
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.pixels()[i]) - b.pixels()[i]));
  return m;
}

}  // namespace

TEST_CASE("rotation") {
  const Image img = noise_image(9, 1);
  CHECK(rotate_center(img, 0.0) == img);
  CHECK(max_abs_diff(rotate_center(img, 360.0), img) < 1e-6);
  // 90 degrees counterclockwise as displayed: out[y][x] = in[x][N-1-y].
  const Image r = rotate_center(img, 90.0);
  double worst = 0.0;
  for (std::size_t y = 0; y < 9; ++y)
    for (std::size_t x = 0; x < 9; ++x) worst = std::max(worst, std::abs(double(r.at(y, x)) - img.at(x, 8 - y)));
  CHECK(worst < 1e-6);
  const Image r4 = rotate_center(rotate_center(r, 90.0), 180.0);
  CHECK(max_abs_diff(r4, img) < 1e-5);
}

TEST_CASE("brightness") {
  const Image img = noise_image(5, 2);
  CHECK(adjust_brightness(img, 0.0) == img);
  const Image bright = adjust_brightness(img, 1.0);
  for (float p : bright.pixels()) CHECK(p == 1.0f);
  const Image dim = adjust_brightness(Image(3, 3, 1, 0.5f), -0.3);
  for (float p : dim.pixels()) CHECK(p == doctest::Approx(0.2));
  CHECK_THROWS_AS(adjust_brightness(img, 1.5), ConfigError);
}

TEST_CASE("blurred circles") {
  const Image img(16, 16, 1, 0.5f);
  CHECK(overlay_blurred_circles(img, 0, {2, 3}, {0.2, 0.3}, 1.0, 1) == img);
  const Image one = overlay_blurred_circles(img, 1, {3, 3}, {0.3, 0.3}, 0.0, 4);
  CHECK(*std::max_element(one.pixels().begin(), one.pixels().end()) > 0.5f);
  CHECK(overlay_blurred_circles(img, 2, {2, 3}, {-0.3, 0.3}, 1.0, 9) ==
        overlay_blurred_circles(img, 2, {2, 3}, {-0.3, 0.3}, 1.0, 9));
}

TEST_CASE("identity pipeline") {
  const Image img = noise_image(8, 3, 2);
  const AugmentConfig id = AugmentConfig::identity();
  for (std::uint64_t s = 0; s < 5; ++s) CHECK(apply_augment(img, id, draw_augment(id, s)) == img);
}

TEST_CASE("pipeline stays in range for random configs") {
  Rng rng(17);
  const Image img = noise_image(12, 4);
  for (int i = 0; i < 1000; ++i) {
    AugmentConfig c;
    const double rot = rng.uniform(0, 180);
    c.rotation_deg = {-rot, rot};
    const double b = rng.uniform(0, 1);
    c.brightness = {-b, b};
    c.circle_count = {0, double(rng.below(4))};
    c.circle_radius = {1.0, 1.0 + rng.uniform(0, 4)};
    c.circle_intensity = {-rng.uniform(0, 1), rng.uniform(0, 1)};
    c.blur_sigma = rng.uniform(0, 2);
    c.contour_noise = rng.uniform(0, 0.2);
    c.contour_sigma = rng.uniform(0, 2);
    c.validate();
    const Image out = apply_augment(img, c, draw_augment(c, i));
    for (float p : out.pixels()) REQUIRE((p >= 0.0f && p <= 1.0f));
  }
}

TEST_CASE("augmented datasets are deterministic and labelled") {
  Dataset d;
  for (int c = 0; c < 3; ++c) {
    d.images.push_back(noise_image(8, c));
    d.class_ids.push_back(c);
  }
  AugmentConfig c;
  c.multiplier = 3;
  const Dataset a = augment_dataset(d, c), b = augment_dataset(d, c);
  CHECK(a.size() == 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.images[i] == b.images[i]);
    CHECK(a.class_ids[i] == d.class_ids[i / 3]);
  }
  CHECK(a.sources.empty());
}

TEST_CASE("config validation") {
  AugmentConfig c;
  c.rotation_deg = {5, -5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.multiplier = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.circle_radius = {0.5, 2};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("provenance round trip") {
  const auto path = std::filesystem::temp_directory_path() / "oneshot_prov.txt";
  Provenance p{"in/s1/1.pgm", 42, draw_augment(AugmentConfig{}, 42)};
  write_provenance(path, p);
  const Provenance back = read_provenance(path);
  CHECK(back.source == p.source);
  CHECK(back.seed == 42);
  CHECK(back.draw.angle_deg == p.draw.angle_deg);
  CHECK(back.draw.circles == p.draw.circles);
  std::filesystem::remove(path);
}
