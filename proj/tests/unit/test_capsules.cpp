#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "oneshot/capsules.hpp"
#include "oneshot/errors.hpp"

using namespace oneshot;
using oneshot::testing::random_tensor;

namespace {

CapsNetConfig tiny_config() {
  CapsNetConfig c;
  c.input_shape = {1, 12, 12};
  c.conv1_filters = 4;
  c.conv1_kernel = 3;
  c.feature_maps = 8;
  c.conv2_kernel = 3;
  c.conv2_stride = 2;
  c.capsule_dim = 4;
  c.capsules = 3;
  c.capsule_out_dim = 4;
  c.decoder_hidden = {16, 32};
  return c;
}

}  // namespace

TEST_CASE("squash") {
  Tape tape;
  const Tensor zero = squash(tape, Tensor(Shape{3}, 0.0));
  for (double v : zero.values()) CHECK(v == 0.0);

  const Tensor unit = squash(tape, Tensor::vector({0.6, 0.8}));
  CHECK(unit[0] == doctest::Approx(0.3).epsilon(1e-7));
  CHECK(unit[1] == doctest::Approx(0.4).epsilon(1e-7));

  const Tensor big = squash(tape, Tensor::vector({1000.0, 0.0}));
  CHECK(big[0] < 1.0);
  CHECK(std::abs(big[0] - 1.0) < 1e-5);
}

TEST_CASE("primary capsule count") {
  CHECK(primary_capsule_count(6, 6, 256, 8) == 1152);
  CHECK_THROWS_AS(primary_capsule_count(6, 6, 256, 7), ConfigError);
  CapsNetConfig c = tiny_config();
  c.capsule_dim = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("routing matches the scripted recurrence") {
  Rng rng(21);
  for (int instance = 0; instance < 50; ++instance) {
    const std::size_t np = 1 + rng.below(8), J = 1 + rng.below(4), d = 1 + rng.below(4), iters = 1 + rng.below(4);
    const Tensor u = random_tensor(rng, {np, J, d}, -1.5, 1.5);
    Tape tape = Tape::inference();
    const RoutingResult got = dynamic_route(tape, u, iters);
    const auto want = oneshot::testing::scripted_routing({u.values().begin(), u.values().end()}, np, J, d, iters);
    CAPTURE(instance);
    REQUIRE(got.v.size() == want.v.size());
    for (std::size_t k = 0; k < want.v.size(); ++k) CHECK(std::abs(got.v[k] - want.v[k]) < 1e-10);
    REQUIRE(got.state.coupling_history.size() == iters);
    for (std::size_t it = 0; it < iters; ++it) {
      const Tensor& c = got.state.coupling_history[it];
      for (std::size_t i = 0; i < np; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
          total += c[i * J + j];
          CHECK(std::abs(c[i * J + j] - want.couplings[it][i * J + j]) < 1e-10);
          if (it == 0) CHECK(c[i * J + j] == doctest::Approx(1.0 / J).epsilon(1e-12));
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("routing with one output capsule") {
  Rng rng(3);
  const Tensor u = random_tensor(rng, {5, 1, 3});
  Tape tape = Tape::inference();
  const RoutingResult r = dynamic_route(tape, u, 3);
  for (const auto& c : r.state.coupling_history)
    for (double v : c.values()) CHECK(v == 1.0);
  std::vector<double> s(3, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 3; ++k) s[k] += u[i * 3 + k];
  const Tensor want = squash(tape, Tensor({3}, s));
  for (std::size_t k = 0; k < 3; ++k) CHECK(r.v[k] == doctest::Approx(want[k]).epsilon(1e-12));
}

TEST_CASE("routing gradient through three iterations") {
  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = oneshot::testing::check_gradients(
        [&](Tape& t, const std::vector<Tensor>& in) { return oneshot::testing::project(t, dynamic_route(t, in[0], 3).v, seed); },
        {random_tensor(rng, {3, 2, 2})});
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("capsnet shapes and norms") {
  Rng rng(5);
  const CapsNet net(tiny_config(), rng);
  // 12 -> conv 3 -> 10 -> conv 3 stride 2 -> 4; 4*4*8/4 = 32 primary capsules
  CHECK(net.feature_map_extent() == std::pair<std::size_t, std::size_t>{4, 4});
  CHECK(net.primary_capsules() == 32);
  Rng img(6);
  Tape tape = Tape::inference();
  const auto enc = net.encode(tape, random_tensor(img, {2, 1, 12, 12}, 0.0, 1.0));
  CHECK(enc.capsules.shape() == Shape{2, 3, 4});
  const Tensor scores = net.class_scores(tape, enc.capsules);
  for (double v : scores.values()) CHECK((v >= 0.0 && v < 1.0));
  const std::vector<std::size_t> masks{0, 2};
  CHECK(net.decode(tape, enc.capsules, masks).shape() == Shape{2, 1, 12, 12});
}

TEST_CASE("decoder masking ignores the other capsules") {
  Rng rng(7);
  const CapsNet net(tiny_config(), rng);
  Rng v(8);
  Tensor caps = random_tensor(v, {3, 4}, -0.5, 0.5);
  Tape tape = Tape::inference();
  const Tensor a = net.decode(tape, caps, std::size_t{1});
  Tensor other = caps.clone();
  for (std::size_t k = 0; k < 4; ++k) {
    other.mutable_values()[k] += 0.3;
    other.mutable_values()[8 + k] -= 0.2;
  }
  const Tensor b = net.decode(tape, other, std::size_t{1});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("generation") {
  Rng rng(9);
  CapsNet net(tiny_config(), rng);
  Rng img(10);
  std::vector<Image> seeds;
  for (int i = 0; i < 3; ++i) {
    std::vector<float> px(144);
    for (auto& p : px) p = static_cast<float>(img.uniform());
    seeds.emplace_back(12, 12, 1, px);
  }
  GenerationOptions opts;
  opts.noise_scale = 0.0;
  CHECK_THROWS_AS(generate_images(net, seeds, 3, opts), StateError);

  net.set_reconstruction_error(0.001);
  const auto plain = generate_images(net, seeds, 5, opts);
  REQUIRE(plain.size() == 5);
  // Zero perturbation returns the plain reconstruction of each seed.
  for (std::size_t k = 0; k < 5; ++k) {
    Tape tape = Tape::inference();
    const auto enc = net.encode(tape, to_batch(std::span<const Image>(&seeds[k % 3], 1)));
    const Tensor rec = net.decode(tape, enc.capsules, net.longest_capsules(enc.capsules));
    CHECK(plain[k] == Image::from_chw(rec.values(), 1, 12, 12));
  }

  opts.noise_scale = 0.2;
  opts.seed = 4;
  const auto g1 = generate_images(net, seeds, 4, opts);
  const auto g2 = generate_images(net, seeds, 4, opts);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(g1[k] == g2[k]);
    for (float p : g1[k].pixels()) CHECK((p >= 0.0f && p <= 1.0f));
  }
}

TEST_CASE("capsnet manifest round trip") {
  Rng rng(11);
  const CapsNet net(tiny_config(), rng);
  const CapsNet back = CapsNet::from_manifest(net.manifest());
  CHECK(back.config().to_json() == net.config().to_json());
  CHECK(count_parameters(back.parameters()) == count_parameters(net.parameters()));
}
