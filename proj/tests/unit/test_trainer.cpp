#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>

#include "oneshot/errors.hpp"
#include "oneshot/trainer.hpp"

using namespace oneshot;

namespace {

/// Ten classes of constant images; same-pairs show one class twice.
Dataset constant_classes(std::size_t n = 6) {
  Dataset d;
  for (int c = 0; c < 10; ++c)
    for (int k = 0; k < 2; ++k) {
      d.images.emplace_back(n, n, 1, 0.05f + 0.09f * c);
      d.class_ids.push_back(c);
    }
  return d;
}

ModelSpec tiny_merged(std::size_t n = 6) {
  ModelSpec s;
  s.approach = Approach::merged;
  s.image_shape = {n, n, 1};
  s.merged.filters = {4};
  s.merged.pool_after = {};
  s.merged.hidden = 8;
  return s;
}

ModelSpec tiny_siamese(std::size_t n = 6) {
  ModelSpec s;
  s.approach = Approach::siamese_cnn;
  s.image_shape = {n, n, 1};
  s.tower.filters = {2};
  s.tower.dense = {8, 3};
  return s;
}

TrainConfig quick(std::size_t epochs, double lr) {
  TrainConfig c;
  c.epochs = epochs;
  c.learning_rate = lr;
  c.batch_size = 16;
  c.early_stopping.enabled = false;
  return c;
}

}  // namespace

TEST_CASE("rmsprop update rule") {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0}, s{0.0, 0.0};
  rmsprop_step(p, g, s, 0.1, 0.9, 1e-8);
  CHECK(p == std::vector<double>{1.0, -2.0});

  std::vector<double> q{0.0}, gq{1.0}, sq{0.0};
  rmsprop_step(q, gq, sq, 0.01, 0.9, 1e-8);
  CHECK(sq[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(q[0] == doctest::Approx(-0.01 / (std::sqrt(0.1) + 1e-8)).epsilon(1e-15));

  std::vector<double> x{5.0}, st{0.0};
  double prev = 5.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> grad{2.0 * x[0]};
    rmsprop_step(x, grad, st, 0.01, 0.9, 1e-8);
    CHECK(std::abs(x[0]) < prev);
    prev = std::abs(x[0]);
  }
  std::vector<double> bad{0.0};
  CHECK_THROWS_AS(rmsprop_step(p, bad, s, 0.1, 0.9, 1e-8), ShapeError);
}

TEST_CASE("accuracy and thresholds") {
  const std::vector<int> labels{1, 0, 1, 0};
  const std::vector<double> constant{1.0, 1.0, 1.0, 1.0};
  CHECK(pair_accuracy(constant, labels, true) == 0.5);
  const std::vector<double> dist{0.0, 10.0, 0.0, 10.0};
  CHECK(pair_accuracy(dist, labels, false, 5.0) == 1.0);
  const std::vector<int> shuffled_labels{0, 0, 1, 1};
  const std::vector<double> shuffled_dist{10.0, 10.0, 0.0, 0.0};
  CHECK(pair_accuracy(shuffled_dist, shuffled_labels, false, 5.0) == 1.0);
  CHECK_THROWS_AS(pair_accuracy(std::vector<double>{}, std::vector<int>{}, true), DataError);

  const double t = fit_threshold(dist, labels);
  CHECK(pair_accuracy(dist, labels, false, t) == 1.0);
  CHECK((t > 0.0 && t < 10.0));
  // Every split point in the gap is equally good: the smallest wins.
  const std::vector<double> d2{1.0, 2.0, 8.0, 9.0};
  const std::vector<int> l2{1, 1, 0, 0};
  CHECK(fit_threshold(d2, l2) == doctest::Approx(5.0));
}

TEST_CASE("identify ranks the true partner first under a perfect oracle") {
  std::vector<PairManifestEntry> entries{{"q1", "a", 0}, {"q1", "b", 1}, {"q1", "c", 0},
                                         {"q2", "a", 1}, {"q2", "b", 0}};
  // Oracle: distance 0 for the true partner, 10 otherwise.
  std::vector<double> distances;
  for (const auto& e : entries) distances.push_back(e.label == 1 ? 0.0 : 10.0);
  const auto ids = identify(entries, distances, false);
  REQUIRE(ids.size() == 2);
  CHECK(ids[0].query == "q1");
  CHECK(ids[0].best == "b");
  CHECK(ids[0].true_rank == 1);
  CHECK(ids[0].candidates == 3);
  CHECK(ids[1].true_rank == 1);

  std::vector<double> logits;
  for (const auto& e : entries) logits.push_back(e.label == 1 ? 5.0 : -5.0);
  for (const auto& id : identify(entries, logits, true)) CHECK(id.true_rank == 1);
}

TEST_CASE("separable pairs are learned") {
  const Dataset d = constant_classes();
  const auto pairs = sample_pairs(d, 200, 0.5, 3);
  // |a - b| needs a few units on each side, 4 filters and 8 hidden stay stuck at chance
  ModelSpec spec = tiny_merged();
  spec.merged.filters = {8};
  spec.merged.hidden = 32;
  PairModel model(spec, 5);
  const RunReport r = train(model, pairs, {}, LossKind::cross_entropy, quick(40, 2e-3));
  CHECK(r.epochs.size() == 40);
  CHECK(r.epochs.back().train_acc >= 0.99);
  CHECK(std::isnan(r.epochs.back().val_acc));
  CHECK(std::isnan(r.threshold));
}

TEST_CASE("siamese training fits a threshold") {
  const Dataset d = constant_classes();
  const auto pairs = sample_pairs(d, 200, 0.5, 4);
  const auto val = sample_pairs(d, 60, 0.5, 5);
  PairModel model(tiny_siamese(), 6);
  const RunReport r = train(model, pairs, val, LossKind::contrastive, quick(10, 5e-3), val);
  CHECK(std::isfinite(r.threshold));
  CHECK(r.threshold_source == "validation");
  CHECK(r.test_accuracy >= 0.9);
  CHECK(r.test_accuracy == doctest::Approx(evaluate_pairs(model, val, r.threshold)));
}

TEST_CASE("zero learning rate freezes the model") {
  const Dataset d = constant_classes();
  const auto pairs = sample_pairs(d, 64, 0.5, 3);
  PairModel model(tiny_merged(), 7);
  std::vector<std::vector<double>> before;
  for (const auto& p : model.parameters()) before.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  const RunReport r = train(model, pairs, pairs, LossKind::cross_entropy, quick(3, 0.0));
  const auto after = model.parameters();
  for (std::size_t i = 0; i < after.size(); ++i)
    CHECK(std::vector<double>(after[i].tensor.values().begin(), after[i].tensor.values().end()) == before[i]);
  for (const auto& e : r.epochs) {
    CHECK(e.train_acc == r.epochs.front().train_acc);
    CHECK(e.val_loss == r.epochs.front().val_loss);
  }
}

TEST_CASE("training is deterministic") {
  const Dataset d = constant_classes();
  const auto pairs = sample_pairs(d, 100, 0.5, 3);
  PairModel a(tiny_merged(), 9), b(tiny_merged(), 9);
  const RunReport ra = train(a, pairs, pairs, LossKind::cross_entropy, quick(4, 1e-3));
  const RunReport rb = train(b, pairs, pairs, LossKind::cross_entropy, quick(4, 1e-3));
  CHECK(ra.epoch_csv() == rb.epoch_csv());
  CHECK(ra.config == rb.config);
}

TEST_CASE("early stopping on a flat monitor") {
  const Dataset d = constant_classes();
  const auto pairs = sample_pairs(d, 64, 0.5, 3);
  PairModel model(tiny_merged(), 7);
  TrainConfig c = quick(30, 0.0);
  c.early_stopping.enabled = true;
  c.early_stopping.patience = 3;
  const RunReport r = train(model, pairs, pairs, LossKind::cross_entropy, c);
  CHECK(r.stopped_early);
  CHECK(r.epochs.size() == 4);
}

TEST_CASE("loss kind must fit the model") {
  const Dataset d = constant_classes();
  PairModel model(tiny_merged(), 1);
  CHECK_THROWS_AS(train(model, sample_pairs(d, 10, 0.5, 1), {}, LossKind::contrastive, quick(1, 1e-3)), ConfigError);
  TrainConfig c = quick(1, 1e-3);
  c.precision = "float32";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("cross-validation bookkeeping") {
  auto fold = [](std::size_t f) {
    RunReport r;
    r.name = "fold" + std::to_string(f);
    r.test_accuracy = 0.5 + 0.05 * static_cast<double>(f);
    return r;
  };
  const CrossValidation serial = crossvalidate(fold, 5, 1);
  const CrossValidation parallel = crossvalidate(fold, 5, 3);
  REQUIRE(serial.folds.size() == 5);
  double mean = 0.0;
  for (const auto& r : serial.folds) mean += r.test_accuracy;
  mean /= 5.0;
  CHECK(std::abs(serial.mean_accuracy - mean) < 1e-12);
  CHECK(serial.mean_accuracy == parallel.mean_accuracy);
  for (std::size_t f = 0; f < 5; ++f) CHECK(parallel.folds[f].name == "fold" + std::to_string(f));
  CHECK(serial.std_accuracy > 0.0);

  auto failing = [](std::size_t f) -> RunReport {
    if (f == 2) throw NumericError("loss is NaN");
    return {};
  };
  try {
    crossvalidate(failing, 4, 2);
    FAIL("expected an error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("fold 2") != std::string::npos);
  }
}

TEST_CASE("reconstruction training lowers the error") {
  CapsNetConfig cfg;
  cfg.input_shape = {1, 8, 8};
  cfg.conv1_filters = 4;
  cfg.conv1_kernel = 3;
  cfg.feature_maps = 8;
  cfg.conv2_kernel = 3;
  cfg.conv2_stride = 2;
  cfg.capsule_dim = 4;
  cfg.capsules = 2;
  cfg.capsule_out_dim = 4;
  cfg.decoder_hidden = {16};
  Rng rng(3);
  CapsNet net(cfg, rng);
  const Dataset d = constant_classes(8);
  const double before = reconstruction_mse(net, d.images);
  ReconstructionConfig rc;
  rc.epochs = 15;
  rc.batch_size = 4;
  rc.learning_rate = 3e-3;
  rc.loss_weight = 1.0;
  const ReconstructionReport rep = train_reconstruction(net, d.images, rc);
  CHECK(rep.epoch_mse.size() == 15);
  CHECK(rep.final_mse < before);
  REQUIRE(net.reconstruction_error().has_value());
  CHECK(*net.reconstruction_error() == rep.final_mse);
}

TEST_CASE("run report files") {
  RunReport r;
  r.name = "x";
  r.epochs.push_back({1, 0.5, 0.75, std::nan(""), std::nan("")});
  CHECK(r.epoch_csv().rfind("epoch,train_loss,train_acc,val_loss,val_acc\n", 0) == 0);
  CHECK(r.epoch_csv().find("1,0.5,0.75,nan,nan") != std::string::npos);
}
