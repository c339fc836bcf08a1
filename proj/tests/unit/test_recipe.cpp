#include <doctest.h>

#include <string>

#include "oneshot/errors.hpp"
#include "oneshot/recipe.hpp"

using namespace oneshot;

namespace {

std::string message_of(const std::string& text) {
  try {
    ExperimentRecipe::parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults parse and round trip") {
  const ExperimentRecipe r = ExperimentRecipe::parse("");
  CHECK(r.model.approach == Approach::merged);
  CHECK(r.train.epochs == 20);
  CHECK(r.train.learning_rate == 1e-4);
  CHECK(r.train.batch_size == 32);
  const std::string text = r.to_text();
  CHECK(ExperimentRecipe::parse(text).to_text() == text);
}

TEST_CASE("sections, comments and overrides") {
  const ExperimentRecipe r = ExperimentRecipe::parse(
      "# comment\n[experiment]\nseed = 9   # trailing\napproach = siamese-capsnet\n"
      "[model]\ncaps_feature_maps = 64\ncaps_capsule_dim = 8\n[train]\nepochs = 3\n");
  CHECK(r.seed == 9);
  CHECK(r.train.seed == 9);
  CHECK(r.model.approach == Approach::siamese_capsnet);
  CHECK(r.model.capsnet.feature_maps == 64);
  CHECK(r.train.epochs == 3);
  CHECK(ExperimentRecipe::parse(r.to_text()).to_text() == r.to_text());
}

TEST_CASE("malformed recipes") {
  CHECK(message_of("[train]\nepochz = 3\n").find("unknown key 'epochz'") != std::string::npos);
  CHECK(message_of("[train]\nepochs = 3\nepochs = 4\n").find("duplicate") != std::string::npos);
  CHECK(message_of("[train]\nepochs = three\n") != "");
  CHECK(message_of("[train\n") != "");
  CHECK(message_of("[experiment]\napproach = triplet\n") != "");
  CHECK(message_of("[train]\nprecision = float32\n") != "");
}

TEST_CASE("protocol preconditions") {
  const std::string k10 = "[experiment]\nprotocol = kfold\nfolds = 10\n[data]\nviews = 5\n";
  CHECK(message_of(k10).find("k must not exceed the smallest class") != std::string::npos);
  CHECK(message_of("[experiment]\nprotocol = kfold\nfolds = 5\n[data]\nviews = 5\n") == "");
  CHECK(message_of("[experiment]\nprotocol = published-split\n").find("smallnorb") != std::string::npos);
  CHECK(message_of("[experiment]\nholdout_classes = 30\nvalidation_classes = 10\n") != "");
  CHECK(message_of("[data]\ndataset = att-faces\n[experiment]\nprotocol = kfold\nfolds = 11\n") != "");
  CHECK(message_of("[model]\ncaps_feature_maps = 60\ncaps_capsule_dim = 8\n[experiment]\napproach = siamese-capsnet\n") != "");
}

TEST_CASE("augment section alone") {
  const KeyValueFile f = KeyValueFile::parse("[augment]\nmultiplier = 3\nrotation_min = 0\nrotation_max = 0\nseed = 4\n");
  const AugmentConfig c = parse_augment_config(f);
  f.reject_unread();
  CHECK(c.multiplier == 3);
  CHECK(c.rotation_deg.lo == 0.0);
  CHECK(c.seed == 4);
  const KeyValueFile g = KeyValueFile::parse("[augment]\nmultiplier = 3\n[train]\nepochs = 1\n");
  parse_augment_config(g);
  CHECK_THROWS_AS(g.reject_unread(), ConfigError);
}
