#include "oneshot/experiment.hpp"

#include <algorithm>
#include <cmath>

#include "oneshot/errors.hpp"
#include "oneshot/pgm.hpp"
#include "oneshot/random.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace oneshot {

namespace {

void say(const ExperimentContext& ctx, const std::string& msg) {
  if (ctx.log) ctx.log(msg);
}

fs::path resolve_data_dir(const ExperimentRecipe& recipe, const ExperimentContext& ctx) {
  const fs::path dir = !ctx.data_dir.empty() ? ctx.data_dir : fs::path(recipe.data_dir);
  if (dir.empty()) {
    throw DataError("dataset " + to_string(recipe.dataset) + " needs a data directory (--data-dir, ONESHOT_DATA_DIR, or [data] dir)");
  }
  return dir;
}

Dataset preprocess(Dataset d, const ExperimentRecipe& recipe, bool already_downscaled) {
  if (recipe.grayscale) {
    for (auto& img : d.images) {
      if (img.channels() != 1 && img.channels() != 3) {
        throw ConfigError("grayscale = true needs 1- or 3-channel images; " + d.name + " has " +
                          std::to_string(img.channels()));
      }
      img = to_grayscale(img);
    }
  }
  if (recipe.downscale > 1 && !already_downscaled) {
    for (auto& img : d.images) img = downscale(img, recipe.downscale);
  }
  return d;
}

Dataset pick_classes(const Dataset& d, std::size_t max_classes, std::uint64_t seed) {
  std::vector<int> classes = d.classes();
  if (max_classes == 0 || max_classes >= classes.size()) return d;
  Rng rng(seed);
  rng.shuffle(classes.begin(), classes.end());
  classes.resize(max_classes);
  std::sort(classes.begin(), classes.end());
  return d.subset_classes(classes);
}

json describe(const Dataset& d) {
  return {{"name", d.name},
          {"synthetic", d.synthetic},
          {"images", d.size()},
          {"classes", d.classes().size()},
          {"image_shape", d.empty() ? Shape{} : d.image_shape()},
          {"content_hash", content_hash(d)}};
}

/// Adds augmented and decoder-generated images to a training set.
Dataset expand_training(const Dataset& train, const ExperimentRecipe& recipe, const ExperimentContext& ctx,
                        json& manifest, std::optional<ReconstructionReport>& recon) {
  Dataset out = train;
  if (recipe.augment) {
    AugmentConfig a = recipe.augmentation;
    a.seed = derive_seed(recipe.seed, "augment", recipe.augmentation.seed);
    const Dataset extra = augment_dataset(train, a);
    say(ctx, "augmented " + std::to_string(extra.size()) + " training images");
    manifest["augmented"] = describe(extra);
    out = out.merged_with(extra);
  }
  if (recipe.generate) {
    CapsNetConfig g = recipe.generator;
    const Shape hwc = train.image_shape();
    g.input_shape = {hwc[2], hwc[0], hwc[1]};
    const std::uint64_t gen_seed = derive_seed(recipe.seed, "init", 1);
    Rng rng(gen_seed);
    CapsNet generator(g, rng);
    ReconstructionConfig rc = recipe.reconstruction;
    rc.seed = gen_seed;
    say(ctx, "training the generator decoder for " + std::to_string(rc.epochs) + " epochs");
    recon = train_reconstruction(generator, train.images, rc);
    say(ctx, "reconstruction error " + std::to_string(recon->final_mse));
    GenerationOptions opts = recipe.generation;
    opts.seed = derive_seed(recipe.seed, "noise");
    const std::size_t count = recipe.generate_count == 0 ? train.size() : recipe.generate_count;
    std::vector<Image> generated = generate_images(generator, train.images, count, opts);
    Dataset gen;
    gen.name = train.name + "+generated";
    gen.synthetic = true;
    for (std::size_t k = 0; k < generated.size(); ++k) {
      gen.images.push_back(std::move(generated[k]));
      gen.class_ids.push_back(train.class_ids[k % train.size()]);
      if (!train.sources.empty()) gen.sources.push_back("generated:" + train.sources[k % train.size()] + ":" + std::to_string(k));
      for (const auto& [key, values] : train.attributes) gen.attributes[key].push_back(values[k % train.size()]);
    }
    manifest["generated"] = describe(gen);
    manifest["reconstruction_mse"] = recon->final_mse;
    out = out.merged_with(gen);
  }
  return out;
}

std::vector<PairSample> maybe_swapped(std::vector<PairSample> pairs, const ExperimentRecipe& recipe) {
  return recipe.swap_pairs ? with_swapped(pairs) : pairs;
}

struct SingleRun {
  RunReport report;
  PairModel model;
};

SingleRun train_once(const ExperimentRecipe& recipe, const Shape& image_shape, std::uint64_t run_seed,
                     const std::vector<PairSample>& train_pairs, const std::vector<PairSample>& val_pairs,
                     const std::vector<PairSample>& test_pairs) {
  ModelSpec spec = recipe.model;
  spec.image_shape = image_shape;
  PairModel model(spec, run_seed);
  TrainConfig tc = recipe.train;
  tc.seed = run_seed;
  RunReport report = train(model, train_pairs, val_pairs, model.loss_kind(), tc, test_pairs);
  report.name = recipe.name;
  return {std::move(report), std::move(model)};
}

}  // namespace

RecipeData load_recipe_data(const ExperimentRecipe& recipe, const ExperimentContext& ctx) {
  RecipeData out;
  switch (recipe.dataset) {
    case DatasetKind::synthetic_anodes:
      out.data = generate_synthetic_anodes(recipe.synthetic, recipe.synthetic_classes, recipe.synthetic_views);
      out.data = preprocess(std::move(out.data), recipe, false);
      break;
    case DatasetKind::att_faces:
      out.data = preprocess(load_pgm_faces(resolve_data_dir(recipe, ctx)), recipe, false);
      break;
    case DatasetKind::smallnorb: {
      SmallNorbOptions opts;
      opts.identity = recipe.norb_identity;
      opts.downscale = recipe.downscale;
      const fs::path dir = resolve_data_dir(recipe, ctx);
      out.data = preprocess(load_smallnorb_split(dir, "training", opts), recipe, true);
      if (recipe.protocol == Protocol::published_split) {
        out.test = preprocess(load_smallnorb_split(dir, "testing", opts), recipe, true);
      }
      break;
    }
  }
  out.data = pick_classes(out.data, recipe.max_classes, derive_seed(recipe.seed, "split", 0));
  out.data.validate();
  return out;
}

ExperimentResult run_experiment(const ExperimentRecipe& recipe, const ExperimentContext& ctx) {
  recipe.validate();
  const RecipeData loaded = load_recipe_data(recipe, ctx);
  const Dataset& data = loaded.data;
  const Shape image_shape = data.image_shape();
  const std::uint64_t s = recipe.seed;
  say(ctx, "dataset " + data.name + (data.synthetic ? " (synthetic)" : "") + ": " + std::to_string(data.size()) +
               " images, " + std::to_string(data.classes().size()) + " classes, shape " + to_string(image_shape));

  ExperimentResult result;
  json& m = result.manifest;
  m["recipe_seed"] = s;
  m["dataset"] = describe(data);
  m["protocol"] = to_string(recipe.protocol);
  m["seed_scheme"] = "derive_seed(seed, tag, index): split/fold/pairs/init/epoch/augment/noise";

  if (recipe.protocol == Protocol::kfold) {
    const std::uint64_t split_seed = derive_seed(s, "split", 3);
    m["fold_seeds"] = json::array();
    for (std::size_t f = 0; f < recipe.folds; ++f) m["fold_seeds"].push_back(derive_seed(s, "fold", f));
    // Precondition check before any work is spent.
    kfold_split(data, recipe.folds, 0, split_seed);
    std::vector<json> fold_manifests(recipe.folds);
    auto run_fold = [&](std::size_t f) {
      const std::uint64_t fs_seed = derive_seed(s, "fold", f);
      const FoldSplit split = kfold_split(data, recipe.folds, f, split_seed);
      json fm;
      std::optional<ReconstructionReport> recon;
      const Dataset train_ds = expand_training(split.train, recipe, ctx, fm, recon);
      const auto train_pairs =
          maybe_swapped(sample_pairs(train_ds, recipe.train_pairs, recipe.pair_balance, derive_seed(fs_seed, "pairs", 0)), recipe);
      // Held-out pairs put a fold image first and a training image second, so a
      // fold holding one image per class still yields same-pairs.
      const auto eval_pairs = sample_query_pairs(split.validation, split.train, recipe.test_pairs, recipe.pair_balance,
                                                 derive_seed(fs_seed, "pairs", 2));
      say(ctx, "fold " + std::to_string(f) + ": " + std::to_string(train_pairs.size()) + " training pairs");
      SingleRun run = train_once(recipe, image_shape, fs_seed, train_pairs, eval_pairs, eval_pairs);
      run.report.name = recipe.name + "-fold" + std::to_string(f);
      run.report.notes.push_back("held-out pairs of this fold serve as validation and test; the threshold is fitted on them");
      fm["validation_images"] = split.validation_indices.size();
      fm["train"] = describe(train_ds);
      fold_manifests[f] = fm;
      say(ctx, "fold " + std::to_string(f) + ": accuracy " + std::to_string(run.report.test_accuracy));
      return std::move(run.report);
    };
    CrossValidation cv = crossvalidate(run_fold, recipe.folds, ctx.jobs);
    result.runs = std::move(cv.folds);
    result.accuracy = cv.mean_accuracy;
    result.accuracy_std = cv.std_accuracy;
    m["folds"] = fold_manifests;
    return result;
  }

  Dataset pool, test_ds;
  json splits;
  if (recipe.protocol == Protocol::published_split) {
    pool = data;
    test_ds = loaded.test;
    splits["test"] = "published testing half";
  } else {
    const ClassSplit outer = holdout_split(data, recipe.holdout_classes, derive_seed(s, "split", 1));
    pool = data.subset_classes(outer.train_classes);
    test_ds = data.subset_classes(outer.test_classes);
    splits["test_classes"] = outer.test_classes;
  }
  Dataset train_ds = pool, val_ds;
  if (recipe.validation_classes > 0) {
    const ClassSplit inner = holdout_split(pool, recipe.validation_classes, derive_seed(s, "split", 2));
    train_ds = pool.subset_classes(inner.train_classes);
    val_ds = pool.subset_classes(inner.test_classes);
    splits["validation_classes"] = inner.test_classes;
  }
  splits["train_classes"] = train_ds.classes();
  m["splits"] = splits;
  m["test_dataset"] = describe(test_ds);

  train_ds = expand_training(train_ds, recipe, ctx, m, result.reconstruction);
  m["train_dataset"] = describe(train_ds);
  const auto train_pairs =
      maybe_swapped(sample_pairs(train_ds, recipe.train_pairs, recipe.pair_balance, derive_seed(s, "pairs", 0)), recipe);
  std::vector<PairSample> val_pairs;
  if (!val_ds.empty() && recipe.validation_pairs > 0) {
    val_pairs = sample_pairs(val_ds, recipe.validation_pairs, recipe.pair_balance, derive_seed(s, "pairs", 1));
  }
  const auto test_pairs = sample_pairs(test_ds, recipe.test_pairs, recipe.pair_balance, derive_seed(s, "pairs", 2));
  m["pairs"] = {{"train", train_pairs.size()}, {"validation", val_pairs.size()}, {"test", test_pairs.size()}};
  say(ctx, std::to_string(train_pairs.size()) + " training pairs, " + std::to_string(val_pairs.size()) +
               " validation pairs, " + std::to_string(test_pairs.size()) + " test pairs");

  SingleRun run = train_once(recipe, image_shape, s, train_pairs, val_pairs, test_pairs);
  if (recipe.protocol == Protocol::holdout) run.report.notes.push_back("test pairs come only from held-out classes");
  if (data.synthetic) run.report.notes.push_back("synthetic stand-in data");
  result.accuracy = run.report.test_accuracy;
  result.runs.push_back(std::move(run.report));
  result.model.emplace(std::move(run.model));
  return result;
}

MergingComparison compare_merging(const ExperimentRecipe& recipe, const ExperimentContext& ctx) {
  if (recipe.model.approach != Approach::merged) throw ConfigError("compare-merging needs approach = merged");
  if (recipe.protocol == Protocol::kfold) throw ConfigError("compare-merging runs a single split; use holdout or published-split");
  MergingComparison out;
  ExperimentRecipe r = recipe;
  r.model.merge_mode = MergeMode::stacked;
  say(ctx, "training with stacked merging");
  ExperimentResult stacked = run_experiment(r, ctx);
  r.model.merge_mode = MergeMode::h_join;
  say(ctx, "training with h-join merging");
  ExperimentResult joined = run_experiment(r, ctx);
  out.stacked = std::move(stacked.runs.front());
  out.h_join = std::move(joined.runs.front());
  out.manifest = {{"seed", recipe.seed},
                  {"stacked", stacked.manifest},
                  {"h-join", joined.manifest},
                  {"identical_seeds", stacked.manifest["recipe_seed"] == joined.manifest["recipe_seed"]}};
  return out;
}

std::string build_version() {
  std::string v = "oneshot " ONESHOT_VERSION " (" __VERSION__;
#ifdef __AVX2__
  v += ", avx2";
#endif
  return v + ")";
}

}  // namespace oneshot
