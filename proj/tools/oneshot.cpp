// Command-line frontend: train, crossval, eval, augment, compare-merging, gen-synthetic.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid input (recipe, flags,
// manifests, checkpoint/recipe mismatch).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>

#include "oneshot/errors.hpp"
#include "oneshot/experiment.hpp"
#include "oneshot/pgm.hpp"
#include "oneshot/random.hpp"

using namespace oneshot;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kInvalid = 2;

/// Input the user can fix: always exit 2.
class Invalid : public Error {
 public:
  using Error::Error;
};

std::mutex log_mutex;

void log_line(const std::string& msg) {
  std::lock_guard lock(log_mutex);
  std::cerr << msg << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
  if (!os) throw Error("write failed for " + path.string());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct Common {
  std::string recipe;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string data_dir;
};

void add_common(CLI::App* cmd, Common& c, bool need_out) {
  cmd->add_option("--recipe", c.recipe, "Recipe file")->required()->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (need_out) out->required();
  cmd->add_option("--seed", c.seed, "Override the recipe seed");
  cmd->add_option("--jobs", c.jobs, "Worker threads for cross-validation folds")->check(CLI::PositiveNumber);
  cmd->add_option("--data-dir", c.data_dir, "Dataset directory (falls back to ONESHOT_DATA_DIR)");
}

ExperimentContext make_context(const Common& c) {
  ExperimentContext ctx;
  ctx.jobs = c.jobs;
  if (!c.data_dir.empty()) {
    ctx.data_dir = c.data_dir;
  } else if (const char* env = std::getenv("ONESHOT_DATA_DIR"); env && *env) {
    ctx.data_dir = env;
  }
  ctx.log = log_line;
  return ctx;
}

ExperimentRecipe load_recipe(const Common& c) {
  ExperimentRecipe r = ExperimentRecipe::load(c.recipe);
  if (c.seed) {
    r.seed = *c.seed;
    r.train.seed = *c.seed;
  }
  r.validate();
  return r;
}

json run_manifest(const ExperimentRecipe& r, const json& experiment) {
  return {{"recipe", r.to_text()},
          {"seed", r.seed},
          {"model", r.model.to_json()},
          {"train", r.train.to_json()},
          {"experiment", experiment},
          {"build", build_version()}};
}

void save_outputs(const ExperimentRecipe& r, ExperimentResult& res, const fs::path& out) {
  fs::create_directories(out);
  write_text(out / "recipe.cfg", r.to_text());
  write_text(out / "manifest.json", run_manifest(r, res.manifest).dump(2) + "\n");
  if (res.runs.size() == 1) {
    res.runs.front().write(out);
  } else {
    for (std::size_t f = 0; f < res.runs.size(); ++f) res.runs[f].write(out / ("fold" + std::to_string(f)));
  }
  std::string summary = "runs=" + std::to_string(res.runs.size()) + "\naccuracy=" + fmt(res.accuracy) +
                        "\naccuracy_std=" + fmt(res.accuracy_std) + "\n";
  if (res.reconstruction) summary += "reconstruction_mse=" + fmt(res.reconstruction->final_mse) + "\n";
  write_text(out / "summary.txt", summary);
  if (res.model) {
    json extra = {{"recipe_seed", r.seed}};
    const RunReport& run = res.runs.front();
    if (std::isfinite(run.threshold)) extra["threshold"] = run.threshold;
    if (const CapsNet* caps = res.model->capsnet(); caps && caps->reconstruction_error()) {
      extra["reconstruction_error"] = *caps->reconstruction_error();
    }
    res.model->save(out / "model.ckpt", extra);
  }
}

int cmd_train(const Common& c, bool force_kfold, std::optional<std::size_t> folds) {
  ExperimentRecipe r = load_recipe(c);
  if (force_kfold) {
    r.protocol = Protocol::kfold;
    if (folds) r.folds = *folds;
    r.validate();
  }
  ExperimentResult res = run_experiment(r, make_context(c));
  save_outputs(r, res, c.out);
  std::cout << "accuracy " << fmt(res.accuracy);
  if (res.runs.size() > 1) std::cout << " +- " << fmt(res.accuracy_std) << " over " << res.runs.size() << " folds";
  std::cout << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string pairs;
  std::string recipe;
  std::optional<double> threshold;
  bool identify_mode = false;
  std::size_t batch = 64;
};

int cmd_eval(const EvalArgs& a) {
  PairModel::Loaded loaded = PairModel::load(a.checkpoint);
  PairModel& model = loaded.model;
  const ModelSpec& spec = model.spec();
  if (!a.recipe.empty()) {
    ModelSpec want = ExperimentRecipe::load(a.recipe).model;
    want.image_shape = spec.image_shape;
    if (want.to_json() != spec.to_json()) {
      throw Invalid("checkpoint architecture does not match the recipe: checkpoint " + spec.to_json().dump() +
                    ", recipe " + want.to_json().dump());
    }
  }
  const auto entries = read_pair_manifest(a.pairs);
  if (entries.empty()) throw Invalid("pair manifest " + a.pairs + " has no entries");

  std::map<std::string, Image> cache;
  auto image = [&](const std::string& path) -> const Image& {
    auto it = cache.find(path);
    if (it == cache.end()) {
      fs::path p = path;
      if (p.is_relative() && !fs::exists(p)) p = fs::path(a.pairs).parent_path() / p;
      Image img = read_pgm(p).image;
      if (img.shape() != spec.image_shape) {
        throw Invalid(path + " has shape " + to_string(img.shape()) + " but the checkpoint expects " +
                      to_string(spec.image_shape));
      }
      it = cache.emplace(path, std::move(img)).first;
    }
    return it->second;
  };
  std::vector<PairSample> pairs;
  pairs.reserve(entries.size());
  for (const auto& e : entries) pairs.push_back({image(e.path_a), image(e.path_b), e.label, 0, 0});

  double threshold = 0.0;
  if (!model.higher_is_same()) {
    if (a.threshold) {
      threshold = *a.threshold;
    } else if (loaded.extra.contains("threshold")) {
      threshold = loaded.extra.at("threshold").get<double>();
    } else {
      throw Invalid("siamese checkpoint has no stored threshold; pass --threshold");
    }
  }
  const std::vector<double> scores = model.scores(pairs, a.batch);
  const std::vector<int> labels = pair_labels(pairs);

  if (a.identify_mode) {
    const auto ids = identify(entries, scores, model.higher_is_same());
    std::size_t top1 = 0, labelled = 0;
    for (const auto& id : ids) {
      std::cout << id.query << '\t' << id.best << "\trank=" << id.true_rank << "\tcandidates=" << id.candidates << '\n';
      if (id.true_rank > 0) ++labelled;
      if (id.true_rank == 1) ++top1;
    }
    std::cout << "queries=" << ids.size() << " top1=" << (labelled ? fmt(double(top1) / labelled) : "nan") << '\n';
    return 0;
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const bool same = model.higher_is_same() ? scores[i] > 0.0 : scores[i] < threshold;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", scores[i]);
    std::cout << buf << '\t' << (same ? 1 : 0) << '\t' << entries[i].label << '\t' << entries[i].path_a << '\t'
              << entries[i].path_b << '\n';
  }
  const double acc = pair_accuracy(scores, labels, model.higher_is_same(), threshold);
  std::cout << "pairs=" << entries.size() << " accuracy=" << fmt(acc);
  if (!model.higher_is_same()) std::cout << " threshold=" << fmt(threshold);
  std::cout << '\n';
  return 0;
}

struct AugmentArgs {
  std::string in;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_augment(const AugmentArgs& a) {
  KeyValueFile file = KeyValueFile::load(a.config);
  AugmentConfig config = parse_augment_config(file);
  file.reject_unread();
  if (a.seed) config.seed = *a.seed;
  config.validate();

  if (!fs::is_directory(a.in)) throw DataError("input directory " + a.in + " is not readable");
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::recursive_directory_iterator(a.in)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") inputs.push_back(entry.path());
  }
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw DataError("no .pgm files under " + a.in);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const PgmFile src = read_pgm(inputs[i]);
    const fs::path rel = fs::relative(inputs[i], a.in);
    const fs::path dir = fs::path(a.out) / rel.parent_path();
    fs::create_directories(dir);
    for (std::size_t m = 0; m < config.multiplier; ++m) {
      const std::uint64_t seed = derive_seed(config.seed, "augment", i, m);
      const AugmentDraw draw = draw_augment(config, seed);
      const Image img = apply_augment(src.image, config, draw);
      const std::string stem = rel.stem().string() + "_aug" + std::to_string(m);
      write_pgm(dir / (stem + ".pgm"), img, src.maxval);
      write_provenance(dir / (stem + ".txt"), Provenance{inputs[i].string(), seed, draw});
    }
  }
  std::cout << "wrote " << inputs.size() * config.multiplier << " images\n";
  return 0;
}

int cmd_compare(const Common& c) {
  const ExperimentRecipe r = load_recipe(c);
  const MergingComparison cmp = compare_merging(r, make_context(c));
  std::cout << "mode      accuracy\n";
  std::cout << "stacked   " << fmt(cmp.stacked.test_accuracy) << '\n';
  std::cout << "h-join    " << fmt(cmp.h_join.test_accuracy) << '\n';
  if (!c.out.empty()) {
    const fs::path out = c.out;
    fs::create_directories(out);
    write_text(out / "recipe.cfg", r.to_text());
    write_text(out / "manifest.json", run_manifest(r, cmp.manifest).dump(2) + "\n");
    cmp.stacked.write(out / "stacked");
    cmp.h_join.write(out / "h-join");
  }
  return 0;
}

struct SyntheticArgs {
  std::string recipe;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t pairs = 0;
};

int cmd_gen_synthetic(const SyntheticArgs& a) {
  ExperimentRecipe r;
  if (!a.recipe.empty()) r = ExperimentRecipe::load(a.recipe);
  if (r.dataset != DatasetKind::synthetic_anodes) throw Invalid("gen-synthetic needs dataset = synthetic-anodes");
  if (a.seed) r.synthetic.seed = *a.seed;
  r.synthetic.validate();
  Dataset d = generate_synthetic_anodes(r.synthetic, r.synthetic_classes, r.synthetic_views);
  if (d.image_shape()[2] != 1) throw Invalid("PGM export needs single-channel images");
  export_pgm_tree(d, a.out);
  std::cout << "wrote " << d.size() << " images in " << r.synthetic_classes << " classes\n";
  if (a.pairs > 0) {
    const Dataset tree = load_pgm_tree(a.out);
    const auto pairs = sample_pairs(tree, a.pairs, 0.5, derive_seed(r.synthetic.seed, "pairs", 2));
    write_pair_manifest(fs::path(a.out) / "pairs.tsv", manifest_entries(tree, pairs));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot pair identification: train, evaluate and augment"};
  app.require_subcommand(1);

  Common train_args, cv_args, cmp_args;
  std::optional<std::size_t> folds;
  auto* train = app.add_subcommand("train", "Run a recipe and write reports, a checkpoint and a manifest");
  add_common(train, train_args, true);
  auto* cv = app.add_subcommand("crossval", "Run a recipe under k-fold cross-validation");
  add_common(cv, cv_args, true);
  cv->add_option("--folds", folds, "Override the fold count")->check(CLI::Range(2, 1000));

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Score a pair manifest with a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval->add_option("--pairs", eval_args.pairs, "Pair manifest (path_a<TAB>path_b<TAB>label)")->required();
  eval->add_option("--recipe", eval_args.recipe, "Recipe whose architecture the checkpoint must match");
  eval->add_option("--threshold", eval_args.threshold, "Distance threshold for siamese models");
  eval->add_option("--batch", eval_args.batch, "Evaluation batch size")->check(CLI::PositiveNumber);
  eval->add_flag("--identify", eval_args.identify_mode, "Rank all candidates of each query and report the top match");

  AugmentArgs aug_args;
  auto* aug = app.add_subcommand("augment", "Write augmented copies of a PGM tree with provenance sidecars");
  aug->add_option("--in", aug_args.in, "Input directory")->required();
  aug->add_option("--config", aug_args.config, "Augmentation config ([augment] section)")->required()->check(CLI::ExistingFile);
  aug->add_option("--out", aug_args.out, "Output directory")->required();
  aug->add_option("--seed", aug_args.seed, "Override the config seed");

  auto* cmp = app.add_subcommand("compare-merging", "Train the merged CNN with stacked and h-join inputs");
  add_common(cmp, cmp_args, false);

  SyntheticArgs syn_args;
  auto* syn = app.add_subcommand("gen-synthetic", "Write the synthetic anode dataset as a PGM tree");
  syn->add_option("--recipe", syn_args.recipe, "Recipe with a [data] section")->check(CLI::ExistingFile);
  syn->add_option("--out", syn_args.out, "Output directory")->required();
  syn->add_option("--seed", syn_args.seed, "Override the synthetic seed");
  syn->add_option("--pairs", syn_args.pairs, "Also write pairs.tsv with this many pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kInvalid;
  }

  try {
    if (*train) return cmd_train(train_args, false, std::nullopt);
    if (*cv) return cmd_train(cv_args, true, folds);
    if (*eval) return cmd_eval(eval_args);
    if (*aug) return cmd_augment(aug_args);
    if (*cmp) return cmd_compare(cmp_args);
    if (*syn) return cmd_gen_synthetic(syn_args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const Invalid& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kInvalid;
}
