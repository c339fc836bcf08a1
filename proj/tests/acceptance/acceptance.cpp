// Acceptance run: one line per criterion, PASS / FAIL / SKIP.
//
//   acceptance [--only N]... [--skip N]...
//
// Exit status 0 when nothing failed, 1 on any failure, 77 when every selected
// criterion was skipped (ctest reads that as a skip).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "gradient_suite.hpp"
#include "oracles.hpp"
#include "oneshot/capsules.hpp"
#include "oneshot/errors.hpp"
#include "oneshot/experiment.hpp"
#include "oneshot/losses.hpp"
#include "oneshot/pgm.hpp"
#include "oneshot/recipe.hpp"
#include "oneshot/smallnorb.hpp"
#include "oneshot/trainer.hpp"

namespace fs = std::filesystem;
using namespace oneshot;
using oneshot::testing::random_tensor;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

Outcome pass(std::string d) { return {Status::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Status::fail, std::move(d)}; }
Outcome skip(std::string d) { return {Status::skip, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return {ok ? Status::pass : Status::fail, std::move(d)}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "oneshot_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

ExperimentRecipe recipe(const std::string& file) { return ExperimentRecipe::load(fs::path(ONESHOT_RECIPE_DIR) / file); }

ExperimentContext quiet() { return {}; }

// 1 ------------------------------------------------------------------------

Outcome gradient_suite_check() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> bad;
  double worst = 0.0, worst_abs = 0.0;
  std::size_t cases = 0;
  for (const auto& c : oneshot::testing::gradient_suite()) {
    ++cases;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const double e = c.run(seed).max_rel_error;
      worst = std::max(worst, e / c.tolerance);
      worst_abs = std::max(worst_abs, e);
      if (!(e < c.tolerance)) bad.push_back(c.name + "@" + std::to_string(seed) + "=" + fmt("%.2e", e));
    }
  }
  const double secs = seconds_since(t0);
  std::string d = std::to_string(cases) + " ops x 5 seeds, largest relative error " + fmt("%.1e", worst_abs) +
                  " (" + fmt("%.1e", worst) + " of its tolerance), " + fmt("%.1f s", secs);
  if (!bad.empty()) d += "; over tolerance: " + bad.front() + (bad.size() > 1 ? " and more" : "");
  return verdict(bad.empty() && secs < 120.0, d);
}

// 2 ------------------------------------------------------------------------

Outcome loss_oracles() {
  auto contrastive = [](std::vector<double> a, std::vector<double> b, int y, double m) {
    Tape tape = Tape::inference();
    const Shape s{a.size()};
    return contrastive_loss(tape, Tensor(s, std::move(a)), Tensor(s, std::move(b)), y, ContrastiveConfig{m}).item();
  };
  std::vector<std::string> bad;
  if (contrastive({0.3, -1.2, 2.0}, {0.3, -1.2, 2.0}, 1, 1.0) != 0.0) bad.push_back("identical same-pair");
  if (contrastive({0.0, 0.0}, {3.0, 4.0}, 0, 2.0) != 0.0) bad.push_back("saturated hinge");
  if (contrastive({1.0, 1.0}, {1.0, 3.0}, 1, 1.0) != 2.0) bad.push_back("D=2 same");
  if (contrastive({0.0}, {1.0}, 0, 3.0) != 2.0) bad.push_back("D=1 different m=3");

  Rng rng(20);
  double worst = 0.0;
  for (int n = 0; n < 20; ++n) {
    const std::size_t B = 1 + rng.below(6), d = 1 + rng.below(5), K = 2 + rng.below(4);
    const Tensor x = random_tensor(rng, {B, d}), W = random_tensor(rng, {d, K}), bias = random_tensor(rng, {K});
    CenterState state(K, d, 0.5, rng.uniform(0.0, 0.5));
    state.centroids = random_tensor(rng, {K, d});
    std::vector<int> y(B);
    for (auto& v : y) v = static_cast<int>(rng.below(K));
    Tape tape = Tape::inference();
    const double got = center_loss(tape, x, W, bias, y, state).item();
    const auto vec = [](const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
    const double want =
        oneshot::testing::scripted_center_loss(vec(x), vec(W), vec(bias), vec(state.centroids), y, d, K, state.balance);
    worst = std::max(worst, std::abs(got - want));
  }
  if (!(worst <= 1e-10)) bad.push_back("center loss off by " + fmt("%.2e", worst));
  return verdict(bad.empty(), bad.empty() ? "4 contrastive hand values exact; center loss within " + fmt("%.1e", worst) +
                                                " of the scripted oracle on 20 instances"
                                          : "mismatch: " + bad.front());
}

// 3 ------------------------------------------------------------------------

Outcome routing_oracle() {
  Rng rng(30);
  double worst_v = 0.0, worst_c = 0.0, worst_sum = 0.0, worst_uniform = 0.0;
  for (int n = 0; n < 50; ++n) {
    const std::size_t np = 1 + rng.below(8), J = 1 + rng.below(4), d = 1 + rng.below(4), iters = 1 + rng.below(4);
    const Tensor u = random_tensor(rng, {np, J, d}, -1.5, 1.5);
    Tape tape = Tape::inference();
    const RoutingResult got = dynamic_route(tape, u, iters);
    const auto want = oneshot::testing::scripted_routing({u.values().begin(), u.values().end()}, np, J, d, iters);
    if (got.state.coupling_history.size() != iters) return fail("instance " + std::to_string(n) + " kept the wrong history");
    for (std::size_t k = 0; k < want.v.size(); ++k) worst_v = std::max(worst_v, std::abs(got.v[k] - want.v[k]));
    for (std::size_t it = 0; it < iters; ++it) {
      const Tensor& c = got.state.coupling_history[it];
      for (std::size_t i = 0; i < np; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
          total += c[i * J + j];
          worst_c = std::max(worst_c, std::abs(c[i * J + j] - want.couplings[it][i * J + j]));
          if (it == 0) worst_uniform = std::max(worst_uniform, std::abs(c[i * J + j] - 1.0 / double(J)));
        }
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      }
    }
  }
  const bool ok = worst_v <= 1e-10 && worst_c <= 1e-10 && worst_sum <= 1e-9 && worst_uniform <= 1e-12;
  return verdict(ok, "50 instances: |v| error " + fmt("%.1e", worst_v) + ", coupling error " + fmt("%.1e", worst_c) +
                         ", row sums within " + fmt("%.1e", worst_sum) + ", first couplings uniform within " +
                         fmt("%.1e", worst_uniform));
}

// 4 ------------------------------------------------------------------------

Outcome capsule_count() {
  const std::size_t n = primary_capsule_count(6, 6, 256, 8);
  bool rejected = false, rejected_config = false, rejected_recipe = false;
  try {
    primary_capsule_count(6, 6, 256, 7);
  } catch (const ConfigError&) {
    rejected = true;
  }
  CapsNetConfig c;
  c.capsule_dim = 6;
  try {
    c.validate();
  } catch (const ConfigError&) {
    rejected_config = true;
  }
  try {
    ExperimentRecipe::parse("[experiment]\napproach = siamese-capsnet\n[model]\ncaps_feature_maps = 60\ncaps_capsule_dim = 8\n");
  } catch (const ConfigError&) {
    rejected_recipe = true;
  }
  return verdict(n == 1152 && rejected && rejected_config && rejected_recipe,
                 "6x6x256 / 8 -> " + std::to_string(n) + " capsules; n_p=7 " + (rejected ? "rejected" : "accepted") +
                     ", config n_p=6 " + (rejected_config ? "rejected" : "accepted") + ", recipe 60/8 " +
                     (rejected_recipe ? "rejected" : "accepted"));
}

// 5 ------------------------------------------------------------------------

Outcome dataset_contracts() {
  const fs::path dir = scratch("norb");
  std::vector<std::string> notes;
  bool ok = true;
  for (const std::string split : {"training", "testing"}) {
    write_smallnorb_fixture(dir, split, split == "training" ? 1 : 2);
    const SmallNorbFiles files = smallnorb_files(dir, split);
    std::string first_hash;
    for (int pass = 0; pass < 2; ++pass) {
      const Dataset d = load_smallnorb_split(dir, split);
      const Shape s = d.image_shape();
      const auto cats = d.relabelled("category").classes();
      const bool good = d.size() == 24300 && cats.size() == 5 && s == Shape{96, 96, 2};
      if (pass == 0) {
        first_hash = content_hash(d);
        notes.push_back(split + " " + std::to_string(d.size()) + " x [" + std::to_string(s[0]) + "," +
                        std::to_string(s[1]) + "," + std::to_string(s[2]) + "], " + std::to_string(cats.size()) +
                        " categories");
        ok = ok && good;
      } else if (content_hash(d) != first_hash) {
        ok = false;
        notes.push_back(split + " reload differs");
      }
    }
    // Round trip: reading and rewriting each file reproduces its bytes.
    for (const fs::path& f : {files.dat, files.cat, files.info}) {
      const fs::path copy = dir / (f.filename().string() + ".rt");
      write_norb_matrix(copy, read_norb_matrix(f));
      if (slurp(copy) != slurp(f)) {
        ok = false;
        notes.push_back(f.filename().string() + " does not round-trip");
      }
      fs::remove(copy);
    }
    fs::remove(files.dat);
  }

  // Face-database layout: 40 directories of 10 P5 images, 112 x 92.
  const fs::path faces = scratch("faces");
  SyntheticAnodeSpec spec;
  spec.height = 112;
  spec.width = 92;
  export_pgm_tree(generate_synthetic_anodes(spec, 40, 10), faces);
  const Dataset a = load_pgm_faces(faces), b = load_pgm_faces(faces);
  std::size_t per_class_ok = 0;
  for (const auto& [c, idx] : a.indices_by_class()) per_class_ok += idx.size() == 10;
  bool pgm_rt = true;
  for (const auto& e : fs::recursive_directory_iterator(faces)) {
    if (e.path().extension() != ".pgm") continue;
    const std::string bytes = slurp(e.path());
    const PgmFile f = decode_pgm(bytes, e.path().string());
    pgm_rt = pgm_rt && encode_pgm(f.image, f.maxval) == bytes;
  }
  const bool faces_ok = a.size() == 400 && a.classes().size() == 40 && per_class_ok == 40 &&
                        content_hash(a) == content_hash(b) && pgm_rt;
  notes.push_back("faces " + std::to_string(a.size()) + " images, " + std::to_string(a.classes().size()) +
                  " classes" + (pgm_rt ? "" : ", PGM does not round-trip"));
  std::string d = "fixtures: ";
  for (std::size_t i = 0; i < notes.size(); ++i) d += (i ? "; " : "") + notes[i];
  fs::remove_all(dir);
  fs::remove_all(faces);
  return verdict(ok && faces_ok, d);
}

// 6 and 8 ------------------------------------------------------------------

struct Comparison {
  RunReport stacked;
  std::optional<RunReport> h_join;
};

std::optional<Comparison> cached_comparison;

const Comparison& merging_runs(bool need_h_join) {
  if (cached_comparison && (!need_h_join || cached_comparison->h_join)) return *cached_comparison;
  const ExperimentRecipe r = recipe("synthetic-merged.cfg");
  Comparison c;
  if (need_h_join) {
    MergingComparison m = compare_merging(r, quiet());
    c.stacked = std::move(m.stacked);
    c.h_join = std::move(m.h_join);
  } else {
    c.stacked = run_experiment(r, quiet()).runs.at(0);
  }
  cached_comparison = std::move(c);
  return *cached_comparison;
}

bool want_h_join = false;

Outcome toy_learnability() {
  const RunReport& s = merging_runs(want_h_join).stacked;
  const double acc = s.test_accuracy;
  const bool ok = acc >= 0.95 && s.epochs.size() <= 20 && s.wall_seconds < 600.0;
  return verdict(ok, "stacked merged CNN, recipe synthetic-merged: held-out pair accuracy " + fmt("%.4f", acc) +
                         " after " + std::to_string(s.epochs.size()) + " epochs in " + fmt("%.0f s", s.wall_seconds) +
                         " (needs >= 0.95, <= 20 epochs, < 600 s)");
}

Outcome stacked_vs_joined() {
  const Comparison& c = merging_runs(true);
  const double s = c.stacked.test_accuracy, h = c.h_join->test_accuracy;
  return verdict(s >= h, "identical seeds: stacked " + fmt("%.4f", s) + ", h-join " + fmt("%.4f", h));
}

// 7 ------------------------------------------------------------------------

std::optional<fs::path> face_dir() {
  const char* env = std::getenv("ONESHOT_DATA_DIR");
  if (!env || !*env) return std::nullopt;
  for (const fs::path& p : {fs::path(env), fs::path(env) / "att_faces", fs::path(env) / "att-faces",
                            fs::path(env) / "orl_faces"}) {
    if (fs::is_directory(p / "s1")) return p;
  }
  return std::nullopt;
}

Outcome att_faces() {
  const auto dir = face_dir();
  if (!dir) return skip("needs the AT&T face database (s1..s40) under $ONESHOT_DATA_DIR");
  ExperimentContext ctx;
  ctx.data_dir = *dir;
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentResult r = run_experiment(recipe("att-capsnet.cfg"), ctx);
  const double secs = seconds_since(t0);
  return verdict(r.accuracy >= 0.70 && secs < 1800.0,
                 "siamese CapsNet n_m=64, downscale 2, 5 held-out subjects: zero-shot pair accuracy " +
                     fmt("%.4f", r.accuracy) + " in " + fmt("%.0f s", secs) + " (needs >= 0.70, < 1800 s)");
}

// 9 ------------------------------------------------------------------------

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + ONESHOT_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

Outcome reproducibility() {
  const fs::path dir = scratch("repro");
  std::vector<std::string> compared, differing;
  const auto check = [&](const std::string& name, const std::string& verb, const std::string& extra) {
    const fs::path cfg = fs::path(ONESHOT_RECIPE_DIR) / (name + ".cfg");
    for (const char* run : {"a", "b"}) {
      const int code = cli(verb + " --recipe \"" + cfg.string() + "\" --out \"" + (dir / name / run).string() + "\"" + extra,
                           dir / (name + "." + run + ".log"));
      if (code != 0) throw std::runtime_error(name + " exited " + std::to_string(code));
    }
    for (const auto& e : fs::recursive_directory_iterator(dir / name / "a")) {
      if (e.path().filename() != "epochs.csv") continue;
      const fs::path other = dir / name / "b" / fs::relative(e.path(), dir / name / "a");
      compared.push_back(name + "/" + fs::relative(e.path(), dir / name / "a").string());
      if (!fs::exists(other) || slurp(other) != slurp(e.path())) differing.push_back(compared.back());
    }
  };
  try {
    check("tiny-merged", "train", "");
    check("tiny-siamese", "train", "");
    check("tiny-siamese", "crossval", " --folds 3 --jobs 2");
  } catch (const std::exception& e) {
    return fail(e.what());
  }
  fs::remove_all(dir);
  if (compared.empty()) return fail("no epochs.csv written");
  return verdict(differing.empty(), std::to_string(compared.size()) + " epochs.csv files compared across reruns, " +
                                        std::to_string(differing.size()) + " differ" +
                                        (differing.empty() ? "" : " (first: " + differing.front() + ")"));
}

// 10 -----------------------------------------------------------------------

Outcome decoder_generation() {
  const ExperimentRecipe r = recipe("synthetic-generate.cfg");
  const RecipeData data = load_recipe_data(r, quiet());
  CapsNetConfig g = r.generator;
  const Shape hwc = data.data.image_shape();
  g.input_shape = {hwc[2], hwc[0], hwc[1]};
  Rng rng(derive_seed(r.seed, "init", 1));
  CapsNet net(g, rng);
  ReconstructionConfig rc = r.reconstruction;
  rc.seed = derive_seed(r.seed, "init", 1);
  const ReconstructionReport rep = train_reconstruction(net, data.data.images, rc);
  const double limit = r.generation.max_reconstruction_error;
  if (!(rep.final_mse <= limit)) {
    return fail("reconstruction error " + fmt("%.4f", rep.final_mse) + " stayed above the configured " +
                fmt("%.4f", limit));
  }

  GenerationOptions plain = r.generation;
  plain.noise_scale = 0.0;
  const std::size_t n = std::min<std::size_t>(16, data.data.size());
  const std::span<const Image> seeds(data.data.images.data(), n);
  const auto generated = generate_images(net, seeds, n, plain);
  std::size_t exact = 0;
  for (std::size_t k = 0; k < n; ++k) {
    Tape tape = Tape::inference();
    const auto enc = net.encode(tape, to_batch(seeds.subspan(k, 1)));
    const Tensor rec = net.decode(tape, enc.capsules, net.longest_capsules(enc.capsules));
    exact += generated[k] == Image::from_chw(rec.values(), hwc[2], hwc[0], hwc[1]);
  }
  if (exact != n) return fail(std::to_string(n - exact) + " of " + std::to_string(n) + " zero-noise generations differ from the reconstruction");

  const ExperimentResult run = run_experiment(r, quiet());
  const auto& m = run.manifest;
  const bool integrity = run.reconstruction.has_value() && m.contains("generated") &&
                         m["generated"].value("images", std::size_t{0}) > 0 && std::isfinite(run.accuracy);
  return verdict(integrity, "reconstruction error " + fmt("%.4f", rep.final_mse) + " <= " + fmt("%.4f", limit) + "; " +
                                std::to_string(n) + " zero-noise generations equal their reconstructions; retraining with " +
                                (m.contains("generated") ? std::to_string(m["generated"].value("images", std::size_t{0})) : "no") +
                                " generated images finished, test accuracy " + fmt("%.4f", run.accuracy));
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, skipped;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--only" || a == "--skip") && i + 1 < argc) {
      (a == "--only" ? only : skipped).insert(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--only N]... [--skip N]...\n";
      return 2;
    }
  }
  const std::vector<Criterion> criteria{
      {1, "gradient suite", gradient_suite_check},
      {2, "loss oracles", loss_oracles},
      {3, "routing oracle", routing_oracle},
      {4, "capsule count", capsule_count},
      {5, "dataset contracts", dataset_contracts},
      {6, "toy learnability", toy_learnability},
      {7, "desk-scale AT&T", att_faces},
      {8, "stacked vs joined", stacked_vs_joined},
      {9, "reproducibility", reproducibility},
      {10, "decoder generation", decoder_generation},
  };
  auto selected = [&](int id) { return (only.empty() || only.count(id)) && !skipped.count(id); };
  want_h_join = selected(8);

  std::cout << build_version() << "\n";
  int failures = 0, skips = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!selected(c.id)) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = fail(std::string("threw: ") + e.what());
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    failures += o.status == Status::fail;
    skips += o.status == Status::skip;
    std::cout << tag << " " << c.id << " " << c.name << ": " << o.detail << " [" << fmt("%.1f s", seconds_since(t0))
              << "]" << std::endl;
  }
  if (failures > 0) return 1;
  return ran > 0 && skips == ran ? 77 : 0;
}
