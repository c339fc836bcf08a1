#include "oneshot/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

#include "oneshot/errors.hpp"
#include "oneshot/losses.hpp"
#include "oneshot/ops.hpp"
#include "oneshot/random.hpp"

using nlohmann::json;

namespace oneshot {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be finite and >= 0");
  if (!(rmsprop.rho >= 0.0 && rmsprop.rho < 1.0)) throw ConfigError("rmsprop rho must be in [0, 1)");
  if (!(rmsprop.eps > 0.0)) throw ConfigError("rmsprop epsilon must be > 0");
  if (early_stopping.patience < 1) throw ConfigError("early-stopping patience must be >= 1");
  if (early_stopping.min_delta < 0.0) throw ConfigError("early-stopping min_delta must be >= 0");
  if (early_stopping.monitor != "val_loss" && early_stopping.monitor != "train_loss") {
    throw ConfigError("early-stopping monitor must be val_loss or train_loss");
  }
  if (precision != "float64") throw ConfigError("unsupported precision '" + precision + "' (only float64)");
}

json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"epochs", epochs},
          {"learning_rate", learning_rate},
          {"rho", rmsprop.rho},
          {"epsilon", rmsprop.eps},
          {"early_stopping", early_stopping.enabled},
          {"patience", early_stopping.patience},
          {"min_delta", early_stopping.min_delta},
          {"monitor", early_stopping.monitor},
          {"seed", seed},
          {"precision", precision}};
}

void rmsprop_step(std::span<double> params, std::span<const double> grads, std::span<double> state, double lr,
                  double rho, double eps) {
  if (params.size() != grads.size() || params.size() != state.size()) {
    throw ShapeError("rmsprop_step: parameter, gradient and state sizes differ (" + std::to_string(params.size()) +
                     ", " + std::to_string(grads.size()) + ", " + std::to_string(state.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state[i] = rho * state[i] + (1.0 - rho) * g * g;
    params[i] -= lr * g / (std::sqrt(state[i]) + eps);
  }
}

RmsProp::RmsProp(std::vector<NamedParameter> params, double lr, RmsPropConfig config)
    : params_(std::move(params)), lr_(lr), config_(config) {
  for (const auto& p : params_) state_.emplace_back(p.tensor.shape(), 0.0);
}

void RmsProp::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    if (!t.has_grad()) continue;
    rmsprop_step(t.mutable_values(), t.grad(), state_[i].mutable_values(), lr_, config_.rho, config_.eps);
    t.zero_grad();
  }
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string RunReport::epoch_csv() const {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.train_acc) + "," + fmt(e.val_loss) + "," +
           fmt(e.val_acc) + "\n";
  }
  return out;
}

std::string RunReport::summary() const {
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  kv("name", name);
  kv("seed", std::to_string(seed));
  kv("epochs_run", std::to_string(epochs.size()));
  kv("stopped_early", stopped_early ? "true" : "false");
  kv("train_pairs", std::to_string(train_pairs));
  kv("validation_pairs", std::to_string(validation_pairs));
  kv("test_pairs", std::to_string(test_pairs));
  if (!epochs.empty()) {
    kv("final_train_loss", fmt(epochs.back().train_loss));
    kv("final_train_acc", fmt(epochs.back().train_acc));
    kv("final_val_loss", fmt(epochs.back().val_loss));
    kv("final_val_acc", fmt(epochs.back().val_acc));
  }
  kv("threshold", fmt(threshold));
  kv("threshold_source", threshold_source.empty() ? "none" : threshold_source);
  kv("validation_accuracy", fmt(validation_accuracy));
  kv("test_accuracy", fmt(test_accuracy));
  kv("wall_seconds", fmt(wall_seconds));
  kv("config", config.dump());
  for (std::size_t i = 0; i < notes.size(); ++i) kv("note." + std::to_string(i), notes[i]);
  return out;
}

void RunReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* file, const std::string& text) {
    std::ofstream os(dir / file, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + (dir / file).string());
    os << text;
  };
  put("epochs.csv", epoch_csv());
  put("report.txt", summary());
}

double pair_accuracy(std::span<const double> scores, std::span<const int> labels, bool higher_is_same,
                     double threshold) {
  if (scores.size() != labels.size()) throw ShapeError("score and label counts differ");
  if (scores.empty()) throw DataError("accuracy of an empty pair set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool same = higher_is_same ? scores[i] > threshold : scores[i] < threshold;
    correct += (same ? 1 : 0) == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double fit_threshold(std::span<const double> distances, std::span<const int> labels) {
  if (distances.size() != labels.size()) throw ShapeError("distance and label counts differ");
  if (distances.empty()) throw DataError("cannot fit a threshold without pairs");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  // Threshold below every distance: everything predicted different.
  std::size_t correct = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 0));
  std::size_t best = correct;
  double best_t = distances[order.front()] - 1.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    // Moving past distance k flips that pair to "same".
    correct += labels[order[k]] == 1 ? 1 : 0;
    correct -= labels[order[k]] == 0 ? 1 : 0;
    if (k + 1 < order.size() && distances[order[k + 1]] == distances[order[k]]) continue;
    const double t = k + 1 < order.size() ? 0.5 * (distances[order[k]] + distances[order[k + 1]])
                                          : distances[order[k]] + 1.0;
    if (correct > best) {
      best = correct;
      best_t = t;
    }
  }
  return best_t;
}

double evaluate_pairs(const PairModel& model, std::span<const PairSample> pairs, double threshold) {
  if (pairs.empty()) throw DataError("no pairs to evaluate");
  if (!model.higher_is_same() && !std::isfinite(threshold)) throw ConfigError("siamese evaluation needs a threshold");
  const std::vector<double> s = model.scores(pairs);
  const std::vector<int> y = pair_labels(pairs);
  return pair_accuracy(s, y, model.higher_is_same(), model.higher_is_same() ? 0.0 : threshold);
}

namespace {

struct Scored {
  double loss;
  std::vector<double> scores;
  std::vector<int> labels;
};

double accuracy_for(const PairModel& model, const Scored& s, double threshold) {
  return pair_accuracy(s.scores, s.labels, model.higher_is_same(), model.higher_is_same() ? 0.0 : threshold);
}

Scored score_set(const PairModel& model, const std::vector<PairSample>& pairs, std::size_t batch) {
  auto out = model.evaluate(pairs, batch);
  return {out.loss.item(), std::move(out.scores), pair_labels(pairs)};
}

}  // namespace

RunReport train(PairModel& model, const std::vector<PairSample>& train_pairs, const std::vector<PairSample>& val_pairs,
                LossKind loss, const TrainConfig& config, const std::vector<PairSample>& test_pairs) {
  config.validate();
  if (train_pairs.empty()) throw DataError("no training pairs");
  if (loss != model.loss_kind()) {
    throw ConfigError("loss " + to_string(loss) + " does not fit a " + to_string(model.approach()) + " model (expects " +
                      to_string(model.loss_kind()) + ")");
  }
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.seed = config.seed;
  report.config = {{"train", config.to_json()}, {"model", model.spec().to_json()}, {"loss", to_string(loss)}};
  report.train_pairs = train_pairs.size();
  report.validation_pairs = val_pairs.size();
  report.test_pairs = test_pairs.size();

  RmsProp optimizer(model.parameters(), config.learning_rate, config.rmsprop);
  const bool monitor_val = config.early_stopping.monitor == "val_loss" && !val_pairs.empty();
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_pairs.size());
  std::vector<PairSample> batch;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, "epoch", epoch));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::vector<double> scores;
    std::vector<int> labels;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      // A trailing batch of one pair is dropped unless it is the only batch.
      if (n < 2 && start > 0) break;
      batch.clear();
      for (std::size_t i = 0; i < n; ++i) batch.push_back(train_pairs[order[start + i]]);
      try {
        Tape tape;
        PairModel::Output out = model.forward(tape, batch);
        const double value = out.loss.item();
        if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
        tape.backward(out.loss);
        optimizer.step();
        loss_sum += value * static_cast<double>(n);
        seen += n;
        scores.insert(scores.end(), out.scores.begin(), out.scores.end());
        for (const auto& p : batch) labels.push_back(p.label);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + e.what());
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(seen);
    const double train_t = model.higher_is_same() ? 0.0 : fit_threshold(scores, labels);
    m.train_acc = pair_accuracy(scores, labels, model.higher_is_same(), train_t);
    if (!val_pairs.empty()) {
      const Scored v = score_set(model, val_pairs, config.batch_size);
      m.val_loss = v.loss;
      m.val_acc = accuracy_for(model, v, train_t);
    }
    report.epochs.push_back(m);

    if (config.early_stopping.enabled) {
      const double monitored = monitor_val ? m.val_loss : m.train_loss;
      if (monitored < best - config.early_stopping.min_delta) {
        best = monitored;
        since_best = 0;
      } else if (++since_best >= config.early_stopping.patience) {
        report.stopped_early = epoch < config.epochs;
        break;
      }
    }
  }

  // Final decision rule and held-out scores.
  std::optional<Scored> val;
  if (!val_pairs.empty()) val = score_set(model, val_pairs, config.batch_size);
  if (!model.higher_is_same()) {
    if (val) {
      report.threshold = fit_threshold(val->scores, val->labels);
      report.threshold_source = "validation";
    } else {
      const Scored tr = score_set(model, train_pairs, config.batch_size);
      report.threshold = fit_threshold(tr.scores, tr.labels);
      report.threshold_source = "train";
    }
  }
  if (val) report.validation_accuracy = accuracy_for(model, *val, report.threshold);
  if (!test_pairs.empty()) report.test_accuracy = accuracy_for(model, score_set(model, test_pairs, config.batch_size), report.threshold);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

CrossValidation crossvalidate(const std::function<RunReport(std::size_t)>& run_fold, std::size_t k, std::size_t jobs) {
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  jobs = std::clamp<std::size_t>(jobs, 1, k);
  CrossValidation cv;
  cv.folds.resize(k);
  std::vector<std::exception_ptr> errors(k);
  std::vector<std::string> messages(k);
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t fold;
      {
        std::lock_guard lock(mu);
        if (next >= k) return;
        fold = next++;
      }
      try {
        cv.folds[fold] = run_fold(fold);
      } catch (const std::exception& e) {
        errors[fold] = std::current_exception();
        messages[fold] = e.what();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    prepare_threads();
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t f = 0; f < k; ++f) {
    if (!errors[f]) continue;
    const std::string msg = "fold " + std::to_string(f) + ": " + messages[f];
    try {
      std::rethrow_exception(errors[f]);
    } catch (const ConfigError&) {
      throw ConfigError(msg);
    } catch (const NumericError&) {
      throw NumericError(msg);
    } catch (const DataError&) {
      throw DataError(msg);
    } catch (...) {
      throw Error(msg);
    }
  }
  double sum = 0.0;
  for (const auto& r : cv.folds) sum += r.test_accuracy;
  cv.mean_accuracy = sum / static_cast<double>(k);
  double ss = 0.0;
  for (const auto& r : cv.folds) ss += (r.test_accuracy - cv.mean_accuracy) * (r.test_accuracy - cv.mean_accuracy);
  cv.std_accuracy = std::sqrt(ss / static_cast<double>(k - 1));
  return cv;
}

double reconstruction_mse(const CapsNet& model, std::span<const Image> images, std::size_t batch_size) {
  if (images.empty()) throw DataError("no images to reconstruct");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const auto chunk = images.subspan(start, std::min(batch_size, images.size() - start));
    Tape tape = Tape::inference();
    const Tensor x = to_batch(chunk);
    const auto enc = model.encode(tape, x);
    const auto masks = model.longest_capsules(enc.capsules);
    const Tensor y = model.decode(tape, enc.capsules, masks);
    auto a = y.values();
    auto b = x.values();
    for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
    count += a.size();
  }
  return total / static_cast<double>(count);
}

ReconstructionReport train_reconstruction(CapsNet& model, std::span<const Image> images, const ReconstructionConfig& config) {
  if (images.empty()) throw DataError("no images for reconstruction training");
  if (config.batch_size == 0 || config.epochs == 0) throw ConfigError("reconstruction batch size and epochs must be >= 1");
  RmsProp optimizer(model.parameters(), config.learning_rate, config.rmsprop);
  ReconstructionReport report;
  std::vector<std::size_t> order(images.size());
  std::vector<Image> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, "epoch", epoch));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) batch.push_back(images[order[i]]);
      Tape tape;
      const Tensor x = to_batch(batch);
      const auto enc = model.encode(tape, x);
      const auto masks = model.longest_capsules(enc.capsules);
      const Tensor y = model.decode(tape, enc.capsules, masks);
      const Tensor loss = reconstruction_loss(tape, y, x, config.loss_weight);
      tape.backward(loss);
      optimizer.step();
    }
    report.epoch_mse.push_back(reconstruction_mse(model, images, config.batch_size));
  }
  report.final_mse = report.epoch_mse.back();
  model.set_reconstruction_error(report.final_mse);
  return report;
}

}  // namespace oneshot

namespace oneshot {

std::vector<Identification> identify(const std::vector<PairManifestEntry>& entries, std::span<const double> scores,
                                     bool higher_is_same) {
  if (entries.size() != scores.size()) throw ShapeError("entry and score counts differ");
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto [it, fresh] = groups.try_emplace(entries[i].path_a);
    if (fresh) order.push_back(entries[i].path_a);
    it->second.push_back(i);
  }
  std::vector<Identification> out;
  for (const auto& query : order) {
    std::vector<std::size_t> idx = groups.at(query);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return higher_is_same ? scores[a] > scores[b] : scores[a] < scores[b];
    });
    Identification id;
    id.query = query;
    id.best = entries[idx.front()].path_b;
    id.candidates = idx.size();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (entries[idx[r]].label == 1) {
        id.true_rank = r + 1;
        break;
      }
    }
    out.push_back(std::move(id));
  }
  return out;
}

}  // namespace oneshot
