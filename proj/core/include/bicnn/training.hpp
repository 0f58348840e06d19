#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "bicnn/errors.hpp"
#include "bicnn/model.hpp"
#include "bicnn/stats.hpp"
#include "bicnn/tensor.hpp"
#include "bicnn/text.hpp"

namespace bicnn::train {

using nn::Rng;

// Optimizer --------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update of `params` in place. Throws
/// NonFiniteGradient (before touching anything) if a gradient is NaN/inf.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double learning_rate, const AdamConfig& config = {});

/// Adam over a fixed list of tensors, one moment state per tensor.
class Adam {
 public:
  Adam(std::vector<ad::Tensor> params, AdamConfig config = {});
  void zero_grad();
  void step(double learning_rate);
  std::size_t timestep() const { return states_.empty() ? 0 : states_.front().t; }

 private:
  std::vector<ad::Tensor> params_;
  std::vector<AdamState> states_;
  AdamConfig config_;
};

/// Staircase exponential decay: lr0 * rate^(epoch / interval), integer division.
double decayed_lr(double lr0, std::size_t epoch, double decay_rate, std::size_t interval);

// Configuration ------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  double decay_rate = 0.96;
  std::size_t decay_interval = 1;  // epochs
  std::size_t epochs = 50;
  double l2_eta = 1e-4;
  AdamConfig adam;
  std::size_t patience = 10;
  double train_fraction = 0.70;
  double valid_fraction = 0.15;
  double test_fraction = 0.15;
  std::size_t num_runs = 30;
  std::uint64_t seed = 1;
  ad::CrossEntropyMode ce_mode = ad::CrossEntropyMode::categorical;
  ad::L2Mode l2_mode = ad::L2Mode::squared;
  /// Worker threads for cross_validate. Results do not depend on it.
  std::size_t jobs = 1;
  /// When false every run reuses `seed` (same split, init and shuffles).
  bool derive_run_seeds = true;

  /// Throws InvalidConfig. A learning rate of exactly 0 is accepted (frozen
  /// weights), negative rates are not.
  void validate() const;
};

/// Seed for run `run_index` of a cross-validation rooted at `base`.
std::uint64_t run_seed(std::uint64_t base, std::size_t run_index);

// Data -----------------------------------------------------------------------------

struct Split {
  std::vector<text::Report> train;
  std::vector<text::Report> valid;
  std::vector<text::Report> test;
};

/// Seeded shuffle, then valid = floor(f_valid * n), test = floor(f_test * n)
/// and the remainder goes to train. Throws TooFewReports for n < 10 or when
/// a split would be empty.
Split split_data(std::span<const text::Report> reports, double train_fraction,
                 double valid_fraction, double test_fraction, std::uint64_t seed);

template <class Input>
struct Example {
  Input input;
  std::size_t label = 0;
};

template <class Input>
struct Dataset {
  std::vector<Example<Input>> train;
  std::vector<Example<Input>> valid;
  std::vector<Example<Input>> test;
};

/// Tokenized splits ready for the convolutional models. The vocabulary and
/// the padded length come from the training split only; longer valid/test
/// reports are truncated tail-first.
struct SequenceData {
  text::Vocabulary vocab;
  std::size_t sequence_length = 0;
  std::size_t truncated = 0;
  Dataset<text::IndexedSequence> data;
};

/// `min_length` lifts the padded length so the widest kernel always fits.
SequenceData prepare_sequences(const Split& split, std::size_t min_length);

// Metrics --------------------------------------------------------------------------

struct Evaluation {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double loss = 0.0;  // mean cross-entropy, categorical
  std::vector<double> precision;  // 0 when a class is never predicted
  std::vector<double> recall;     // 0 when a class never occurs
  std::vector<std::vector<std::size_t>> confusion;  // [actual][predicted]
};

Evaluation evaluate_predictions(std::span<const std::size_t> predicted,
                                std::span<const std::size_t> actual, std::size_t num_classes);

std::size_t argmax(std::span<const double> values);

/// Runs the model in inference mode over `examples`.
template <class Model, class Input>
Evaluation evaluate(const Model& model, std::span<const Example<Input>> examples,
                    std::size_t num_classes) {
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> actual;
  double loss = 0.0;
  for (const auto& ex : examples) {
    const auto probs = model.predict_proba(ex.input);
    predicted.push_back(argmax(probs));
    actual.push_back(ex.label);
    loss -= std::log(std::clamp(probs.at(ex.label), ad::kProbClamp, 1.0 - ad::kProbClamp));
  }
  Evaluation ev = evaluate_predictions(predicted, actual, num_classes);
  if (!examples.empty()) ev.loss = loss / static_cast<double>(examples.size());
  return ev;
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double valid_loss = 0.0;
  double valid_accuracy = 0.0;
  std::size_t steps = 0;  // cumulative mini-batch updates
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  /// Epoch (1-based) with the lowest validation loss; its weights are the
  /// ones evaluated on the test split.
  std::size_t best_epoch = 0;
  double best_valid_loss = 0.0;
  /// First epoch at which validation accuracy reached its run maximum.
  std::size_t convergence_epoch = 0;
  bool early_stopped = false;
  std::size_t steps = 0;
  Evaluation test;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;
};

// Training -------------------------------------------------------------------------

namespace detail {

inline ad::Tensor one_hot_rows(std::span<const std::size_t> labels, std::size_t num_classes) {
  ad::Tensor t({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw IndexOutOfRange("label " + std::to_string(labels[i]) + " >= num_classes " +
                            std::to_string(num_classes));
    }
    t.value(i * num_classes + labels[i]) = 1.0;
  }
  return t;
}

}  // namespace detail

/// Result of one optimisation step on a mini-batch.
struct StepResult {
  double data_loss = 0.0;  // cross-entropy part
  double total_loss = 0.0; // with the L2 term
  std::size_t correct = 0;
};

/// Forward (train mode), loss = cross-entropy + L2(output weights), backward,
/// Adam update at `learning_rate`.
template <class Model, class Input>
StepResult train_step(Model& model, Adam& optimizer, std::span<const Example<Input>* const> batch,
                      const TrainConfig& config, double learning_rate, Rng& rng) {
  ad::Graph g;
  std::vector<ad::Tensor> rows;
  std::vector<std::size_t> labels;
  rows.reserve(batch.size());
  StepResult result;
  for (const auto* ex : batch) {
    rows.push_back(model.forward(g, ex->input, nn::Mode::train, rng));
    labels.push_back(ex->label);
    if (argmax(rows.back().values()) == ex->label) ++result.correct;
  }
  const ad::Tensor probs = ad::stack_rows(g, rows);
  const ad::Tensor targets = detail::one_hot_rows(labels, model.num_classes());
  const ad::Tensor data_loss = ad::cross_entropy_loss(g, probs, targets, config.ce_mode);
  const ad::Tensor penalty = ad::l2_penalty(g, model.output_weights(), config.l2_eta, config.l2_mode);
  const ad::Tensor loss = ad::add(g, data_loss, penalty);
  optimizer.zero_grad();
  g.backward(loss);
  model.after_backward();
  optimizer.step(learning_rate);
  result.data_loss = data_loss.item();
  result.total_loss = loss.item();
  return result;
}

/// Mini-batch Adam with staircase LR decay and early stopping on validation
/// loss. On return `model` holds the best-validation-loss weights, which are
/// the ones scored on the test split. `on_epoch` sees each epoch's metrics
/// as they are produced.
template <class Model, class Input>
RunResult train_model(Model& model, const Dataset<Input>& data, const TrainConfig& config,
                      std::uint64_t seed,
                      const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  config.validate();
  if (data.train.empty() || data.valid.empty()) {
    throw TooFewReports("training needs non-empty train and validation splits");
  }
  const auto started = std::chrono::steady_clock::now();
  const std::size_t num_classes = model.num_classes();

  RunResult result;
  result.seed = seed;
  Rng rng(seed ^ 0xA5A5A5A5DEADBEEFULL);
  Adam optimizer(model.parameters(), config.adam);

  std::vector<const Example<Input>*> order;
  for (const auto& ex : data.train) order.push_back(&ex);

  std::optional<Model> best;
  double best_loss = std::numeric_limits<double>::infinity();
  double best_acc = -1.0;
  std::size_t since_improvement = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = decayed_lr(config.learning_rate, epoch, config.decay_rate, config.decay_interval);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const Example<Input>* const> batch(order.data() + start, stop - start);
      StepResult step;
      try {
        step = train_step(model, optimizer, batch, config, lr, rng);
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss("run seed " + std::to_string(seed) + ", epoch " +
                            std::to_string(epoch + 1) + ", step " +
                            std::to_string(result.steps + 1) + ": " + e.what());
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient("run seed " + std::to_string(seed) + ", epoch " +
                                std::to_string(epoch + 1) + ", step " +
                                std::to_string(result.steps + 1) + ": " + e.what());
      }
      ++result.steps;
      loss_sum += step.data_loss * static_cast<double>(batch.size());
      correct += step.correct;
    }

    const Evaluation valid = evaluate(model, std::span<const Example<Input>>(data.valid), num_classes);
    if (!std::isfinite(valid.loss)) {
      throw NonFiniteLoss("validation loss is not finite at epoch " + std::to_string(epoch + 1));
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.learning_rate = lr;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    m.valid_loss = valid.loss;
    m.valid_accuracy = valid.accuracy;
    m.steps = result.steps;
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);

    if (valid.accuracy > best_acc) {
      best_acc = valid.accuracy;
      result.convergence_epoch = m.epoch;
    }
    if (valid.loss < best_loss) {
      best_loss = valid.loss;
      result.best_epoch = m.epoch;
      if (best) {
        best->assign_from(model);
      } else {
        best.emplace(model.clone());
      }
      since_improvement = 0;
    } else if (++since_improvement >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }

  if (best) model.assign_from(*best);
  result.best_valid_loss = best_loss;
  result.test = evaluate(model, std::span<const Example<Input>>(data.test), num_classes);
  result.test_accuracy = result.test.accuracy;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// Repeated runs --------------------------------------------------------------------

using stats::Summary;
using stats::summarize;
using stats::sign_test_p_value;

struct CrossValidation {
  std::vector<RunResult> runs;
  Summary accuracy;
  Summary convergence_epoch;
};

CrossValidation aggregate(std::vector<RunResult> runs);

/// Runs fn(run_index, seed) for every run on up to `jobs` threads and returns
/// the results in run order. A failing run is rethrown with its index.
template <class Fn>
std::vector<RunResult> run_repeated(std::size_t num_runs, std::size_t jobs, std::uint64_t base_seed,
                                    bool derive_seeds, Fn&& fn) {
  std::vector<RunResult> results(num_runs);
  std::vector<std::exception_ptr> errors(num_runs);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < num_runs; i = next++) {
      try {
        results[i] = fn(i, derive_seeds ? run_seed(base_seed, i) : base_seed);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, num_runs));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < num_runs; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.category(), "run " + std::to_string(i) + ": " + e.what());
    }
  }
  return results;
}

/// Everything one convolutional run produced, handed to the observer so a
/// caller can keep the model it wants.
struct CnnRunArtifacts {
  std::size_t run_index = 0;
  const RunResult* result = nullptr;
  const nn::BiCnnModel* model = nullptr;
  const text::Vocabulary* vocab = nullptr;
  const std::vector<text::Report>* test_reports = nullptr;
};

using CnnRunObserver = std::function<void(const CnnRunArtifacts&)>;

/// One convolutional run: split, per-run vocabulary and N, init and train,
/// all driven by `seed`. The observer runs before the model is discarded.
RunResult train_cnn_run(std::span<const text::Report> reports, const nn::ModelConfig& model_config,
                        const TrainConfig& config, std::size_t run_index, std::uint64_t seed,
                        const CnnRunObserver& observer = {});

/// Trains num_runs independent models (fresh split, vocabulary and init per
/// run). `model_config.sequence_length` is set per run from its training split.
/// The observer may be called from worker threads, one call at a time.
CrossValidation cross_validate(std::span<const text::Report> reports, const nn::ModelConfig& model_config,
                               const TrainConfig& config, const CnnRunObserver& observer = {});

}  // namespace bicnn::train
