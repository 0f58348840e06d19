#include "bicnn/training.hpp"

#include <algorithm>
#include <cmath>

#include "bicnn/log.hpp"

namespace bicnn::train {

// Optimizer ------------------------------------------------------------------------

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double learning_rate, const AdamConfig& config) {
  if (params.size() != grads.size()) throw ShapeMismatch("adam_step: params and grads differ in size");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NonFiniteGradient("gradient entry " + std::to_string(i) + " is " + std::to_string(grads[i]));
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

Adam::Adam(std::vector<ad::Tensor> params, AdamConfig config)
    : params_(std::move(params)), states_(params_.size()), config_(config) {}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step(double learning_rate) {
  // Validate every gradient first so a bad step leaves all parameters intact.
  for (const auto& p : params_) {
    for (const double g : p.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in a parameter tensor");
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_step(params_[i].values(), params_[i].grad(), states_[i], learning_rate, config_);
  }
}

double decayed_lr(double lr0, std::size_t epoch, double decay_rate, std::size_t interval) {
  const std::size_t exponent = interval == 0 ? 0 : epoch / interval;
  return lr0 * std::pow(decay_rate, static_cast<double>(exponent));
}

// Configuration ------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidConfig("learning_rate must be a finite value >= 0");
  }
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw InvalidConfig("decay_rate must lie in (0, 1]");
  if (decay_interval < 1) throw InvalidConfig("decay_interval must be >= 1");
  if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
  if (!(l2_eta >= 0.0)) throw InvalidConfig("l2_eta must be >= 0");
  if (patience < 1) throw InvalidConfig("patience must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw InvalidConfig("adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw InvalidConfig("adam epsilon must be > 0");
  for (const double f : {train_fraction, valid_fraction, test_fraction}) {
    if (!(f > 0.0 && f < 1.0)) throw InvalidConfig("split fractions must lie in (0, 1)");
  }
  if (std::abs(train_fraction + valid_fraction + test_fraction - 1.0) > 1e-9) {
    throw InvalidConfig("split fractions must sum to 1");
  }
  if (num_runs < 1) throw InvalidConfig("num_runs must be >= 1");
  if (jobs < 1) throw InvalidConfig("jobs must be >= 1");
}

std::uint64_t run_seed(std::uint64_t base, std::size_t run_index) {
  // splitmix64 of a per-run offset.
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(run_index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Data ---------------------------------------------------------------------------

Split split_data(std::span<const text::Report> reports, double train_fraction,
                 double valid_fraction, double test_fraction, std::uint64_t seed) {
  if (std::abs(train_fraction + valid_fraction + test_fraction - 1.0) > 1e-9 || valid_fraction <= 0.0 ||
      test_fraction <= 0.0 || train_fraction <= 0.0) {
    throw InvalidConfig("split fractions must be positive and sum to 1");
  }
  const std::size_t n = reports.size();
  if (n < 10) throw TooFewReports("need at least 10 reports to split, got " + std::to_string(n));

  const auto portion = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_valid = portion(valid_fraction);
  const std::size_t n_test = portion(test_fraction);
  if (n_valid == 0 || n_test == 0 || n_valid + n_test >= n) {
    throw TooFewReports(std::to_string(n) + " reports leave an empty split");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Split split;
  const std::size_t n_train = n - n_valid - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = reports[order[i]];
    if (i < n_train) {
      split.train.push_back(r);
    } else if (i < n_train + n_valid) {
      split.valid.push_back(r);
    } else {
      split.test.push_back(r);
    }
  }
  return split;
}

SequenceData prepare_sequences(const Split& split, std::size_t min_length) {
  SequenceData out;
  std::vector<text::Tokens> train_tokens;
  train_tokens.reserve(split.train.size());
  std::size_t longest = 0;
  for (const auto& r : split.train) {
    train_tokens.push_back(text::report_tokens(r));
    longest = std::max(longest, train_tokens.back().size());
  }
  out.vocab = text::build_vocabulary(train_tokens);
  out.sequence_length = std::max({longest, min_length, std::size_t{1}});

  for (std::size_t i = 0; i < split.train.size(); ++i) {
    out.data.train.push_back({text::index_and_pad(train_tokens[i], out.vocab, out.sequence_length),
                              static_cast<std::size_t>(split.train[i].label)});
  }
  const auto convert = [&](const std::vector<text::Report>& reports,
                           std::vector<Example<text::IndexedSequence>>& dest) {
    for (const auto& r : reports) {
      bool cut = false;
      const auto tokens = text::report_tokens(r);
      dest.push_back({text::index_pad_truncate(tokens, out.vocab, out.sequence_length, &cut),
                      static_cast<std::size_t>(r.label)});
      if (cut) ++out.truncated;
    }
  };
  convert(split.valid, out.data.valid);
  convert(split.test, out.data.test);
  return out;
}

// Metrics ------------------------------------------------------------------------

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

Evaluation evaluate_predictions(std::span<const std::size_t> predicted,
                                std::span<const std::size_t> actual, std::size_t num_classes) {
  if (predicted.size() != actual.size()) throw ShapeMismatch("prediction and label counts differ");
  Evaluation ev;
  ev.total = actual.size();
  ev.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] >= num_classes || predicted[i] >= num_classes) {
      throw IndexOutOfRange("class index outside [0, " + std::to_string(num_classes) + ")");
    }
    ++ev.confusion[actual[i]][predicted[i]];
    if (actual[i] == predicted[i]) ++ev.correct;
  }
  ev.accuracy = ev.total == 0 ? 0.0 : static_cast<double>(ev.correct) / static_cast<double>(ev.total);
  ev.precision.assign(num_classes, 0.0);
  ev.recall.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t predicted_c = 0;
    std::size_t actual_c = 0;
    for (std::size_t o = 0; o < num_classes; ++o) {
      predicted_c += ev.confusion[o][c];
      actual_c += ev.confusion[c][o];
    }
    const double tp = static_cast<double>(ev.confusion[c][c]);
    if (predicted_c > 0) ev.precision[c] = tp / static_cast<double>(predicted_c);
    if (actual_c > 0) ev.recall[c] = tp / static_cast<double>(actual_c);
  }
  return ev;
}

// Repeated runs ------------------------------------------------------------------

CrossValidation aggregate(std::vector<RunResult> runs) {
  CrossValidation cv;
  std::vector<double> acc;
  std::vector<double> conv;
  for (const auto& r : runs) {
    acc.push_back(r.test_accuracy);
    conv.push_back(static_cast<double>(r.convergence_epoch));
  }
  cv.accuracy = summarize(acc);
  cv.convergence_epoch = summarize(conv);
  cv.runs = std::move(runs);
  return cv;
}

RunResult train_cnn_run(std::span<const text::Report> reports, const nn::ModelConfig& model_config,
                        const TrainConfig& config, std::size_t run_index, std::uint64_t seed,
                        const CnnRunObserver& observer) {
  config.validate();
  const Split split =
      split_data(reports, config.train_fraction, config.valid_fraction, config.test_fraction, seed);
  SequenceData prepared = prepare_sequences(split, model_config.max_kernel());
  if (prepared.truncated > 0) {
    log::info("run " + std::to_string(run_index) + ": truncated " + std::to_string(prepared.truncated) +
              " held-out reports");
  }
  nn::ModelConfig mc = model_config;
  mc.sequence_length = prepared.sequence_length;
  nn::BiCnnModel model = nn::BiCnnModel::init(mc, prepared.vocab.size(), seed);
  RunResult result = train_model(model, prepared.data, config, seed);
  if (observer) observer(CnnRunArtifacts{run_index, &result, &model, &prepared.vocab, &split.test});
  return result;
}

CrossValidation cross_validate(std::span<const text::Report> reports, const nn::ModelConfig& model_config,
                               const TrainConfig& config, const CnnRunObserver& observer) {
  config.validate();
  if (config.num_runs < 2) throw InvalidConfig("cross-validation needs num_runs >= 2");
  std::mutex observer_mu;
  CnnRunObserver guarded;
  if (observer) {
    guarded = [&](const CnnRunArtifacts& artifacts) {
      std::lock_guard lock(observer_mu);
      observer(artifacts);
    };
  }
  auto runs = run_repeated(config.num_runs, config.jobs, config.seed, config.derive_run_seeds,
                           [&](std::size_t index, std::uint64_t seed) {
                             return train_cnn_run(reports, model_config, config, index, seed, guarded);
                           });
  return aggregate(std::move(runs));
}

}  // namespace bicnn::train
