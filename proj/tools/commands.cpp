#include "commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "bicnn/errors.hpp"
#include "bicnn/stats.hpp"
#include "bicnn/synthetic.hpp"
#include "bicnn/text.hpp"

namespace bicnn::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw InvalidConfig(std::string(what) + " path is required");
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path);
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

json summary_json(const stats::Summary& s) {
  return {{"mean", s.mean}, {"median", s.median}, {"std", s.stddev}};
}

json evaluation_json(const train::Evaluation& ev, const std::vector<std::string>& labels) {
  json classes = json::array();
  for (std::size_t c = 0; c < ev.precision.size(); ++c) {
    classes.push_back({{"label", c}, {"name", labels.at(c)}, {"precision", ev.precision[c]},
                       {"recall", ev.recall[c]}});
  }
  return {{"total", ev.total}, {"correct", ev.correct}, {"accuracy", ev.accuracy}, {"loss", ev.loss},
          {"classes", classes}};
}

void write_confusion(const fs::path& path, const train::Evaluation& ev) {
  auto out = open_output(path);
  out << "actual\\predicted";
  for (std::size_t c = 0; c < ev.confusion.size(); ++c) out << ',' << c;
  out << '\n';
  for (std::size_t a = 0; a < ev.confusion.size(); ++a) {
    out << a;
    for (const auto n : ev.confusion[a]) out << ',' << n;
    out << '\n';
  }
}

void print_evaluation(std::ostream& out, const train::Evaluation& ev, const std::vector<std::string>& labels) {
  out << "accuracy " << std::fixed << std::setprecision(4) << ev.accuracy << " (" << ev.correct << "/"
      << ev.total << ")\n";
  out << "label  precision  recall  name\n";
  for (std::size_t c = 0; c < ev.precision.size(); ++c) {
    out << std::setw(5) << c << "  " << std::setw(9) << ev.precision[c] << "  " << std::setw(6) << ev.recall[c]
        << "  " << labels.at(c) << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

/// Labels file beside the corpus, or "class k" names when it is absent.
std::vector<std::string> corpus_labels(const fs::path& corpus, std::span<const text::Report> reports) {
  const auto path = text::labels_path_for(corpus);
  std::vector<std::string> labels;
  if (fs::exists(path)) {
    labels = text::read_labels(path);
  } else {
    int top = 0;
    for (const auto& r : reports) top = std::max(top, r.label);
    for (int c = 0; c <= top; ++c) labels.push_back("class " + std::to_string(c));
  }
  for (const auto& r : reports) {
    if (static_cast<std::size_t>(r.label) >= labels.size()) {
      throw ParseError("report " + r.id + " has label " + std::to_string(r.label) + " but only " +
                       std::to_string(labels.size()) + " classes are named");
    }
  }
  return labels;
}

const char* ce_name(ad::CrossEntropyMode m) { return m == ad::CrossEntropyMode::binary ? "binary" : "categorical"; }
const char* l2_name(ad::L2Mode m) { return m == ad::L2Mode::literal ? "literal" : "squared"; }

}  // namespace

fs::path output_dir(const std::string& flag, const fs::path& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("BICNN_OUT_DIR"); env && *env) return env;
  return fallback;
}

// gen-data -------------------------------------------------------------------

int gen_data(const GenDataOptions& opts, std::ostream& out) {
  if (opts.preset.empty() == opts.spec_file.empty()) {
    throw InvalidConfig("give exactly one of --preset or --spec");
  }
  synth::CorpusSpec spec =
      opts.preset.empty() ? synth::CorpusSpec::load(opts.spec_file) : synth::preset(opts.preset);
  if (opts.seed) spec.seed = *opts.seed;
  if (opts.noise) spec.noise = *opts.noise;
  if (opts.reports) spec = spec.scaled(*opts.reports);
  spec.validate();

  fs::path path = opts.out;
  if (path.empty()) path = output_dir("", ".") / (spec.name + ".jsonl");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());

  const auto reports = synth::generate(spec);
  text::write_corpus(path, reports);
  text::write_labels(text::labels_path_for(path), spec.label_names());
  out << "wrote " << reports.size() << " reports to " << path.string() << '\n';
  out << synth::format_stats(synth::corpus_stats(reports));
  return 0;
}

// train ------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (model != "bicnn" && model != "cnn") throw InvalidConfig("--model must be bicnn or cnn, got '" + model + "'");
  if (!(train_config.learning_rate > 0.0)) throw InvalidConfig("learning rate must be > 0");
  train_config.validate();
  nn::ModelConfig mc = model_config;
  mc.sequence_length = mc.max_kernel();
  mc.num_classes = std::max<std::size_t>(mc.num_classes, 2);
  mc.validate();
  require_file(corpus, "corpus");
}

std::string ExperimentConfig::to_json() const {
  const auto& m = model_config;
  const auto& t = train_config;
  json doc = {
      {"corpus", corpus},
      {"model", model},
      {"kernels", m.kernel_sizes},
      {"feature_maps", m.feature_maps},
      {"embedding_dim", m.embedding_dim},
      {"channels", m.num_channels},
      {"dropout", m.dropout_p},
      {"batch_size", t.batch_size},
      {"learning_rate", t.learning_rate},
      {"decay_rate", t.decay_rate},
      {"decay_interval", t.decay_interval},
      {"epochs", t.epochs},
      {"l2_eta", t.l2_eta},
      {"l2_mode", l2_name(t.l2_mode)},
      {"ce_mode", ce_name(t.ce_mode)},
      {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"epsilon", t.adam.epsilon}}},
      {"patience", t.patience},
      {"split", {t.train_fraction, t.valid_fraction, t.test_fraction}},
      {"runs", t.num_runs},
      {"seed", t.seed},
  };
  return doc.dump();
}

int train(ExperimentConfig config, std::ostream& out) {
  config.model_config.num_channels = config.model == "cnn" ? 1 : 2;
  config.validate();

  const fs::path corpus_path = config.corpus;
  const auto reports = text::read_corpus(corpus_path);
  const auto labels = corpus_labels(corpus_path, reports);
  if (labels.size() < 2) throw ParseError("corpus needs at least two classes");
  config.model_config.num_classes = labels.size();

  const fs::path dir = output_dir(config.out, ".");
  fs::create_directories(dir);

  struct Best {
    std::optional<std::size_t> index;
    double loss = 0.0;
    nn::BiCnnModel model;
    text::Vocabulary vocab;
    std::vector<text::Report> test;
    train::Evaluation evaluation;
  } best;
  // Lowest best-validation loss wins; ties go to the lower run index so the
  // choice does not depend on thread scheduling.
  const train::CnnRunObserver keep_best = [&best](const train::CnnRunArtifacts& a) {
    const double loss = a.result->best_valid_loss;
    if (best.index && (loss > best.loss || (loss == best.loss && a.run_index > *best.index))) return;
    best.index = a.run_index;
    best.loss = loss;
    best.model = a.model->clone();
    best.vocab = *a.vocab;
    best.test = *a.test_reports;
    best.evaluation = a.result->test;
  };

  const auto& tc = config.train_config;
  train::CrossValidation cv;
  if (tc.num_runs == 1) {
    const std::uint64_t seed = tc.derive_run_seeds ? train::run_seed(tc.seed, 0) : tc.seed;
    cv = train::aggregate({train::train_cnn_run(reports, config.model_config, tc, 0, seed, keep_best)});
  } else {
    cv = train::cross_validate(reports, config.model_config, tc, keep_best);
  }

  const auto& winner = cv.runs.at(*best.index);
  nn::save_model(dir / "model.bin", best.model, best.vocab, {winner.seed, labels, {}, 0, 0});
  text::write_corpus(dir / "test_split.jsonl", best.test);
  text::write_labels(text::labels_path_for(dir / "test_split.jsonl"), labels);
  write_confusion(dir / "confusion.csv", best.evaluation);

  {
    auto metrics = open_output(dir / "metrics.jsonl");
    for (std::size_t i = 0; i < cv.runs.size(); ++i) {
      for (const auto& e : cv.runs[i].epochs) {
        metrics << json{{"run", i},
                        {"epoch", e.epoch},
                        {"steps", e.steps},
                        {"learning_rate", e.learning_rate},
                        {"train_loss", e.train_loss},
                        {"train_accuracy", e.train_accuracy},
                        {"valid_loss", e.valid_loss},
                        {"valid_accuracy", e.valid_accuracy}}
                       .dump()
                << '\n';
      }
    }
  }

  json runs = json::array();
  for (std::size_t i = 0; i < cv.runs.size(); ++i) {
    const auto& r = cv.runs[i];
    runs.push_back({{"run", i},
                    {"seed", r.seed},
                    {"test_accuracy", r.test_accuracy},
                    {"convergence_epoch", r.convergence_epoch},
                    {"best_epoch", r.best_epoch},
                    {"best_valid_loss", r.best_valid_loss},
                    {"epochs_run", r.epochs.size()},
                    {"steps", r.steps},
                    {"early_stopped", r.early_stopped}});
  }
  const json summary = {{"config", json::parse(config.to_json())},
                        {"labels", labels},
                        {"accuracy", summary_json(cv.accuracy)},
                        {"convergence_epoch", summary_json(cv.convergence_epoch)},
                        {"best_run", *best.index},
                        {"best_run_test", evaluation_json(best.evaluation, labels)},
                        {"runs", runs}};
  open_output(dir / "summary.json") << summary.dump(2) << '\n';

  out << config.model << ": " << cv.runs.size() << " run(s), test accuracy mean " << cv.accuracy.mean
      << " median " << cv.accuracy.median << " std " << cv.accuracy.stddev << '\n';
  out << "convergence epoch mean " << cv.convergence_epoch.mean << " median " << cv.convergence_epoch.median
      << " std " << cv.convergence_epoch.stddev << '\n';
  out << "best run " << *best.index << " (seed " << winner.seed << ", test accuracy " << winner.test_accuracy
      << ") saved to " << (dir / "model.bin").string() << '\n';
  return 0;
}

// eval ---------------------------------------------------------------------------

int eval(const EvalOptions& opts, std::ostream& out) {
  require_file(opts.model, "model");
  require_file(opts.corpus, "corpus");
  const auto loaded = nn::load_model(opts.model);
  const auto reports = text::read_corpus(opts.corpus);
  if (reports.empty()) throw TooFewReports("corpus " + opts.corpus + " is empty");

  const std::size_t n = loaded.model.config().sequence_length;
  const std::size_t classes = loaded.model.num_classes();
  std::vector<train::Example<text::IndexedSequence>> examples;
  std::size_t truncated = 0;
  for (const auto& r : reports) {
    if (static_cast<std::size_t>(r.label) >= classes) {
      throw ParseError("report " + r.id + " has label " + std::to_string(r.label) + " outside the model's " +
                       std::to_string(classes) + " classes");
    }
    bool cut = false;
    examples.push_back({text::index_pad_truncate(text::report_tokens(r), loaded.vocab, n, &cut),
                        static_cast<std::size_t>(r.label)});
    truncated += cut ? 1 : 0;
  }
  const auto ev = train::evaluate(loaded.model, std::span<const train::Example<text::IndexedSequence>>(examples),
                                  classes);

  const fs::path dir = output_dir(opts.out, fs::path(opts.model).parent_path().empty()
                                                ? fs::path(".")
                                                : fs::path(opts.model).parent_path());
  fs::create_directories(dir);
  write_confusion(dir / "eval_confusion.csv", ev);
  open_output(dir / "eval_metrics.json") << evaluation_json(ev, loaded.info.labels).dump(2) << '\n';

  print_evaluation(out, ev, loaded.info.labels);
  if (truncated > 0) out << truncated << " report(s) truncated to " << n << " tokens\n";
  return 0;
}

// predict ------------------------------------------------------------------------

int predict(const PredictOptions& opts, std::ostream& out) {
  require_file(opts.model, "model");
  const auto loaded = nn::load_model(opts.model);
  text::Report report;
  report.raw_text = opts.text;
  text::fill_sections(report);
  const auto seq = text::index_pad_truncate(text::report_tokens(report), loaded.vocab,
                                            loaded.model.config().sequence_length);
  const auto probs = loaded.model.predict_proba(seq);
  const std::size_t label = train::argmax(probs);
  const auto& names = loaded.info.labels;

  if (opts.json) {
    out << json{{"label", label}, {"name", names.at(label)}, {"probabilities", probs}}.dump() << '\n';
    return 0;
  }
  out << "label " << label << " (" << names.at(label) << ")\n";
  out << std::fixed << std::setprecision(6);
  for (std::size_t c = 0; c < probs.size(); ++c) {
    out << "  " << c << "  " << probs[c] << "  " << names.at(c) << '\n';
  }
  out.unsetf(std::ios::floatfield);
  return 0;
}

// stats ----------------------------------------------------------------------------

int stats(const StatsOptions& opts, std::ostream& out) {
  if (!opts.compare.empty()) {
    if (opts.compare.size() != 2) throw InvalidConfig("--compare takes exactly two summary files");
    std::vector<std::vector<double>> acc(2);
    for (std::size_t k = 0; k < 2; ++k) {
      require_file(opts.compare[k], "summary");
      std::ifstream in(opts.compare[k], std::ios::binary);
      try {
        const json doc = json::parse(in);
        for (const auto& r : doc.at("runs")) acc[k].push_back(r.at("test_accuracy").get<double>());
      } catch (const json::exception& e) {
        throw ParseError(opts.compare[k] + ": " + e.what());
      }
    }
    if (acc[0].size() != acc[1].size()) throw InvalidConfig("summaries have different run counts");
    const auto a = stats::summarize(acc[0]);
    const auto b = stats::summarize(acc[1]);
    out << "A mean " << a.mean << " median " << a.median << " std " << a.stddev << '\n';
    out << "B mean " << b.mean << " median " << b.median << " std " << b.stddev << '\n';
    out << "A - B mean " << a.mean - b.mean << ", sign test p " << stats::sign_test_p_value(acc[0], acc[1])
        << '\n';
    return 0;
  }
  if (opts.corpus.empty() == opts.preset.empty()) throw InvalidConfig("give exactly one of --corpus or --preset");
  std::vector<text::Report> reports;
  if (!opts.corpus.empty()) {
    require_file(opts.corpus, "corpus");
    reports = text::read_corpus(opts.corpus);
  } else {
    reports = synth::generate(synth::preset(opts.preset));
  }
  if (reports.empty()) throw TooFewReports("corpus is empty");
  out << synth::format_stats(synth::corpus_stats(reports));
  return 0;
}

}  // namespace bicnn::cli
