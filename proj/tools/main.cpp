#include <algorithm>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bicnn/errors.hpp"
#include "commands.hpp"

namespace {

int exit_code(bicnn::ErrorCategory category) {
  switch (category) {
    case bicnn::ErrorCategory::usage:
      return 1;
    case bicnn::ErrorCategory::data:
      return 2;
    case bicnn::ErrorCategory::numerical:
      return 3;
  }
  return 2;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Expands `train --config FILE` into ordinary flags. The file holds
/// `key = value` lines named after the long options (`lr = 0.01`,
/// `feature-maps = 64`); '#' starts a comment and `[train]` headers are
/// ignored. Keys already given on the command line are skipped so flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  const auto sub = std::find(args.begin(), args.end(), "train");
  if (sub == args.end()) return args;
  auto it = sub;
  std::string path;
  for (; it != args.end(); ++it) {
    if (*it == "--config" && it + 1 != args.end()) {
      path = *(it + 1);
      it = args.erase(it, it + 2);
      break;
    }
    if (it->rfind("--config=", 0) == 0) {
      path = it->substr(9);
      it = args.erase(it);
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw bicnn::IoError("cannot read config " + path);

  const auto given = [&args](const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> extra;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw bicnn::InvalidConfig(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    extra.push_back(flag);
    extra.push_back(value);
  }
  args.insert(std::find(args.begin(), args.end(), "train") + 1, extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace bicnn::cli;

  CLI::App app{"Bi-directional convolutional report classifier"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic labeled corpus");
  gen_cmd->add_option("--preset", gen.preset, "mrd-like, crrd-like, mrd-like-hard or crrd-like-hard");
  gen_cmd->add_option("--spec", gen.spec_file, "Corpus spec JSON file");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed (overrides the corpus spec)");
  gen_cmd->add_option("--reports", gen.reports, "Rescale class counts to this many reports");
  gen_cmd->add_option("--noise", gen.noise, "Descriptor noise rate in [0, 1)");
  gen_cmd->add_option("-o,--out", gen.out, "Corpus path (default $BICNN_OUT_DIR/<name>.jsonl)");

  ExperimentConfig exp;
  auto& mc = exp.model_config;
  auto& tc = exp.train_config;
  std::string ce_mode = "categorical";
  std::string l2_mode = "squared";
  auto* train_cmd = app.add_subcommand("train", "Train and cross-validate a model");
  std::string config_file;
  train_cmd->add_option("--config", config_file, "key = value config file; flags override it");
  train_cmd->add_option("--corpus", exp.corpus, "JSON-lines corpus")->required();
  train_cmd->add_option("--model", exp.model, "bicnn or cnn")->capture_default_str();
  train_cmd->add_option("--kernels", mc.kernel_sizes, "Kernel sizes, comma separated")
      ->delimiter(',')
      ->capture_default_str();
  train_cmd->add_option("--feature-maps", mc.feature_maps, "Filters per kernel size")->capture_default_str();
  train_cmd->add_option("--embedding-dim", mc.embedding_dim, "Word vector size")->capture_default_str();
  train_cmd->add_option("--dropout", mc.dropout_p, "Dropout probability")->capture_default_str();
  train_cmd->add_option("--batch", tc.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--lr", tc.learning_rate, "Initial learning rate")->capture_default_str();
  train_cmd->add_option("--decay-rate", tc.decay_rate, "Learning rate decay factor")->capture_default_str();
  train_cmd->add_option("--decay-interval", tc.decay_interval, "Epochs per decay step")->capture_default_str();
  train_cmd->add_option("--epochs", tc.epochs, "Maximum epochs per run")->capture_default_str();
  train_cmd->add_option("--l2", tc.l2_eta, "L2 penalty weight on the output layer")->capture_default_str();
  train_cmd->add_option("--l2-mode", l2_mode, "squared or literal")
      ->check(CLI::IsMember({"squared", "literal"}))
      ->capture_default_str();
  train_cmd->add_option("--ce-mode", ce_mode, "categorical or binary")
      ->check(CLI::IsMember({"categorical", "binary"}))
      ->capture_default_str();
  train_cmd->add_option("--patience", tc.patience, "Early-stopping patience in epochs")->capture_default_str();
  train_cmd->add_option("--runs", tc.num_runs, "Independent runs")->capture_default_str();
  train_cmd->add_option("--seed", tc.seed, "Base seed")->capture_default_str();
  train_cmd->add_option("--jobs", tc.jobs, "Parallel runs")->capture_default_str();
  train_cmd->add_option("-o,--out", exp.out, "Output directory (default $BICNN_OUT_DIR or .)");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved model on a corpus");
  eval_cmd->add_option("--model", ev.model, "Model file")->required();
  eval_cmd->add_option("--corpus", ev.corpus, "JSON-lines corpus")->required();
  eval_cmd->add_option("-o,--out", ev.out, "Output directory (default $BICNN_OUT_DIR or the model's)");

  PredictOptions pred;
  auto* predict_cmd = app.add_subcommand("predict", "Classify one report");
  predict_cmd->add_option("--model", pred.model, "Model file")->required();
  predict_cmd->add_option("--text", pred.text, "Report text")->required();
  predict_cmd->add_flag("--json", pred.json, "Print JSON");

  StatsOptions st;
  auto* stats_cmd = app.add_subcommand("stats", "Corpus statistics or a run comparison");
  stats_cmd->add_option("--corpus", st.corpus, "JSON-lines corpus");
  stats_cmd->add_option("--preset", st.preset, "Generate a preset and report its statistics");
  stats_cmd->add_option("--compare", st.compare, "Two summary.json files to compare")->expected(2);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const bicnn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) return gen_data(gen, std::cout);
    if (*train_cmd) {
      tc.ce_mode = ce_mode == "binary" ? bicnn::ad::CrossEntropyMode::binary : bicnn::ad::CrossEntropyMode::categorical;
      tc.l2_mode = l2_mode == "literal" ? bicnn::ad::L2Mode::literal : bicnn::ad::L2Mode::squared;
      return train(exp, std::cout);
    }
    if (*eval_cmd) return eval(ev, std::cout);
    if (*predict_cmd) return predict(pred, std::cout);
    if (*stats_cmd) return stats(st, std::cout);
  } catch (const bicnn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
