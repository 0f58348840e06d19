#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bicnn/model.hpp"
#include "bicnn/training.hpp"

namespace bicnn::cli {

/// Output directory: explicit flag, then $BICNN_OUT_DIR, then `fallback`.
std::filesystem::path output_dir(const std::string& flag, const std::filesystem::path& fallback);

struct GenDataOptions {
  std::string preset;
  std::string spec_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reports;  // rescale to this many
  std::optional<double> noise;
  std::string out;                     // corpus path
};

int gen_data(const GenDataOptions& opts, std::ostream& out);

/// Everything `train` needs; defaults are the library defaults.
struct ExperimentConfig {
  std::string corpus;
  std::string model = "bicnn";  // bicnn | cnn
  nn::ModelConfig model_config;
  train::TrainConfig train_config;
  std::string out;

  /// Throws InvalidConfig; checks paths too (IoError).
  void validate() const;
  std::string to_json() const;
};

int train(ExperimentConfig config, std::ostream& out);

struct EvalOptions {
  std::string model;
  std::string corpus;
  std::string out;
};

int eval(const EvalOptions& opts, std::ostream& out);

struct PredictOptions {
  std::string model;
  std::string text;
  bool json = false;
};

int predict(const PredictOptions& opts, std::ostream& out);

struct StatsOptions {
  std::string corpus;
  std::string preset;
  std::vector<std::string> compare;  // two summary.json files
};

int stats(const StatsOptions& opts, std::ostream& out);

}  // namespace bicnn::cli
