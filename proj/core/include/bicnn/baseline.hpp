#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bicnn/model.hpp"
#include "bicnn/tensor.hpp"
#include "bicnn/text.hpp"
#include "bicnn/training.hpp"

namespace bicnn::baseline {

/// Known-gram counts of one report as (gram index, count) pairs, sorted by
/// index.
struct SparseCounts {
  std::vector<std::pair<std::uint32_t, double>> entries;
};

/// Maps contiguous token runs of length 1..n_max to feature indices.
///
/// Grams are keyed by joining tokens with '_' (tokens never contain '_').
/// Indices follow first occurrence while scanning each report by gram length,
/// then position.
class NgramFeaturizer {
 public:
  NgramFeaturizer() = default;

  static NgramFeaturizer fit(std::span<const text::Tokens> corpus, std::size_t n_max);

  /// Dense count vector of length dimension(); unseen grams are ignored.
  std::vector<double> featurize(std::span<const std::string> tokens) const;
  SparseCounts featurize_sparse(std::span<const std::string> tokens) const;

  std::size_t n_min() const { return 1; }
  std::size_t n_max() const { return n_max_; }
  std::size_t dimension() const { return grams_.size(); }
  const std::vector<std::string>& grams() const { return grams_; }
  /// Index of `gram`, or -1.
  long index_of(const std::string& gram) const;

  std::string to_json() const;
  static NgramFeaturizer from_json(const std::string& json);
  void save(const std::filesystem::path& path) const;
  static NgramFeaturizer load(const std::filesystem::path& path);

 private:
  template <class Fn>
  void for_each_gram(std::span<const std::string> tokens, Fn&& fn) const;

  std::size_t n_max_ = 1;
  std::unordered_map<std::string, std::uint32_t> gram_to_index_;
  std::vector<std::string> grams_;
};

/// Softmax regression over n-gram counts: y = softmax(x W + b).
class LinearModel {
 public:
  LinearModel() = default;
  /// W ~ Xavier uniform, b = 0.
  static LinearModel init(std::size_t dimension, std::size_t num_classes, std::uint64_t seed);

  ad::Tensor forward(ad::Graph& g, const SparseCounts& x, nn::Mode mode, nn::Rng& rng) const;
  std::vector<double> predict_proba(const SparseCounts& x) const;

  std::vector<ad::Tensor> parameters() const { return {weights_, bias_}; }
  const ad::Tensor& output_weights() const { return weights_; }
  void after_backward() {}
  std::size_t num_classes() const { return num_classes_; }
  std::size_t dimension() const { return dimension_; }

  LinearModel clone() const;
  void assign_from(const LinearModel& other);

 private:
  std::size_t dimension_ = 0;
  std::size_t num_classes_ = 0;
  ad::Tensor weights_;  // [G, C]
  ad::Tensor bias_;     // [C]
};

struct BaselineData {
  NgramFeaturizer featurizer;
  train::Dataset<SparseCounts> data;
};

/// Fits the featurizer on the training split only.
BaselineData prepare_baseline(const train::Split& split, std::size_t n_max);

struct BaselineRun {
  LinearModel model;
  train::RunResult result;
};

/// Trains a LinearModel with the shared Adam trainer.
BaselineRun train_linear_baseline(const train::Dataset<SparseCounts>& data, std::size_t dimension,
                                  std::size_t num_classes, const train::TrainConfig& config,
                                  std::uint64_t seed);

/// Repeated runs with the same split/seed derivation as train::cross_validate,
/// so run i of both sees the same data.
train::CrossValidation cross_validate_baseline(std::span<const text::Report> reports, std::size_t n_max,
                                               std::size_t num_classes, const train::TrainConfig& config);

}  // namespace bicnn::baseline
