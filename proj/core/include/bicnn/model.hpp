#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bicnn/tensor.hpp"
#include "bicnn/text.hpp"

namespace bicnn::nn {

using Rng = std::mt19937_64;

enum class Mode { train, infer };

struct ModelConfig {
  std::vector<std::size_t> kernel_sizes{3, 4, 5};
  std::size_t feature_maps = 120;   // filters per kernel size
  std::size_t embedding_dim = 128;
  std::size_t num_classes = 5;
  std::size_t num_channels = 2;     // 1 = plain CNN, 2 = Bi-CNN
  double dropout_p = 0.5;
  double embedding_init_range = 0.25;  // embeddings ~ U(-r, r)
  double conv_init_stddev = 0.1;
  double bias_init = 0.1;
  /// Padded sequence length N. Positional conv biases depend on it.
  std::size_t sequence_length = 0;

  /// Throws InvalidConfig.
  void validate() const;
  std::size_t max_kernel() const;
  /// num_channels * |kernel_sizes| * feature_maps.
  std::size_t feature_length() const;

  bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

/// One- or two-channel convolutional text classifier.
///
/// Channel 0 reads IndexedSequence::forward, channel 1 reads
/// IndexedSequence::reverse. Both channels share the embedding table; each
/// has its own filter bank [F, K, D] and positional bias [F, N-K+1] per kernel
/// size. Pooled features are laid out channel-major, then kernel size, then
/// filter.
class BiCnnModel {
 public:
  BiCnnModel() = default;

  /// Output weights: Xavier uniform. Filters: N(0, conv_init_stddev). Every
  /// bias: bias_init. Embeddings: U(-r, r) with the padding row zeroed.
  static BiCnnModel init(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed);

  /// Returns class probabilities [C]. In train mode a Bernoulli(1-p) keep
  /// mask scaled by 1/(1-p) is applied to the pooled features; infer mode
  /// never touches `rng`.
  ad::Tensor forward(ad::Graph& g, const text::IndexedSequence& seq, Mode mode, Rng& rng) const;

  /// Max-pooled features of one channel for an already padded index sequence.
  ad::Tensor channel_features(ad::Graph& g, std::size_t channel,
                              std::span<const text::TokenId> indices) const;

  /// Concatenated pooled features of all channels (before dropout).
  ad::Tensor pooled_features(ad::Graph& g, const text::IndexedSequence& seq) const;

  /// Inference convenience: probabilities as plain doubles.
  std::vector<double> predict_proba(const text::IndexedSequence& seq) const;
  std::size_t predict(const text::IndexedSequence& seq) const;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<ad::Tensor> parameters() const;
  const ad::Tensor& output_weights() const { return output_w_; }
  const ad::Tensor& output_bias() const { return output_b_; }
  const ad::Tensor& embedding() const { return embedding_; }
  const ad::Tensor& filters(std::size_t channel, std::size_t kernel_index) const;
  const ad::Tensor& conv_bias(std::size_t channel, std::size_t kernel_index) const;

  /// Called after backward(): the padding row stays a constant zero vector.
  void after_backward();

  std::size_t count_params() const;
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t num_classes() const { return config_.num_classes; }
  const ModelConfig& config() const { return config_; }

  /// Deep copy of all parameter values.
  BiCnnModel clone() const;
  /// Copies parameter values from `other` (same architecture).
  void assign_from(const BiCnnModel& other);

 private:
  struct Bank {
    ad::Tensor filters;  // [F, K, D]
    ad::Tensor bias;     // [F, N-K+1]
  };
  const Bank& bank(std::size_t channel, std::size_t kernel_index) const;

  ModelConfig config_;
  std::size_t vocab_size_ = 0;
  ad::Tensor embedding_;             // [V+2, D]
  std::vector<Bank> banks_;          // channel-major
  ad::Tensor output_w_;              // [L, C]
  ad::Tensor output_b_;              // [C]
};

/// Metadata stored next to the parameters in a model file.
struct ModelFileInfo {
  std::uint64_t seed = 0;
  std::vector<std::string> labels;
  std::string vocab_file;          // relative to the model file's directory
  std::uint64_t vocab_fingerprint = 0;
  std::size_t vocab_size = 0;
};

struct LoadedModel {
  BiCnnModel model;
  text::Vocabulary vocab;
  ModelFileInfo info;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Writes `path` (header + float64 blob) and `<path stem>.vocab.json` beside it.
///
/// Layout: 8-byte magic "BICNNMDL", u32 LE version, u64 LE header length,
/// UTF-8 JSON header (config, seed, labels, vocab reference, tensor manifest),
/// then every tensor's values as little-endian IEEE-754 doubles in manifest
/// order.
void save_model(const std::filesystem::path& path, const BiCnnModel& model,
                const text::Vocabulary& vocab, ModelFileInfo info);

/// Throws VocabularyMismatch when the vocabulary file beside the model does
/// not match the fingerprint recorded in the header.
LoadedModel load_model(const std::filesystem::path& path);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& json);

}  // namespace bicnn::nn
