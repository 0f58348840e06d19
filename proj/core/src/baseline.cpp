#include "bicnn/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "bicnn/errors.hpp"

namespace bicnn::baseline {
namespace {
using json = nlohmann::json;
}

template <class Fn>
void NgramFeaturizer::for_each_gram(std::span<const std::string> tokens, Fn&& fn) const {
  std::string key;
  for (std::size_t n = 1; n <= n_max_; ++n) {
    if (tokens.size() < n) break;
    for (std::size_t start = 0; start + n <= tokens.size(); ++start) {
      key = tokens[start];
      for (std::size_t j = 1; j < n; ++j) {
        key += '_';
        key += tokens[start + j];
      }
      fn(key);
    }
  }
}

NgramFeaturizer NgramFeaturizer::fit(std::span<const text::Tokens> corpus, std::size_t n_max) {
  if (n_max < 1 || n_max > 3) throw InvalidConfig("n-gram upper bound must be 1, 2 or 3");
  NgramFeaturizer f;
  f.n_max_ = n_max;
  for (const auto& tokens : corpus) {
    f.for_each_gram(tokens, [&f](const std::string& gram) {
      if (f.gram_to_index_.contains(gram)) return;
      f.gram_to_index_.emplace(gram, static_cast<std::uint32_t>(f.grams_.size()));
      f.grams_.push_back(gram);
    });
  }
  return f;
}

std::vector<double> NgramFeaturizer::featurize(std::span<const std::string> tokens) const {
  std::vector<double> counts(grams_.size(), 0.0);
  for (const auto& [index, count] : featurize_sparse(tokens).entries) counts[index] = count;
  return counts;
}

SparseCounts NgramFeaturizer::featurize_sparse(std::span<const std::string> tokens) const {
  std::map<std::uint32_t, double> counts;
  for_each_gram(tokens, [&](const std::string& gram) {
    if (auto it = gram_to_index_.find(gram); it != gram_to_index_.end()) counts[it->second] += 1.0;
  });
  return SparseCounts{{counts.begin(), counts.end()}};
}

long NgramFeaturizer::index_of(const std::string& gram) const {
  auto it = gram_to_index_.find(gram);
  return it == gram_to_index_.end() ? -1 : static_cast<long>(it->second);
}

std::string NgramFeaturizer::to_json() const {
  json grams = json::object();
  for (std::size_t i = 0; i < grams_.size(); ++i) grams[grams_[i]] = i;
  return json{{"n_min", 1}, {"n_max", n_max_}, {"dimension", grams_.size()}, {"grams", grams}}.dump(1);
}

NgramFeaturizer NgramFeaturizer::from_json(const std::string& text) {
  NgramFeaturizer f;
  try {
    const json doc = json::parse(text);
    f.n_max_ = doc.at("n_max").get<std::size_t>();
    const auto& grams = doc.at("grams");
    f.grams_.assign(grams.size(), {});
    for (const auto& [gram, index] : grams.items()) {
      const auto i = index.get<std::size_t>();
      if (i >= f.grams_.size() || !f.grams_[i].empty()) throw ParseError("gram indices are not contiguous");
      f.grams_[i] = gram;
      f.gram_to_index_.emplace(gram, static_cast<std::uint32_t>(i));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("featurizer json: ") + e.what());
  }
  return f;
}

void NgramFeaturizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json() << '\n';
}

NgramFeaturizer NgramFeaturizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// LinearModel ----------------------------------------------------------------------

LinearModel LinearModel::init(std::size_t dimension, std::size_t num_classes, std::uint64_t seed) {
  if (dimension < 1) throw InvalidConfig("linear baseline needs at least one feature");
  if (num_classes < 2) throw InvalidConfig("num_classes must be >= 2");
  LinearModel m;
  m.dimension_ = dimension;
  m.num_classes_ = num_classes;
  m.weights_ = ad::Tensor({dimension, num_classes});
  m.bias_ = ad::Tensor({num_classes});
  nn::Rng rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(dimension + num_classes));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& w : m.weights_.values()) w = u(rng);
  return m;
}

ad::Tensor LinearModel::forward(ad::Graph& g, const SparseCounts& x, nn::Mode, nn::Rng&) const {
  ad::Tensor dense({dimension_});
  for (const auto& [index, count] : x.entries) {
    if (index >= dimension_) throw IndexOutOfRange("gram index beyond model dimension");
    dense.value(index) = count;
  }
  ad::Tensor ones({dimension_});
  ones.fill(1.0);
  return ad::dense_softmax(g, dense, ones, weights_, bias_);
}

std::vector<double> LinearModel::predict_proba(const SparseCounts& x) const {
  // Direct evaluation; avoids building [G]-sized graph buffers at inference.
  std::vector<double> z(bias_.values().begin(), bias_.values().end());
  const auto w = weights_.values();
  for (const auto& [index, count] : x.entries) {
    if (index >= dimension_) throw IndexOutOfRange("gram index beyond model dimension");
    for (std::size_t c = 0; c < num_classes_; ++c) z[c] += count * w[index * num_classes_ + c];
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (auto& v : z) {
    v = std::exp(v - zmax);
    denom += v;
  }
  for (auto& v : z) v /= denom;
  return z;
}

LinearModel LinearModel::clone() const {
  LinearModel m = *this;
  m.weights_ = weights_.clone();
  m.bias_ = bias_.clone();
  return m;
}

void LinearModel::assign_from(const LinearModel& other) {
  if (other.dimension_ != dimension_ || other.num_classes_ != num_classes_) {
    throw ShapeMismatch("assign_from: linear models differ in shape");
  }
  std::copy(other.weights_.values().begin(), other.weights_.values().end(), weights_.values().begin());
  std::copy(other.bias_.values().begin(), other.bias_.values().end(), bias_.values().begin());
}

// Training -------------------------------------------------------------------------

BaselineData prepare_baseline(const train::Split& split, std::size_t n_max) {
  std::vector<text::Tokens> train_tokens;
  for (const auto& r : split.train) train_tokens.push_back(text::report_tokens(r));
  BaselineData out;
  out.featurizer = NgramFeaturizer::fit(train_tokens, n_max);
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    out.data.train.push_back({out.featurizer.featurize_sparse(train_tokens[i]),
                              static_cast<std::size_t>(split.train[i].label)});
  }
  for (const auto& r : split.valid) {
    out.data.valid.push_back({out.featurizer.featurize_sparse(text::report_tokens(r)),
                              static_cast<std::size_t>(r.label)});
  }
  for (const auto& r : split.test) {
    out.data.test.push_back({out.featurizer.featurize_sparse(text::report_tokens(r)),
                             static_cast<std::size_t>(r.label)});
  }
  return out;
}

BaselineRun train_linear_baseline(const train::Dataset<SparseCounts>& data, std::size_t dimension,
                                  std::size_t num_classes, const train::TrainConfig& config,
                                  std::uint64_t seed) {
  BaselineRun run{LinearModel::init(dimension, num_classes, seed), {}};
  run.result = train::train_model(run.model, data, config, seed);
  return run;
}

train::CrossValidation cross_validate_baseline(std::span<const text::Report> reports, std::size_t n_max,
                                               std::size_t num_classes, const train::TrainConfig& config) {
  config.validate();
  if (config.num_runs < 2) throw InvalidConfig("cross-validation needs num_runs >= 2");
  auto runs = train::run_repeated(
      config.num_runs, config.jobs, config.seed, config.derive_run_seeds,
      [&](std::size_t, std::uint64_t seed) {
        const auto split = train::split_data(reports, config.train_fraction, config.valid_fraction,
                                             config.test_fraction, seed);
        const auto prepared = prepare_baseline(split, n_max);
        return train_linear_baseline(prepared.data, prepared.featurizer.dimension(), num_classes,
                                     config, seed)
            .result;
      });
  return train::aggregate(std::move(runs));
}

}  // namespace bicnn::baseline
