#include "bicnn/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "bicnn/errors.hpp"

namespace bicnn::nn {
namespace {

using json = nlohmann::json;
using ad::Tensor;

constexpr char kMagic[8] = {'B', 'I', 'C', 'N', 'N', 'M', 'D', 'L'};

json config_json(const ModelConfig& c) {
  return json{{"kernel_sizes", c.kernel_sizes},
              {"feature_maps", c.feature_maps},
              {"embedding_dim", c.embedding_dim},
              {"num_classes", c.num_classes},
              {"num_channels", c.num_channels},
              {"dropout_p", c.dropout_p},
              {"embedding_init_range", c.embedding_init_range},
              {"conv_init_stddev", c.conv_init_stddev},
              {"bias_init", c.bias_init},
              {"sequence_length", c.sequence_length}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  try {
    c.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
    c.feature_maps = j.at("feature_maps").get<std::size_t>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.num_channels = j.at("num_channels").get<std::size_t>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.embedding_init_range = j.at("embedding_init_range").get<double>();
    c.conv_init_stddev = j.at("conv_init_stddev").get<double>();
    c.bias_init = j.at("bias_init").get<double>();
    c.sequence_length = j.at("sequence_length").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  return c;
}

template <class T>
void put_le(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw ParseError("truncated model file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace

// ModelConfig ----------------------------------------------------------------

void ModelConfig::validate() const {
  if (kernel_sizes.empty()) throw InvalidConfig("at least one kernel size is required");
  for (const auto k : kernel_sizes) {
    if (k < 1) throw InvalidConfig("kernel sizes must be >= 1");
  }
  if (feature_maps < 1) throw InvalidConfig("feature_maps must be >= 1");
  if (embedding_dim < 1) throw InvalidConfig("embedding_dim must be >= 1");
  if (num_classes < 2) throw InvalidConfig("num_classes must be >= 2");
  if (num_channels != 1 && num_channels != 2) throw InvalidConfig("num_channels must be 1 or 2");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidConfig("dropout_p must lie in [0, 1)");
  if (!(embedding_init_range >= 0.0)) throw InvalidConfig("embedding_init_range must be >= 0");
  if (!(conv_init_stddev >= 0.0)) throw InvalidConfig("conv_init_stddev must be >= 0");
  if (sequence_length < max_kernel()) {
    throw InvalidConfig("sequence_length " + std::to_string(sequence_length) +
                        " is shorter than the largest kernel " + std::to_string(max_kernel()));
  }
}

std::size_t ModelConfig::max_kernel() const {
  return kernel_sizes.empty() ? 0 : *std::max_element(kernel_sizes.begin(), kernel_sizes.end());
}

std::size_t ModelConfig::feature_length() const {
  return num_channels * kernel_sizes.size() * feature_maps;
}

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
}

// BiCnnModel -----------------------------------------------------------------

BiCnnModel BiCnnModel::init(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed) {
  config.validate();
  BiCnnModel m;
  m.config_ = config;
  m.vocab_size_ = vocab_size;

  Rng rng(seed);
  const std::size_t d = config.embedding_dim;
  const std::size_t n = config.sequence_length;

  m.embedding_ = Tensor({vocab_size + 2, d});
  {
    std::uniform_real_distribution<double> u(-config.embedding_init_range, config.embedding_init_range);
    auto v = m.embedding_.values();
    for (std::size_t i = d; i < v.size(); ++i) v[i] = u(rng);  // row 0 stays zero
  }

  std::normal_distribution<double> normal(0.0, config.conv_init_stddev);
  for (std::size_t c = 0; c < config.num_channels; ++c) {
    for (const auto k : config.kernel_sizes) {
      Bank bank{Tensor({config.feature_maps, k, d}), Tensor({config.feature_maps, n - k + 1})};
      for (auto& w : bank.filters.values()) w = normal(rng);
      bank.bias.fill(config.bias_init);
      m.banks_.push_back(std::move(bank));
    }
  }

  const std::size_t l = config.feature_length();
  const std::size_t p = config.num_classes;
  m.output_w_ = Tensor({l, p});
  {
    const double limit = std::sqrt(6.0 / static_cast<double>(l + p));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (auto& w : m.output_w_.values()) w = u(rng);
  }
  m.output_b_ = Tensor({p});
  m.output_b_.fill(config.bias_init);
  return m;
}

const BiCnnModel::Bank& BiCnnModel::bank(std::size_t channel, std::size_t kernel_index) const {
  if (channel >= config_.num_channels || kernel_index >= config_.kernel_sizes.size()) {
    throw IndexOutOfRange("no filter bank for channel " + std::to_string(channel) + ", kernel #" +
                          std::to_string(kernel_index));
  }
  return banks_[channel * config_.kernel_sizes.size() + kernel_index];
}

const Tensor& BiCnnModel::filters(std::size_t channel, std::size_t kernel_index) const {
  return bank(channel, kernel_index).filters;
}

const Tensor& BiCnnModel::conv_bias(std::size_t channel, std::size_t kernel_index) const {
  return bank(channel, kernel_index).bias;
}

Tensor BiCnnModel::channel_features(ad::Graph& g, std::size_t channel,
                                    std::span<const text::TokenId> indices) const {
  if (indices.size() != config_.sequence_length) {
    throw ShapeMismatch("sequence of length " + std::to_string(indices.size()) +
                        " fed to a model built for " + std::to_string(config_.sequence_length));
  }
  const Tensor x = ad::embed_lookup(g, embedding_, indices);
  std::vector<Tensor> pooled;
  pooled.reserve(config_.kernel_sizes.size());
  for (std::size_t ki = 0; ki < config_.kernel_sizes.size(); ++ki) {
    const Bank& b = bank(channel, ki);
    const Tensor h = ad::relu(g, ad::conv_bank(g, x, b.filters, b.bias));
    pooled.push_back(ad::max_over_time(g, h));
  }
  return ad::concat(g, pooled);
}

Tensor BiCnnModel::pooled_features(ad::Graph& g, const text::IndexedSequence& seq) const {
  std::vector<Tensor> parts;
  parts.push_back(channel_features(g, 0, seq.forward));
  if (config_.num_channels == 2) parts.push_back(channel_features(g, 1, seq.reverse));
  return parts.size() == 1 ? parts.front() : ad::concat(g, parts);
}

Tensor BiCnnModel::forward(ad::Graph& g, const text::IndexedSequence& seq, Mode mode, Rng& rng) const {
  const Tensor hhat = pooled_features(g, seq);
  Tensor mask({hhat.size()});
  if (mode == Mode::train && config_.dropout_p > 0.0) {
    const double keep = 1.0 - config_.dropout_p;
    std::bernoulli_distribution draw(keep);
    for (auto& r : mask.values()) r = draw(rng) ? 1.0 / keep : 0.0;
  } else {
    mask.fill(1.0);
  }
  return ad::dense_softmax(g, hhat, mask, output_w_, output_b_);
}

std::vector<double> BiCnnModel::predict_proba(const text::IndexedSequence& seq) const {
  ad::Graph g;
  Rng unused(0);
  const Tensor probs = forward(g, seq, Mode::infer, unused);
  return {probs.values().begin(), probs.values().end()};
}

std::size_t BiCnnModel::predict(const text::IndexedSequence& seq) const {
  const auto probs = predict_proba(seq);
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

std::vector<NamedTensor> BiCnnModel::named_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"embedding", embedding_});
  for (std::size_t c = 0; c < config_.num_channels; ++c) {
    for (std::size_t ki = 0; ki < config_.kernel_sizes.size(); ++ki) {
      const auto prefix = "channel" + std::to_string(c) + ".k" + std::to_string(config_.kernel_sizes[ki]);
      out.push_back({prefix + ".filters", bank(c, ki).filters});
      out.push_back({prefix + ".bias", bank(c, ki).bias});
    }
  }
  out.push_back({"output.weights", output_w_});
  out.push_back({"output.bias", output_b_});
  return out;
}

std::vector<Tensor> BiCnnModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

void BiCnnModel::after_backward() {
  auto grad = embedding_.grad();
  std::fill_n(grad.begin(), config_.embedding_dim, 0.0);
}

std::size_t BiCnnModel::count_params() const {
  std::size_t total = 0;
  for (const auto& t : parameters()) total += t.size();
  return total;
}

BiCnnModel BiCnnModel::clone() const {
  BiCnnModel m;
  m.config_ = config_;
  m.vocab_size_ = vocab_size_;
  m.embedding_ = embedding_.clone();
  for (const auto& b : banks_) m.banks_.push_back({b.filters.clone(), b.bias.clone()});
  m.output_w_ = output_w_.clone();
  m.output_b_ = output_b_.clone();
  return m;
}

void BiCnnModel::assign_from(const BiCnnModel& other) {
  auto dst = parameters();
  const auto src = other.parameters();
  if (dst.size() != src.size()) throw ShapeMismatch("assign_from: architectures differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].shape() != src[i].shape()) throw ShapeMismatch("assign_from: tensor shapes differ");
    std::copy(src[i].values().begin(), src[i].values().end(), dst[i].values().begin());
  }
}

// Serialization --------------------------------------------------------------

void save_model(const std::filesystem::path& path, const BiCnnModel& model,
                const text::Vocabulary& vocab, ModelFileInfo info) {
  if (vocab.size() != model.vocab_size()) {
    throw VocabularyMismatch("model expects " + std::to_string(model.vocab_size()) +
                             " words, vocabulary has " + std::to_string(vocab.size()));
  }
  auto vocab_path = path;
  vocab_path.replace_extension(".vocab.json");
  vocab.save(vocab_path);

  info.vocab_file = vocab_path.filename().string();
  info.vocab_fingerprint = vocab.fingerprint();
  info.vocab_size = vocab.size();

  json manifest = json::array();
  std::size_t offset = 0;
  const auto params = model.named_parameters();
  for (const auto& p : params) {
    manifest.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset},
                        {"count", p.tensor.size()}});
    offset += p.tensor.size();
  }
  json header = {{"format", "bicnn-model"},
                 {"version", kModelFormatVersion},
                 {"config", config_json(model.config())},
                 {"seed", info.seed},
                 {"labels", info.labels},
                 {"vocab", {{"file", info.vocab_file},
                            {"size", info.vocab_size},
                            {"fnv1a64", hex64(info.vocab_fingerprint)}}},
                 {"tensors", std::move(manifest)},
                 {"value_count", offset}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kModelFormatVersion);
  put_le<std::uint64_t>(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& p : params) {
    for (const double v : p.tensor.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read model " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(path.string() + " is not a bicnn model file");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kModelFormatVersion) {
    throw ParseError("unsupported model format version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(in);
  if (header_len > (std::uint64_t{1} << 30)) throw ParseError("implausible model header length");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ParseError("truncated model header");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model header: ") + e.what());
  }

  LoadedModel loaded;
  try {
    loaded.info.seed = header.at("seed").get<std::uint64_t>();
    loaded.info.labels = header.at("labels").get<std::vector<std::string>>();
    loaded.info.vocab_file = header.at("vocab").at("file").get<std::string>();
    loaded.info.vocab_size = header.at("vocab").at("size").get<std::size_t>();
    loaded.info.vocab_fingerprint =
        std::stoull(header.at("vocab").at("fnv1a64").get<std::string>(), nullptr, 16);
  } catch (const std::exception& e) {
    throw ParseError(std::string("model header: ") + e.what());
  }
  const ModelConfig config = config_from(header.at("config"));

  loaded.vocab = text::Vocabulary::load(path.parent_path() / loaded.info.vocab_file);
  if (loaded.vocab.size() != loaded.info.vocab_size ||
      loaded.vocab.fingerprint() != loaded.info.vocab_fingerprint) {
    throw VocabularyMismatch(loaded.info.vocab_file + " does not match the vocabulary the model was trained with");
  }

  loaded.model = BiCnnModel::init(config, loaded.info.vocab_size, 0);
  const auto params = loaded.model.named_parameters();
  const auto& manifest = header.at("tensors");
  if (manifest.size() != params.size()) throw ParseError("tensor manifest does not match architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != params[i].name ||
        entry.at("shape").get<ad::Shape>() != params[i].tensor.shape()) {
      throw ParseError("tensor " + params[i].name + " does not match the manifest");
    }
  }
  for (auto p : params) {
    for (auto& v : p.tensor.values()) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  }
  return loaded;
}

}  // namespace bicnn::nn
