#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bicnn/stats.hpp"
#include "bicnn/text.hpp"

namespace bicnn::synth {

struct ClassSpec {
  std::string name;
  std::size_t count = 0;
  /// Complete sentences that carry the class signal.
  std::vector<std::string> descriptors;
};

struct Distribution {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Everything the generator needs. Filler sentences may contain `{slot}`
/// placeholders that are filled from `slots`.
struct CorpusSpec {
  std::string name;
  std::vector<ClassSpec> classes;
  Distribution sentences;  // per report
  Distribution words;      // per report
  std::vector<std::string> filler;
  std::map<std::string, std::vector<std::string>> slots;
  /// Word -> replacement used when a descriptor is corrupted.
  std::map<std::string, std::string> synonyms;
  std::vector<std::string> indications;
  std::vector<std::string> signatures;
  /// Probability that a report's descriptor is deleted or synonym-swapped.
  double noise = 0.0;
  std::uint64_t seed = 1;

  /// Throws InvalidSpec.
  void validate() const;
  std::size_t num_classes() const { return classes.size(); }
  std::size_t total_reports() const;
  std::vector<std::string> label_names() const;

  /// Same spec with class counts rescaled to `total` reports (largest
  /// remainder; every class keeps at least one report when total >= C).
  CorpusSpec scaled(std::size_t total) const;

  std::string to_json() const;
  static CorpusSpec from_json(std::string_view json);
  static CorpusSpec load(const std::filesystem::path& path);
};

/// Named presets: "mrd-like", "crrd-like" (noise 0) and their "-hard"
/// variants (noise 0.15). Throws InvalidSpec for unknown names.
CorpusSpec preset(std::string_view name);
std::vector<std::string> preset_names();

inline constexpr double kHardNoise = 0.15;

/// Deterministic for a given spec (including seed). Exactly `count` reports
/// per class, in shuffled order.
std::vector<text::Report> generate(const CorpusSpec& spec);

/// Class whose descriptor sentence appears verbatim in `text`, if exactly one
/// does. Used as the upper-bound oracle on noise-free corpora.
std::optional<std::size_t> descriptor_oracle(const CorpusSpec& spec, std::string_view text);

struct CorpusStats {
  std::size_t reports = 0;          // NR
  std::size_t vocabulary_size = 0;  // VS
  stats::Summary sentences;         // ANS, per report
  stats::Summary words;             // ANW, per report
  stats::Summary sentence_length;   // ASL, over every sentence
};

/// NR, VS, ANS, ANW and ASL over each report's findings + impression text,
/// using text::tokenize and splitting sentences at '.'.
CorpusStats corpus_stats(std::span<const text::Report> reports);

std::string format_stats(const CorpusStats& stats);

}  // namespace bicnn::synth
