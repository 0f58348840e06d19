#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bicnn::text {

using TokenId = std::uint32_t;
using Tokens = std::vector<std::string>;

inline constexpr TokenId kPadId = 0;

struct Report {
  std::string id;
  std::string raw_text;
  std::string findings;
  std::string impression;
  int label = 0;
};

struct Sections {
  std::string findings;
  std::string impression;

  bool operator==(const Sections&) const = default;
};

/// Pulls the "Findings" and "Impression" blocks out of a report.
///
/// A section starts at a line beginning with the (case-insensitive) header
/// word, optionally followed by a colon, and runs until the next header-like
/// line or the end of the text. Header-like lines are `Word words:` prefixes
/// and radiologist sign-off lines (`Dr. ...`, `Electronically signed ...`).
/// When neither header is present the whole text is returned as findings.
Sections extract_sections(std::string_view raw_text);

/// Fills `findings`/`impression` from `raw_text`.
void fill_sections(Report& report);

/// Text the classifier sees: findings and impression joined with a sentence
/// boundary.
std::string report_body(const Report& report);

/// Lower-cases and splits on every non-alphanumeric ASCII byte (hyphens
/// included). Bytes >= 0x80 are kept as word characters so UTF-8 words stay
/// intact.
Tokens tokenize(std::string_view text);

/// tokenize(report_body(report)).
Tokens report_tokens(const Report& report);

/// Word <-> index dictionary. Index 0 is padding, 1..V are words in
/// first-occurrence order and V+1 is reserved for out-of-vocabulary tokens.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Returns the index of `word`, inserting it if new.
  TokenId add(const std::string& word);

  /// Index of `word`, or unk_id() when unseen.
  TokenId lookup(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const;

  std::size_t size() const { return index_to_word_.size(); }
  TokenId unk_id() const { return static_cast<TokenId>(size() + 1); }
  /// Rows an embedding table needs: pad + V words + UNK.
  std::size_t table_rows() const { return size() + 2; }

  const std::vector<std::string>& words() const { return index_to_word_; }

  /// Stable 64-bit FNV-1a fingerprint over the ordered word list.
  std::uint64_t fingerprint() const;

  std::string to_json() const;
  static Vocabulary from_json(std::string_view json);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const {
    return index_to_word_ == other.index_to_word_;
  }

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::unordered_map<std::string, TokenId, StringHash, std::equal_to<>> word_to_index_;
  std::vector<std::string> index_to_word_;
};

Vocabulary build_vocabulary(std::span<const Tokens> corpus);

/// Padded forward channel plus its reversed-non-padded twin.
struct IndexedSequence {
  std::vector<TokenId> forward;
  std::vector<TokenId> reverse;
  std::size_t n_words = 0;

  std::size_t length() const { return forward.size(); }
  bool operator==(const IndexedSequence&) const = default;
};

/// Throws SequenceTooLong when tokens.size() > n_max. Unknown tokens map to
/// vocab.unk_id().
IndexedSequence index_and_pad(std::span<const std::string> tokens,
                              const Vocabulary& vocab, std::size_t n_max);

/// Same as index_and_pad, but drops tail tokens beyond n_max (with a logged
/// warning) instead of throwing. `truncated` receives whether that happened.
IndexedSequence index_pad_truncate(std::span<const std::string> tokens,
                                   const Vocabulary& vocab, std::size_t n_max,
                                   bool* truncated = nullptr);

/// Reads a JSON-lines corpus: one {"id", "text", "label"} object per line.
/// Sections are extracted on load.
std::vector<Report> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const Report> reports);

/// Class names live beside the corpus as `<corpus>.labels`, one per line.
std::filesystem::path labels_path_for(const std::filesystem::path& corpus);
std::vector<std::string> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const std::string> labels);

}  // namespace bicnn::text
