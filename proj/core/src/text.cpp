#include "bicnn/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bicnn/errors.hpp"
#include "bicnn/log.hpp"

namespace bicnn::text {
namespace {

using json = nlohmann::json;

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

enum class LineKind { plain, findings, impression, other_header };

struct ClassifiedLine {
  LineKind kind = LineKind::plain;
  std::string_view rest;  // text after the header, when kind != plain
};

bool starts_with_word(std::string_view line, std::string_view word) {
  if (line.size() < word.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(line[i])) != word[i]) return false;
  }
  return line.size() == word.size() || !std::isalpha(static_cast<unsigned char>(line[word.size()]));
}

ClassifiedLine classify(std::string_view raw_line) {
  const std::string_view line = trim(raw_line);
  for (const auto& [word, kind] : {std::pair{std::string_view("findings"), LineKind::findings},
                                  std::pair{std::string_view("impression"), LineKind::impression}}) {
    if (starts_with_word(line, word)) {
      std::string_view rest = trim(line.substr(word.size()));
      if (!rest.empty() && rest.front() == ':') {
        rest = trim(rest.substr(1));
      } else if (!rest.empty()) {
        // "Findings are ..." is prose, not a header.
        break;
      }
      return {kind, rest};
    }
  }
  // Sign-off lines end the last section.
  for (std::string_view sig : {"dr.", "dr ", "electronically signed", "signed by", "dictated by"}) {
    if (lower(line.substr(0, sig.size())) == sig) return {LineKind::other_header, {}};
  }
  // Generic "Some Header:" prefix of letters and spaces.
  const auto colon = line.find(':');
  if (colon != std::string_view::npos && colon > 0 && colon <= 40) {
    const std::string_view head = line.substr(0, colon);
    const bool header_like = std::isalpha(static_cast<unsigned char>(head.front())) != 0 &&
                             std::all_of(head.begin(), head.end(), [](char c) {
                               return std::isalpha(static_cast<unsigned char>(c)) != 0 || c == ' ' ||
                                      c == '/';
                             });
    if (header_like) return {LineKind::other_header, {}};
  }
  return {LineKind::plain, {}};
}

void append_line(std::string& out, std::string_view line) {
  line = trim(line);
  if (line.empty()) return;
  if (!out.empty()) out.push_back('\n');
  out.append(line);
}

}  // namespace

Sections extract_sections(std::string_view raw_text) {
  Sections sections;
  bool saw_findings = false;
  bool saw_impression = false;
  std::string* active = nullptr;

  std::size_t pos = 0;
  while (pos <= raw_text.size()) {
    const std::size_t end = std::min(raw_text.find('\n', pos), raw_text.size());
    const std::string_view line = raw_text.substr(pos, end - pos);
    const ClassifiedLine cl = classify(line);
    switch (cl.kind) {
      case LineKind::findings:
        saw_findings = true;
        active = &sections.findings;
        append_line(*active, cl.rest);
        break;
      case LineKind::impression:
        saw_impression = true;
        active = &sections.impression;
        append_line(*active, cl.rest);
        break;
      case LineKind::other_header:
        active = nullptr;
        break;
      case LineKind::plain:
        if (active != nullptr) append_line(*active, line);
        break;
    }
    pos = end + 1;
  }

  if (!saw_findings && !saw_impression) {
    sections.findings = std::string(trim(raw_text));
  }
  return sections;
}

void fill_sections(Report& report) {
  Sections s = extract_sections(report.raw_text);
  report.findings = std::move(s.findings);
  report.impression = std::move(s.impression);
}

std::string report_body(const Report& report) {
  std::string body = report.findings;
  if (!report.impression.empty()) {
    if (!body.empty()) {
      if (body.back() != '.') body.push_back('.');
      body.push_back(' ');
    }
    body += report.impression;
  }
  return body;
}

Tokens tokenize(std::string_view text) {
  Tokens tokens;
  std::string current;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Tokens report_tokens(const Report& report) { return tokenize(report_body(report)); }

// Vocabulary ----------------------------------------------------------------

TokenId Vocabulary::add(const std::string& word) {
  if (auto it = word_to_index_.find(word); it != word_to_index_.end()) return it->second;
  index_to_word_.push_back(word);
  const auto id = static_cast<TokenId>(index_to_word_.size());
  word_to_index_.emplace(word, id);
  return id;
}

TokenId Vocabulary::lookup(std::string_view word) const {
  if (auto it = word_to_index_.find(word); it != word_to_index_.end()) return it->second;
  return unk_id();
}

bool Vocabulary::contains(std::string_view word) const {
  return word_to_index_.find(word) != word_to_index_.end();
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id == 0 || id > index_to_word_.size()) {
    throw IndexOutOfRange("vocabulary index " + std::to_string(id) + " is not a word");
  }
  return index_to_word_[id - 1];
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& w : index_to_word_) {
    for (const char c : w) mix(static_cast<unsigned char>(c));
    mix(0);
  }
  return h;
}

std::string Vocabulary::to_json() const {
  // Ordered by index so the file is stable across runs.
  json words = json::array();
  for (const auto& w : index_to_word_) words.push_back(w);
  json doc = {{"size", index_to_word_.size()}, {"pad_index", 0}, {"unk_index", unk_id()},
              {"words", std::move(words)}};
  return doc.dump(1);
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("vocabulary json: ") + e.what());
  }
  if (!doc.contains("words") || !doc["words"].is_array()) {
    throw ParseError("vocabulary json lacks a \"words\" array");
  }
  Vocabulary vocab;
  for (const auto& w : doc["words"]) {
    const auto before = vocab.size();
    vocab.add(w.get<std::string>());
    if (vocab.size() == before) throw ParseError("duplicate vocabulary word: " + w.get<std::string>());
  }
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Vocabulary build_vocabulary(std::span<const Tokens> corpus) {
  Vocabulary vocab;
  for (const auto& tokens : corpus) {
    for (const auto& t : tokens) vocab.add(t);
  }
  return vocab;
}

// Indexing --------------------------------------------------------------------

IndexedSequence index_and_pad(std::span<const std::string> tokens, const Vocabulary& vocab,
                              std::size_t n_max) {
  if (tokens.size() > n_max) {
    throw SequenceTooLong(std::to_string(tokens.size()) + " tokens exceed n_max " +
                          std::to_string(n_max));
  }
  IndexedSequence seq;
  seq.n_words = tokens.size();
  seq.forward.assign(n_max, kPadId);
  seq.reverse.assign(n_max, kPadId);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId id = vocab.lookup(tokens[i]);
    seq.forward[i] = id;
    seq.reverse[tokens.size() - 1 - i] = id;
  }
  return seq;
}

IndexedSequence index_pad_truncate(std::span<const std::string> tokens, const Vocabulary& vocab,
                                   std::size_t n_max, bool* truncated) {
  const bool cut = tokens.size() > n_max;
  if (truncated != nullptr) *truncated = cut;
  if (cut) {
    log::warning("truncating report of " + std::to_string(tokens.size()) + " tokens to " +
                 std::to_string(n_max));
    tokens = tokens.first(n_max);
  }
  return index_and_pad(tokens, vocab, n_max);
}

// Corpus IO -------------------------------------------------------------------

std::vector<Report> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus " + path.string());
  std::vector<Report> reports;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("text") || !obj.contains("label") ||
        !obj["text"].is_string() || !obj["label"].is_number_integer()) {
      throw ParseError(where + ": expected {\"id\", \"text\", \"label\"}");
    }
    Report r;
    if (obj.contains("id")) {
      r.id = obj["id"].is_string() ? obj["id"].get<std::string>() : obj["id"].dump();
    } else {
      r.id = std::to_string(reports.size());
    }
    r.raw_text = obj["text"].get<std::string>();
    r.label = obj["label"].get<int>();
    if (r.label < 0) throw ParseError(where + ": negative label");
    fill_sections(r);
    reports.push_back(std::move(r));
  }
  return reports;
}

void write_corpus(const std::filesystem::path& path, std::span<const Report> reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus " + path.string());
  for (const auto& r : reports) {
    json obj = {{"id", r.id}, {"text", r.raw_text}, {"label", r.label}};
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::filesystem::path labels_path_for(const std::filesystem::path& corpus) {
  auto p = corpus;
  p += ".labels";
  return p;
}

std::vector<std::string> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read labels " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (!t.empty()) labels.emplace_back(t);
  }
  return labels;
}

void write_labels(const std::filesystem::path& path, std::span<const std::string> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write labels " + path.string());
  for (const auto& l : labels) out << l << '\n';
}

}  // namespace bicnn::text
