#include "bicnn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bicnn/errors.hpp"

namespace bicnn::synth {

namespace detail {
// Defined in the generated presets source.
extern const char* const kMrdLikeJson;
extern const char* const kCrrdLikeJson;
}  // namespace detail

namespace {

using json = nlohmann::json;
using Rng = std::mt19937_64;

std::size_t word_count(std::string_view sentence) { return text::tokenize(sentence).size(); }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

template <class T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, items.size() - 1);
  return items[d(rng)];
}

std::string fill_slots(const std::string& templ, const CorpusSpec& spec, Rng& rng) {
  std::string out;
  std::size_t i = 0;
  while (i < templ.size()) {
    if (templ[i] == '{') {
      const auto close = templ.find('}', i);
      const auto name = templ.substr(i + 1, close - i - 1);
      out += pick(spec.slots.at(name), rng);
      i = close + 1;
    } else {
      out.push_back(templ[i++]);
    }
  }
  return out;
}

/// Replaces every word with a synonym entry. Returns nullopt if nothing changed.
std::optional<std::string> swap_synonyms(const std::string& sentence, const CorpusSpec& spec) {
  std::string out;
  bool changed = false;
  std::size_t i = 0;
  while (i < sentence.size()) {
    if (!std::isalpha(static_cast<unsigned char>(sentence[i]))) {
      out.push_back(sentence[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < sentence.size() && std::isalpha(static_cast<unsigned char>(sentence[j]))) ++j;
    const std::string word = sentence.substr(i, j - i);
    if (auto it = spec.synonyms.find(lower(word)); it != spec.synonyms.end()) {
      std::string repl = it->second;
      if (std::isupper(static_cast<unsigned char>(word[0]))) {
        repl[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(repl[0])));
      }
      out += repl;
      changed = true;
    } else {
      out += word;
    }
    i = j;
  }
  if (!changed) return std::nullopt;
  return out;
}

void check_template(const std::string& templ, const CorpusSpec& spec) {
  std::size_t i = 0;
  while ((i = templ.find('{', i)) != std::string::npos) {
    const auto close = templ.find('}', i);
    if (close == std::string::npos) throw InvalidSpec("unterminated slot in filler: " + templ);
    const auto name = templ.substr(i + 1, close - i - 1);
    auto it = spec.slots.find(name);
    if (it == spec.slots.end() || it->second.empty()) {
      throw InvalidSpec("filler uses unknown or empty slot '" + name + "'");
    }
    i = close + 1;
  }
}

Distribution distribution_from(const json& j) {
  return {j.at("mean").get<double>(), j.at("stddev").get<double>()};
}

}  // namespace

// CorpusSpec ---------------------------------------------------------------

void CorpusSpec::validate() const {
  if (classes.size() < 2) throw InvalidSpec("a corpus needs at least two classes");
  for (const auto& c : classes) {
    if (c.descriptors.empty()) throw InvalidSpec("class '" + c.name + "' has no descriptor phrases");
    for (const auto& d : c.descriptors) {
      if (word_count(d) == 0) throw InvalidSpec("class '" + c.name + "' has an empty descriptor");
    }
  }
  if (total_reports() == 0) throw InvalidSpec("corpus has no reports");
  if (!(noise >= 0.0 && noise < 1.0)) throw InvalidSpec("noise rate must lie in [0, 1)");
  if (!(sentences.mean > 0.0 && sentences.stddev >= 0.0 && words.mean > 0.0 && words.stddev >= 0.0)) {
    throw InvalidSpec("sentence and word distributions need mean > 0 and stddev >= 0");
  }
  if (filler.empty()) throw InvalidSpec("filler pool is empty");
  for (const auto& f : filler) check_template(f, *this);
  if (indications.empty() || signatures.empty()) throw InvalidSpec("indications and signatures are required");
}

std::size_t CorpusSpec::total_reports() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.count;
  return n;
}

std::vector<std::string> CorpusSpec::label_names() const {
  std::vector<std::string> names;
  for (const auto& c : classes) names.push_back(c.name);
  return names;
}

CorpusSpec CorpusSpec::scaled(std::size_t total) const {
  const std::size_t n = total_reports();
  if (n == 0) throw InvalidSpec("cannot scale an empty corpus");
  if (total < classes.size()) throw InvalidSpec("scaled size is smaller than the number of classes");
  CorpusSpec out = *this;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const double exact = static_cast<double>(classes[c].count) * static_cast<double>(total) / static_cast<double>(n);
    out.classes[c].count = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact)));
    assigned += out.classes[c].count;
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % remainders.size()) {
    ++out.classes[remainders[k].second].count;
    ++assigned;
  }
  // The minimum-one rule can overshoot; take back from the largest classes.
  while (assigned > total) {
    auto it = std::max_element(out.classes.begin(), out.classes.end(),
                               [](const auto& a, const auto& b) { return a.count < b.count; });
    --it->count;
    --assigned;
  }
  return out;
}

std::string CorpusSpec::to_json() const {
  json cls = json::array();
  for (const auto& c : classes) cls.push_back({{"name", c.name}, {"count", c.count}, {"descriptors", c.descriptors}});
  json doc = {{"name", name},
              {"seed", seed},
              {"noise", noise},
              {"sentences", {{"mean", sentences.mean}, {"stddev", sentences.stddev}}},
              {"words", {{"mean", words.mean}, {"stddev", words.stddev}}},
              {"classes", cls},
              {"filler", filler},
              {"slots", slots},
              {"synonyms", synonyms},
              {"indications", indications},
              {"signatures", signatures}};
  return doc.dump(2);
}

CorpusSpec CorpusSpec::from_json(std::string_view text) {
  CorpusSpec spec;
  try {
    const json doc = json::parse(text);
    spec.name = doc.value("name", std::string("custom"));
    spec.seed = doc.value("seed", std::uint64_t{1});
    spec.noise = doc.value("noise", 0.0);
    spec.sentences = distribution_from(doc.at("sentences"));
    spec.words = distribution_from(doc.at("words"));
    for (const auto& c : doc.at("classes")) {
      spec.classes.push_back({c.at("name").get<std::string>(), c.at("count").get<std::size_t>(),
                              c.at("descriptors").get<std::vector<std::string>>()});
    }
    spec.filler = doc.at("filler").get<std::vector<std::string>>();
    spec.slots = doc.value("slots", std::map<std::string, std::vector<std::string>>{});
    spec.synonyms = doc.value("synonyms", std::map<std::string, std::string>{});
    spec.indications = doc.at("indications").get<std::vector<std::string>>();
    spec.signatures = doc.at("signatures").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("corpus spec json: ") + e.what());
  }
  spec.validate();
  return spec;
}

CorpusSpec CorpusSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::vector<std::string> preset_names() { return {"mrd-like", "crrd-like", "mrd-like-hard", "crrd-like-hard"}; }

CorpusSpec preset(std::string_view name) {
  std::string_view base = name;
  bool hard = false;
  if (base.ends_with("-hard")) {
    base.remove_suffix(5);
    hard = true;
  }
  CorpusSpec spec;
  if (base == "mrd-like") {
    spec = CorpusSpec::from_json(detail::kMrdLikeJson);
  } else if (base == "crrd-like") {
    spec = CorpusSpec::from_json(detail::kCrrdLikeJson);
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw InvalidSpec("unknown preset '" + std::string(name) + "' (known: " + known + ")");
  }
  if (hard) {
    spec.noise = kHardNoise;
    spec.name = std::string(name);
  }
  return spec;
}

// Generation ---------------------------------------------------------------

std::vector<text::Report> generate(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> sentence_dist(spec.sentences.mean, spec.sentences.stddev);
  std::normal_distribution<double> word_dist(spec.words.mean, spec.words.stddev);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr int kCandidates = 8;

  const auto draw_filler = [&](double target) {
    std::string best;
    double best_gap = 0.0;
    for (int k = 0; k < kCandidates; ++k) {
      std::string s = fill_slots(pick(spec.filler, rng), spec, rng);
      const double gap = std::abs(static_cast<double>(word_count(s)) - target);
      if (best.empty() || gap < best_gap) {
        best = std::move(s);
        best_gap = gap;
      }
    }
    return best;
  };

  std::vector<text::Report> reports;
  reports.reserve(spec.total_reports());
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    for (std::size_t i = 0; i < spec.classes[c].count; ++i) {
      const auto n_sentences =
          static_cast<std::size_t>(std::max(1.0, std::round(sentence_dist(rng))));
      const double n_words = std::max(1.0, std::round(word_dist(rng)));

      std::optional<std::string> descriptor = pick(spec.classes[c].descriptors, rng);
      if (unit(rng) < spec.noise) {
        descriptor = unit(rng) < 0.5 ? std::nullopt : swap_synonyms(*descriptor, spec);
      }
      std::uniform_int_distribution<std::size_t> pos_dist(0, n_sentences - 1);
      const std::size_t descriptor_at = pos_dist(rng);

      std::vector<std::string> sentences(n_sentences);
      double remaining_words = n_words;
      std::size_t remaining_slots = n_sentences;
      if (descriptor) {
        sentences[descriptor_at] = *descriptor;
        remaining_words -= static_cast<double>(word_count(*descriptor));
        --remaining_slots;
      }
      for (std::size_t s = 0; s < n_sentences; ++s) {
        if (descriptor && s == descriptor_at) continue;
        sentences[s] = draw_filler(remaining_words / static_cast<double>(remaining_slots));
        remaining_words -= static_cast<double>(word_count(sentences[s]));
        --remaining_slots;
      }

      std::string findings;
      const std::size_t n_findings = n_sentences >= 2 ? n_sentences - 1 : n_sentences;
      for (std::size_t s = 0; s < n_findings; ++s) findings += (s ? " " : "") + sentences[s];
      std::string raw = "INDICATION: " + pick(spec.indications, rng) + "\nFINDINGS: " + findings + "\n";
      if (n_sentences >= 2) raw += "IMPRESSION: " + sentences.back() + "\n";
      raw += pick(spec.signatures, rng);

      text::Report r;
      r.raw_text = std::move(raw);
      r.label = static_cast<int>(c);
      reports.push_back(std::move(r));
    }
  }

  std::shuffle(reports.begin(), reports.end(), rng);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "-%05zu", i);
    reports[i].id = spec.name + id;
    text::fill_sections(reports[i]);
  }
  return reports;
}

std::optional<std::size_t> descriptor_oracle(const CorpusSpec& spec, std::string_view text) {
  std::optional<std::size_t> found;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    const bool hit = std::any_of(spec.classes[c].descriptors.begin(), spec.classes[c].descriptors.end(),
                                 [&](const std::string& d) { return text.find(d) != std::string_view::npos; });
    if (!hit) continue;
    if (found) return std::nullopt;
    found = c;
  }
  return found;
}

// Statistics ---------------------------------------------------------------

CorpusStats corpus_stats(std::span<const text::Report> reports) {
  if (reports.empty()) throw TooFewReports("corpus_stats needs at least one report");
  CorpusStats out;
  out.reports = reports.size();
  std::set<std::string> vocabulary;
  std::vector<double> per_report_sentences;
  std::vector<double> per_report_words;
  std::vector<double> sentence_lengths;
  for (const auto& r : reports) {
    const std::string body = text::report_body(r);
    std::size_t n_sentences = 0;
    std::size_t n_words = 0;
    std::size_t start = 0;
    while (start <= body.size()) {
      auto stop = body.find('.', start);
      if (stop == std::string::npos) stop = body.size();
      const auto tokens = text::tokenize(std::string_view(body).substr(start, stop - start));
      if (!tokens.empty()) {
        ++n_sentences;
        n_words += tokens.size();
        sentence_lengths.push_back(static_cast<double>(tokens.size()));
        vocabulary.insert(tokens.begin(), tokens.end());
      }
      start = stop + 1;
    }
    per_report_sentences.push_back(static_cast<double>(n_sentences));
    per_report_words.push_back(static_cast<double>(n_words));
  }
  out.vocabulary_size = vocabulary.size();
  out.sentences = stats::summarize(per_report_sentences);
  out.words = stats::summarize(per_report_words);
  out.sentence_length = stats::summarize(sentence_lengths);
  return out;
}

std::string format_stats(const CorpusStats& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "NR   %zu\nVS   %zu\n"
                "          mean    median  std\n"
                "ANS  %8.2f %8.2f %8.2f\n"
                "ANW  %8.2f %8.2f %8.2f\n"
                "ASL  %8.2f %8.2f %8.2f\n",
                s.reports, s.vocabulary_size, s.sentences.mean, s.sentences.median, s.sentences.stddev,
                s.words.mean, s.words.median, s.words.stddev, s.sentence_length.mean, s.sentence_length.median,
                s.sentence_length.stddev);
  return buf;
}

}  // namespace bicnn::synth
