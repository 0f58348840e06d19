#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "bicnn/errors.hpp"
#include "bicnn/text.hpp"

using namespace bicnn;
using namespace bicnn::text;

namespace {

std::string join(const Tokens& tokens) {
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  return s;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "bicnn_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("extract_sections finds headers up to the next header") {
  const auto s = extract_sections("INDICATION: pain\nFINDINGS: clear lungs\nIMPRESSION: normal\nDr. X");
  CHECK(s.findings == "clear lungs");
  CHECK(s.impression == "normal");
}

TEST_CASE("extract_sections falls back to the whole text") {
  const auto s = extract_sections("no headers at all");
  CHECK(s.findings == "no headers at all");
  CHECK(s.impression.empty());
}

TEST_CASE("extract_sections keeps an empty findings block") {
  const auto s = extract_sections("Findings:\nImpression: stable");
  CHECK(s.findings.empty());
  CHECK(s.impression == "stable");
}

TEST_CASE("extract_sections is case-insensitive and spans lines") {
  const auto s = extract_sections("findings: first line\nsecond line\nimpression\nall good\nElectronically signed by R");
  CHECK(s.findings == "first line\nsecond line");
  CHECK(s.impression == "all good");
}

TEST_CASE("extract_sections does not treat prose starting with the word as a header") {
  const auto s = extract_sections("Findings are unchanged from before.");
  CHECK(s.findings == "Findings are unchanged from before.");
}

TEST_CASE("report_body joins findings and impression with a sentence boundary") {
  Report r;
  r.findings = "clear lungs";
  r.impression = "normal";
  CHECK(report_body(r) == "clear lungs. normal");
  r.impression.clear();
  CHECK(report_body(r) == "clear lungs");
}

TEST_CASE("tokenize lower-cases and strips punctuation") {
  CHECK(tokenize("The breasts show scattered fibroglandular tissue.") ==
        Tokens{"the", "breasts", "show", "scattered", "fibroglandular", "tissue"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("Mild-to-moderate edema, right.") == Tokens{"mild", "to", "moderate", "edema", "right"});
  CHECK(tokenize("BI-RADS 2:benign") == Tokens{"bi", "rads", "2", "benign"});
  CHECK(tokenize("caf\xc3\xa9 ok") == Tokens{"caf\xc3\xa9", "ok"});
}

TEST_CASE("tokenize is idempotent on random byte strings") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> byte(1, 255);
  std::uniform_int_distribution<int> len(0, 60);
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    for (int i = len(rng); i > 0; --i) s.push_back(static_cast<char>(byte(rng)));
    const auto once = tokenize(s);
    CHECK(tokenize(join(once)) == once);
  }
}

TEST_CASE("build_vocabulary assigns first-occurrence indices") {
  const std::vector<Tokens> corpus{{"a", "b"}, {"b", "c"}};
  const auto v = build_vocabulary(corpus);
  CHECK(v.size() == 3);
  CHECK(v.lookup("a") == 1);
  CHECK(v.lookup("b") == 2);
  CHECK(v.lookup("c") == 3);
  CHECK(v.lookup("zzz") == v.unk_id());
  CHECK(v.unk_id() == 4);
  CHECK(v.table_rows() == 5);
  CHECK(v.word(2) == "b");

  const std::vector<Tokens> sentence{tokenize("The breasts show scattered fibroglandular tissue.")};
  CHECK(build_vocabulary(sentence).size() == 6);

  const std::vector<Tokens> repeated{{"x"}, {"x"}, {"x"}};
  const auto r = build_vocabulary(repeated);
  CHECK(r.size() == 1);
  CHECK(r.lookup("x") == 1);
}

TEST_CASE("vocabulary json round trip and fingerprint") {
  const std::vector<Tokens> corpus{{"b", "a"}, {"c"}};
  const auto v = build_vocabulary(corpus);
  const auto back = Vocabulary::from_json(v.to_json());
  CHECK(back == v);
  CHECK(back.fingerprint() == v.fingerprint());

  const std::vector<Tokens> other{{"a", "b"}, {"c"}};
  CHECK(build_vocabulary(other).fingerprint() != v.fingerprint());

  CHECK_THROWS_AS(Vocabulary::from_json(R"({"words": ["a", "a"]})"), ParseError);

  const auto path = temp_path("vocab.json");
  v.save(path);
  CHECK(Vocabulary::load(path) == v);
}

TEST_CASE("index_and_pad builds forward and reversed channels") {
  const std::vector<Tokens> corpus{{"x0", "x1", "x2", "x3", "x4", "x5"}};
  const auto v = build_vocabulary(corpus);
  const auto s = index_and_pad(corpus[0], v, 8);
  CHECK(s.forward == std::vector<TokenId>{1, 2, 3, 4, 5, 6, 0, 0});
  CHECK(s.reverse == std::vector<TokenId>{6, 5, 4, 3, 2, 1, 0, 0});
  CHECK(s.n_words == 6);

  const auto empty = index_and_pad(Tokens{}, v, 4);
  CHECK(empty.forward == std::vector<TokenId>{0, 0, 0, 0});
  CHECK(empty.reverse == std::vector<TokenId>{0, 0, 0, 0});

  const auto single = index_and_pad(Tokens{"x3"}, v, 3);
  CHECK(single.forward == std::vector<TokenId>{4, 0, 0});
  CHECK(single.reverse == std::vector<TokenId>{4, 0, 0});

  CHECK_THROWS_AS(index_and_pad(corpus[0], v, 5), SequenceTooLong);
}

TEST_CASE("unknown tokens map to UNK") {
  const std::vector<Tokens> corpus{{"a"}};
  const auto v = build_vocabulary(corpus);
  const auto s = index_and_pad(Tokens{"a", "q"}, v, 3);
  CHECK(s.forward == std::vector<TokenId>{1, 2, 0});
}

TEST_CASE("index_pad_truncate keeps the head") {
  const std::vector<Tokens> corpus{{"a", "b", "c", "d"}};
  const auto v = build_vocabulary(corpus);
  bool cut = false;
  const auto s = index_pad_truncate(corpus[0], v, 3, &cut);
  CHECK(cut);
  CHECK(s.forward == std::vector<TokenId>{1, 2, 3});
  CHECK(s.reverse == std::vector<TokenId>{3, 2, 1});
  index_pad_truncate(Tokens{"a"}, v, 3, &cut);
  CHECK_FALSE(cut);
}

TEST_CASE("reversal is an involution with trailing padding") {
  std::mt19937_64 rng(11);
  Vocabulary v;
  for (int i = 0; i < 50; ++i) v.add("w" + std::to_string(i));
  std::uniform_int_distribution<int> word(0, 60);  // some unknowns
  std::uniform_int_distribution<std::size_t> len(0, 30);
  for (int trial = 0; trial < 1000; ++trial) {
    Tokens t(len(rng));
    for (auto& w : t) w = "w" + std::to_string(word(rng));
    const std::size_t n_max = t.size() + len(rng) % 5;
    const auto s = index_and_pad(t, v, std::max<std::size_t>(n_max, 1));
    REQUIRE(s.n_words == t.size());
    for (std::size_t i = 0; i < s.n_words; ++i) {
      CHECK(s.reverse[s.n_words - 1 - i] == s.forward[i]);
      CHECK(s.forward[i] != kPadId);
    }
    for (std::size_t i = s.n_words; i < s.length(); ++i) {
      CHECK(s.forward[i] == kPadId);
      CHECK(s.reverse[i] == kPadId);
    }
  }
}

TEST_CASE("corpus files round trip") {
  std::vector<Report> reports(2);
  reports[0].id = "r0";
  reports[0].raw_text = "FINDINGS: a b\nIMPRESSION: c";
  reports[0].label = 1;
  reports[1].id = "r1";
  reports[1].raw_text = "plain \"quoted\" text";
  reports[1].label = 0;
  const auto path = temp_path("corpus.jsonl");
  write_corpus(path, reports);
  const auto back = read_corpus(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "r0");
  CHECK(back[0].findings == "a b");
  CHECK(back[0].impression == "c");
  CHECK(back[0].label == 1);
  CHECK(back[1].raw_text == reports[1].raw_text);
  CHECK(back[1].findings == reports[1].raw_text);

  const std::vector<std::string> labels{"zero", "one"};
  write_labels(labels_path_for(path), labels);
  CHECK(read_labels(labels_path_for(path)) == labels);
}

TEST_CASE("read_corpus rejects malformed lines with their location") {
  const auto path = temp_path("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id": "a", "text": "ok", "label": 0})" << '\n' << R"({"id": "b", "text": 5, "label": 0})" << '\n';
  }
  try {
    read_corpus(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  CHECK_THROWS_AS(read_corpus(temp_path("missing.jsonl")), IoError);
}
