// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fail. Pass criterion numbers as arguments to run a subset.

#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bicnn/baseline.hpp"
#include "bicnn/log.hpp"
#include "bicnn/model.hpp"
#include "bicnn/synthetic.hpp"
#include "bicnn/training.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace bicnn;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("bicnn_accept_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

text::IndexedSequence random_sequence(std::mt19937_64& rng, std::size_t vocab, std::size_t n) {
  std::uniform_int_distribution<std::size_t> len(1, n);
  std::uniform_int_distribution<text::TokenId> id(1, static_cast<text::TokenId>(vocab + 1));
  const std::size_t words = len(rng);
  text::IndexedSequence s;
  s.n_words = words;
  s.forward.assign(n, 0);
  s.reverse.assign(n, 0);
  for (std::size_t i = 0; i < words; ++i) s.forward[i] = id(rng);
  for (std::size_t i = 0; i < words; ++i) s.reverse[words - 1 - i] = s.forward[i];
  return s;
}

// 1. Gradient correctness -----------------------------------------------------

constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;

Outcome gradients() {
  using namespace ad;
  using testing::check_gradients;
  using testing::random_tensor;
  using testing::random_vector;
  using testing::weighted_sum;

  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::map<std::string, double> worst;
  std::size_t draws = 0, checked = 0, skipped = 0;
  const auto record = [&](const std::string& op, const testing::GradCheck& gc) {
    worst[op] = std::max(worst[op], gc.max_rel_error);
    ++draws;
    checked += gc.checked;
    skipped += gc.skipped;
  };

  constexpr int kOpDraws = 8;
  for (int trial = 0; trial < kOpDraws; ++trial) {
    const std::size_t n = 5 + trial % 4, d = 2 + trial % 3, k = 1 + trial % 3, f = 2 + trial % 3;

    const auto table = random_tensor({n + 2, d}, rng);
    std::vector<std::uint32_t> idx(n);
    for (auto& i : idx) i = static_cast<std::uint32_t>(rng() % (n + 2));
    const auto r_embed = random_vector(n * d, rng);
    record("embed_lookup",
           check_gradients([&](Graph& g) { return weighted_sum(g, embed_lookup(g, table, idx), r_embed); },
                           {table}, kGradStep));

    const auto x = random_tensor({n, d}, rng);
    const auto w1 = random_tensor({k, d}, rng);
    const auto b1 = random_tensor({n - k + 1}, rng);
    const auto r_win = random_vector(n - k + 1, rng);
    record("conv_window", check_gradients(
                              [&](Graph& g) { return weighted_sum(g, conv_window(g, x, w1, b1), r_win); },
                              {x, w1, b1}, kGradStep));

    const auto wb = random_tensor({f, k, d}, rng);
    const auto bb = random_tensor({f, n - k + 1}, rng);
    const auto r_bank = random_vector(f * (n - k + 1), rng);
    record("conv_bank",
           check_gradients([&](Graph& g) { return weighted_sum(g, conv_bank(g, x, wb, bb), r_bank); },
                           {x, wb, bb}, kGradStep));

    const auto z = random_tensor({f, n}, rng);
    const auto r_z = random_vector(f * n, rng);
    record("relu", check_gradients([&](Graph& g) { return weighted_sum(g, relu(g, z), r_z); }, {z}, kGradStep));
    const auto r_pool = random_vector(f, rng);
    record("max_over_time",
           check_gradients([&](Graph& g) { return weighted_sum(g, max_over_time(g, z), r_pool); }, {z}, kGradStep));

    const auto a = random_tensor({d}, rng);
    const auto c = random_tensor({2, k}, rng);
    const auto r_cat = random_vector(d + 2 * k, rng);
    record("concat", check_gradients(
                         [&](Graph& g) {
                           const std::vector<Tensor> parts{a, c};
                           return weighted_sum(g, concat(g, parts), r_cat);
                         },
                         {a, c}, kGradStep));

    const auto h = random_tensor({n}, rng);
    Tensor mask({n});
    for (std::size_t i = 0; i < n; ++i) mask.value(i) = rng() % 2 ? 2.0 : 0.0;
    const auto wo = random_tensor({n, f}, rng);
    const auto bo = random_tensor({f}, rng);
    const auto r_soft = random_vector(f, rng);
    record("dense_softmax", check_gradients(
                                [&](Graph& g) { return weighted_sum(g, dense_softmax(g, h, mask, wo, bo), r_soft); },
                                {h, wo, bo}, kGradStep));

    const auto p0 = random_tensor({f}, rng, 0.05, 0.95);
    const auto p1 = random_tensor({f}, rng, 0.05, 0.95);
    const auto r_rows = random_vector(2 * f, rng);
    record("stack_rows", check_gradients(
                             [&](Graph& g) {
                               const std::vector<Tensor> rows{p0, p1};
                               return weighted_sum(g, stack_rows(g, rows), r_rows);
                             },
                             {p0, p1}, kGradStep));

    Tensor targets({2, f});
    targets.value(rng() % f) = 1.0;
    targets.value(f + rng() % f) = 1.0;
    for (const auto mode : {CrossEntropyMode::categorical, CrossEntropyMode::binary}) {
      record(mode == CrossEntropyMode::binary ? "cross_entropy/binary" : "cross_entropy",
             check_gradients(
                 [&](Graph& g) {
                   const std::vector<Tensor> rows{p0, p1};
                   return cross_entropy_loss(g, stack_rows(g, rows), targets, mode);
                 },
                 {p0, p1}, kGradStep));
    }

    for (const auto mode : {L2Mode::squared, L2Mode::literal}) {
      record(mode == L2Mode::literal ? "l2_penalty/literal" : "l2_penalty",
             check_gradients([&](Graph& g) { return l2_penalty(g, wo, 0.3, mode); }, {wo}, kGradStep));
    }

    const auto u = random_tensor({n}, rng);
    const auto v = random_tensor({n}, rng);
    const auto r_add = random_vector(n, rng);
    record("add", check_gradients([&](Graph& g) { return weighted_sum(g, add(g, u, v), r_add); }, {u, v},
                                  kGradStep));
    record("mul_const", check_gradients([&](Graph& g) { return weighted_sum(g, mul_const(g, u, mask), r_add); },
                                        {u}, kGradStep));
  }

  // Full loss: cross-entropy + L2 through both channels, with dropout masks
  // held fixed by reseeding on every evaluation.
  constexpr int kModelDraws = 12;
  for (int trial = 0; trial < kModelDraws; ++trial) {
    nn::ModelConfig cfg;
    cfg.kernel_sizes = {2, 3, 4};
    cfg.feature_maps = 3;
    cfg.embedding_dim = 4;
    cfg.num_classes = 3 + trial % 3;
    cfg.num_channels = trial % 4 == 3 ? 1 : 2;
    cfg.sequence_length = 8;
    cfg.dropout_p = trial % 2 ? 0.5 : 0.0;
    const std::size_t vocab = 10;
    const auto model = nn::BiCnnModel::init(cfg, vocab, 100 + trial);
    // Random parameters rather than the constant-bias init, except the pad row.
    for (auto p : model.parameters()) {
      for (auto& v : p.values()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    }
    for (std::size_t i = 0; i < cfg.embedding_dim; ++i) model.embedding().value(i) = 0.0;
    std::vector<text::IndexedSequence> batch;
    Tensor targets({3, cfg.num_classes});
    for (std::size_t r = 0; r < 3; ++r) {
      batch.push_back(random_sequence(rng, vocab, cfg.sequence_length));
      targets.value(r * cfg.num_classes + rng() % cfg.num_classes) = 1.0;
    }
    const auto mode = trial % 3 == 2 ? CrossEntropyMode::binary : CrossEntropyMode::categorical;
    const auto build = [&](Graph& g) {
      nn::Rng drop(static_cast<std::uint64_t>(trial));
      std::vector<Tensor> rows;
      for (const auto& s : batch) rows.push_back(model.forward(g, s, nn::Mode::train, drop));
      const auto ce = cross_entropy_loss(g, stack_rows(g, rows), targets, mode);
      return add(g, ce, l2_penalty(g, model.output_weights(), 1e-2));
    };
    record("bi-cnn loss", check_gradients(build, model.parameters(), kGradStep, 40, trial));
  }

  const double elapsed = seconds_since(start);
  double max_err = 0.0;
  std::string worst_op;
  for (const auto& [op, err] : worst) {
    if (err >= max_err) {
      max_err = err;
      worst_op = op;
    }
  }
  const bool pass = max_err <= kGradTol && draws >= 100 && checked > 0 && elapsed < 60.0;
  return {pass, std::to_string(worst.size()) + " ops + full loss, " + std::to_string(draws) + " draws, " +
                    std::to_string(checked) + " entries (" + std::to_string(skipped) +
                    " near kinks skipped), max rel err " + fmt(max_err * 1e6, 3) + "e-6 (" + worst_op + "), " +
                    fmt(elapsed, 1) + " s"};
}

// 2. Architecture invariants ----------------------------------------------------

Outcome invariants() {
  std::mt19937_64 rng(7);
  nn::ModelConfig cfg;
  cfg.kernel_sizes = {3, 4, 5};
  cfg.feature_maps = 16;
  cfg.embedding_dim = 24;
  cfg.num_classes = 5;
  cfg.sequence_length = 30;
  text::Vocabulary vocab;
  for (int i = 0; i < 200; ++i) vocab.add("tok" + std::to_string(i));
  const auto model = nn::BiCnnModel::init(cfg, vocab.size(), 3);

  double worst_sum = 0.0;
  bool deterministic = true;
  for (int i = 0; i < 500; ++i) {
    const auto s = random_sequence(rng, vocab.size(), cfg.sequence_length);
    const auto p = model.predict_proba(s);
    double sum = 0.0;
    for (const double v : p) sum += v;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    nn::Rng other(static_cast<std::uint64_t>(i));
    ad::Graph g;
    const auto y = model.forward(g, s, nn::Mode::infer, other);
    for (std::size_t c = 0; c < p.size(); ++c) {
      deterministic = deterministic && std::bit_cast<std::uint64_t>(p[c]) == std::bit_cast<std::uint64_t>(y.value(c)) &&
                      std::bit_cast<std::uint64_t>(p[c]) ==
                          std::bit_cast<std::uint64_t>(model.predict_proba(s)[c]);
    }
  }

  // Reversal involution on fuzzed token sequences.
  std::size_t fuzzed = 0;
  bool involution = true;
  for (int i = 0; i < 2000; ++i) {
    const std::size_t len = rng() % 40;
    text::Tokens tokens;
    for (std::size_t t = 0; t < len; ++t) tokens.push_back("tok" + std::to_string(rng() % 260));
    const std::size_t n = len + rng() % 5;
    const auto seq = text::index_and_pad(tokens, vocab, n);
    text::Tokens reversed(tokens.rbegin(), tokens.rend());
    const auto back = text::index_and_pad(reversed, vocab, n);
    involution = involution && back.forward == seq.reverse && back.reverse == seq.forward;
    std::vector<text::TokenId> twice(seq.reverse.begin(), seq.reverse.begin() + static_cast<long>(seq.n_words));
    std::reverse(twice.begin(), twice.end());
    involution = involution && std::equal(twice.begin(), twice.end(), seq.forward.begin());
    ++fuzzed;
  }

  // Serialization.
  const auto dir = scratch_dir("roundtrip");
  nn::save_model(dir / "m.bin", model, vocab, {3, {"a", "b", "c", "d", "e"}, {}, 0, 0});
  const auto loaded = nn::load_model(dir / "m.bin");
  bool exact = loaded.vocab == vocab && loaded.model.config() == model.config();
  const auto pa = model.parameters();
  const auto pb = loaded.model.parameters();
  exact = exact && pa.size() == pb.size();
  for (std::size_t i = 0; exact && i < pa.size(); ++i) {
    const auto va = pa[i].values();
    const auto vb = pb[i].values();
    exact = va.size() == vb.size() && std::memcmp(va.data(), vb.data(), va.size_bytes()) == 0;
  }
  fs::remove_all(dir);

  const bool pass = worst_sum <= 1e-9 && deterministic && involution && exact;
  return {pass, "max |sum-1| " + fmt(worst_sum * 1e15, 2) + "e-15 over 500 rows; involution " +
                    (involution ? "holds" : "BROKEN") + " on " + std::to_string(fuzzed) +
                    " sequences; inference " + (deterministic ? "deterministic" : "NONDETERMINISTIC") +
                    "; model file " + (exact ? "bit-exact" : "MISMATCH")};
}

// 3. Separable-corpus convergence -----------------------------------------------

Outcome convergence() {
  const auto start = Clock::now();
  const auto spec = synth::preset("mrd-like").scaled(500);
  const auto reports = synth::generate(spec);
  nn::ModelConfig mc;  // default architecture: kernels 3,4,5, 120 maps, 128-d
  mc.num_classes = spec.num_classes();
  train::TrainConfig tc;
  tc.epochs = 20;
  tc.learning_rate = 0.01;  // at 0.001 twenty epochs are ~120 Adam steps, too few
  tc.seed = 1;
  const auto run = train::train_cnn_run(reports, mc, tc, 0, train::run_seed(tc.seed, 0));
  const double elapsed = seconds_since(start);
  const bool pass = run.test_accuracy >= 0.99 && run.epochs.size() <= 20 && elapsed < 300.0;
  return {pass, "lr 0.01, test accuracy " + fmt(run.test_accuracy) + " after " + std::to_string(run.epochs.size()) +
                    " epochs (best validation epoch " + std::to_string(run.best_epoch) + "), " + fmt(elapsed, 1) +
                    " s"};
}

// 4 & 5. Directional comparisons on the hard presets ------------------------------

constexpr std::size_t kRuns = 10;

nn::ModelConfig comparison_arch(std::size_t classes, std::size_t channels) {
  nn::ModelConfig mc;
  mc.kernel_sizes = {3, 4, 5};
  mc.feature_maps = 32;
  mc.embedding_dim = 32;
  mc.num_classes = classes;
  mc.num_channels = channels;
  return mc;
}

train::TrainConfig comparison_training(double learning_rate) {
  train::TrainConfig tc;
  tc.epochs = 40;
  tc.learning_rate = learning_rate;
  tc.num_runs = kRuns;
  tc.seed = 11;
  return tc;
}

struct Comparison {
  train::CrossValidation bicnn, cnn, ngram;
  std::size_t reports = 0;
  double seconds = 0.0;
};

std::map<std::string, Comparison>& comparison_cache() {
  static std::map<std::string, Comparison> cache;
  return cache;
}

std::size_t comparison_size(const std::string& preset) { return preset.rfind("mrd", 0) == 0 ? 600 : 1030; }

const Comparison& compare_models(const std::string& preset) {
  auto& cache = comparison_cache();
  if (auto it = cache.find(preset); it != cache.end()) return it->second;
  const auto start = Clock::now();
  const auto spec = synth::preset(preset).scaled(comparison_size(preset));
  const auto reports = synth::generate(spec);
  const auto tc = comparison_training(0.001);
  Comparison c;
  c.reports = reports.size();
  c.bicnn = train::cross_validate(reports, comparison_arch(spec.num_classes(), 2), tc);
  c.cnn = train::cross_validate(reports, comparison_arch(spec.num_classes(), 1), tc);
  c.ngram = baseline::cross_validate_baseline(reports, 3, spec.num_classes(), tc);
  c.seconds = seconds_since(start);
  return cache.emplace(preset, std::move(c)).first->second;
}

std::vector<double> accuracies(const train::CrossValidation& cv) {
  std::vector<double> out;
  for (const auto& r : cv.runs) out.push_back(r.test_accuracy);
  return out;
}

Outcome ordering() {
  bool pass = true;
  std::string detail;
  for (const std::string preset : {"mrd-like-hard", "crrd-like-hard"}) {
    const auto& c = compare_models(preset);
    const double bi = c.bicnn.accuracy.mean, cnn = c.cnn.accuracy.mean, ng = c.ngram.accuracy.mean;
    const bool ok = bi >= cnn && cnn >= ng;
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += preset + " (" + std::to_string(c.reports) + " reports, " + std::to_string(kRuns) +
              " runs): Bi-CNN " + fmt(bi) + " CNN " + fmt(cnn) + " n-gram " + fmt(ng) + ", Bi-CNN - CNN " +
              fmt(bi - cnn) + " (sign test p " +
              fmt(stats::sign_test_p_value(accuracies(c.bicnn), accuracies(c.cnn)), 3) + "), " +
              fmt(c.seconds, 0) + " s";
  }
  return {pass, detail};
}

Outcome learning_rates() {
  const std::string preset = "mrd-like-hard";
  const auto& slow = compare_models(preset).bicnn;
  const auto start = Clock::now();
  const auto spec = synth::preset(preset).scaled(comparison_size(preset));
  const auto reports = synth::generate(spec);
  const auto fast = train::cross_validate(reports, comparison_arch(spec.num_classes(), 2), comparison_training(0.1));
  const bool pass = fast.convergence_epoch.mean < slow.convergence_epoch.mean && slow.accuracy.mean > fast.accuracy.mean;
  return {pass, preset + ", " + std::to_string(kRuns) + " runs: lr 0.1 converges at epoch " +
                    fmt(fast.convergence_epoch.mean, 1) + " with accuracy " + fmt(fast.accuracy.mean) +
                    "; lr 0.001 at epoch " + fmt(slow.convergence_epoch.mean, 1) + " with accuracy " +
                    fmt(slow.accuracy.mean) + ", " + fmt(seconds_since(start), 0) + " s"};
}

// 6. Statistics fidelity --------------------------------------------------------

Outcome statistics() {
  constexpr double kAns = 3.21, kAnw = 30.87, kTolerance = 0.15;
  const auto mrd = synth::corpus_stats(synth::generate(synth::preset("mrd-like")));
  const auto crrd = synth::corpus_stats(synth::generate(synth::preset("crrd-like")));
  const double ans_dev = mrd.sentences.mean / kAns - 1.0;
  const double anw_dev = mrd.words.mean / kAnw - 1.0;
  const bool pass = std::abs(ans_dev) <= kTolerance && std::abs(anw_dev) <= kTolerance && crrd.reports == 1030;
  return {pass, "mrd-like ANS " + fmt(mrd.sentences.mean, 2) + " (" + fmt(ans_dev * 100, 1) + "%), ANW " +
                    fmt(mrd.words.mean, 2) + " (" + fmt(anw_dev * 100, 1) + "%); crrd-like NR " +
                    std::to_string(crrd.reports)};
}

// 7. CLI determinism ---------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

Outcome cli_determinism() {
#ifndef BICNN_CLI
  return {false, "CLI not built"};
#else
  const std::vector<std::string> commands{
      "gen-data --preset mrd-like-hard --reports 200 -o corpus.jsonl",
      "train --corpus corpus.jsonl --kernels 2,3 --feature-maps 8 --embedding-dim 16 --epochs 4 --runs 3 --jobs 2 "
      "-o run",
      "train --corpus corpus.jsonl --model cnn --kernels 3 --feature-maps 8 --embedding-dim 16 --epochs 2 --runs 1 "
      "-o single",
      "eval --model run/model.bin --corpus corpus.jsonl -o eval",
      "predict --json --model run/model.bin --text 'FINDINGS: The breast parenchyma is extremely dense.'",
      "stats --corpus corpus.jsonl",
      "stats --compare run/summary.json run/summary.json",
  };
  std::vector<std::map<std::string, std::string>> rounds;
  for (int round = 0; round < 2; ++round) {
    const auto dir = scratch_dir("cli" + std::to_string(round));
    for (std::size_t i = 0; i < commands.size(); ++i) {
      const std::string cmd = "cd '" + dir.string() + "' && '" BICNN_CLI "' " + commands[i] + " > stdout" +
                              std::to_string(i) + ".txt 2> /dev/null";
      const int status = std::system(cmd.c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "command failed: " + commands[i]};
    }
    rounds.push_back(snapshot(dir));
    fs::remove_all(dir);
  }
  std::vector<std::string> differing;
  for (const auto& [name, bytes] : rounds[0]) {
    auto it = rounds[1].find(name);
    if (it == rounds[1].end() || it->second != bytes) differing.push_back(name);
  }
  const bool pass = differing.empty() && rounds[0].size() == rounds[1].size();
  std::string detail = std::to_string(commands.size()) + " commands, " + std::to_string(rounds[0].size()) +
                       " artifacts incl. stdout";
  for (const auto& d : differing) detail += ", differs: " + d;
  return {pass, detail + (pass ? ", byte-identical" : "")};
#endif
}

}  // namespace

int main(int argc, char** argv) {
  log::set_threshold(log::Level::error);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"architecture invariants", invariants},
      {"separable-corpus convergence", convergence},
      {"model ordering on hard presets", ordering},
      {"learning-rate convergence trade-off", learning_rates},
      {"corpus statistics fidelity", statistics},
      {"CLI determinism", cli_determinism},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.contains(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << i + 1 << ". " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  fs::remove_all(fs::temp_directory_path() / ("bicnn_accept_" + std::to_string(::getpid())));
  return all ? 0 : 1;
}
