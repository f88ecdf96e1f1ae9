#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "strokezs/error.hpp"
#include "strokezs/eval.hpp"
#include "strokezs/rng.hpp"
#include "test_util.hpp"

using namespace strokezs;
using testutil::TempDir;

namespace {

std::vector<std::string> ids(int n, const char* prefix = "c") {
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

Lexicon lexicon_of(const std::string& text) {
  std::istringstream in(text);
  return load_lexicon(in);
}

ModelConfig small_config() {
  ModelConfig c;
  c.encoder.channels = 16;
  c.encoder.num_blocks = 1;
  c.decoder.d_model = 32;
  c.decoder.layers = 1;
  c.decoder.ffn = 32;
  return c;
}

std::vector<std::string> char_ids(const Lexicon& lex) {
  std::vector<std::string> out;
  for (const auto& e : lex.entries()) out.push_back(e.char_id);
  return out;
}

}  // namespace

TEST_CASE("char zero-shot split examples") {
  const auto chars = ids(10);
  const auto s = char_zero_shot_split(chars, 5, 3);
  CHECK(s.train_classes == std::vector<std::string>{"c1", "c2", "c3", "c4", "c5"});
  CHECK(s.test_classes == std::vector<std::string>{"c8", "c9", "c10"});
  CHECK_THROWS_AS(char_zero_shot_split(chars, 8, 3), UsageError);

  const auto level1 = ids(3755);
  for (int m : {500, 1000, 1500, 2000, 2755}) {
    const auto split = char_zero_shot_split(level1, m, 1000);
    CHECK(split.train_classes.size() == static_cast<std::size_t>(m));
    CHECK(split.test_classes.size() == 1000);
    std::set<std::string> train(split.train_classes.begin(), split.train_classes.end());
    for (const auto& t : split.test_classes) REQUIRE_FALSE(train.contains(t));
  }
  CHECK(build_candidate_set(char_zero_shot_split(level1, 2755, 1000)).size() == 3755);
}

TEST_CASE("radical zero-shot split on the hand-counted toy") {
  const Lexicon lex = lexicon_of("A\tA\t12\tr1,r2\nB\tB\t3\tr1\nC\tC\t45\tr2,r3\n");
  const auto freq = radical_frequencies(lex);
  CHECK(freq == std::map<std::string, int>{{"r1", 2}, {"r2", 2}, {"r3", 1}});
  auto s = radical_zero_shot_split(lex, 2);
  CHECK(s.test_classes == std::vector<std::string>{"C"});
  CHECK(s.train_classes == std::vector<std::string>{"A", "B"});
  s = radical_zero_shot_split(lex, 1);
  CHECK(s.test_classes.empty());
  CHECK(s.train_classes.size() == 3);
  CHECK_THROWS_AS(radical_zero_shot_split(lex, 0), UsageError);
  CHECK_THROWS_AS(radical_zero_shot_split(lexicon_of("A\tA\t1\n"), 2), DataError);
}

TEST_CASE("a radical repeated inside one character counts once") {
  const Lexicon lex = lexicon_of("A\tA\t1212\tr1,r1\nB\tB\t3\tr2\nC\tC\t4\tr2\n");
  CHECK(radical_frequencies(lex).at("r1") == 1);
  CHECK(radical_zero_shot_split(lex, 2).test_classes == std::vector<std::string>{"A"});
}

TEST_CASE("scaled radical thresholds") {
  CHECK(scaled_radical_thresholds(3755) == std::vector<int>{50, 40, 30, 20, 10});
  CHECK(scaled_radical_thresholds(300) == std::vector<int>{4, 4, 3, 2, 1});
  CHECK(scaled_radical_thresholds(10) == std::vector<int>{1, 1, 1, 1, 1});
}

TEST_CASE("radical splits partition the lexicon and grow the training set as n falls") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    AlphabetConfig cfg;
    cfg.seed = seed;
    cfg.count = 150 + static_cast<int>(seed) * 40;
    cfg.num_radicals = 40 + static_cast<int>(seed) * 10;
    const Lexicon lex = make_synthetic_alphabet(cfg);
    std::set<std::string> previous_train;
    for (int n = 1; n <= 12; ++n) {
      const auto s = radical_zero_shot_split(lex, n);
      std::set<std::string> train(s.train_classes.begin(), s.train_classes.end());
      std::set<std::string> test(s.test_classes.begin(), s.test_classes.end());
      REQUIRE(train.size() + test.size() == lex.size());
      for (const auto& t : test) REQUIRE_FALSE(train.contains(t));
      if (n > 1) REQUIRE(std::includes(previous_train.begin(), previous_train.end(), train.begin(), train.end()));
      previous_train = train;
    }
    const auto thresholds = scaled_radical_thresholds(lex.size());
    for (std::size_t i = 0; i + 1 < thresholds.size(); ++i) {
      CHECK(radical_zero_shot_split(lex, thresholds[i + 1]).train_classes.size() >=
            radical_zero_shot_split(lex, thresholds[i]).train_classes.size());
    }
  }
}

TEST_CASE("candidate sets") {
  SplitSpec s;
  s.kind = SplitKind::kCrossAlphabet;
  s.train_classes = {"b", "a", "c"};
  s.test_classes = {"c", "d"};
  CHECK(build_candidate_set(s) == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK(build_candidate_set(s, CandidateMode::kIntersection) == std::vector<std::string>{"c"});
  const std::vector<std::string> seen{"x", "y"};
  CHECK(build_candidate_set(seen_split(seen)) == seen);
  CHECK_THROWS_AS(s.validate(), UsageError);
}

TEST_CASE("cacc") {
  const std::vector<std::string> g{"a", "b", "c", "d"};
  CHECK(cacc(std::vector<std::string>{"a", "b", "c", "x"}, g) == 0.75);
  CHECK(cacc(g, g) == 1.0);
  CHECK_THROWS_AS(cacc(std::vector<std::string>{"a"}, g), UsageError);
  CHECK_THROWS_AS(cacc(std::vector<std::string>{}, std::vector<std::string>{}), UsageError);

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto preds = ids(1 + static_cast<int>(rng.below(40)));
    auto golds = preds;
    rng.shuffle(golds.begin(), golds.end());
    std::size_t fixed = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) fixed += preds[i] == golds[i];
    const double v = cacc(preds, golds);
    REQUIRE(v == static_cast<double>(fixed) / static_cast<double>(preds.size()));
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("seen-character fallback") {
  const Lexicon lex = lexicon_of("A\tA\t12\nB\tB\t12\nC\tC\t3\n");
  const auto cs = build_confusable_set(lex);
  const std::vector<std::string> classes{"A", "B", "C"};
  const std::vector<float> head{0.0f, 9.0f, 0.0f};
  CHECK(seen_character_fallback(StrokeSequence::parse("3"), cs, "C", head, classes) == "C");
  CHECK(seen_character_fallback(StrokeSequence::parse("12"), cs, "A", head, classes) == "B");
  CHECK_THROWS_AS(seen_character_fallback(StrokeSequence::parse("12"), cs, "A", std::vector<float>{1, 2}, classes),
                  UsageError);
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    std::vector<float> logits(3);
    for (auto& v : logits) v = static_cast<float>(rng.uniform(-5, 5));
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (logits[k] > logits[best]) best = k;
    REQUIRE(seen_character_fallback(StrokeSequence::parse("12"), cs, "A", logits, classes) == classes[best]);
  }
}

TEST_CASE("the training loader refuses test-class samples in zero-shot splits") {
  TempDir dir("audit");
  const Lexicon lex = lexicon_of("A\tA\t12\nB\tB\t3\nC\tC\t45\n");
  const auto split = char_zero_shot_split(char_ids(lex), 2, 1);
  DataConfig data;
  data.train_per_char = 2;
  data.test_per_char = 2;
  auto manifest = prepare_split_dataset(lex, split, data, dir.path.string());
  CHECK(load_training_samples(lex, split, manifest, dir.path.string()).size() == 4);
  for (const auto& r : manifest.records) CHECK(r.split_tag == (r.char_id == "C" ? "test" : "train"));

  auto leaked = manifest;
  for (auto& r : leaked.records)
    if (r.char_id == "C") r.split_tag = "train";
  CHECK_THROWS_AS(load_training_samples(lex, split, leaked, dir.path.string()), DataError);

  // The seen setting trains on every class, so the same manifest is fine there.
  CHECK(load_training_samples(lex, seen_split(char_ids(lex)), leaked, dir.path.string()).size() == 6);
}

TEST_CASE("experiments are reproducible, worker-count independent and trace complete") {
  TempDir dir("exp");
  AlphabetConfig ac;
  ac.count = 24;
  ac.num_radicals = 10;
  const Lexicon lex = make_synthetic_alphabet(ac);
  const auto split = char_zero_shot_split(char_ids(lex), 16, 8);
  DataConfig data;
  data.train_per_char = 3;
  data.test_per_char = 4;
  const auto manifest = prepare_split_dataset(lex, split, data, dir.path.string());

  ExperimentConfig cfg;
  cfg.model = small_config();
  cfg.train.steps = 6;
  cfg.train.batch_size = 4;
  Checkpoint ck;
  const auto a = run_experiment(lex, split, manifest, dir.path.string(), cfg, &ck);
  const auto b = run_experiment(lex, split, manifest, dir.path.string(), cfg);
  CHECK(format_result(a) == format_result(b));
  CHECK(ck.optimizer.steps == 6);

  cfg.eval.workers = 3;
  const auto c = evaluate(ck, lex, split, manifest, dir.path.string(), cfg.eval);
  CHECK(c.cacc == a.cacc);
  for (std::size_t i = 0; i < a.predictions.size(); ++i) CHECK(c.predictions[i].predicted == a.predictions[i].predicted);

  CHECK(a.total == 32);
  CHECK(a.exact_direct + a.exact_matched + a.rectified_direct + a.rectified_matched == a.total);
  const auto cands = build_candidate_set(split);
  for (const auto& p : a.predictions) CHECK(std::binary_search(cands.begin(), cands.end(), p.predicted));
  CHECK(a.candidates == 24);

  const auto text = format_result(a);
  CHECK(text.find("cacc=") != std::string::npos);
  CHECK(text.find("[distance_histogram]") != std::string::npos);
  const auto row = result_csv_row(a);
  const auto header = result_csv_header();
  CHECK(std::count(row.begin(), row.end(), ',') == std::count(header.begin(), header.end(), ','));
}

TEST_CASE("an untrained model scores near chance") {
  TempDir dir("chance");
  AlphabetConfig ac;
  ac.count = 300;
  const Lexicon lex = make_synthetic_alphabet(ac);
  // Every class appears in the test set equally often, so a constant
  // prediction lands exactly on chance.
  const auto split = seen_split(char_ids(lex));
  DataConfig data;
  data.train_per_char = 0;
  data.test_per_char = 2;
  const auto manifest = prepare_split_dataset(lex, split, data, dir.path.string());
  ExperimentConfig cfg;
  cfg.model = small_config();
  cfg.train.steps = 0;
  const auto r = run_experiment(lex, split, manifest, dir.path.string(), cfg);
  CHECK(r.total == 600);
  MESSAGE("untrained cacc " << r.cacc << " chance " << r.chance);
  CHECK(r.cacc <= 3 * r.chance);
}

TEST_CASE("cross-alphabet evaluation") {
  TempDir dir("cross");
  AlphabetConfig ac;
  ac.count = 20;
  ac.num_radicals = 8;
  const Lexicon lex = make_synthetic_alphabet(ac);
  const auto split = char_zero_shot_split(char_ids(lex), 12, 8);
  DataConfig data;
  data.train_per_char = 2;
  data.test_per_char = 3;
  const auto manifest = prepare_split_dataset(lex, split, data, dir.path.string());
  ExperimentConfig cfg;
  cfg.model = small_config();
  cfg.train.steps = 3;
  cfg.train.batch_size = 4;
  Checkpoint ck;
  const auto ordinary = run_experiment(lex, split, manifest, dir.path.string(), cfg, &ck);
  const auto same = cross_alphabet_eval(ck, lex, split, manifest, dir.path.string(), cfg.eval);
  CHECK(same.cacc == ordinary.cacc);
  CHECK(same.exact_direct == ordinary.exact_direct);
  CHECK(same.rectified_matched == ordinary.rectified_matched);

  CHECK_THROWS_AS(lexicon_of("K1\tK1\t16\n"), ParseError);
  SplitSpec bad = split;
  bad.test_classes.push_back("nope");
  CHECK_THROWS_AS(cross_alphabet_eval(ck, lex, bad, manifest, dir.path.string(), cfg.eval), DataError);
}

TEST_CASE("evaluation requires test samples") {
  TempDir dir("empty");
  const Lexicon lex = lexicon_of("A\tA\t12\nB\tB\t3\n");
  const auto split = seen_split(char_ids(lex));
  Checkpoint ck;
  ck.config = small_config();
  ck.params = init_params(ck.config, 1);
  CHECK_THROWS_AS(evaluate(ck, lex, split, DatasetManifest{}, dir.path.string(), EvalConfig{}), DataError);
  EvalConfig bad;
  bad.workers = 0;
  CHECK_THROWS_AS(evaluate(ck, lex, split, DatasetManifest{}, dir.path.string(), bad), UsageError);
}
