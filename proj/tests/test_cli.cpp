#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "cli_pipeline.hpp"

using namespace testutil;

namespace {

const char* kToy = "A\tA\t12\nB\tB\t12\nC\tC\t3\n";

void write(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

}  // namespace

TEST_CASE("unknown or missing commands print usage and fail") {
  auto c = cli({"frobnicate"});
  CHECK(c.code == 1);
  CHECK(c.err.find("unknown command 'frobnicate'") != std::string::npos);
  CHECK(c.err.find("Usage:") != std::string::npos);
  CHECK(cli({}).code == 1);
  c = cli({"--help"});
  CHECK(c.code == 0);
  CHECK(c.out.find("grad-check") != std::string::npos);
}

TEST_CASE("lexicon-stats writes the histogram CSV") {
  TempDir dir("cli_stats");
  write(dir / "toy.tsv", kToy);
  const auto c = cli({"lexicon-stats", "--lexicon", dir / "toy.tsv", "--out", dir / "hist.csv"});
  REQUIRE(c.code == 0);
  CHECK(slurp(dir / "hist.csv") == "n,sequences\n1,1\n2,1\n");
  CHECK(c.out.find("one_to_one_fraction,0.3333") != std::string::npos);
  CHECK(c.out.find("max_n,2\n") != std::string::npos);
}

TEST_CASE("exit codes: usage, data and validation diagnostics are single lines") {
  TempDir dir("cli_codes");
  write(dir / "toy.tsv", kToy);
  write(dir / "bad.tsv", "A\tA\t12\nB\tB\t16\n");

  auto c = cli({"lexicon-stats", "--lexicon", dir / "missing.tsv"});
  CHECK(c.code == 1);
  CHECK(c.err.find("--lexicon") != std::string::npos);

  c = cli({"lexicon-stats", "--lexicon", dir / "bad.tsv"});
  CHECK(c.code == 2);
  CHECK(c.err.find("line 2") != std::string::npos);
  CHECK(std::count(c.err.begin(), c.err.end(), '\n') == 1);

  c = cli({"lexicon-stats", "--lexicon", dir / "toy.tsv", "--out", dir / "nowhere/hist.csv"});
  CHECK(c.code == 1);
  CHECK(c.err.find("--out") != std::string::npos);

  c = cli({"gen-data", "--lexicon", dir / "toy.tsv", "--out", dir / "d", "--split", "sideways"});
  CHECK(c.code == 1);
  CHECK(c.err.find("--split") != std::string::npos);

  c = cli({"gen-data", "--lexicon", dir / "toy.tsv", "--out", dir / "d", "--m", "2", "--test-count", "2"});
  CHECK(c.code == 1);
  CHECK(c.err.find("overlap") != std::string::npos);

  c = cli({"--workers", "0", "grad-check"});
  CHECK(c.code == 1);
  CHECK(c.err.find("--workers") != std::string::npos);

  // a lexicon is not a checkpoint
  write(dir / "img.rec", "x");
  c = cli({"decode", "--checkpoint", dir / "toy.tsv", "--lexicon", dir / "toy.tsv", "--image", dir / "img.rec"});
  CHECK(c.code == 2);
}

TEST_CASE("STROKEZS_SEED is the fallback for --seed") {
  TempDir dir("cli_seed");
  ::setenv("STROKEZS_SEED", "9", 1);
  REQUIRE(cli({"synth-lexicon", "--out", dir / "env.tsv", "--count", "30"}).code == 0);
  ::unsetenv("STROKEZS_SEED");
  REQUIRE(cli({"--seed", "9", "synth-lexicon", "--out", dir / "flag.tsv", "--count", "30"}).code == 0);
  REQUIRE(cli({"--seed", "10", "synth-lexicon", "--out", dir / "other.tsv", "--count", "30"}).code == 0);
  CHECK(slurp(dir / "env.tsv") == slurp(dir / "flag.tsv"));
  CHECK(slurp(dir / "env.tsv") != slurp(dir / "other.tsv"));
  ::setenv("STROKEZS_SEED", "nine", 1);
  CHECK(cli({"synth-lexicon", "--out", dir / "x.tsv"}).code == 1);
  ::unsetenv("STROKEZS_SEED");
}

TEST_CASE("every command succeeds and reruns byte for byte") {
  TempDir dir("cli_rerun");
  const auto first = run_cli_pipeline(dir.path.string());
  for (const auto& c : first) {
    INFO(c.args[0] << " " << (c.args.size() > 1 ? c.args[1] : "") << ": " << c.err);
    CHECK(c.code == 0);
  }
  const auto files = snapshot(dir.path.string());
  const auto second = run_cli_pipeline(dir.path.string());
  REQUIRE(second.size() == first.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    INFO(first[i].args[0]);
    CHECK(second[i].out == first[i].out);
  }
  const auto again = snapshot(dir.path.string());
  CHECK(again.size() == files.size());
  for (const auto& [name, bytes] : files) {
    INFO(name);
    REQUIRE(again.contains(name));
    CHECK(again.at(name) == bytes);
  }
  CHECK(files.contains("zs.ckpt"));
  CHECK(files.contains("zs_pred.csv"));
  CHECK(files.contains("attn.csv"));
}

TEST_CASE("decode prints char_id, strokes and trace on one line; eval is worker independent") {
  TempDir dir("cli_decode");
  const auto calls = run_cli_pipeline(dir.path.string());
  const CliCall* decode = nullptr;
  for (const auto& c : calls)
    if (c.args[0] == "decode" && c.args.back() != "--json") decode = &c;
  REQUIRE(decode != nullptr);
  CHECK(std::count(decode->out.begin(), decode->out.end(), '\n') == 1);
  const std::string line = decode->out.substr(0, decode->out.size() - 1);
  const auto comma = line.find(',');
  const std::string id = line.substr(0, comma);
  CHECK(slurp(dir / "a.tsv").find(id + "\t") != std::string::npos);
  const bool traced = line.find("\"exact,") != std::string::npos || line.find("\"rectified,") != std::string::npos;
  CHECK(traced);

  const std::vector<std::string> base{"eval", "--checkpoint", dir / "zs.ckpt", "--lexicon", dir / "a.tsv", "--data",
                                      dir / "zs", "--split", "char-zs"};
  auto one = base, four = base;
  one.insert(one.end(), {"--workers", "1", "--predictions", dir / "p1.csv"});
  four.insert(four.end(), {"--workers", "4", "--predictions", dir / "p4.csv"});
  const auto a = cli(one), b = cli(four);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(slurp(dir / "p1.csv") == slurp(dir / "p4.csv"));

  auto wrong = base;
  wrong[8] = "seen";
  const auto w = cli(wrong);
  CHECK(w.code == 1);
  CHECK(w.err.find("does not match") != std::string::npos);
}

TEST_CASE("commands do not touch their inputs") {
  TempDir dir("cli_inputs");
  write(dir / "toy.tsv", kToy);
  const auto before = slurp(dir / "toy.tsv");
  REQUIRE(cli({"gen-data", "--lexicon", dir / "toy.tsv", "--out", dir / "d", "--split", "seen",
               "--train-per-char", "1", "--test-per-char", "1"}).code == 0);
  REQUIRE(cli({"lexicon-stats", "--lexicon", dir / "toy.tsv"}).code == 0);
  CHECK(slurp(dir / "toy.tsv") == before);
}
