#pragma once

// Drives every CLI command in-process over a small synthetic setup. Used by
// the CLI tests and the acceptance run to check byte-identical reruns.

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "strokezs/cli.hpp"
#include "test_util.hpp"

namespace testutil {

struct CliCall {
  std::vector<std::string> args;
  int code = -1;
  std::string out;
  std::string err;
};

inline CliCall cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliCall c{std::move(args)};
  c.code = strokezs::cli::run(c.args, out, err);
  c.out = out.str();
  c.err = err.str();
  return c;
}

// Every file under dir, keyed by relative path.
inline std::map<std::string, std::string> snapshot(const std::string& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), dir).string()] = slurp(e.path().string());
  return files;
}

// Runs the whole command set under dir; returns each call in order.
inline std::vector<CliCall> run_cli_pipeline(const std::string& dir) {
  const auto p = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  const std::vector<std::string> small{"--channels", "8", "--blocks", "1", "--d-model", "16", "--heads", "2",
                                       "--layers", "1", "--ffn", "16", "--steps", "6", "--batch-size", "4"};
  auto with = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  std::vector<CliCall> calls;
  calls.push_back(cli({"--seed", "5", "synth-lexicon", "--out", p("a.tsv"), "--count", "40", "--radicals", "12"}));
  calls.push_back(cli({"--seed", "6", "synth-lexicon", "--out", p("b.tsv"), "--count", "30", "--radicals", "10",
                       "--prefix", "K", "--exclude", p("a.tsv")}));
  calls.push_back(cli({"lexicon-stats", "--lexicon", p("a.tsv"), "--out", p("hist.csv")}));
  calls.push_back(cli({"--json", "lexicon-stats", "--lexicon", p("a.tsv")}));
  calls.push_back(cli({"gen-data", "--lexicon", p("a.tsv"), "--out", p("zs"), "--split", "char-zs", "--m", "30",
                       "--test-count", "10", "--train-per-char", "2", "--test-per-char", "2", "--seed", "7"}));
  calls.push_back(cli({"gen-data", "--lexicon", p("a.tsv"), "--out", p("seen"), "--split", "seen",
                       "--train-per-char", "1", "--test-per-char", "1"}));
  calls.push_back(cli({"gen-data", "--lexicon", p("a.tsv"), "--out", p("rad"), "--split", "radical-zs", "--n", "3",
                       "--train-per-char", "1", "--test-per-char", "1"}));
  calls.push_back(cli({"gen-data", "--lexicon", p("b.tsv"), "--out", p("cross"), "--split", "cross",
                       "--test-per-char", "1"}));
  calls.push_back(cli(with({"train", "--lexicon", p("a.tsv"), "--data", p("zs"), "--out", p("zs.ckpt")}, small)));
  calls.push_back(cli(with({"train", "--lexicon", p("a.tsv"), "--data", p("seen"), "--out", p("seen.ckpt"),
                            "--char-head"}, small)));
  calls.push_back(cli({"eval", "--checkpoint", p("zs.ckpt"), "--lexicon", p("a.tsv"), "--data", p("zs"), "--split",
                       "char-zs", "--out", p("zs.txt"), "--csv", p("zs.csv"), "--predictions", p("zs_pred.csv"),
                       "--workers", "2"}));
  calls.push_back(cli({"eval", "--checkpoint", p("seen.ckpt"), "--lexicon", p("a.tsv"), "--data", p("seen"),
                       "--split", "seen", "--fallback", "--metric", "euclidean", "--out", p("seen.txt")}));
  calls.push_back(cli({"--json", "eval", "--checkpoint", p("zs.ckpt"), "--lexicon", p("b.tsv"), "--data",
                       p("cross"), "--split", "cross", "--out", p("cross.txt")}));
  calls.push_back(cli({"export-bank", "--checkpoint", p("zs.ckpt"), "--lexicon", p("a.tsv"), "--out", p("bank.rec")}));
  std::vector<std::string> images;
  for (const auto& e : std::filesystem::directory_iterator(p("zs/images"))) images.push_back(e.path().string());
  const std::string image = images.empty() ? p("zs/images/missing") : *std::min_element(images.begin(), images.end());
  calls.push_back(cli({"decode", "--checkpoint", p("zs.ckpt"), "--lexicon", p("a.tsv"), "--image", image}));
  calls.push_back(cli({"decode", "--checkpoint", p("zs.ckpt"), "--lexicon", p("a.tsv"), "--image", image, "--bank",
                       p("bank.rec"), "--json"}));
  calls.push_back(cli({"export-attn", "--checkpoint", p("zs.ckpt"), "--image", image, "--out", p("attn.csv")}));
  calls.push_back(cli({"grad-check", "--seed", "2"}));
  return calls;
}

}  // namespace testutil
