#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "support/fixtures.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; returns exit code and stdout.
Run cli(const std::string& args) {
  const char* bin = std::getenv("CHITCHAT_BIN");
  if (!bin) return {};
  const std::string cmd = std::string("'") + bin + "' " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!std::getenv("CHITCHAT_BIN")) GTEST_SKIP() << "CHITCHAT_BIN not set";
  }
  std::string p(const std::string& name) const { return (dir / name).string(); }
  fixture::TempDir dir;
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("nonsense").code, 1);
  EXPECT_EQ(cli("corpus clean").code, 1);  // --in required
  EXPECT_EQ(cli("format --in x --condition sideways").code, 1);
  EXPECT_EQ(cli("train --in x --out y --order 0").code, 1);
}

TEST_F(Cli, CorpusChainEndToEnd) {
  ASSERT_EQ(cli("--seed 4 synth tweets --total 1500 --out " + p("raw.jsonl")).code, 0);
  EXPECT_EQ(lines(slurp(p("raw.jsonl"))), 1500u);
  ASSERT_EQ(cli("corpus clean --in " + p("raw.jsonl") + " --out " + p("clean.jsonl") + " --rejections " +
                p("rej.jsonl"))
                .code,
            0);
  EXPECT_EQ(lines(slurp(p("clean.jsonl"))) + lines(slurp(p("rej.jsonl"))), 1500u);
  ASSERT_EQ(cli("corpus pairs --in " + p("clean.jsonl") + " --out " + p("pairs.jsonl")).code, 0);
  const auto chains = cli("corpus chains --in " + p("clean.jsonl"));
  ASSERT_EQ(chains.code, 0);
  // Each maximal chain of length L contributes L-1 pairs.
  std::size_t expected_pairs = 0;
  std::istringstream in(chains.out);
  for (std::string line; std::getline(in, line);) expected_pairs += json::parse(line)["texts"].size() - 1;
  EXPECT_EQ(lines(slurp(p("pairs.jsonl"))), expected_pairs);
  const auto stats = cli("corpus stats --in " + p("pairs.jsonl"));
  ASSERT_EQ(stats.code, 0);
  EXPECT_EQ(json::parse(stats.out)["pair_count"], expected_pairs);
}

TEST_F(Cli, MissingInputIsUserError) {
  EXPECT_EQ(cli("corpus clean --in " + p("absent.jsonl")).code, 1);
  EXPECT_EQ(cli("analyze ppl-grid --in " + p("absent.jsonl")).code, 1);
  std::ofstream(p("bad.jsonl")) << "{not json}\n";
  EXPECT_EQ(cli("train --in " + p("bad.jsonl") + " --out " + p("m.json")).code, 1);
  EXPECT_EQ(cli("pipeline").code, 1);
}

TEST_F(Cli, FormatTrainGenerate) {
  ASSERT_EQ(cli("--seed 2 synth fav --out " + p("fav.jsonl")).code, 0);
  ASSERT_EQ(cli("format --in " + p("fav.jsonl") + " --condition tagged --out " + p("q.jsonl")).code, 0);
  const auto first = json::parse(slurp(p("q.jsonl")).substr(0, slurp(p("q.jsonl")).find('\n')));
  EXPECT_NE(first["query"].get<std::string>().find("[SPK"), std::string::npos);
  ASSERT_EQ(cli("train --in " + p("q.jsonl") + " --out " + p("m.json") + " --order 3 --conditioning").code, 0);
  const std::string gen = "generate --model " + p("m.json") + " --query 'こんにちは' --n 4 --max-tokens 12";
  const auto a = cli("--seed 9 " + gen);
  const auto b = cli("--seed 9 " + gen);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  const auto j = json::parse(a.out);
  EXPECT_EQ(j["candidates"].size(), 4u);
  EXPECT_EQ(j["selected"], j["candidates"][j["selected_index"].get<int>()]["text"]);
  EXPECT_EQ(cli("--seed 9 generate --model " + p("m.json") + " --query x --top-p 0").code, 1);
}

TEST_F(Cli, PipelineAndAnalyze) {
  const auto proj = cli("--seed 6 synth project --out " + p("proj"));
  ASSERT_EQ(proj.code, 0);
  const std::string config = p("proj/pipeline.json");
  const auto first = cli("--config " + config + " pipeline --threads 2");
  ASSERT_EQ(first.code, 0);
  EXPECT_NE(first.out.find("analyze: ran"), std::string::npos) << first.out;
  const auto second = cli("--config " + config + " pipeline");
  ASSERT_EQ(second.code, 0);
  EXPECT_EQ(lines(second.out), 5u);
  EXPECT_EQ(second.out.find(": ran"), std::string::npos) << second.out;

  const std::string exp = p("proj/evaluations.jsonl");
  const auto text = cli("analyze significance --in " + exp);
  ASSERT_EQ(text.code, 0);
  EXPECT_EQ(text.out, slurp(p("proj/out/significance.md")));
  EXPECT_EQ(text.out.rfind("| Metric | ED | PC | Fav |", 0), 0u) << text.out;
  const auto csv = cli("analyze significance --format csv --normalization two-way --in " + exp);
  ASSERT_EQ(csv.code, 0);
  EXPECT_EQ(lines(csv.out), 1u + 3 * 13);
  const auto corr = cli("analyze size-corr --format json --in " + exp);
  ASSERT_EQ(corr.code, 0);
  EXPECT_EQ(json::parse(corr.out).size(), 3u);
  EXPECT_EQ(cli("analyze significance --normalization diagonal --in " + exp).code, 1);
}

TEST_F(Cli, OutDirResolvesRelativeOutputs) {
  ASSERT_EQ(cli("--seed 1 --out-dir " + p("o") + " synth tweets --total 200 --out t.jsonl").code, 0);
  EXPECT_EQ(lines(slurp(p("o/t.jsonl"))), 200u);
}
