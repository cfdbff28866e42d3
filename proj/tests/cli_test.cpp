#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace {

using nlohmann::json;

struct Run {
  int exit = -1;
  std::string out;
};

/// Runs the CLI with stderr discarded; returns exit status and stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string(BRAINS_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = pclose(p);
  r.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("brains_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::filesystem::path dir_;
};

}  // namespace

TEST_F(Cli, GenerateWritesRequestedCount) {
  const auto r = cli("generate --n 1105 --seed 7");
  ASSERT_EQ(r.exit, 0);
  std::size_t lines = 0;
  std::istringstream in(r.out);
  for (std::string line; std::getline(in, line);) {
    ++lines;
    if (lines == 1) EXPECT_TRUE(json::parse(line).contains("labels"));
  }
  EXPECT_EQ(lines, 1105u);
  EXPECT_EQ(cli("generate --n 1105 --seed 7").out, r.out);
  EXPECT_NE(cli("generate --n 1105 --seed 8").out, r.out);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("generate --bogus").exit, 1);
  EXPECT_EQ(cli("").exit, 1);
  EXPECT_EQ(cli("generate --n 0").exit, 1);
  EXPECT_EQ(cli("eval --variants five-shot").exit, 1);
}

TEST_F(Cli, DataErrorsExitTwo) {
  EXPECT_EQ(cli("index --corpus " + path("missing.jsonl") + " --out " + path("x.idx")).exit, 2);
  std::ofstream(path("bad.jsonl")) << "{\"id\":\"a\",\"mmse\":40,\"cdr\":0,\"age\":70}\n";
  EXPECT_EQ(cli("preprocess --corpus " + path("bad.jsonl")).exit, 2);
}

TEST_F(Cli, GenerateIndexTrainScreenEval) {
  ASSERT_EQ(cli("generate --n 150 --seed 3 --out " + path("corpus.jsonl")).exit, 0);
  ASSERT_EQ(cli("preprocess --corpus " + path("corpus.jsonl") + " --out " + path("stats.json")).exit, 0);
  EXPECT_TRUE(json::parse(slurp(path("stats.json"))).is_object());

  const auto tr = cli("train --corpus " + path("corpus.jsonl") + " --epochs 1 --seed 3 --out " + path("m.ckpt"));
  ASSERT_EQ(tr.exit, 0);
  EXPECT_EQ(json::parse(tr.out)["digest"].get<std::string>().size(), 64u);

  const auto ix =
      cli("index --corpus " + path("corpus.jsonl") + " --checkpoint " + path("m.ckpt") + " --out " + path("c.idx"));
  ASSERT_EQ(ix.exit, 0);
  EXPECT_EQ(json::parse(ix.out)["size"], 150);

  const std::string kb = " --checkpoint " + path("m.ckpt") + " --corpus " + path("corpus.jsonl");
  const auto sc = cli("screen" + kb + " --index " + path("c.idx") + " --set id=p1 --set mmse=22 --set cdr=1 --set age=80");
  ASSERT_EQ(sc.exit, 0);
  const auto rep = json::parse(sc.out);
  EXPECT_EQ(rep["scores"].size(), 5u);
  EXPECT_EQ(rep["evidence"].size(), 5u);
  // The prebuilt index and an index embedded on the fly agree.
  EXPECT_EQ(cli("screen" + kb + " --set id=p1 --set mmse=22 --set cdr=1 --set age=80").out, sc.out);

  EXPECT_EQ(cli("screen" + kb + " --set id=p1 --set mmse=31 --set cdr=1 --set age=80").exit, 2);

  const auto ev = cli("eval --corpus " + path("corpus.jsonl") + " --seed 3 --variants no-rag,brains-k5 --checkpoint " +
                      path("m.ckpt") + " --out " + path("report.json"));
  ASSERT_EQ(ev.exit, 0);
  const auto split = ev.out.find("\n\n");
  ASSERT_NE(split, std::string::npos);
  const auto report = json::parse(ev.out.substr(0, split));
  EXPECT_EQ(report, json::parse(slurp(path("report.json"))));
  EXPECT_EQ(report["variants"].size(), 2u);
  EXPECT_NE(ev.out.find("brains-k5 |"), std::string::npos);
}
