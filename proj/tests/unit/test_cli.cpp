// SPDX-License-Identifier: Apache-2.0
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int status = -1;
  std::string out;
  std::string err;
};

CliRun run(const std::string &args) {
  const fs::path err_file = fs::temp_directory_path() / "changecap_cli_stderr.txt";
  const std::string cmd = std::string(CHANGECAP_CLI) + " " + args + " 2>" + err_file.string();
  CliRun r;
  FILE *pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(err_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::vector<nlohmann::json> jsonl(const std::string &text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "changecap_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "train.json") << R"({
      "seed": 0,
      "model": {"blocks": 1},
      "data": {"synthetic": {"count": 8}},
      "pretrain": {"epochs": 2},
      "stage1": {"epochs": 1},
      "stage2": {"epochs": 1}
    })";
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, SynthDataWritesManifest) {
  const CliRun r = run("synth-data --n 4 --lv 16 --dv 8 --seed 2 --out " + (dir_ / "synth").string());
  ASSERT_EQ(r.status, 0) << r.err;
  const fs::path manifest = dir_ / "synth" / "manifest.jsonl";
  EXPECT_EQ(r.out, manifest.string() + "\n");
  std::ifstream in(manifest);
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) lines += !l.empty();
  EXPECT_EQ(lines, 4u);
}

TEST_F(Cli, GradcheckPasses) {
  const CliRun r = run("gradcheck --module all");
  EXPECT_EQ(r.status, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("change-extraction"), std::string::npos);
  EXPECT_NE(r.out.find("full-chain"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, TrainCaptionEvalPipeline) {
  const std::string ckpt = (dir_ / "ckpt").string();
  const CliRun train = run("train --config " + (dir_ / "train.json").string() + " --out " + ckpt);
  ASSERT_EQ(train.status, 0) << train.err;
  const auto steps = jsonl(train.out);
  ASSERT_EQ(steps.size(), 4u);  // 2 pretrain + 1 + 1, batch 8
  EXPECT_EQ(steps.front().at("stage"), "pretrain");
  EXPECT_EQ(steps.back().at("stage"), "stage2");
  EXPECT_TRUE(fs::exists(fs::path(ckpt) / "index.json"));
  EXPECT_TRUE(fs::exists(fs::path(ckpt) / "metrics.jsonl"));

  // Training is reproducible byte for byte.
  const CliRun again = run("train --config " + (dir_ / "train.json").string() + " --out " + ckpt + "2");
  EXPECT_EQ(again.out, train.out);

  const CliRun synth = run("synth-data --n 3 --out " + (dir_ / "eval").string());
  ASSERT_EQ(synth.status, 0) << synth.err;
  const std::string manifest = (dir_ / "eval" / "manifest.jsonl").string();
  const CliRun cap = run("caption --ckpt " + ckpt + " --manifest " + manifest + " --max-new 6");
  ASSERT_EQ(cap.status, 0) << cap.err;
  const auto lines = jsonl(cap.out);
  ASSERT_EQ(lines.size(), 3u);
  for (const auto &l : lines) {
    EXPECT_TRUE(l.contains("id"));
    EXPECT_TRUE(l.contains("caption"));
    EXPECT_EQ(l.at("prompt"), "describe the changes between the two images");
  }

  std::ofstream(dir_ / "mock.json") << nlohmann::json{{"s00000", "a field"}}.dump();
  const CliRun aug = run("caption --ckpt " + ckpt + " --manifest " + manifest + " --max-new 2 --pa-mock " +
                      (dir_ / "mock.json").string());
  ASSERT_EQ(aug.status, 0) << aug.err;
  const auto aug_lines = jsonl(aug.out);
  EXPECT_EQ(aug_lines[0].at("prompt"),
            "Context: a field\nInstruction: describe the changes between the two images");
  EXPECT_EQ(aug_lines[1].at("prompt"), "describe the changes between the two images");
}

TEST_F(Cli, EvalIdenticalCaptionsScorePerfectly) {
  std::ofstream(dir_ / "refs.jsonl") << R"({"id": "a", "references": ["a road appears in the top left"]})" "\n"
                                     << R"({"id": "b", "caption": "no change is observed"})" "\n";
  std::ofstream(dir_ / "pred.jsonl") << R"({"id": "a", "caption": "A road appears in the top left."})" "\n"
                                     << R"({"id": "b", "candidate": "no change is observed"})" "\n";
  const CliRun r = run("eval-captions --pred " + (dir_ / "pred.jsonl").string() + " --refs " +
                    (dir_ / "refs.jsonl").string());
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("\"bleu1\": 1.0000"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\"rougeL\": 1.0000"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\"ciderD\": 10.0000"), std::string::npos) << r.out;
}

TEST_F(Cli, AugmentPrintsAssembledPrompt) {
  std::ofstream(dir_ / "clues.json") << R"({"img-7": "  a new bridge "})";
  const std::string mock = " --pa-mock " + (dir_ / "clues.json").string();
  CliRun r = run("augment --pt 'What changed?' --image-id img-7" + mock);
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out, "Context: a new bridge\nInstruction: What changed?\n");
  r = run("augment --pt 'What changed?' --image-id unknown" + mock);
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(r.out, "What changed?\n");
}

TEST_F(Cli, ExitCodes) {
  CliRun r = run("augment --pt '' --image-id x --pa-mock " + (dir_ / "clues.json").string());
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.err.rfind("error usage:", 0), 0u) << r.err;
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("no-such-command").status, 2);
  EXPECT_EQ(run("caption --manifest x").status, 2);

  r = run("caption --ckpt " + (dir_ / "missing").string() + " --manifest x");
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error io:", 0), 0u) << r.err;
  r = run("eval-captions --pred " + (dir_ / "none.jsonl").string() + " --refs " + (dir_ / "none.jsonl").string());
  EXPECT_EQ(r.status, 1);
  std::ofstream(dir_ / "broken.json") << "{";
  r = run("train --config " + (dir_ / "broken.json").string() + " --out " + (dir_ / "x").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error config:", 0), 0u) << r.err;
}
