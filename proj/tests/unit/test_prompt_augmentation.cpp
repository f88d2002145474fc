// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "changecap/error.hpp"
#include "changecap/prompt_augmentation.hpp"

using namespace changecap;

namespace {

VisualInput pair_input(std::string key = "scene-1") {
  ImageData a{1, 2, 1, std::string("\x01\x02", 2)};
  ImageData b{1, 2, 1, std::string("\xff\x00", 2)};
  return VisualInput::from_images({a, b}, Provenance::file, std::move(key));
}

class SpyClient final : public BaseModelClient {
 public:
  explicit SpyClient(std::string reply) : reply_(std::move(reply)) {}
  std::string describe(std::string_view prompt, const VisualInput &images) const override {
    prompts.emplace_back(prompt);
    image_counts.push_back(images.k());
    return reply_;
  }
  mutable std::vector<std::string> prompts;
  mutable std::vector<std::size_t> image_counts;

 private:
  std::string reply_;
};

class FailingClient final : public BaseModelClient {
 public:
  std::string describe(std::string_view, const VisualInput &) const override {
    throw AugmentationUnavailableError("offline");
  }
};

std::string b64decode(const std::string &in) {
  static const std::string alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  unsigned buf = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    buf = (buf << 6) | static_cast<unsigned>(alphabet.find(c));
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buf >> bits) & 0xff));
    }
  }
  return out;
}

// Local stand-in for a base model endpoint.
class FakeEndpoint {
 public:
  explicit FakeEndpoint(int failures_before_success, std::string reply = R"({"text": "  two roads \n"})")
      : failures_(failures_before_success), reply_(std::move(reply)) {
    server_.Post("/describe", [this](const httplib::Request &req, httplib::Response &res) {
      std::lock_guard lock(mu_);
      bodies_.push_back(req.body);
      if (static_cast<int>(bodies_.size()) <= failures_) {
        res.status = 503;
        return;
      }
      res.set_content(reply_, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/describe"; }
  std::vector<std::string> bodies() {
    std::lock_guard lock(mu_);
    return bodies_;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  int failures_;
  std::string reply_;
  std::mutex mu_;
  std::vector<std::string> bodies_;
  std::thread thread_;
};

}  // namespace

TEST(AssemblePrompt, Template) {
  EXPECT_EQ(assemble_prompt("a road crosses the field", "Describe the change."),
            "Context: a road crosses the field\nInstruction: Describe the change.");
  EXPECT_EQ(assemble_prompt("", "Describe the change."), "Describe the change.");
}

TEST(AssemblePrompt, RejectsBadInstructions) {
  EXPECT_THROW(assemble_prompt("clues", ""), InvalidInstructionError);
  EXPECT_THROW(assemble_prompt("clues", "Context: x\nInstruction: y"), InvalidInstructionError);
}

TEST(MockClient, LookupStripAndDeterminism) {
  const MockClient mock(std::map<std::string, std::string>{{"scene-1", "\n  buildings appear  \t"}});
  EXPECT_EQ(generate_clues(pair_input(), mock), "buildings appear");
  EXPECT_EQ(generate_clues(pair_input(), mock), generate_clues(pair_input(), mock));
  EXPECT_THROW(mock.describe(kGuidePrompt, pair_input("other")), AugmentationUnavailableError);
}

TEST(MockClient, FromFileAndContentKeys) {
  const VisualInput unkeyed = VisualInput::from_images(pair_input().images(), Provenance::file);
  const auto dir = std::filesystem::temp_directory_path() / "changecap_mock_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "mock.json") << nlohmann::json{{unkeyed.lookup_key(), "a lake"}}.dump();
    std::ofstream(dir / "bad.json") << "[1, 2]";
  }
  EXPECT_EQ(generate_clues(unkeyed, MockClient::from_file(dir / "mock.json")), "a lake");
  EXPECT_THROW(MockClient::from_file(dir / "bad.json"), ConfigError);
  EXPECT_THROW(MockClient::from_file(dir / "missing.json"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(AugmentPrompt, GuidePromptSentOnceWithBothImages) {
  const SpyClient spy("  new houses ");
  const PromptBundle b = augment_prompt(pair_input(), "What changed?", spy);
  ASSERT_EQ(spy.prompts.size(), 1u);
  EXPECT_EQ(spy.prompts[0], kGuidePrompt);
  EXPECT_EQ(spy.image_counts[0], 2u);
  EXPECT_EQ(b.guide, kGuidePrompt);
  EXPECT_EQ(b.clues, "new houses");
  EXPECT_EQ(b.task, "What changed?");
  EXPECT_EQ(b.assembled, "Context: new houses\nInstruction: What changed?");
}

TEST(AugmentPrompt, FallsBackToTaskOnFailure) {
  const PromptBundle b = augment_prompt(pair_input(), "What changed?", FailingClient{});
  EXPECT_EQ(b.clues, "");
  EXPECT_EQ(b.assembled, "What changed?");
  const PromptBundle empty = augment_prompt(pair_input(), "What changed?", SpyClient("   "));
  EXPECT_EQ(empty.assembled, "What changed?");
  EXPECT_THROW(augment_prompt(pair_input(), "", SpyClient("x")), InvalidInstructionError);
}

TEST(HttpClient, RequestShapeAndResponse) {
  FakeEndpoint endpoint(0);
  const HttpClient client(endpoint.url(), std::chrono::seconds(5));
  const VisualInput in = pair_input();
  EXPECT_EQ(generate_clues(in, client), "two roads");
  const auto bodies = endpoint.bodies();
  ASSERT_EQ(bodies.size(), 1u);
  const auto body = nlohmann::json::parse(bodies[0]);
  EXPECT_EQ(body.at("prompt"), kGuidePrompt);
  ASSERT_EQ(body.at("images").size(), 2u);
  EXPECT_EQ(b64decode(body["images"][0].get<std::string>()), in.payloads()[0]);
  EXPECT_EQ(b64decode(body["images"][1].get<std::string>()), in.payloads()[1]);
}

TEST(HttpClient, RetriesOnceThenGivesUp) {
  {
    FakeEndpoint endpoint(1);
    EXPECT_EQ(generate_clues(pair_input(), HttpClient(endpoint.url(), std::chrono::seconds(5))), "two roads");
    EXPECT_EQ(endpoint.bodies().size(), 2u);
  }
  {
    FakeEndpoint endpoint(1000);
    const HttpClient client(endpoint.url(), std::chrono::seconds(5));
    EXPECT_THROW(client.describe(kGuidePrompt, pair_input()), AugmentationUnavailableError);
    EXPECT_EQ(endpoint.bodies().size(), 2u);
    EXPECT_EQ(augment_prompt(pair_input(), "Task", client).assembled, "Task");
  }
}

TEST(HttpClient, MalformedReplyIsUnavailable) {
  FakeEndpoint endpoint(0, R"({"answer": "x"})");
  EXPECT_THROW(HttpClient(endpoint.url(), std::chrono::seconds(5)).describe(kGuidePrompt, pair_input()),
               AugmentationUnavailableError);
}

TEST(HttpClient, UrlValidationAndTimeoutEnv) {
  EXPECT_THROW(HttpClient("https://example.com/x"), ConfigError);
  EXPECT_THROW(HttpClient("http://"), ConfigError);
  EXPECT_NO_THROW(HttpClient("http://localhost:9"));

  ::unsetenv("BTCC_PA_TIMEOUT_SECS");
  EXPECT_EQ(HttpClient::default_timeout(), std::chrono::seconds(30));
  ::setenv("BTCC_PA_TIMEOUT_SECS", "2.5", 1);
  EXPECT_EQ(HttpClient::default_timeout(), std::chrono::milliseconds(2500));
  ::setenv("BTCC_PA_TIMEOUT_SECS", "-1", 1);
  EXPECT_EQ(HttpClient::default_timeout(), std::chrono::seconds(30));
  ::unsetenv("BTCC_PA_TIMEOUT_SECS");
}
