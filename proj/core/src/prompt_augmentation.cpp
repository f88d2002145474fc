// SPDX-License-Identifier: Apache-2.0
#include "changecap/prompt_augmentation.hpp"

#include <cstdlib>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "changecap/btf.hpp"
#include "changecap/error.hpp"

namespace changecap {

namespace {

std::string strip(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

MockClient::MockClient(std::map<std::string, std::string> responses)
    : responses_(std::move(responses)) {}

MockClient MockClient::from_file(const std::filesystem::path &path) {
  const std::string text = read_file_bytes(path);
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ConfigError("mock file must hold a JSON object: " + path.string());
    return MockClient(j.get<std::map<std::string, std::string>>());
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("mock file " + path.string() + ": " + e.what());
  }
}

std::string MockClient::describe(std::string_view, const VisualInput &images) const {
  const std::string key = images.lookup_key();
  const auto it = responses_.find(key);
  if (it == responses_.end()) throw AugmentationUnavailableError("no canned description for '" + key + "'");
  return it->second;
}

HttpClient::HttpClient(std::string url, std::chrono::milliseconds timeout) : timeout_(timeout) {
  constexpr std::string_view scheme = "http://";
  if (url.rfind(scheme, 0) != 0) throw ConfigError("endpoint must be an http:// URL: " + url);
  const auto slash = url.find('/', scheme.size());
  origin_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
  if (origin_.size() == scheme.size()) throw ConfigError("endpoint has no host: " + url);
}

std::chrono::milliseconds HttpClient::default_timeout() {
  if (const char *env = std::getenv("BTCC_PA_TIMEOUT_SECS")) {
    char *end = nullptr;
    const double secs = std::strtod(env, &end);
    if (end != env && *end == '\0' && secs > 0.0) {
      return std::chrono::milliseconds(static_cast<long long>(secs * 1000.0));
    }
  }
  return std::chrono::seconds(30);
}

std::string HttpClient::describe(std::string_view prompt, const VisualInput &images) const {
  nlohmann::json body{{"prompt", prompt}, {"images", nlohmann::json::array()}};
  for (const std::string &payload : images.payloads()) {
    body["images"].push_back(httplib::detail::base64_encode(payload));
  }
  const std::string request = body.dump();

  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);

  std::string failure;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto res = client.Post(path_, request, "application/json");
    if (!res) {
      failure = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      failure = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      const auto reply = nlohmann::json::parse(res->body);
      return reply.at("text").get<std::string>();
    } catch (const nlohmann::json::exception &e) {
      failure = std::string("malformed response: ") + e.what();
    }
  }
  throw AugmentationUnavailableError("base model request to " + origin_ + path_ + " failed: " + failure);
}

std::string generate_clues(const VisualInput &images, const BaseModelClient &client) {
  if (images.k() < 1 || images.k() > 2) throw ConfigError("clue generation needs 1 or 2 images");
  return strip(client.describe(kGuidePrompt, images));
}

std::string assemble_prompt(std::string_view clues, std::string_view task) {
  if (task.empty()) throw InvalidInstructionError("task instruction is empty");
  if (task.rfind(kContextPrefix, 0) == 0) {
    throw InvalidInstructionError("task instruction is already an assembled prompt");
  }
  if (clues.empty()) return std::string(task);
  std::string out(kContextPrefix);
  out += clues;
  out += kInstructionPrefix;
  out += task;
  return out;
}

PromptBundle augment_prompt(const VisualInput &images, std::string_view task,
                            const BaseModelClient &client) {
  PromptBundle bundle;
  bundle.guide = std::string(kGuidePrompt);
  bundle.task = std::string(task);
  bundle.assembled = assemble_prompt({}, task);
  try {
    bundle.clues = generate_clues(images, client);
  } catch (const std::exception &) {
    bundle.clues.clear();
  }
  bundle.assembled = assemble_prompt(bundle.clues, task);
  return bundle;
}

}  // namespace changecap
