// SPDX-License-Identifier: Apache-2.0
//
// Two-pass prompting: a frozen base model first describes the image(s), then
// the description (clues) and the task instruction are merged by a fixed
// template.
#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "changecap/dataset.hpp"

namespace changecap {

inline constexpr std::string_view kGuidePrompt =
    "Please describe the remote sensing image(s) in detail";
inline constexpr std::string_view kContextPrefix = "Context: ";
inline constexpr std::string_view kInstructionPrefix = "\nInstruction: ";

struct PromptBundle {
  std::string guide;
  std::string clues;
  std::string task;
  std::string assembled;
};

class BaseModelClient {
 public:
  virtual ~BaseModelClient() = default;
  /// Raw response text. Throws AugmentationUnavailableError on failure.
  virtual std::string describe(std::string_view prompt, const VisualInput &images) const = 0;
};

/// Canned descriptions keyed by VisualInput::lookup_key().
class MockClient final : public BaseModelClient {
 public:
  explicit MockClient(std::map<std::string, std::string> responses);
  /// JSON object mapping key -> text. Throws IoError / ConfigError.
  static MockClient from_file(const std::filesystem::path &path);

  /// Throws AugmentationUnavailableError for an unknown key.
  std::string describe(std::string_view prompt, const VisualInput &images) const override;

 private:
  std::map<std::string, std::string> responses_;
};

/// POSTs {"prompt", "images": [base64...]} to `url` and reads {"text"}.
/// One retry after the first failure.
class HttpClient final : public BaseModelClient {
 public:
  /// `url` is http://host[:port][/path]. Throws ConfigError otherwise.
  explicit HttpClient(std::string url, std::chrono::milliseconds timeout = default_timeout());

  std::string describe(std::string_view prompt, const VisualInput &images) const override;

  /// 30 s, or BTCC_PA_TIMEOUT_SECS when set to a positive number.
  static std::chrono::milliseconds default_timeout();

 private:
  std::string origin_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

/// Sends kGuidePrompt with every image in a single call and returns the
/// response with surrounding whitespace removed.
std::string generate_clues(const VisualInput &images, const BaseModelClient &client);

/// "Context: {clues}\nInstruction: {task}", or `task` alone when `clues` is
/// empty. Throws InvalidInstructionError for an empty task or a task that is
/// already an assembled prompt.
std::string assemble_prompt(std::string_view clues, std::string_view task);

/// Full pipeline. Any client failure degrades to assembled == task.
PromptBundle augment_prompt(const VisualInput &images, std::string_view task,
                            const BaseModelClient &client);

}  // namespace changecap
