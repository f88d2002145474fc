// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace changecap {

/// Closed word-level vocabulary. Ids are dense in [0, size()); the first four
/// are reserved for padding, sequence start, sequence end and unknown words.
/// Text is split with the metric tokenizer (lowercase, punctuation to space).
class Vocab {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kBos = 1;
  static constexpr std::int64_t kEos = 2;
  static constexpr std::int64_t kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();

  /// Reserved tokens followed by every distinct word of `texts` in sorted order.
  static Vocab build(std::span<const std::string> texts);
  /// Restores a vocabulary from its id-ordered token list.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string> &tokens() const noexcept { return tokens_; }

  std::optional<std::int64_t> find(std::string_view word) const;
  std::int64_t id(std::string_view word) const;  // kUnk when absent
  const std::string &token(std::int64_t id) const;

  std::vector<std::int64_t> encode(std::string_view text) const;
  /// Words joined by single spaces; reserved ids are skipped.
  std::string decode(std::span<const std::int64_t> ids) const;

 private:
  explicit Vocab(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
};

}  // namespace changecap
