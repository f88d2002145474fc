// SPDX-License-Identifier: Apache-2.0
#include "changecap/vocab.hpp"

#include <algorithm>
#include <set>

#include "changecap/error.hpp"
#include "changecap/metrics.hpp"

namespace changecap {

namespace {
const std::vector<std::string> kReservedTokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocab::Vocab() : Vocab(kReservedTokens) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<std::int64_t>(i)).second) {
      throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::build(std::span<const std::string> texts) {
  std::set<std::string> words;
  for (const std::string &text : texts) {
    for (std::string &w : tokenize(text)) words.insert(std::move(w));
  }
  std::vector<std::string> tokens = kReservedTokens;
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocab(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved ||
      !std::equal(kReservedTokens.begin(), kReservedTokens.end(), tokens.begin())) {
    throw ConfigError("vocabulary must start with the reserved tokens <pad> <bos> <eos> <unk>");
  }
  return Vocab(std::move(tokens));
}

std::optional<std::int64_t> Vocab::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::int64_t Vocab::id(std::string_view word) const { return find(word).value_or(kUnk); }

const std::string &Vocab::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InvalidTargetError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int64_t> Vocab::encode(std::string_view text) const {
  std::vector<std::int64_t> ids;
  for (const std::string &w : tokenize(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(std::span<const std::int64_t> ids) const {
  std::string out;
  for (std::int64_t id : ids) {
    if (id >= 0 && static_cast<std::size_t>(id) < kReserved) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

}  // namespace changecap
