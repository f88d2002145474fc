// SPDX-License-Identifier: Apache-2.0
//
// Caption and VQA scoring.
//
// All caption metrics take pre-tokenized text (see tokenize()). Scores are in
// [0, 1] except CIDEr-D, which is in [0, 10].
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace changecap {

using Tokens = std::vector<std::string>;

/// Lowercases ASCII, maps every non-alphanumeric byte to a space and splits
/// on whitespace.
Tokens tokenize(std::string_view text);

struct EvalRecord {
  std::string id;
  Tokens candidate;
  std::vector<Tokens> references;
  std::optional<std::string> qtype;
};

/// Clipped unigram precision times the brevity penalty exp(1 - r/c) when the
/// candidate is shorter than r, the reference length closest to c (ties to
/// the shorter). An empty candidate scores 0.
double bleu1(const Tokens &candidate, std::span<const Tokens> references);

/// LCS F-measure with beta = 1.2, maximised over references.
double rouge_l(const Tokens &candidate, std::span<const Tokens> references, double beta = 1.2);

/// Suffix-stripping stemmer used for METEOR stem matches:
///   1. "sses" -> "ss", "ies" -> "i", trailing "s" dropped unless the word
///      ends in "ss" or is 3 letters or shorter;
///   2. "ing" or "ed" dropped when at least 3 letters remain;
///   3. a final "e" dropped when at least 3 letters remain.
std::string stem(std::string_view word);

/// METEOR without synonym or paraphrase tables. Exact matches are aligned
/// first, then stem matches, each greedily left to right. With m matches,
/// P = m/|c|, R = m/|r|, F = 10PR / (R + 9P), penalty = 0.5 (chunks/m)^3 and
/// score = F (1 - penalty); maximised over references. Not comparable to
/// the full METEOR metric.
double meteor_simplified(const Tokens &candidate, std::span<const Tokens> references);

struct CiderResult {
  std::vector<double> per_sample;
  double mean = 0.0;
};

/// CIDEr-D over the corpus: document frequencies come from the references of
/// this corpus, vectors are raw n-gram counts times log(N) - log(max(1, df)),
/// n = 1..max_n, candidate weights clipped to the reference weights, length
/// penalty exp(-(l_c - l_r)^2 / (2 sigma^2)); averaged over n and references
/// and scaled by 10.
CiderResult cider_d(std::span<const EvalRecord> corpus, int max_n = 4, double sigma = 6.0);

struct VqaResult {
  std::map<std::string, double> per_type;  // percent
  double average = 0.0;                    // unweighted mean over types, percent
};

/// Exact-match accuracy per question type. A record is correct when its
/// candidate equals any reference after tokenisation. Throws ConfigError on an
/// empty record set, a record without a type, or a type outside
/// `allowed_types` when that list is non-empty.
VqaResult vqa_accuracy(std::span<const EvalRecord> records,
                       std::span<const std::string> allowed_types = {});

struct CaptionReport {
  double bleu1 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  double meteor_s = 0.0;
  std::optional<VqaResult> vqa;
  std::vector<std::string> warnings;
};

/// Corpus means of every caption metric; VQA accuracy when all records carry
/// a type.
CaptionReport evaluate_corpus(std::span<const EvalRecord> records);

/// JSON object {"bleu1","rougeL","ciderD","meteorS","perType"?} with every
/// number printed to 4 decimal places.
std::string report_to_json(const CaptionReport &report);

}  // namespace changecap
