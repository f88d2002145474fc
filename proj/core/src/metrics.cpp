// SPDX-License-Identifier: Apache-2.0
#include "changecap/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "changecap/error.hpp"

namespace changecap {

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current += static_cast<char>(std::tolower(c));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

double bleu1(const Tokens &candidate, std::span<const Tokens> references) {
  if (candidate.empty() || references.empty()) return 0.0;
  std::map<std::string, std::size_t> cand_counts;
  for (const auto &w : candidate) ++cand_counts[w];
  std::map<std::string, std::size_t> max_ref_counts;
  for (const Tokens &ref : references) {
    std::map<std::string, std::size_t> counts;
    for (const auto &w : ref) ++counts[w];
    for (const auto &[w, n] : counts) max_ref_counts[w] = std::max(max_ref_counts[w], n);
  }
  std::size_t clipped = 0;
  for (const auto &[w, n] : cand_counts) {
    auto it = max_ref_counts.find(w);
    if (it != max_ref_counts.end()) clipped += std::min(n, it->second);
  }
  const double c = static_cast<double>(candidate.size());
  const double precision = static_cast<double>(clipped) / c;

  std::size_t closest = references.front().size();
  for (const Tokens &ref : references) {
    const auto gap = [&](std::size_t len) {
      return std::abs(static_cast<double>(len) - c);
    };
    if (gap(ref.size()) < gap(closest) || (gap(ref.size()) == gap(closest) && ref.size() < closest)) {
      closest = ref.size();
    }
  }
  const double r = static_cast<double>(closest);
  const double brevity = c < r ? std::exp(1.0 - r / c) : 1.0;
  return precision * brevity;
}

namespace {

std::size_t lcs_length(const Tokens &a, const Tokens &b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

double rouge_l(const Tokens &candidate, std::span<const Tokens> references, double beta) {
  if (candidate.empty()) return 0.0;
  double best = 0.0;
  for (const Tokens &ref : references) {
    if (ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(candidate, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(ref.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
  }
  return best;
}

std::string stem(std::string_view word) {
  std::string w(word);
  if (ends_with(w, "sses")) {
    w.erase(w.size() - 2);
  } else if (ends_with(w, "ies")) {
    w.erase(w.size() - 2);
  } else if (ends_with(w, "s") && !ends_with(w, "ss") && w.size() > 3) {
    w.pop_back();
  }
  if (ends_with(w, "ing") && w.size() >= 6) {
    w.erase(w.size() - 3);
  } else if (ends_with(w, "ed") && w.size() >= 5) {
    w.erase(w.size() - 2);
  }
  if (ends_with(w, "e") && w.size() >= 4) w.pop_back();
  return w;
}

namespace {

double meteor_single(const Tokens &cand, const Tokens &ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  std::vector<std::ptrdiff_t> match(cand.size(), -1);  // ref index per candidate token
  std::vector<bool> used(ref.size(), false);
  auto align = [&](auto &&same) {
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (match[i] >= 0) continue;
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && same(cand[i], ref[j])) {
          match[i] = static_cast<std::ptrdiff_t>(j);
          used[j] = true;
          break;
        }
      }
    }
  };
  align([](const std::string &a, const std::string &b) { return a == b; });
  align([](const std::string &a, const std::string &b) { return stem(a) == stem(b); });

  std::size_t matches = 0;
  std::size_t chunks = 0;
  std::ptrdiff_t prev_cand = -2;
  std::ptrdiff_t prev_ref = -2;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (match[i] < 0) continue;
    ++matches;
    const auto ci = static_cast<std::ptrdiff_t>(i);
    if (!(ci == prev_cand + 1 && match[i] == prev_ref + 1)) ++chunks;
    prev_cand = ci;
    prev_ref = match[i];
  }
  if (matches == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

using NgramCounts = std::map<std::vector<std::string>, double>;

NgramCounts count_ngrams(const Tokens &tokens, int n) {
  NgramCounts counts;
  const auto len = static_cast<std::size_t>(n);
  if (tokens.size() < len) return counts;
  for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
    counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                    tokens.begin() + static_cast<std::ptrdiff_t>(i + len))] += 1.0;
  }
  return counts;
}

}  // namespace

double meteor_simplified(const Tokens &candidate, std::span<const Tokens> references) {
  double best = 0.0;
  for (const Tokens &ref : references) best = std::max(best, meteor_single(candidate, ref));
  return best;
}

CiderResult cider_d(std::span<const EvalRecord> corpus, int max_n, double sigma) {
  CiderResult result;
  if (corpus.empty()) return result;
  const std::size_t orders = static_cast<std::size_t>(max_n);

  std::map<std::vector<std::string>, double> doc_freq;
  for (const EvalRecord &rec : corpus) {
    std::set<std::vector<std::string>> seen;
    for (const Tokens &ref : rec.references) {
      for (int n = 1; n <= max_n; ++n) {
        for (const auto &[gram, count] : count_ngrams(ref, n)) seen.insert(gram);
      }
    }
    for (const auto &gram : seen) doc_freq[gram] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(corpus.size()));

  struct Vectorized {
    std::vector<NgramCounts> weights;
    std::vector<double> norms;
    double length = 0.0;
  };
  auto vectorize = [&](const Tokens &tokens) {
    Vectorized v;
    v.weights.resize(orders);
    v.norms.assign(orders, 0.0);
    v.length = static_cast<double>(tokens.size());
    for (std::size_t k = 0; k < orders; ++k) {
      for (const auto &[gram, tf] : count_ngrams(tokens, static_cast<int>(k + 1))) {
        auto it = doc_freq.find(gram);
        const double df = it == doc_freq.end() ? 0.0 : it->second;
        const double w = tf * (log_n - std::log(std::max(1.0, df)));
        v.weights[k][gram] = w;
        v.norms[k] += w * w;
      }
      v.norms[k] = std::sqrt(v.norms[k]);
    }
    return v;
  };

  double total = 0.0;
  for (const EvalRecord &rec : corpus) {
    const Vectorized hyp = vectorize(rec.candidate);
    std::vector<double> per_order(orders, 0.0);
    for (const Tokens &ref_tokens : rec.references) {
      const Vectorized ref = vectorize(ref_tokens);
      const double delta = hyp.length - ref.length;
      const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      for (std::size_t k = 0; k < orders; ++k) {
        double dot = 0.0;
        for (const auto &[gram, w] : hyp.weights[k]) {
          auto it = ref.weights[k].find(gram);
          if (it != ref.weights[k].end()) dot += std::min(w, it->second) * it->second;
        }
        if (hyp.norms[k] != 0.0 && ref.norms[k] != 0.0) dot /= hyp.norms[k] * ref.norms[k];
        per_order[k] += dot * penalty;
      }
    }
    double score = 0.0;
    for (double s : per_order) score += s;
    score /= static_cast<double>(orders);
    if (!rec.references.empty()) score /= static_cast<double>(rec.references.size());
    score *= 10.0;
    result.per_sample.push_back(score);
    total += score;
  }
  result.mean = total / static_cast<double>(corpus.size());
  return result;
}

VqaResult vqa_accuracy(std::span<const EvalRecord> records,
                       std::span<const std::string> allowed_types) {
  if (records.empty()) throw ConfigError("vqa_accuracy: empty record set");
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // correct, total
  for (const EvalRecord &rec : records) {
    if (!rec.qtype) throw ConfigError("vqa_accuracy: record '" + rec.id + "' has no question type");
    if (!allowed_types.empty() &&
        std::find(allowed_types.begin(), allowed_types.end(), *rec.qtype) == allowed_types.end()) {
      throw ConfigError("vqa_accuracy: unknown question type '" + *rec.qtype + "'");
    }
    const bool correct = std::any_of(rec.references.begin(), rec.references.end(),
                                     [&](const Tokens &ref) { return ref == rec.candidate; });
    auto &[ok, n] = tally[*rec.qtype];
    ok += correct ? 1 : 0;
    ++n;
  }
  VqaResult result;
  double sum = 0.0;
  for (const auto &[type, counts] : tally) {
    const double acc = 100.0 * static_cast<double>(counts.first) / static_cast<double>(counts.second);
    result.per_type[type] = acc;
    sum += acc;
  }
  result.average = sum / static_cast<double>(tally.size());
  return result;
}

CaptionReport evaluate_corpus(std::span<const EvalRecord> records) {
  CaptionReport report;
  if (records.empty()) {
    report.warnings.push_back("empty corpus");
    return report;
  }
  for (const EvalRecord &rec : records) {
    if (rec.candidate.empty()) report.warnings.push_back("record '" + rec.id + "': empty candidate");
    report.bleu1 += bleu1(rec.candidate, rec.references);
    report.rouge_l += rouge_l(rec.candidate, rec.references);
    report.meteor_s += meteor_simplified(rec.candidate, rec.references);
  }
  const double n = static_cast<double>(records.size());
  report.bleu1 /= n;
  report.rouge_l /= n;
  report.meteor_s /= n;
  report.cider_d = cider_d(records).mean;
  const bool typed = std::all_of(records.begin(), records.end(),
                                 [](const EvalRecord &r) { return r.qtype.has_value(); });
  if (typed) report.vqa = vqa_accuracy(records);
  return report;
}

namespace {
std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string json_string(const std::string &s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out + "\"";
}
}  // namespace

std::string report_to_json(const CaptionReport &report) {
  std::string out = "{";
  out += "\"bleu1\": " + fixed4(report.bleu1);
  out += ", \"rougeL\": " + fixed4(report.rouge_l);
  out += ", \"ciderD\": " + fixed4(report.cider_d);
  out += ", \"meteorS\": " + fixed4(report.meteor_s);
  out += ", \"meteorNote\": " +
         json_string("METEOR-simplified: exact and stem matches only, no synonym tables; "
                     "not comparable to full METEOR scores");
  if (report.vqa) {
    out += ", \"perType\": {";
    bool first = true;
    for (const auto &[type, acc] : report.vqa->per_type) {
      if (!first) out += ", ";
      first = false;
      out += json_string(type) + ": " + fixed4(acc);
    }
    out += "}, \"vqaAverage\": " + fixed4(report.vqa->average);
  }
  out += "}";
  return out;
}

}  // namespace changecap
