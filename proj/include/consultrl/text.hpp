#pragma once

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace consultrl::text {

// Fixed English stop-word list, version 1. Keyword matching, repeat detection
// and profile construction all key on this list; changing it changes patient
// behaviour, so treat it as part of the protocol.
inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",       "about",  "after",   "again",  "all",    "also",   "am",
      "an",      "and",    "any",     "are",    "as",     "at",     "be",
      "been",    "before", "being",   "but",    "by",     "can",    "could",
      "did",     "do",     "does",    "doing",  "down",   "during", "each",
      "else",    "few",    "for",     "from",   "further", "had",   "has",
      "have",    "having", "he",      "her",    "here",   "hers",   "him",
      "his",     "how",    "i",       "if",     "in",     "into",   "is",
      "it",      "its",    "just",    "me",     "more",   "most",   "my",
      "of",      "off",    "on",      "once",   "only",   "or",     "other",
      "our",     "out",    "over",    "own",    "please", "same",   "she",
      "should",  "so",     "some",    "such",   "tell",   "than",   "that",
      "the",     "their",  "them",    "then",   "there",  "these",  "they",
      "this",    "those",  "through", "to",     "too",    "under",  "until",
      "up",      "very",   "was",     "we",     "were",   "what",   "when",
      "where",   "which",  "while",   "who",    "whom",   "why",    "will",
      "with",    "would",  "you",     "your",   "yours",
  };
  return words;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Lowercase, drop ASCII punctuation, split on whitespace. Non-ASCII bytes are
// kept verbatim so UTF-8 words survive intact.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : s) {
    if (c < 0x80 && (std::isalnum(c) == 0) && c != ' ' && c != '\t' && c != '\n' && c != '\r') {
      continue;  // punctuation
    }
    if (std::isspace(c) != 0) {
      if (!cur.empty()) tokens.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

// Tokens minus stop words, as a set.
inline std::set<std::string> content_words(std::string_view s) {
  std::set<std::string> out;
  for (auto& t : tokenize(s)) {
    if (stopwords().count(t) == 0) out.insert(std::move(t));
  }
  return out;
}

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& w : a) inter += b.count(w);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

// Case-insensitive substring search; npos when absent.
inline std::size_t find_ci(std::string_view hay, std::string_view needle, std::size_t from = 0) {
  if (needle.empty()) return from <= hay.size() ? from : std::string_view::npos;
  if (hay.size() < needle.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
    if (starts_with_ci(hay.substr(i), needle)) return i;
  }
  return std::string_view::npos;
}

inline std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.emplace_back(s.substr(start));
      break;
    }
    lines.emplace_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

}  // namespace consultrl::text
