#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "consultrl/case.hpp"
#include "consultrl/dialogue.hpp"
#include "consultrl/text.hpp"

namespace consultrl {

inline constexpr std::string_view kRefusalSentence = "Sorry, I cannot answer this question.";
inline constexpr std::string_view kRepeatSentence = "Sorry, you've already asked this question.";

enum class ReplyKind { Normal, Refusal, Repeat, Empty };

inline std::string_view reply_kind_name(ReplyKind k) {
  switch (k) {
    case ReplyKind::Normal: return "normal";
    case ReplyKind::Refusal: return "refusal";
    case ReplyKind::Repeat: return "repeat";
    case ReplyKind::Empty: return "empty";
  }
  return "empty";
}

struct PatientReply {
  ReplyKind kind = ReplyKind::Empty;
  std::string text;

  static PatientReply normal(std::string text) { return {ReplyKind::Normal, std::move(text)}; }
  static PatientReply refusal() { return {ReplyKind::Refusal, std::string(kRefusalSentence)}; }
  static PatientReply repeat() { return {ReplyKind::Repeat, std::string(kRepeatSentence)}; }
  static PatientReply empty() { return {}; }
};

// One hidden symptom statement the patient can release.
struct Fact {
  std::set<std::string> topic_keys;  // normalized keywords the fact answers to
  std::string text;                  // one-sentence reply, released verbatim
  bool revealed = false;
};

// Hidden fact base built from a gold record. Gold labels are kept only for
// scoring; respond() never emits them.
struct PatientProfile {
  std::string case_id;
  std::string self_report;
  std::vector<Fact> facts;
  std::string gold_diagnosis;
  std::string gold_recommendation;
};

struct MatchConfig {
  double match_jaccard = 0.3;   // minimum question/fact keyword similarity
  int min_overlap = 1;          // minimum shared informative keywords
  double repeat_jaccard = 0.8;  // question-vs-history similarity for a repeat
};

namespace detail {

inline bool contains_ci(std::string_view hay, std::string_view needle) {
  return !needle.empty() && text::find_ci(hay, needle) != std::string_view::npos;
}

inline std::string ensure_sentence(std::string s) {
  if (s.empty()) return s;
  const char last = s.back();
  if (last != '.' && last != '!' && last != '?') s += '.';
  return s;
}

// Clause split for self-reports: sentence enders and commas both break.
inline std::vector<std::string> split_clauses(std::string_view s) {
  std::vector<std::string> clauses;
  std::string cur;
  for (char c : s) {
    if (c == '.' || c == ';' || c == '!' || c == '?' || c == ',') {
      const std::string t = text::trim(cur);
      if (!t.empty()) clauses.push_back(t);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  const std::string t = text::trim(cur);
  if (!t.empty()) clauses.push_back(t);
  return clauses;
}

}  // namespace detail

// Builds the hidden profile: one fact per gold patient utterance, keyed by the
// content words of the matching gold question, plus one fact per self-report
// clause keyed by its own content words. Facts whose text would leak a gold
// label are dropped. Deterministic for a fixed case.
inline PatientProfile build_profile(const ConsultationCase& c) {
  if (text::trim(c.self_report).empty()) {
    throw std::invalid_argument("case " + c.case_id + " has no self-report");
  }
  PatientProfile p;
  p.case_id = c.case_id;
  p.self_report = c.self_report;
  p.gold_diagnosis = c.gold_diagnosis;
  p.gold_recommendation = c.gold_recommendation;

  auto leaks_label = [&](const std::string& s) {
    return detail::contains_ci(s, c.gold_diagnosis) ||
           detail::contains_ci(s, c.gold_recommendation);
  };
  auto add_fact = [&](std::set<std::string> keys, std::string sentence) {
    if (keys.empty() || sentence.empty() || leaks_label(sentence)) return;
    p.facts.push_back(Fact{std::move(keys), std::move(sentence), false});
  };

  for (const auto& turn : c.gold_turns) {
    add_fact(text::content_words(turn.question), detail::ensure_sentence(text::trim(turn.answer)));
  }
  for (const auto& clause : detail::split_clauses(c.self_report)) {
    add_fact(text::content_words(clause), detail::ensure_sentence(clause));
  }
  return p;
}

// True iff the question is near-identical (by content-word Jaccard) to any
// earlier doctor message.
inline bool detect_repeat(std::string_view question, const std::vector<std::string>& history,
                          double repeat_threshold = MatchConfig{}.repeat_jaccard) {
  const std::set<std::string> q = text::content_words(question);
  for (const auto& h : history) {
    if (text::jaccard(q, text::content_words(h)) >= repeat_threshold) return true;
  }
  return false;
}

// Scripted patient reply: repeat check first, then best keyword-overlap fact
// (ties to the lowest index), else the fixed refusal sentence. A Normal reply
// releases the fact verbatim and marks it revealed.
inline PatientReply respond(PatientProfile& profile, std::string_view question,
                            const std::vector<std::string>& history,
                            const MatchConfig& cfg = {}) {
  if (detect_repeat(question, history, cfg.repeat_jaccard)) return PatientReply::repeat();

  const std::set<std::string> q = text::content_words(question);
  double best_score = -1.0;
  std::size_t best = 0;
  bool found = false;
  for (std::size_t i = 0; i < profile.facts.size(); ++i) {
    const auto& keys = profile.facts[i].topic_keys;
    std::size_t overlap = 0;
    for (const auto& w : q) overlap += keys.count(w);
    if (overlap < static_cast<std::size_t>(cfg.min_overlap)) continue;
    const double score = text::jaccard(q, keys);
    if (score >= cfg.match_jaccard && score > best_score) {
      best_score = score;
      best = i;
      found = true;
    }
  }
  if (!found) return PatientReply::refusal();
  profile.facts[best].revealed = true;
  return PatientReply::normal(profile.facts[best].text);
}

// Routes a parsed doctor action to the patient. FormatViolation always gets
// the refusal sentence; Diagnose gets the empty reply.
inline PatientReply respond_to_action(PatientProfile& profile, const DoctorAction& action,
                                      const std::vector<std::string>& history,
                                      const MatchConfig& cfg = {}) {
  switch (action.kind) {
    case ActionKind::Diagnose: return PatientReply::empty();
    case ActionKind::FormatViolation: return PatientReply::refusal();
    case ActionKind::Query: return respond(profile, action.question, history, cfg);
  }
  return PatientReply::refusal();
}

// Canonical question text for a fact's topic; the surrounding words are all
// stop words, so its content words are exactly the topic keys.
inline std::string render_topic_question(const Fact& fact) {
  std::string keys;
  for (const auto& k : fact.topic_keys) {
    if (!keys.empty()) keys += ' ';
    keys += k;
  }
  return "Can you tell me more about " + keys + "?";
}

}  // namespace consultrl
