#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "consultrl/case.hpp"
#include "consultrl/prompts.hpp"
#include "consultrl/rng.hpp"
#include "consultrl/text.hpp"

namespace consultrl {

enum class ActionKind { Query, Diagnose, FormatViolation };

inline std::string_view action_kind_name(ActionKind k) {
  switch (k) {
    case ActionKind::Query: return "query";
    case ActionKind::Diagnose: return "diagnose";
    case ActionKind::FormatViolation: return "violation";
  }
  return "violation";
}

// A parsed doctor message. Use the factories so the per-kind field discipline
// holds: Query carries only a question, Diagnose only diagnosis/recommendation.
struct DoctorAction {
  ActionKind kind = ActionKind::FormatViolation;
  std::string think;
  std::string question;
  std::string diagnosis;
  std::string recommendation;
  std::string raw;

  static DoctorAction make_query(std::string question, std::string think = {},
                                 std::string raw = {}) {
    if (question.empty()) throw std::invalid_argument("Query requires a non-empty question");
    DoctorAction a;
    a.kind = ActionKind::Query;
    a.question = std::move(question);
    a.think = std::move(think);
    a.raw = raw.empty() ? "Question: " + a.question : std::move(raw);
    return a;
  }

  static DoctorAction make_diagnose(std::string diagnosis, std::string recommendation,
                                    std::string think = {}, std::string raw = {}) {
    if (diagnosis.empty() || recommendation.empty()) {
      throw std::invalid_argument("Diagnose requires diagnosis and recommendation");
    }
    DoctorAction a;
    a.kind = ActionKind::Diagnose;
    a.diagnosis = std::move(diagnosis);
    a.recommendation = std::move(recommendation);
    a.think = std::move(think);
    a.raw = raw.empty() ? "Diagnosis: " + a.diagnosis + "\nRecommendation: " + a.recommendation
                        : std::move(raw);
    return a;
  }

  static DoctorAction make_violation(std::string raw, std::string think = {}) {
    DoctorAction a;
    a.kind = ActionKind::FormatViolation;
    a.raw = std::move(raw);
    a.think = std::move(think);
    return a;
  }

  // What the patient (and the transcript) sees.
  std::string display_text() const {
    switch (kind) {
      case ActionKind::Query: return question;
      case ActionKind::Diagnose: return "Diagnosis: " + diagnosis + "\nRecommendation: " + recommendation;
      case ActionKind::FormatViolation: return raw;
    }
    return raw;
  }

  // Canonical answer-block rendering; parses back to an equal action.
  std::string to_message() const {
    switch (kind) {
      case ActionKind::Query: return "Question: " + question;
      case ActionKind::Diagnose: return "Diagnosis: " + diagnosis + "\nRecommendation: " + recommendation;
      case ActionKind::FormatViolation: return raw;
    }
    return raw;
  }
};

namespace detail {

// Content of the first <tag>...</tag> pair (case-insensitive); nullopt when
// the pair is absent or unterminated.
inline std::optional<std::pair<std::size_t, std::size_t>> tag_span(std::string_view s,
                                                                   std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  const std::size_t o = text::find_ci(s, open);
  if (o == std::string_view::npos) return std::nullopt;
  const std::size_t c = text::find_ci(s, close, o + open.size());
  if (c == std::string_view::npos) return std::nullopt;
  return std::make_pair(o, c + close.size());
}

inline std::string tag_content(std::string_view s, std::pair<std::size_t, std::size_t> span,
                               std::string_view tag) {
  const std::size_t open_len = tag.size() + 2;
  const std::size_t close_len = tag.size() + 3;
  return std::string(s.substr(span.first + open_len, span.second - span.first - open_len - close_len));
}

struct FieldScan {
  std::string question;
  std::string diagnosis;
  std::string recommendation;
  bool question_anchored = false;
  bool diagnosis_anchored = false;
};

// Line-anchored field extraction: a field starts at a line whose first token
// is its prefix; following lines without a prefix continue the current field.
// An inline "Recommendation:" on the diagnosis line splits the two fields.
inline FieldScan scan_fields(std::string_view block) {
  FieldScan out;
  std::string* current = nullptr;
  auto append = [](std::string& dst, std::string_view piece) {
    const std::string p = text::trim(piece);
    if (p.empty()) return;
    if (!dst.empty()) dst += ' ';
    dst += p;
  };
  for (const auto& line : text::split_lines(block)) {
    const std::string t = text::trim(line);
    if (t.empty()) continue;
    if (text::starts_with_ci(t, "question:")) {
      if (!out.question_anchored) {
        out.question_anchored = true;
        append(out.question, std::string_view(t).substr(9));
        current = &out.question;
      } else {
        current = nullptr;
      }
    } else if (text::starts_with_ci(t, "diagnosis:")) {
      if (!out.diagnosis_anchored) {
        out.diagnosis_anchored = true;
        std::string_view rest = std::string_view(t).substr(10);
        const std::size_t inline_rec = text::find_ci(rest, "recommendation:");
        if (inline_rec != std::string_view::npos) {
          append(out.diagnosis, rest.substr(0, inline_rec));
          if (out.recommendation.empty()) {
            append(out.recommendation, rest.substr(inline_rec + 15));
          }
          current = &out.recommendation;
        } else {
          append(out.diagnosis, rest);
          current = &out.diagnosis;
        }
      } else {
        current = nullptr;
      }
    } else if (text::starts_with_ci(t, "recommendation:")) {
      if (out.recommendation.empty()) {
        append(out.recommendation, std::string_view(t).substr(15));
        current = &out.recommendation;
      } else {
        current = nullptr;
      }
    } else if (current != nullptr) {
      append(*current, t);
    }
  }
  return out;
}

}  // namespace detail

// Total parse of raw doctor output into an action. Malformed input is a valid
// FormatViolation result, never an error. Missing <answer> tags are tolerated:
// the whole text (minus any complete <think> block) is treated as the answer.
inline DoctorAction parse_doctor_action(std::string_view input) {
  std::string think;
  if (const auto tspan = detail::tag_span(input, "think")) {
    think = text::trim(detail::tag_content(input, *tspan, "think"));
  }

  std::string block;
  if (const auto aspan = detail::tag_span(input, "answer")) {
    block = detail::tag_content(input, *aspan, "answer");
  } else if (const std::size_t open = text::find_ci(input, "<answer>");
             open != std::string_view::npos) {
    block = std::string(input.substr(open + 8));  // unterminated answer tag
  } else if (const auto tspan = detail::tag_span(input, "think")) {
    block = std::string(input.substr(0, tspan->first)) + std::string(input.substr(tspan->second));
  } else if (const std::size_t topen = text::find_ci(input, "<think>");
             topen != std::string_view::npos) {
    block = std::string(input.substr(0, topen));  // unterminated think swallows the rest
  } else {
    block = std::string(input);
  }

  const std::string raw(input);
  block = text::trim(block);
  if (block.empty()) return DoctorAction::make_violation(raw, think);

  // Exclusivity check looks anywhere in the block: mixing the two answer
  // formats is a violation even when one marker sits mid-line.
  const bool has_question = text::find_ci(block, "question:") != std::string_view::npos;
  const bool has_diagnosis = text::find_ci(block, "diagnosis:") != std::string_view::npos;
  if (has_question == has_diagnosis) return DoctorAction::make_violation(raw, think);

  const detail::FieldScan fields = detail::scan_fields(block);
  if (has_question) {
    if (!fields.question_anchored || fields.question.empty()) {
      return DoctorAction::make_violation(raw, think);
    }
    return DoctorAction::make_query(fields.question, think, raw);
  }
  if (!fields.diagnosis_anchored || fields.diagnosis.empty() || fields.recommendation.empty()) {
    return DoctorAction::make_violation(raw, think);
  }
  return DoctorAction::make_diagnose(fields.diagnosis, fields.recommendation, think, raw);
}

struct Turn {
  std::string doctor;   // display text of the doctor message
  std::string patient;  // patient reply sentence
};

// Immutable episode state; advance() returns a new value.
struct ConsultationState {
  std::string case_id;
  std::vector<Turn> turns;
  int budget_total = 0;
  int budget_remaining = 0;
  bool terminal = false;
  std::optional<std::pair<std::string, std::string>> final_diagnosis;

  static ConsultationState fresh(std::string case_id, int budget) {
    if (budget < 1) throw std::invalid_argument("turn budget must be at least 1");
    ConsultationState s;
    s.case_id = std::move(case_id);
    s.budget_total = budget;
    s.budget_remaining = budget;
    return s;
  }
};

struct TurnBudget {
  int value = 0;
};

inline constexpr int kDefaultMinTurns = 2;
inline constexpr int kDefaultMaxTurns = 10;

// Uniform over {min,...,max}; deterministic under a fixed seed.
inline TurnBudget sample_turn_budget(Rng& rng, int min = kDefaultMinTurns,
                                     int max = kDefaultMaxTurns) {
  if (min < 1) throw std::invalid_argument("turn budget minimum must be at least 1");
  if (min > max) throw std::invalid_argument("turn budget range is empty");
  return TurnBudget{static_cast<int>(uniform_int(rng, min, max))};
}

// Doctor-side context: system prompt, self-report, history, remaining-turn
// reminder. The reminder is re-rendered every turn.
inline std::string render_doctor_context(const ConsultationState& state,
                                         const ConsultationCase& c) {
  if (state.terminal) throw std::invalid_argument("cannot render context for a terminal state");
  std::string out(prompts::kDoctorSystem);
  out += "\n\nPatient self-report:\n";
  out += c.self_report;
  out += "\n\nConsultation so far:\n";
  if (state.turns.empty()) {
    out += "(no questions asked yet)\n";
  } else {
    for (const auto& turn : state.turns) {
      out += "Doctor: " + turn.doctor + "\n";
      out += "Patient: " + turn.patient + "\n";
    }
  }
  out += "\nRemaining turns: " + std::to_string(state.budget_remaining);
  return out;
}

// One MDP transition. Query and FormatViolation consume a turn (the patient
// text is the reply recorded for that turn); Diagnose terminates and must be
// passed an empty reply. Exhausting the budget terminates without a diagnosis.
inline ConsultationState advance(const ConsultationState& state, const DoctorAction& action,
                                 std::string_view patient_text) {
  if (state.terminal) throw std::invalid_argument("cannot advance a terminal state");
  ConsultationState next = state;
  if (action.kind == ActionKind::Diagnose) {
    if (!patient_text.empty()) {
      throw std::invalid_argument("diagnose step takes the empty patient reply");
    }
    next.final_diagnosis = std::make_pair(action.diagnosis, action.recommendation);
    next.terminal = true;
    return next;
  }
  if (patient_text.empty()) {
    throw std::invalid_argument("query turn requires a patient reply");
  }
  next.turns.push_back(Turn{action.display_text(), std::string(patient_text)});
  next.budget_remaining -= 1;
  if (next.budget_remaining == 0) next.terminal = true;
  return next;
}

}  // namespace consultrl
