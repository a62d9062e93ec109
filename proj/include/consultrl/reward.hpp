#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "consultrl/case.hpp"
#include "consultrl/episode.hpp"
#include "consultrl/text.hpp"

namespace consultrl {

// The three reward channels and their sum for one finished episode.
struct RewardBreakdown {
  double accuracy = 0.0;     // 5 * (F1_diagnosis + F1_recommendation), in [0, 10]
  double information = 0.0;  // +1 per normal answer, -2 per refused turn
  double compliance = 0.0;   // -2 per format violation, -5 for no diagnosis in budget
  double total = 0.0;
};

enum class StepEventKind { NormalAnswer, Refusal, FormatViolation, NoDiagnosisAtLimit };

// Word-level F1 between two free-text answers: lowercase, strip punctuation,
// whitespace-split, multiset (count-clipped) overlap. Both sides empty is a
// vacuous match (1); otherwise an empty side or zero overlap scores 0.
inline double word_f1(std::string_view prediction, std::string_view gold) {
  const std::vector<std::string> pred = text::tokenize(prediction);
  const std::vector<std::string> ref = text::tokenize(gold);
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  int overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

inline double accuracy_reward(std::string_view pred_diagnosis, std::string_view pred_recommendation,
                              std::string_view gold_diagnosis,
                              std::string_view gold_recommendation) {
  return 5.0 * (word_f1(pred_diagnosis, gold_diagnosis) +
                word_f1(pred_recommendation, gold_recommendation));
}

// Information acquisition: refused turns include repeats and format-violation
// turns; the diagnosis step contributes nothing.
inline double information_reward(std::span<const StepEventKind> events) {
  double sum = 0.0;
  for (const auto e : events) {
    switch (e) {
      case StepEventKind::NormalAnswer: sum += 1.0; break;
      case StepEventKind::Refusal:
      case StepEventKind::FormatViolation: sum -= 2.0; break;
      case StepEventKind::NoDiagnosisAtLimit: break;
    }
  }
  return sum;
}

inline double compliance_reward(std::span<const StepEventKind> events) {
  double sum = 0.0;
  for (const auto e : events) {
    switch (e) {
      case StepEventKind::FormatViolation: sum -= 2.0; break;
      case StepEventKind::NoDiagnosisAtLimit: sum -= 5.0; break;
      case StepEventKind::NormalAnswer:
      case StepEventKind::Refusal: break;
    }
  }
  return sum;
}

// Per-turn events from an episode transcript. NoDiagnosisAtLimit is appended
// at most once, on budget exhaustion without a final diagnosis.
inline std::vector<StepEventKind> derive_events(const EpisodeRecord& record) {
  std::vector<StepEventKind> events;
  for (const auto& step : record.steps) {
    switch (step.action.kind) {
      case ActionKind::Diagnose:
        break;
      case ActionKind::FormatViolation:
        events.push_back(StepEventKind::FormatViolation);
        break;
      case ActionKind::Query:
        events.push_back(step.reply.kind == ReplyKind::Normal ? StepEventKind::NormalAnswer
                                                              : StepEventKind::Refusal);
        break;
    }
  }
  if (record.final_state.terminal && !record.final_state.final_diagnosis.has_value()) {
    events.push_back(StepEventKind::NoDiagnosisAtLimit);
  }
  return events;
}

inline RewardBreakdown reward_from_events(std::span<const StepEventKind> events,
                                          std::string_view pred_diagnosis,
                                          std::string_view pred_recommendation,
                                          const ConsultationCase& c) {
  RewardBreakdown r;
  r.accuracy = accuracy_reward(pred_diagnosis, pred_recommendation, c.gold_diagnosis,
                               c.gold_recommendation);
  r.information = information_reward(events);
  r.compliance = compliance_reward(events);
  r.total = r.accuracy + r.information + r.compliance;
  return r;
}

// Scores a finished episode. An episode that ended without a diagnosis is
// scored with empty prediction strings.
inline RewardBreakdown total_reward(const EpisodeRecord& record, const ConsultationCase& c) {
  if (!record.final_state.terminal) {
    throw std::invalid_argument("total_reward requires a terminal episode");
  }
  const auto events = derive_events(record);
  std::string pred_diag, pred_rec;
  if (record.final_state.final_diagnosis.has_value()) {
    pred_diag = record.final_state.final_diagnosis->first;
    pred_rec = record.final_state.final_diagnosis->second;
  }
  return reward_from_events(events, pred_diag, pred_rec, c);
}

}  // namespace consultrl
