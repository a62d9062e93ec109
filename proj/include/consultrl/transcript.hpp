#pragma once

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "consultrl/case.hpp"
#include "consultrl/dataset.hpp"
#include "consultrl/episode.hpp"
#include "consultrl/reward.hpp"

namespace consultrl {

// One step as stored in a transcript line.
struct TranscriptStep {
  std::string action;   // "query" | "diagnose" | "violation"
  std::string doctor;   // display text
  std::string patient;  // reply text ("" on the diagnose step)
  std::string reply;    // "normal" | "refusal" | "repeat" | "empty"
};

// The corpus record extended with the played episode and its reward; the one
// schema shared by simulate, consult and score.
struct TranscriptRecord {
  ConsultationCase c;
  int budget_total = 0;
  std::vector<TranscriptStep> steps;
  std::optional<std::pair<std::string, std::string>> final_diagnosis;
  RewardBreakdown reward;
};

inline TranscriptRecord make_transcript(const ConsultationCase& c, const EpisodeRecord& episode,
                                        const RewardBreakdown& reward) {
  TranscriptRecord t;
  t.c = c;
  t.budget_total = episode.final_state.budget_total;
  t.final_diagnosis = episode.final_state.final_diagnosis;
  t.reward = reward;
  for (const auto& step : episode.steps) {
    t.steps.push_back(TranscriptStep{std::string(action_kind_name(step.action.kind)),
                                     step.action.display_text(), step.reply.text,
                                     std::string(reply_kind_name(step.reply.kind))});
  }
  return t;
}

inline std::string serialize_transcript(const TranscriptRecord& t) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& gt : t.c.gold_turns) turns.push_back({gt.question, gt.answer});
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) {
    steps.push_back({{"action", s.action},
                     {"doctor", s.doctor},
                     {"patient", s.patient},
                     {"reply", s.reply}});
  }
  nlohmann::json j = {
      {"case_id", t.c.case_id},
      {"self_report", t.c.self_report},
      {"gold_turns", turns},
      {"gold_diagnosis", t.c.gold_diagnosis},
      {"gold_recommendation", t.c.gold_recommendation},
      {"disease_category", t.c.disease_category},
      {"split", std::string(split_name(t.c.split))},
      {"budget_total", t.budget_total},
      {"steps", steps},
      {"final_diagnosis", nullptr},
      {"final_recommendation", nullptr},
      {"reward",
       {{"accuracy", t.reward.accuracy},
        {"information", t.reward.information},
        {"compliance", t.reward.compliance},
        {"total", t.reward.total}}},
  };
  if (t.final_diagnosis) {
    j["final_diagnosis"] = t.final_diagnosis->first;
    j["final_recommendation"] = t.final_diagnosis->second;
  }
  return j.dump();
}

inline TranscriptRecord parse_transcript(const std::string& line) {
  const nlohmann::json j = nlohmann::json::parse(line);
  TranscriptRecord t;
  t.c.case_id = j.at("case_id").get<std::string>();
  t.c.self_report = j.at("self_report").get<std::string>();
  t.c.gold_diagnosis = j.at("gold_diagnosis").get<std::string>();
  t.c.gold_recommendation = j.at("gold_recommendation").get<std::string>();
  t.c.disease_category = j.at("disease_category").get<std::string>();
  t.c.split = parse_split(j.at("split").get<std::string>());
  for (const auto& gt : j.at("gold_turns")) {
    t.c.gold_turns.push_back(GoldTurn{gt.at(0).get<std::string>(), gt.at(1).get<std::string>()});
  }
  t.budget_total = j.at("budget_total").get<int>();
  for (const auto& s : j.at("steps")) {
    t.steps.push_back(TranscriptStep{s.at("action").get<std::string>(),
                                     s.at("doctor").get<std::string>(),
                                     s.at("patient").get<std::string>(),
                                     s.at("reply").get<std::string>()});
  }
  if (!j.at("final_diagnosis").is_null()) {
    t.final_diagnosis = std::make_pair(j.at("final_diagnosis").get<std::string>(),
                                       j.at("final_recommendation").get<std::string>());
  }
  const auto& r = j.at("reward");
  t.reward = RewardBreakdown{r.at("accuracy").get<double>(), r.at("information").get<double>(),
                             r.at("compliance").get<double>(), r.at("total").get<double>()};
  return t;
}

inline std::vector<TranscriptRecord> load_transcripts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcripts file: " + path);
  std::vector<TranscriptRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_transcript(line));
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError({{IssueKind::Schema, line_no, std::string("bad transcript: ") + e.what()}});
    }
  }
  return out;
}

// Re-derives the reward channels from the recorded step kinds and final
// diagnosis; matches the live scoring of the episode that produced the record.
inline RewardBreakdown rescore_transcript(const TranscriptRecord& t) {
  std::vector<StepEventKind> events;
  bool diagnosed = t.final_diagnosis.has_value();
  for (const auto& s : t.steps) {
    if (s.action == "diagnose") continue;
    if (s.action == "violation") {
      events.push_back(StepEventKind::FormatViolation);
    } else {
      events.push_back(s.reply == "normal" ? StepEventKind::NormalAnswer : StepEventKind::Refusal);
    }
  }
  if (!diagnosed) events.push_back(StepEventKind::NoDiagnosisAtLimit);
  return reward_from_events(events, diagnosed ? t.final_diagnosis->first : "",
                            diagnosed ? t.final_diagnosis->second : "", t.c);
}

}  // namespace consultrl
