#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "consultrl/case.hpp"
#include "consultrl/dialogue.hpp"
#include "consultrl/patient.hpp"

namespace consultrl {

struct EpisodeStep {
  DoctorAction action;
  PatientReply reply;  // Empty on the Diagnose step
};

struct EpisodeRecord {
  ConsultationState final_state;
  std::vector<EpisodeStep> steps;

  // Doctor messages, including the final Diagnose message if any.
  std::size_t doctor_messages() const { return steps.size(); }
};

// The doctor sees the live state and the profile as revealed so far.
using DoctorFn = std::function<DoctorAction(const ConsultationState&, const PatientProfile&)>;

// Runs one full consultation between a doctor callback and the scripted
// patient. The profile copy is owned (and mutated) by the episode.
inline EpisodeRecord run_episode(const DoctorFn& doctor, PatientProfile profile, int budget,
                                 const MatchConfig& cfg = {}) {
  EpisodeRecord record;
  record.final_state = ConsultationState::fresh(profile.case_id, budget);
  std::vector<std::string> history;
  while (!record.final_state.terminal) {
    DoctorAction action = doctor(record.final_state, profile);
    PatientReply reply = respond_to_action(profile, action, history, cfg);
    history.push_back(action.display_text());
    record.final_state = advance(record.final_state, action, reply.text);
    record.steps.push_back(EpisodeStep{std::move(action), std::move(reply)});
  }
  return record;
}

// Reference doctor: asks each fact's topic question once, then diagnoses with
// the gold answer. Diagnoses early when the budget is about to run out.
inline DoctorFn make_oracle_doctor(const ConsultationCase& c) {
  auto next_fact = std::make_shared<std::size_t>(0);
  const std::string diagnosis = c.gold_diagnosis;
  const std::string recommendation =
      c.gold_recommendation.empty() ? "follow up with your physician" : c.gold_recommendation;
  return [next_fact, diagnosis, recommendation](const ConsultationState& state,
                                                const PatientProfile& profile) {
    if (state.budget_remaining > 1 && *next_fact < profile.facts.size()) {
      const Fact& fact = profile.facts[(*next_fact)++];
      return DoctorAction::make_query(render_topic_question(fact));
    }
    return DoctorAction::make_diagnose(diagnosis, recommendation);
  };
}

}  // namespace consultrl
