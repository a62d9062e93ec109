#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "consultrl/case.hpp"
#include "consultrl/dialogue.hpp"
#include "consultrl/patient.hpp"
#include "consultrl/rng.hpp"

namespace consultrl {

// Question slots are fixed so one logits table is shared across cases; slots
// beyond a case's fact count fall back to a catch-all question built purely
// from stop words, which the scripted patient always refuses.
inline constexpr int kQuestionSlots = 8;
inline constexpr int kDiagnoseSlots = 8;
inline constexpr int kVocabActions = kQuestionSlots + kDiagnoseSlots;
inline constexpr int kMaxBudgetIndex = 64;

struct QuestionTemplate {
  std::set<std::string> topic_keys;
  std::string question;
};

struct DiagnoseTemplate {
  std::string diagnosis;
  std::string recommendation;
};

// Templated doctor actions for one case: kQuestionSlots questions followed by
// kDiagnoseSlots diagnose entries forming a differential, the case's gold
// pair hidden among fixed distractor pairs at a slot chosen by a stable
// case_id hash. A policy shared across cases can only diagnose reliably by
// first telling cases apart through their revealed facts, which is what makes
// questioning pay off. Every entry renders to text accepted by
// parse_doctor_action.
class ActionVocabulary {
 public:
  static ActionVocabulary for_case(const ConsultationCase& c, const PatientProfile& profile) {
    ActionVocabulary v;
    const std::size_t fact_count =
        std::min<std::size_t>(profile.facts.size(), static_cast<std::size_t>(kQuestionSlots));
    for (std::size_t k = 0; k < static_cast<std::size_t>(kQuestionSlots); ++k) {
      if (k < fact_count) {
        v.questions_.push_back(
            QuestionTemplate{profile.facts[k].topic_keys, render_topic_question(profile.facts[k])});
      } else {
        v.questions_.push_back(QuestionTemplate{{}, "Is there more you can tell me?"});
      }
    }
    static const std::vector<DiagnoseTemplate> distractors = {
        {"unspecified fatigue state", "observation at home"},
        {"minor seasonal ailment", "over the counter remedies"},
        {"transient muscle strain", "gentle movement"},
        {"mild environmental reaction", "removing the exposure"},
        {"temporary digestive upset", "light meals"},
        {"routine viral episode", "watchful waiting"},
        {"borderline vitamin shortage", "a varied menu"},
    };
    const std::string rec =
        c.gold_recommendation.empty() ? "follow up with your physician" : c.gold_recommendation;
    const std::size_t gold_slot = fnv1a(c.case_id) % kDiagnoseSlots;
    std::size_t next_distractor = 0;
    for (std::size_t d = 0; d < static_cast<std::size_t>(kDiagnoseSlots); ++d) {
      if (d == gold_slot) {
        v.diagnoses_.push_back(DiagnoseTemplate{c.gold_diagnosis, rec});
      } else {
        v.diagnoses_.push_back(distractors[next_distractor++]);
      }
    }
    return v;
  }

  int question_count() const { return static_cast<int>(questions_.size()); }
  int diagnose_count() const { return static_cast<int>(diagnoses_.size()); }
  int size() const { return question_count() + diagnose_count(); }
  bool is_diagnose(int action) const { return action >= question_count(); }

  const QuestionTemplate& question(int slot) const { return questions_.at(slot); }

  DoctorAction to_action(int action) const {
    if (action < 0 || action >= size()) throw std::out_of_range("action index out of range");
    if (action < question_count()) {
      return DoctorAction::make_query(questions_[action].question);
    }
    const auto& d = diagnoses_[action - question_count()];
    return DoctorAction::make_diagnose(d.diagnosis, d.recommendation);
  }

  std::string render(int action) const { return to_action(action).to_message(); }

 private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (const char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

  std::vector<QuestionTemplate> questions_;
  std::vector<DiagnoseTemplate> diagnoses_;
};

// Exact discretization of the dialogue state for the tabular policy.
struct StateSummary {
  std::uint32_t revealed_mask = 0;  // over the first kQuestionSlots profile facts
  std::uint32_t asked_mask = 0;     // over the question slots
  int budget_remaining = 0;

  std::uint32_t index() const {
    return (static_cast<std::uint32_t>(budget_remaining) << 16) | (asked_mask << 8) | revealed_mask;
  }
};

inline StateSummary summarize(const ConsultationState& state, const PatientProfile& profile,
                              const ActionVocabulary& vocab) {
  StateSummary s;
  s.budget_remaining = state.budget_remaining;
  for (std::size_t k = 0; k < profile.facts.size() && k < static_cast<std::size_t>(kQuestionSlots);
       ++k) {
    if (profile.facts[k].revealed) s.revealed_mask |= 1u << k;
  }
  for (const auto& turn : state.turns) {
    for (int k = 0; k < vocab.question_count(); ++k) {
      if (turn.doctor == vocab.question(k).question) s.asked_mask |= 1u << k;
    }
  }
  return s;
}

// Logits table keyed by summary index; absent rows read as zeros (a uniform
// policy). std::map keeps iteration, and therefore serialization, ordered.
class PolicyParameters {
 public:
  explicit PolicyParameters(int actions) : actions_(actions) {
    if (actions < 2) throw std::invalid_argument("policy needs at least two actions");
  }

  int actions() const { return actions_; }

  std::vector<double> logits(std::uint32_t row) const {
    const auto it = rows_.find(row);
    if (it == rows_.end()) return std::vector<double>(actions_, 0.0);
    return it->second;
  }

  void add_to(std::uint32_t row, std::span<const double> delta) {
    if (static_cast<int>(delta.size()) != actions_) {
      throw std::invalid_argument("gradient row width mismatch");
    }
    auto& r = rows_.try_emplace(row, actions_, 0.0).first->second;
    for (int j = 0; j < actions_; ++j) r[static_cast<std::size_t>(j)] += delta[j];
  }

  void set_row(std::uint32_t row, std::vector<double> values) {
    if (static_cast<int>(values.size()) != actions_) {
      throw std::invalid_argument("row width mismatch");
    }
    rows_[row] = std::move(values);
  }

  const std::map<std::uint32_t, std::vector<double>>& rows() const { return rows_; }

  bool operator==(const PolicyParameters& other) const {
    return actions_ == other.actions_ && rows_ == other.rows_;
  }

  // Text snapshot, format "consultrl-policy v1". %.17g round-trips doubles.
  void save(std::ostream& out) const {
    out << "consultrl-policy v1\n";
    out << "actions " << actions_ << "\n";
    out << "rows " << rows_.size() << "\n";
    char buf[64];
    for (const auto& [row, values] : rows_) {
      out << row;
      for (const double v : values) {
        std::snprintf(buf, sizeof(buf), " %.17g", v);
        out << buf;
      }
      out << "\n";
    }
  }

  static PolicyParameters load(std::istream& in) {
    std::string magic, version;
    in >> magic >> version;
    if (magic != "consultrl-policy" || version != "v1") {
      throw std::runtime_error("unrecognized policy snapshot header");
    }
    std::string key;
    int actions = 0;
    std::size_t row_count = 0;
    in >> key >> actions;
    if (key != "actions") throw std::runtime_error("malformed policy snapshot");
    in >> key >> row_count;
    if (key != "rows") throw std::runtime_error("malformed policy snapshot");
    PolicyParameters p(actions);
    for (std::size_t i = 0; i < row_count; ++i) {
      std::uint32_t row = 0;
      in >> row;
      std::vector<double> values(static_cast<std::size_t>(actions));
      for (auto& v : values) in >> v;
      if (!in) throw std::runtime_error("truncated policy snapshot");
      p.rows_[row] = std::move(values);
    }
    return p;
  }

 private:
  int actions_;
  std::map<std::uint32_t, std::vector<double>> rows_;
};

namespace policy_math {

// softmax(logits / temperature), computed stably.
inline std::vector<double> tempered_softmax(std::span<const double> logits, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
  std::vector<double> p(logits.size());
  double max_z = -HUGE_VAL;
  for (const double z : logits) max_z = std::max(max_z, z / temperature);
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp(logits[j] / temperature - max_z);
    sum += p[j];
  }
  for (auto& v : p) v /= sum;
  return p;
}

inline double entropy_of(std::span<const double> probs) {
  double h = 0.0;
  for (const double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace policy_math

inline void check_summary_bounds(const StateSummary& s) {
  if (s.budget_remaining < 0 || s.budget_remaining > kMaxBudgetIndex || s.asked_mask > 0xFF ||
      s.revealed_mask > 0xFF) {
    throw std::out_of_range("state summary out of table bounds");
  }
}

inline std::vector<double> action_logits(const PolicyParameters& params, const StateSummary& s) {
  check_summary_bounds(s);
  return params.logits(s.index());
}

inline double logprob_of(const PolicyParameters& params, std::uint32_t row, int action,
                         double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
  const std::vector<double> z = params.logits(row);
  if (action < 0 || action >= static_cast<int>(z.size())) {
    throw std::out_of_range("action index out of range");
  }
  double max_z = -HUGE_VAL;
  for (const double v : z) max_z = std::max(max_z, v / temperature);
  double sum = 0.0;
  for (const double v : z) sum += std::exp(v / temperature - max_z);
  return z[static_cast<std::size_t>(action)] / temperature - max_z - std::log(sum);
}

// Categorical sample from the tempered distribution; the returned logp equals
// logprob_of(...) for the sampled index exactly.
inline std::pair<int, double> sample_action(const PolicyParameters& params, const StateSummary& s,
                                            double temperature, Rng& rng) {
  check_summary_bounds(s);
  const std::vector<double> z = params.logits(s.index());
  const std::vector<double> p = policy_math::tempered_softmax(z, temperature);
  const double u = uniform_unit(rng);
  double acc = 0.0;
  int pick = static_cast<int>(p.size()) - 1;
  for (std::size_t j = 0; j < p.size(); ++j) {
    acc += p[j];
    if (u < acc) {
      pick = static_cast<int>(j);
      break;
    }
  }
  return {pick, logprob_of(params, s.index(), pick, temperature)};
}

// d log pi(a | row) / d logit_j = (1{j == a} - p_j) / temperature.
inline std::vector<double> logprob_grad(const PolicyParameters& params, std::uint32_t row,
                                        int action, double temperature) {
  const std::vector<double> z = params.logits(row);
  if (action < 0 || action >= static_cast<int>(z.size())) {
    throw std::out_of_range("action index out of range");
  }
  std::vector<double> g = policy_math::tempered_softmax(z, temperature);
  for (auto& v : g) v = -v / temperature;
  g[static_cast<std::size_t>(action)] += 1.0 / temperature;
  return g;
}

inline double policy_entropy(const PolicyParameters& params, std::uint32_t row,
                             double temperature) {
  const std::vector<double> z = params.logits(row);
  return policy_math::entropy_of(policy_math::tempered_softmax(z, temperature));
}

// dH / d logit_j = -p_j (log p_j + H) / temperature.
inline std::vector<double> entropy_grad(const PolicyParameters& params, std::uint32_t row,
                                        double temperature) {
  const std::vector<double> z = params.logits(row);
  const std::vector<double> p = policy_math::tempered_softmax(z, temperature);
  const double h = policy_math::entropy_of(p);
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) g[j] = -p[j] * (std::log(p[j]) + h) / temperature;
  }
  return g;
}

}  // namespace consultrl
