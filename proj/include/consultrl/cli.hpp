#pragma once

#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "consultrl/dataset.hpp"
#include "consultrl/dialogue.hpp"
#include "consultrl/episode.hpp"
#include "consultrl/grpo.hpp"
#include "consultrl/llm.hpp"
#include "consultrl/patient.hpp"
#include "consultrl/policy.hpp"
#include "consultrl/reward.hpp"
#include "consultrl/rng.hpp"
#include "consultrl/transcript.hpp"

namespace consultrl {

// Everything a subcommand needs, fully validated before any work starts.
struct RunConfig {
  std::string command;
  std::string corpus_path;       // corpus for simulate/train/stats/consult,
                                 // transcripts file for score/judge
  std::uint64_t seed = 0;
  std::optional<int> fixed_budget;
  int budget_min = kDefaultMinTurns;
  int budget_max = kDefaultMaxTurns;
  GrpoConfig grpo;
  int steps = 200;
  std::string snapshot_path;     // toy-policy snapshot: input for simulate/consult,
                                 // output for train
  std::string endpoint;
  std::string model;
  bool use_judge = false;
  int jobs = 1;
  std::string out_path;

  void validate() const {
    grpo.validate();
    if (budget_min < 1 || budget_min > budget_max) {
      throw std::invalid_argument("budget range must satisfy 1 <= min <= max");
    }
    if (fixed_budget && *fixed_budget < 1) {
      throw std::invalid_argument("budget must be at least 1");
    }
    if (fixed_budget && *fixed_budget > kMaxBudgetIndex) {
      throw std::invalid_argument("budget exceeds the toy policy's table bound");
    }
    if (jobs < 1) throw std::invalid_argument("jobs must be at least 1");
    if (steps < 0) throw std::invalid_argument("steps must be non-negative");
    if (use_judge && endpoint.empty()) {
      throw std::invalid_argument("--judge requires --endpoint");
    }
    if (corpus_path.empty()) throw std::invalid_argument("--corpus is required");
  }

  ClientConfig client() const {
    ClientConfig c;
    c.endpoint = endpoint;
    c.model_name = model;
    c.temperature = grpo.temperature;
    return c;
  }
};

namespace cli_detail {

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

enum class PolicySource { Oracle, Toy, Llm };

inline PolicySource pick_policy_source(const RunConfig& cfg) {
  if (!cfg.endpoint.empty()) return PolicySource::Llm;
  if (!cfg.snapshot_path.empty()) return PolicySource::Toy;
  return PolicySource::Oracle;
}

inline PolicyParameters load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open policy snapshot: " + path);
  return PolicyParameters::load(in);
}

struct EpisodeOutcome {
  TranscriptRecord transcript;
};

// Runs one offline episode for simulate; the per-episode rng is the only
// randomness source, so results do not depend on scheduling.
inline EpisodeOutcome play_case(const ConsultationCase& c, const RunConfig& cfg,
                                PolicySource source, const PolicyParameters* params,
                                std::uint64_t episode_seed) {
  Rng rng = make_rng(episode_seed);
  const int budget = cfg.fixed_budget
                         ? *cfg.fixed_budget
                         : sample_turn_budget(rng, cfg.budget_min, cfg.budget_max).value;
  PatientProfile profile = build_profile(c);
  const ActionVocabulary vocab = ActionVocabulary::for_case(c, profile);

  DoctorFn doctor;
  switch (source) {
    case PolicySource::Oracle:
      doctor = make_oracle_doctor(c);
      break;
    case PolicySource::Toy:
      doctor = [params, &vocab, &rng, &cfg](const ConsultationState& state,
                                            const PatientProfile& p) {
        const StateSummary summary = summarize(state, p, vocab);
        const auto [action, logp] = sample_action(*params, summary, cfg.grpo.temperature, rng);
        return vocab.to_action(action);
      };
      break;
    case PolicySource::Llm: {
      const ClientConfig client = cfg.client();
      doctor = [client, &c](const ConsultationState& state, const PatientProfile&) {
        return llm_doctor_step(state, c, client);
      };
      break;
    }
  }

  EpisodeRecord record = run_episode(doctor, std::move(profile), budget);
  const RewardBreakdown reward = total_reward(record, c);
  return EpisodeOutcome{make_transcript(c, record, reward)};
}

inline void write_lines(const std::vector<std::string>& lines, const std::string& out_path,
                        std::ostream& fallback) {
  if (out_path.empty()) {
    for (const auto& l : lines) fallback << l << "\n";
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write output file: " + out_path);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace cli_detail

// simulate: one episode per corpus case against the scripted patient, written
// as transcript records. Fixed seed, fixed flags => byte-identical output.
inline int cmd_simulate(const RunConfig& cfg, std::ostream& out = std::cout) {
  const std::vector<ConsultationCase> corpus = load_corpus(cfg.corpus_path);
  if (corpus.empty()) throw std::invalid_argument("corpus is empty");
  const cli_detail::PolicySource source = cli_detail::pick_policy_source(cfg);
  std::optional<PolicyParameters> params;
  if (source == cli_detail::PolicySource::Toy) {
    params = cli_detail::load_snapshot(cfg.snapshot_path);
  }

  Rng root = make_rng(cfg.seed);
  std::vector<std::uint64_t> seeds;
  seeds.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) seeds.push_back(child_seed(root));

  std::vector<std::string> lines(corpus.size());
  double reward_sum = 0.0;
  double turns_sum = 0.0;
  const int jobs = source == cli_detail::PolicySource::Llm ? 1 : cfg.jobs;
  if (jobs == 1) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto outcome = cli_detail::play_case(corpus[i], cfg, source,
                                                 params ? &*params : nullptr, seeds[i]);
      reward_sum += outcome.transcript.reward.total;
      turns_sum += static_cast<double>(outcome.transcript.steps.size());
      lines[i] = serialize_transcript(outcome.transcript);
    }
  } else {
    std::vector<std::thread> workers;
    std::atomic<std::size_t> next{0};
    std::vector<double> rewards(corpus.size(), 0.0), turns(corpus.size(), 0.0);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t i = next.fetch_add(1); i < corpus.size(); i = next.fetch_add(1)) {
            const auto outcome = cli_detail::play_case(corpus[i], cfg, source,
                                                       params ? &*params : nullptr, seeds[i]);
            rewards[i] = outcome.transcript.reward.total;
            turns[i] = static_cast<double>(outcome.transcript.steps.size());
            lines[i] = serialize_transcript(outcome.transcript);
          }
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      reward_sum += rewards[i];
      turns_sum += turns[i];
    }
  }

  cli_detail::write_lines(lines, cfg.out_path, out);
  std::cerr << "simulated " << corpus.size() << " episodes, mean reward "
            << cli_detail::format_number(reward_sum / static_cast<double>(corpus.size()))
            << ", mean doctor messages "
            << cli_detail::format_number(turns_sum / static_cast<double>(corpus.size())) << "\n";
  return 0;
}

// train: GRPO over the toy policy. Writes the final snapshot and a
// line-delimited step report.
inline int cmd_train(const RunConfig& cfg, std::ostream& out = std::cout) {
  const std::vector<ConsultationCase> corpus = load_corpus(cfg.corpus_path);
  if (corpus.empty()) throw std::invalid_argument("corpus is empty");
  const std::vector<CaseContext> contexts =
      prepare_cases(corpus, cfg.fixed_budget, cfg.budget_min, cfg.budget_max);

  PolicyParameters params(kVocabActions);
  const PolicyParameters ref = params;
  Rng rng = make_rng(cfg.seed);
  const TrainReport report = train_loop(params, ref, contexts, cfg.grpo, cfg.steps, rng);

  const std::string snapshot_path =
      cfg.snapshot_path.empty() ? "policy.snapshot" : cfg.snapshot_path;
  std::ofstream snap(snapshot_path, std::ios::binary);
  if (!snap) throw IoError("cannot write policy snapshot: " + snapshot_path);
  params.save(snap);

  std::vector<std::string> lines;
  lines.reserve(report.steps.size());
  for (const auto& s : report.steps) {
    lines.push_back(nlohmann::json{{"step", s.step},
                                   {"mean_reward", s.mean_reward},
                                   {"mean_kl", s.mean_kl},
                                   {"clip_fraction", s.clip_fraction},
                                   {"mean_turns", s.mean_turns}}
                        .dump());
  }
  cli_detail::write_lines(lines, cfg.out_path, out);
  if (!report.steps.empty()) {
    std::cerr << "trained " << report.steps.size() << " steps, final mean reward "
              << cli_detail::format_number(report.steps.back().mean_reward) << "\n";
  }
  std::cerr << "snapshot written to " << snapshot_path << "\n";
  return 0;
}

namespace cli_detail {

struct ScoreBucket {
  std::size_t episodes = 0;
  double score_pct = 0.0;
  double reward_total = 0.0;
  double turns = 0.0;
  double judge_pct = 0.0;
  std::size_t judged = 0;
};

inline void render_bucket(std::ostream& out, const std::string& name, const ScoreBucket& b,
                          bool with_judge) {
  const double n = static_cast<double>(b.episodes);
  out << name << ": episodes=" << b.episodes
      << " score_pct=" << format_number(b.score_pct / n)
      << " mean_reward=" << format_number(b.reward_total / n)
      << " mean_turns=" << format_number(b.turns / n);
  if (with_judge && b.judged > 0) {
    out << " judge_pct=" << format_number(b.judge_pct / static_cast<double>(b.judged));
  }
  out << "\n";
}

}  // namespace cli_detail

// score: offline rule-based metrics over a transcripts file; judge-based
// percent metrics are added only when an endpoint is configured.
inline int cmd_score(const RunConfig& cfg, std::ostream& out = std::cout) {
  const std::vector<TranscriptRecord> transcripts = load_transcripts(cfg.corpus_path);
  if (transcripts.empty()) throw std::invalid_argument("transcripts file is empty");
  const ClientConfig client = cfg.client();

  std::map<std::string, cli_detail::ScoreBucket> buckets;
  std::size_t reward_mismatches = 0;
  for (const auto& t : transcripts) {
    const std::string pred_diag = t.final_diagnosis ? t.final_diagnosis->first : "";
    const std::string pred_rec = t.final_diagnosis ? t.final_diagnosis->second : "";
    const double f1d = word_f1(pred_diag, t.c.gold_diagnosis);
    const double f1r = word_f1(pred_rec, t.c.gold_recommendation);
    const double score_pct = 100.0 * (f1d + f1r) / 2.0;
    const RewardBreakdown recomputed = rescore_transcript(t);
    if (recomputed.total != t.reward.total) ++reward_mismatches;

    double judge_pct = 0.0;
    bool judged = false;
    if (cfg.use_judge) {
      double pct_sum = 0.0;
      int parts = 0;
      pct_sum += judge_similarity(pred_diag, t.c.gold_diagnosis, client).percent;
      ++parts;
      if (!t.c.gold_recommendation.empty()) {
        pct_sum += judge_similarity(pred_rec, t.c.gold_recommendation, client).percent;
        ++parts;
      }
      judge_pct = pct_sum / parts;
      judged = true;
    }

    for (const auto& key : {std::string("overall"), "category " + t.c.disease_category}) {
      auto& b = buckets[key];
      ++b.episodes;
      b.score_pct += score_pct;
      b.reward_total += recomputed.total;
      b.turns += static_cast<double>(t.steps.size());
      if (judged) {
        b.judge_pct += judge_pct;
        ++b.judged;
      }
    }
  }

  std::ostringstream report;
  cli_detail::render_bucket(report, "overall", buckets.at("overall"), cfg.use_judge);
  for (const auto& [name, b] : buckets) {
    if (name != "overall") cli_detail::render_bucket(report, name, b, cfg.use_judge);
  }
  if (reward_mismatches > 0) {
    report << "warning: " << reward_mismatches
           << " transcript(s) disagree with the recomputed reward\n";
  }
  cli_detail::write_lines({report.str()}, cfg.out_path, out);
  return 0;
}

// judge: patient-fidelity evaluation of simulated dialogues via the
// configured judge endpoint.
inline int cmd_judge(const RunConfig& cfg, std::ostream& out = std::cout) {
  if (cfg.endpoint.empty()) throw std::invalid_argument("judge requires --endpoint");
  const std::vector<TranscriptRecord> transcripts = load_transcripts(cfg.corpus_path);
  if (transcripts.empty()) throw std::invalid_argument("transcripts file is empty");
  const ClientConfig client = cfg.client();

  PatientFidelity sum;
  std::size_t judged = 0;
  for (const auto& t : transcripts) {
    std::string dialogue;
    for (const auto& s : t.steps) {
      if (s.action == "diagnose") continue;
      dialogue += "Doctor: " + s.doctor + "\n";
      dialogue += "Patient: " + s.patient + "\n";
    }
    if (dialogue.empty()) continue;
    const PatientFidelity f = judge_patient(t.c, dialogue, client);
    sum.information_control_rate += f.information_control_rate;
    sum.response_completeness_rate += f.response_completeness_rate;
    sum.factual_conflict_rate += f.factual_conflict_rate;
    ++judged;
  }
  if (judged == 0) throw std::invalid_argument("no transcripts with dialogue turns to judge");
  const double n = static_cast<double>(judged);
  std::ostringstream report;
  report << "episodes judged: " << judged << "\n"
         << "information_control_rate: " << cli_detail::format_number(sum.information_control_rate / n)
         << "\n"
         << "response_completeness_rate: "
         << cli_detail::format_number(sum.response_completeness_rate / n) << "\n"
         << "factual_conflict_rate: " << cli_detail::format_number(sum.factual_conflict_rate / n)
         << "\n";
  cli_detail::write_lines({report.str()}, cfg.out_path, out);
  return 0;
}

inline int cmd_stats(const RunConfig& cfg, std::ostream& out = std::cout) {
  const std::vector<ConsultationCase> corpus = load_corpus(cfg.corpus_path);
  const std::string report = render_stats_report(corpus_stats(corpus));
  cli_detail::write_lines({report}, cfg.out_path, out);
  return 0;
}

// consult: interactive console with the human playing the patient for one
// corpus case. End-of-input ends the session as an episode without diagnosis.
inline int cmd_consult(const RunConfig& cfg, std::istream& in = std::cin,
                       std::ostream& out = std::cout) {
  const std::vector<ConsultationCase> corpus = load_corpus(cfg.corpus_path);
  if (corpus.empty()) throw std::invalid_argument("corpus is empty");
  Rng root = make_rng(cfg.seed);
  const auto& c = corpus[static_cast<std::size_t>(
      uniform_below(root, static_cast<std::uint64_t>(corpus.size())))];
  const int budget = cfg.fixed_budget
                         ? *cfg.fixed_budget
                         : sample_turn_budget(root, cfg.budget_min, cfg.budget_max).value;

  PatientProfile profile = build_profile(c);
  const ActionVocabulary vocab = ActionVocabulary::for_case(c, profile);
  const cli_detail::PolicySource source = cli_detail::pick_policy_source(cfg);
  std::optional<PolicyParameters> params;
  if (source == cli_detail::PolicySource::Toy) {
    params = cli_detail::load_snapshot(cfg.snapshot_path);
  }
  const ClientConfig client = cfg.client();

  DoctorFn doctor;
  switch (source) {
    case cli_detail::PolicySource::Oracle:
      doctor = make_oracle_doctor(c);
      break;
    case cli_detail::PolicySource::Toy:
      doctor = [&](const ConsultationState& state, const PatientProfile& p) {
        const StateSummary summary = summarize(state, p, vocab);
        const auto [action, logp] = sample_action(*params, summary, cfg.grpo.temperature, root);
        return vocab.to_action(action);
      };
      break;
    case cli_detail::PolicySource::Llm:
      doctor = [&](const ConsultationState& state, const PatientProfile&) {
        return llm_doctor_step(state, c, client);
      };
      break;
  }

  out << "You are the patient for case " << c.case_id << " (" << c.disease_category << ").\n";
  out << "Your self-report: " << c.self_report << "\n";
  out << "Facts you may reveal when asked:\n";
  for (const auto& f : profile.facts) out << "  - " << f.text << "\n";
  out << "Budget: " << budget << " turns. Answer freely; reply with the exact refusal or\n";
  out << "repeat sentence to decline a question.\n\n";

  ConsultationState state = ConsultationState::fresh(c.case_id, budget);
  std::vector<EpisodeStep> steps;
  bool aborted = false;
  while (!state.terminal) {
    DoctorAction action = doctor(state, profile);
    if (action.kind == ActionKind::Diagnose) {
      out << "Doctor: " << action.display_text() << "\n";
      state = advance(state, action, "");
      steps.push_back(EpisodeStep{std::move(action), PatientReply::empty()});
      break;
    }
    out << "Doctor: " << action.display_text() << "\n";
    PatientReply reply;
    if (action.kind == ActionKind::FormatViolation) {
      reply = PatientReply::refusal();
      out << "Patient (auto): " << reply.text << "\n";
    } else {
      std::string line;
      out << "Patient> " << std::flush;
      while (std::getline(in, line) && text::trim(line).empty()) {
        out << "Patient> " << std::flush;
      }
      if (!in) {
        aborted = true;
        break;
      }
      line = text::trim(line);
      if (line == kRefusalSentence) {
        reply = PatientReply::refusal();
      } else if (line == kRepeatSentence) {
        reply = PatientReply::repeat();
      } else {
        reply = PatientReply::normal(line);
      }
    }
    state = advance(state, action, reply.text);
    steps.push_back(EpisodeStep{std::move(action), std::move(reply)});
  }

  EpisodeRecord record;
  record.final_state = state;
  record.steps = steps;
  RewardBreakdown reward;
  if (aborted) {
    // Session cut short: scored like running out of turns without a diagnosis.
    std::vector<StepEventKind> events = derive_events(record);
    events.push_back(StepEventKind::NoDiagnosisAtLimit);
    reward = reward_from_events(events, "", "", c);
    out << "\n(session ended before a diagnosis)\n";
  } else {
    reward = total_reward(record, c);
  }

  out << "\nReward: accuracy=" << cli_detail::format_number(reward.accuracy)
      << " information=" << cli_detail::format_number(reward.information)
      << " compliance=" << cli_detail::format_number(reward.compliance)
      << " total=" << cli_detail::format_number(reward.total) << "\n";

  if (!cfg.out_path.empty()) {
    TranscriptRecord t = make_transcript(c, record, reward);
    t.reward = reward;
    std::ofstream f(cfg.out_path, std::ios::binary | std::ios::app);
    if (!f) throw IoError("cannot write transcript: " + cfg.out_path);
    f << serialize_transcript(t) << "\n";
  }
  return 0;
}

// Dispatch with the documented exit codes: 0 success, 1 validation, 2 runtime,
// 3 network.
inline int run_command(const RunConfig& cfg, std::istream& in = std::cin,
                       std::ostream& out = std::cout) {
  try {
    cfg.validate();
    if (cfg.command == "simulate") return cmd_simulate(cfg, out);
    if (cfg.command == "train") return cmd_train(cfg, out);
    if (cfg.command == "score") return cmd_score(cfg, out);
    if (cfg.command == "judge") return cmd_judge(cfg, out);
    if (cfg.command == "stats") return cmd_stats(cfg, out);
    if (cfg.command == "consult") return cmd_consult(cfg, in, out);
    std::cerr << "error: unknown command '" << cfg.command << "'\n";
    return 1;
  } catch (const CredentialMissing& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const LlmError& e) {
    std::cerr << "network error: " << e.what() << "\n";
    return 3;
  } catch (const CorpusError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace consultrl
