#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "consultrl/case.hpp"
#include "consultrl/episode.hpp"
#include "consultrl/policy.hpp"
#include "consultrl/reward.hpp"
#include "consultrl/rng.hpp"

namespace consultrl {

enum class AdvantageMode { MeanStd, MeanOnly };

inline std::string_view advantage_mode_name(AdvantageMode m) {
  return m == AdvantageMode::MeanStd ? "mean_std" : "mean_only";
}

struct GrpoConfig {
  int group_size = 8;
  double clip_low = 0.2;
  double clip_high = 0.28;
  double kl_coef = 0.001;
  double entropy_coef = 0.001;
  AdvantageMode advantage_mode = AdvantageMode::MeanStd;
  double temperature = 0.7;
  double numeric_eps = 1e-8;
  double kl_ratio_ceiling = 10.0;
  // Toy-policy step size; 1e-6 is the documented LLM-scale setting. The
  // tabular policy needs large steps because each visited row sees only a
  // handful of updates over a training run.
  double learning_rate = 0.5;
  int epochs = 1;
  int batch_size = 4;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("group_size must be at least 2");
    if (!(clip_low > 0.0 && clip_low <= clip_high && clip_high < 1.0)) {
      throw std::invalid_argument("clip band must satisfy 0 < clip_low <= clip_high < 1");
    }
    if (kl_coef < 0.0) throw std::invalid_argument("kl_coef must be non-negative");
    if (entropy_coef < 0.0) throw std::invalid_argument("entropy_coef must be non-negative");
    if (temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
    if (numeric_eps <= 0.0) throw std::invalid_argument("numeric_eps must be positive");
    if (kl_ratio_ceiling <= 0.0) throw std::invalid_argument("kl_ratio_ceiling must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  }
};

// One token of a sampled trajectory. Doctor-generated tokens carry mask=1 and
// the table row they were sampled from; patient tokens carry mask=0 and are
// never read by the objective.
struct TokenRecord {
  int token_id = 0;              // action index (doctor) or reply-kind ordinal (patient)
  std::uint32_t state_index = 0; // policy table row, doctor tokens only
  double logp_current = 0.0;
  double logp_old = 0.0;
  double logp_ref = 0.0;
  bool mask = false;
};

struct Trajectory {
  std::string case_id;
  std::vector<TokenRecord> tokens;
  EpisodeRecord episode;
  RewardBreakdown reward;

  int masked_tokens() const {
    int n = 0;
    for (const auto& t : tokens) n += t.mask ? 1 : 0;
    return n;
  }
};

struct TrajectoryGroup {
  std::string case_id;
  std::vector<Trajectory> items;
  std::vector<double> advantages;  // one scalar per trajectory, broadcast to its masked tokens
};

// Fresh episode ingredients for one rollout sample.
struct EnvSample {
  PatientProfile profile;
  int budget = 0;
};

using EnvFactory = std::function<EnvSample(Rng&)>;

inline EnvFactory make_env_factory(const ConsultationCase& c,
                                   std::optional<int> fixed_budget = std::nullopt,
                                   int min_turns = kDefaultMinTurns,
                                   int max_turns = kDefaultMaxTurns) {
  const PatientProfile base = build_profile(c);
  return [base, fixed_budget, min_turns, max_turns](Rng& rng) {
    EnvSample s{base, fixed_budget ? *fixed_budget : sample_turn_budget(rng, min_turns, max_turns).value};
    return s;
  };
}

// Samples one trajectory: the toy doctor draws an action per turn at the
// rollout temperature, recording logp under the sampling (old) and reference
// policies. Patient replies enter as mask=0 tokens with sentinel zeros.
inline Trajectory sample_trajectory(const PolicyParameters& params, const PolicyParameters& ref,
                                    const ActionVocabulary& vocab, const ConsultationCase& c,
                                    EnvSample env, double temperature, Rng& rng) {
  Trajectory traj;
  traj.case_id = c.case_id;
  auto doctor = [&](const ConsultationState& state, const PatientProfile& profile) {
    const StateSummary summary = summarize(state, profile, vocab);
    const auto [action, logp] = sample_action(params, summary, temperature, rng);
    if (!std::isfinite(logp)) {
      throw std::runtime_error("non-finite log-probability during rollout");
    }
    TokenRecord token;
    token.token_id = action;
    token.state_index = summary.index();
    token.logp_current = logp;
    token.logp_old = logp;
    token.logp_ref = logprob_of(ref, summary.index(), action, temperature);
    token.mask = true;
    traj.tokens.push_back(token);
    return vocab.to_action(action);
  };
  traj.episode = run_episode(doctor, std::move(env.profile), env.budget);
  for (std::size_t i = 0; i < traj.episode.steps.size(); ++i) {
    const auto& step = traj.episode.steps[i];
    if (step.action.kind != ActionKind::Diagnose) {
      TokenRecord patient;
      patient.token_id = static_cast<int>(step.reply.kind);
      patient.mask = false;
      traj.tokens.insert(traj.tokens.begin() + static_cast<std::ptrdiff_t>(2 * i + 1), patient);
    }
  }
  traj.reward = total_reward(traj.episode, c);
  return traj;
}

// G complete trajectories for one case, each with an independent environment
// sample. Deterministic under a fixed rng state.
inline TrajectoryGroup rollout_group(const PolicyParameters& params, const PolicyParameters& ref,
                                     const ActionVocabulary& vocab, const EnvFactory& env,
                                     const ConsultationCase& c, const GrpoConfig& cfg, Rng& rng) {
  if (cfg.group_size < 2) throw std::invalid_argument("group_size must be at least 2");
  TrajectoryGroup group;
  group.case_id = c.case_id;
  group.items.reserve(static_cast<std::size_t>(cfg.group_size));
  for (int i = 0; i < cfg.group_size; ++i) {
    group.items.push_back(
        sample_trajectory(params, ref, vocab, c, env(rng), cfg.temperature, rng));
  }
  return group;
}

// Group-relative advantages. mean_std divides by the population standard
// deviation (plus numeric_eps); an all-equal group yields all zeros either way.
inline std::vector<double> compute_advantages(std::span<const double> rewards, AdvantageMode mode,
                                              double numeric_eps = 1e-8) {
  if (rewards.size() < 2) throw std::invalid_argument("advantage computation needs a group");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (const double r : rewards) mean += r;
  mean /= n;
  std::vector<double> adv(rewards.size());
  if (mode == AdvantageMode::MeanOnly) {
    for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
    return adv;
  }
  double var = 0.0;
  for (const double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  const double denom = std::sqrt(var) + numeric_eps;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

inline void attach_advantages(TrajectoryGroup& group, const GrpoConfig& cfg) {
  std::vector<double> rewards;
  rewards.reserve(group.items.size());
  for (const auto& t : group.items) rewards.push_back(t.reward.total);
  group.advantages = compute_advantages(rewards, cfg.advantage_mode, cfg.numeric_eps);
}

// Low-variance per-token KL estimator: r = exp(logp_ref - logp_current),
// value r - log r - 1 >= 0, exactly 0 when the policies coincide. The ratio
// is clamped to a ceiling so a single outlier token cannot dominate.
inline double kl_low_var(double logp_current, double logp_ref, double ratio_ceiling = 10.0) {
  double r = std::exp(logp_ref - logp_current);
  r = std::min(r, ratio_ceiling);
  return r - std::log(r) - 1.0;
}

using ParamGrad = std::map<std::uint32_t, std::vector<double>>;

inline void accumulate(ParamGrad& grad, std::uint32_t row, std::span<const double> delta,
                       double scale) {
  auto& r = grad.try_emplace(row, delta.size(), 0.0).first->second;
  for (std::size_t j = 0; j < delta.size(); ++j) r[j] += scale * delta[j];
}

struct ObjectiveResult {
  double value = 0.0;
  ParamGrad grad;
  double clip_fraction = 0.0;  // masked tokens on the clipped branch
  double mean_kl = 0.0;        // mean low-variance KL over masked tokens
  double mean_entropy = 0.0;
};

// The masked, length-normalized, asymmetrically clipped group objective with
// the low-variance KL penalty and an entropy bonus:
//
//   J = (1/G) sum_i [ (1/M_i) sum_{t masked} min(rho A_i, clip(rho) A_i)
//                     - kl_coef * mean_t kl  + entropy_coef * mean_t H(s_t) ]
//
// where rho = exp(logp_current - logp_old) and logp_current is recomputed
// from `params` at every masked token, so the result is a pure function of
// the parameters. mask=0 tokens are never read.
inline ObjectiveResult grpo_objective(const TrajectoryGroup& group, const GrpoConfig& cfg,
                                      const PolicyParameters& params) {
  if (group.items.empty()) throw std::invalid_argument("empty trajectory group");
  if (group.advantages.size() != group.items.size()) {
    throw std::invalid_argument("advantages not computed for this group");
  }
  const double lo = 1.0 - cfg.clip_low;
  const double hi = 1.0 + cfg.clip_high;
  const double g_inv = 1.0 / static_cast<double>(group.items.size());

  ObjectiveResult out;
  long masked_total = 0;
  long clipped_total = 0;
  double kl_weighted = 0.0;
  double entropy_weighted = 0.0;

  for (std::size_t i = 0; i < group.items.size(); ++i) {
    const Trajectory& traj = group.items[i];
    const double adv = group.advantages[i];
    const int masked = traj.masked_tokens();
    if (masked == 0) throw std::invalid_argument("trajectory has no masked tokens");
    const double m_inv = 1.0 / static_cast<double>(masked);

    double surrogate_sum = 0.0;
    double kl_sum = 0.0;
    double entropy_sum = 0.0;

    for (const auto& token : traj.tokens) {
      if (!token.mask) continue;
      if (!std::isfinite(token.logp_old)) {
        throw std::invalid_argument("masked token is missing logp_old");
      }
      const double lc = logprob_of(params, token.state_index, token.token_id, cfg.temperature);
      const double rho = std::exp(lc - token.logp_old);

      double surrogate;
      double dsurr_drho;
      bool clipped = false;
      if (rho >= lo && rho <= hi) {
        surrogate = rho * adv;
        dsurr_drho = adv;
      } else {
        const double unclipped = rho * adv;
        const double clamped = std::clamp(rho, lo, hi) * adv;
        if (unclipped <= clamped) {
          surrogate = unclipped;
          dsurr_drho = adv;
        } else {
          surrogate = clamped;
          dsurr_drho = 0.0;
          clipped = true;
        }
      }
      surrogate_sum += surrogate;
      clipped_total += clipped ? 1 : 0;
      ++masked_total;

      double r = std::exp(token.logp_ref - lc);
      double dkl_dlc = 0.0;
      if (r >= cfg.kl_ratio_ceiling) {
        r = cfg.kl_ratio_ceiling;
      } else {
        dkl_dlc = 1.0 - r;
      }
      const double kl = r - std::log(r) - 1.0;
      kl_sum += kl;

      entropy_sum += policy_entropy(params, token.state_index, cfg.temperature);

      // d/dlc of this token's contribution, without the 1/(G*M) weight.
      const double dlc = dsurr_drho * rho - cfg.kl_coef * dkl_dlc;
      const double weight = g_inv * m_inv;
      if (dlc != 0.0) {
        accumulate(out.grad, token.state_index,
                   logprob_grad(params, token.state_index, token.token_id, cfg.temperature),
                   weight * dlc);
      }
      if (cfg.entropy_coef != 0.0) {
        accumulate(out.grad, token.state_index,
                   entropy_grad(params, token.state_index, cfg.temperature),
                   weight * cfg.entropy_coef);
      }
    }

    out.value += g_inv * m_inv *
                 (surrogate_sum - cfg.kl_coef * kl_sum + cfg.entropy_coef * entropy_sum);
    kl_weighted += g_inv * m_inv * kl_sum;
    entropy_weighted += g_inv * m_inv * entropy_sum;
  }

  out.clip_fraction =
      masked_total == 0 ? 0.0 : static_cast<double>(clipped_total) / static_cast<double>(masked_total);
  out.mean_kl = kl_weighted;
  out.mean_entropy = entropy_weighted;
  return out;
}

struct StepRecord {
  int step = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double mean_turns = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
};

// Per-case rollout ingredients cached across steps.
struct CaseContext {
  ConsultationCase c;
  ActionVocabulary vocab;
  EnvFactory env;
};

inline std::vector<CaseContext> prepare_cases(const std::vector<ConsultationCase>& corpus,
                                              std::optional<int> fixed_budget = std::nullopt,
                                              int min_turns = kDefaultMinTurns,
                                              int max_turns = kDefaultMaxTurns) {
  std::vector<CaseContext> out;
  out.reserve(corpus.size());
  for (const auto& c : corpus) {
    const PatientProfile profile = build_profile(c);
    out.push_back(CaseContext{c, ActionVocabulary::for_case(c, profile),
                              make_env_factory(c, fixed_budget, min_turns, max_turns)});
  }
  return out;
}

// One optimization run: per step, sample a case batch, roll out a group per
// case, and take gradient-ascent epochs on the group objective. Aborts on any
// non-finite objective or gradient entry.
inline TrainReport train_loop(PolicyParameters& params, const PolicyParameters& ref,
                              const std::vector<CaseContext>& cases, const GrpoConfig& cfg,
                              int steps, Rng& rng) {
  cfg.validate();
  if (cases.empty()) throw std::invalid_argument("training corpus is empty");
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");

  TrainReport report;
  report.steps.reserve(static_cast<std::size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    std::vector<TrajectoryGroup> groups;
    groups.reserve(static_cast<std::size_t>(cfg.batch_size));
    double reward_sum = 0.0;
    double turns_sum = 0.0;
    long episode_count = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& ctx = cases[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<long long>(cases.size()) - 1))];
      TrajectoryGroup group = rollout_group(params, ref, ctx.vocab, ctx.env, ctx.c, cfg, rng);
      attach_advantages(group, cfg);
      for (const auto& t : group.items) {
        reward_sum += t.reward.total;
        turns_sum += static_cast<double>(t.episode.doctor_messages());
        ++episode_count;
      }
      groups.push_back(std::move(group));
    }

    StepRecord record;
    record.step = step;
    record.mean_reward = reward_sum / static_cast<double>(episode_count);
    record.mean_turns = turns_sum / static_cast<double>(episode_count);

    const double batch_inv = 1.0 / static_cast<double>(groups.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      ParamGrad total;
      double kl_mean = 0.0;
      double clip_mean = 0.0;
      double value = 0.0;
      for (const auto& group : groups) {
        ObjectiveResult res = grpo_objective(group, cfg, params);
        value += batch_inv * res.value;
        kl_mean += batch_inv * res.mean_kl;
        clip_mean += batch_inv * res.clip_fraction;
        for (const auto& [row, delta] : res.grad) accumulate(total, row, delta, batch_inv);
      }
      if (!std::isfinite(value)) throw std::runtime_error("non-finite objective during training");
      for (auto& [row, delta] : total) {
        for (auto& v : delta) {
          if (!std::isfinite(v)) throw std::runtime_error("non-finite gradient during training");
          v *= cfg.learning_rate;
        }
        params.add_to(row, delta);
      }
      if (epoch == 0) {
        record.mean_kl = kl_mean;
        record.clip_fraction = clip_mean;
      }
    }
    report.steps.push_back(record);
  }
  return report;
}

}  // namespace consultrl
