#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "consultrl/dataset.hpp"
#include "consultrl/grpo.hpp"

using namespace consultrl;

namespace {

constexpr int kActions = kVocabActions;

Trajectory make_trajectory(std::vector<TokenRecord> tokens, double reward_total = 0.0) {
  Trajectory t;
  t.case_id = "crafted";
  t.tokens = std::move(tokens);
  t.reward.total = reward_total;
  return t;
}

TokenRecord doctor_token(std::uint32_t row, int action, double logp_old, double logp_ref) {
  TokenRecord tok;
  tok.token_id = action;
  tok.state_index = row;
  tok.logp_current = logp_old;
  tok.logp_old = logp_old;
  tok.logp_ref = logp_ref;
  tok.mask = true;
  return tok;
}

TokenRecord patient_token() {
  TokenRecord tok;
  tok.token_id = 1;
  tok.mask = false;
  return tok;
}

struct Setup {
  ConsultationCase c;
  ActionVocabulary vocab;
  EnvFactory env;
};

Setup fixture_setup(std::optional<int> budget = std::nullopt) {
  const auto c = make_synthetic_corpus().front();
  const auto profile = build_profile(c);
  return Setup{c, ActionVocabulary::for_case(c, profile), make_env_factory(c, budget)};
}

// Central finite differences of the objective over every coordinate the
// analytic gradient touches.
void check_gradient_against_fd(const TrajectoryGroup& group, const GrpoConfig& cfg,
                               const PolicyParameters& params, double tol) {
  const ObjectiveResult res = grpo_objective(group, cfg, params);
  const double h = 1e-5;
  for (const auto& [row, grad_row] : res.grad) {
    for (int j = 0; j < kActions; ++j) {
      PolicyParameters up = params, down = params;
      auto zu = params.logits(row);
      auto zd = params.logits(row);
      zu[static_cast<std::size_t>(j)] += h;
      zd[static_cast<std::size_t>(j)] -= h;
      up.set_row(row, zu);
      down.set_row(row, zd);
      const double fd = (grpo_objective(group, cfg, up).value -
                         grpo_objective(group, cfg, down).value) /
                        (2 * h);
      const double g = grad_row[static_cast<std::size_t>(j)];
      const double scale = std::max(std::abs(fd), std::abs(g));
      if (scale < 1e-7) {
        CHECK(std::abs(fd - g) < 1e-7);
      } else {
        CHECK(std::abs(fd - g) / scale < tol);
      }
    }
  }
}

}  // namespace

TEST_CASE("advantages: all-equal rewards vanish") {
  const std::vector<double> rewards = {5, 5, 5, 5};
  for (const auto mode : {AdvantageMode::MeanStd, AdvantageMode::MeanOnly}) {
    for (const double a : compute_advantages(rewards, mode)) CHECK(a == 0.0);
  }
}

TEST_CASE("advantages: mean_std normalizes by the population deviation") {
  const auto adv = compute_advantages(std::vector<double>{10, 0}, AdvantageMode::MeanStd, 1e-8);
  CHECK(adv[0] == Catch::Approx(1.0).epsilon(1e-6));
  CHECK(adv[1] == Catch::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("advantages: mean_only subtracts the group mean") {
  const auto adv = compute_advantages(std::vector<double>{3, 1}, AdvantageMode::MeanOnly);
  CHECK(adv[0] == 1.0);
  CHECK(adv[1] == -1.0);
}

TEST_CASE("advantages reject a lone trajectory") {
  CHECK_THROWS_AS(compute_advantages(std::vector<double>{1.0}, AdvantageMode::MeanStd),
                  std::invalid_argument);
}

TEST_CASE("kl_low_var basics") {
  CHECK(kl_low_var(-1.7, -1.7) == 0.0);
  const double expected = 2.0 - std::log(2.0) - 1.0;
  CHECK(kl_low_var(-2.0, -2.0 + std::log(2.0)) == Catch::Approx(expected));
  SECTION("non-negative over random pairs") {
    Rng rng = make_rng(3);
    for (int i = 0; i < 10000; ++i) {
      const double lc = -12.0 * uniform_unit(rng);
      const double lr = -12.0 * uniform_unit(rng);
      CHECK(kl_low_var(lc, lr) >= 0.0);
    }
  }
  SECTION("ratio ceiling bounds the penalty") {
    CHECK(kl_low_var(-30.0, 0.0, 10.0) == Catch::Approx(10.0 - std::log(10.0) - 1.0));
  }
}

TEST_CASE("a deterministic policy and fixed budget give identical trajectories") {
  const auto setup = fixture_setup(4);
  int gold_action = -1;
  for (int a = kQuestionSlots; a < setup.vocab.size(); ++a) {
    if (setup.vocab.to_action(a).diagnosis == setup.c.gold_diagnosis) gold_action = a;
  }
  REQUIRE(gold_action >= 0);

  PolicyParameters params(kActions);
  const std::uint32_t start_row = StateSummary{0, 0, 4}.index();
  std::vector<double> row(kActions, 0.0);
  row[static_cast<std::size_t>(gold_action)] = 1e6;  // always diagnose with the gold pair
  params.set_row(start_row, row);

  GrpoConfig cfg;
  Rng rng = make_rng(9);
  const auto group = rollout_group(params, params, setup.vocab, setup.env, setup.c, cfg, rng);
  REQUIRE(group.items.size() == 8);
  for (const auto& t : group.items) {
    REQUIRE(t.tokens.size() == 1);
    CHECK(t.tokens[0].token_id == gold_action);
    CHECK(t.reward.total == group.items[0].reward.total);
    CHECK(t.reward.accuracy == 10.0);
  }
}

TEST_CASE("rollout groups are bitwise identical under a fixed seed") {
  const auto setup = fixture_setup();
  PolicyParameters params(kActions);
  GrpoConfig cfg;
  Rng r1 = make_rng(1234), r2 = make_rng(1234);
  const auto g1 = rollout_group(params, params, setup.vocab, setup.env, setup.c, cfg, r1);
  const auto g2 = rollout_group(params, params, setup.vocab, setup.env, setup.c, cfg, r2);
  REQUIRE(g1.items.size() == g2.items.size());
  for (std::size_t i = 0; i < g1.items.size(); ++i) {
    const auto& a = g1.items[i];
    const auto& b = g2.items[i];
    REQUIRE(a.tokens.size() == b.tokens.size());
    CHECK(a.reward.total == b.reward.total);
    for (std::size_t t = 0; t < a.tokens.size(); ++t) {
      CHECK(a.tokens[t].token_id == b.tokens[t].token_id);
      CHECK(a.tokens[t].state_index == b.tokens[t].state_index);
      CHECK(a.tokens[t].logp_old == b.tokens[t].logp_old);
      CHECK(a.tokens[t].logp_ref == b.tokens[t].logp_ref);
      CHECK(a.tokens[t].mask == b.tokens[t].mask);
    }
  }
}

TEST_CASE("rollout rejects groups smaller than two") {
  const auto setup = fixture_setup();
  PolicyParameters params(kActions);
  GrpoConfig cfg;
  cfg.group_size = 1;
  Rng rng = make_rng(5);
  CHECK_THROWS_AS(rollout_group(params, params, setup.vocab, setup.env, setup.c, cfg, rng),
                  std::invalid_argument);
}

TEST_CASE("with ratio one the objective is the mean advantage") {
  const PolicyParameters params(kActions);
  const double lp = logprob_of(params, 3, 1, 0.7);
  TrajectoryGroup group;
  group.items.push_back(make_trajectory({doctor_token(3, 1, lp, lp), patient_token(),
                                         doctor_token(3, 2, logprob_of(params, 3, 2, 0.7),
                                                      logprob_of(params, 3, 2, 0.7))}));
  group.items.push_back(make_trajectory({doctor_token(5, 0, logprob_of(params, 5, 0, 0.7),
                                                      logprob_of(params, 5, 0, 0.7))}));
  group.advantages = {0.8, -0.3};

  GrpoConfig cfg;
  cfg.kl_coef = 0.0;
  cfg.entropy_coef = 0.0;
  const auto res = grpo_objective(group, cfg, params);
  CHECK(res.value == Catch::Approx((0.8 - 0.3) / 2.0));
  CHECK(res.clip_fraction == 0.0);
  CHECK(res.mean_kl == 0.0);
}

TEST_CASE("zero advantages give zero objective and zero gradient") {
  const PolicyParameters params(kActions);
  const double lp = logprob_of(params, 3, 1, 0.7);
  TrajectoryGroup group;
  group.items.push_back(make_trajectory({doctor_token(3, 1, lp, lp)}));
  group.items.push_back(make_trajectory({doctor_token(3, 2, lp, lp)}));
  group.advantages = {0.0, 0.0};
  GrpoConfig cfg;
  cfg.kl_coef = 0.0;
  cfg.entropy_coef = 0.0;
  const auto res = grpo_objective(group, cfg, params);
  CHECK(res.value == 0.0);
  for (const auto& [row, g] : res.grad) {
    for (const double v : g) CHECK(v == 0.0);
  }
}

TEST_CASE("a ratio beyond the upper clip contributes the clipped surrogate") {
  const PolicyParameters params(kActions);
  const double lc = logprob_of(params, 7, 0, 0.7);
  GrpoConfig cfg;
  cfg.kl_coef = 0.0;
  cfg.entropy_coef = 0.0;

  TrajectoryGroup group;
  group.items.push_back(make_trajectory({doctor_token(7, 0, lc - std::log(1.5), lc)}));
  group.items.push_back(make_trajectory({doctor_token(7, 1, logprob_of(params, 7, 1, 0.7),
                                                      logprob_of(params, 7, 1, 0.7))}));
  group.advantages = {2.0, 0.0};

  const auto res = grpo_objective(group, cfg, params);
  // rho = 1.5 > 1.28: token contributes clip(rho) * A = 1.28 * 2.
  CHECK(res.value == Catch::Approx(0.5 * 1.28 * 2.0));
  CHECK(res.clip_fraction == Catch::Approx(0.5));
  for (const auto& [row, g] : res.grad) {
    for (const double v : g) CHECK(v == 0.0);  // clipped branch has no rho gradient
  }
}

TEST_CASE("inside the clip band the surrogate is exactly rho times the advantage") {
  const PolicyParameters params(kActions);
  Rng rng = make_rng(15);
  GrpoConfig cfg;
  cfg.kl_coef = 0.0;
  cfg.entropy_coef = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const double rho = 0.8 + (1.28 - 0.8) * uniform_unit(rng);
    const double adv = 4.0 * (uniform_unit(rng) - 0.5);
    const double lc = logprob_of(params, 2, 3, cfg.temperature);
    TrajectoryGroup group;
    group.items.push_back(make_trajectory({doctor_token(2, 3, lc - std::log(rho), lc)}));
    group.items.push_back(make_trajectory(
        {doctor_token(2, 4, logprob_of(params, 2, 4, cfg.temperature),
                      logprob_of(params, 2, 4, cfg.temperature))}));
    group.advantages = {adv, 0.0};
    const auto res = grpo_objective(group, cfg, params);
    CHECK(res.value == Catch::Approx(0.5 * rho * adv).margin(1e-12));
  }
}

TEST_CASE("below the lower clip with negative advantage the gradient vanishes") {
  const PolicyParameters params(kActions);
  GrpoConfig cfg;
  cfg.kl_coef = 0.0;
  cfg.entropy_coef = 0.0;
  const double lc = logprob_of(params, 9, 0, cfg.temperature);
  TrajectoryGroup group;
  // rho = 0.5 < 0.8 and A < 0: min() picks the clipped branch, flat in rho.
  group.items.push_back(make_trajectory({doctor_token(9, 0, lc - std::log(0.5), lc)}));
  group.items.push_back(make_trajectory(
      {doctor_token(9, 1, logprob_of(params, 9, 1, cfg.temperature),
                    logprob_of(params, 9, 1, cfg.temperature))}));
  group.advantages = {-1.5, 0.0};
  const auto res = grpo_objective(group, cfg, params);
  CHECK(res.value == Catch::Approx(0.5 * 0.8 * -1.5));
  for (const auto& [row, g] : res.grad) {
    for (const double v : g) CHECK(v == 0.0);
  }
}

TEST_CASE("mask=0 tokens are never read") {
  const auto setup = fixture_setup();
  PolicyParameters params(kActions);
  GrpoConfig cfg;
  Rng rng = make_rng(33);
  auto group = rollout_group(params, params, setup.vocab, setup.env, setup.c, cfg, rng);
  attach_advantages(group, cfg);

  const auto base = grpo_objective(group, cfg, params);
  Rng noise = make_rng(101);
  for (auto& traj : group.items) {
    for (auto& tok : traj.tokens) {
      if (tok.mask) continue;
      tok.logp_current = 100.0 * (uniform_unit(noise) - 0.5);
      tok.logp_old = 100.0 * (uniform_unit(noise) - 0.5);
      tok.logp_ref = 100.0 * (uniform_unit(noise) - 0.5);
      tok.token_id = static_cast<int>(uniform_int(noise, -1000, 1000));
    }
  }
  const auto scrambled = grpo_objective(group, cfg, params);
  CHECK(base.value == scrambled.value);
  REQUIRE(base.grad.size() == scrambled.grad.size());
  for (const auto& [row, g] : base.grad) {
    const auto& h = scrambled.grad.at(row);
    for (std::size_t j = 0; j < g.size(); ++j) CHECK(g[j] == h[j]);
  }
}

TEST_CASE("mean_only advantages ignore a constant reward shift") {
  const auto setup = fixture_setup();
  PolicyParameters params(kActions);
  GrpoConfig cfg;
  cfg.advantage_mode = AdvantageMode::MeanOnly;
  Rng rng = make_rng(71);
  auto group = rollout_group(params, params, setup.vocab, setup.env, setup.c, cfg, rng);
  attach_advantages(group, cfg);
  const auto base = grpo_objective(group, cfg, params);

  auto shifted = group;
  for (auto& t : shifted.items) t.reward.total += 17.5;
  attach_advantages(shifted, cfg);
  for (std::size_t i = 0; i < group.advantages.size(); ++i) {
    CHECK(shifted.advantages[i] == Catch::Approx(group.advantages[i]).margin(1e-12));
  }
  const auto moved = grpo_objective(shifted, cfg, params);
  CHECK(moved.value == Catch::Approx(base.value).margin(1e-12));
  REQUIRE(moved.grad.size() == base.grad.size());
  for (const auto& [row, g] : base.grad) {
    const auto& h = moved.grad.at(row);
    for (std::size_t j = 0; j < g.size(); ++j) {
      CHECK(h[j] == Catch::Approx(g[j]).margin(1e-12));
    }
  }
}

TEST_CASE("KL term is zero when the policy equals the reference snapshot") {
  const auto setup = fixture_setup();
  Rng seed_rng = make_rng(83);
  PolicyParameters params(kActions);
  // Give the shared start rows some structure first.
  for (std::uint32_t budget = 2; budget <= 10; ++budget) {
    std::vector<double> row(kActions);
    for (auto& v : row) v = uniform_unit(seed_rng) - 0.5;
    params.set_row(StateSummary{0, 0, static_cast<int>(budget)}.index(), row);
  }
  GrpoConfig cfg;
  Rng rng = make_rng(29);
  auto group = rollout_group(params, params, setup.vocab, setup.env, setup.c, cfg, rng);
  attach_advantages(group, cfg);
  const auto res = grpo_objective(group, cfg, params);
  CHECK(res.mean_kl == 0.0);
}

TEST_CASE("objective rejects degenerate trajectories") {
  const PolicyParameters params(kActions);
  GrpoConfig cfg;
  SECTION("no masked tokens") {
    TrajectoryGroup group;
    group.items.push_back(make_trajectory({patient_token()}));
    group.items.push_back(make_trajectory({patient_token()}));
    group.advantages = {0.0, 0.0};
    CHECK_THROWS_AS(grpo_objective(group, cfg, params), std::invalid_argument);
  }
  SECTION("missing logp_old") {
    TrajectoryGroup group;
    group.items.push_back(make_trajectory(
        {doctor_token(0, 0, std::numeric_limits<double>::quiet_NaN(), -1.0)}));
    group.items.push_back(make_trajectory({doctor_token(0, 1, -1.0, -1.0)}));
    group.advantages = {0.0, 0.0};
    CHECK_THROWS_AS(grpo_objective(group, cfg, params), std::invalid_argument);
  }
  SECTION("advantages not attached") {
    TrajectoryGroup group;
    group.items.push_back(make_trajectory({doctor_token(0, 0, -1.0, -1.0)}));
    group.items.push_back(make_trajectory({doctor_token(0, 1, -1.0, -1.0)}));
    CHECK_THROWS_AS(grpo_objective(group, cfg, params), std::invalid_argument);
  }
}

TEST_CASE("analytic gradient matches finite differences on sampled groups") {
  const auto setup = fixture_setup();
  Rng rng = make_rng(303);
  for (int config = 0; config < 5; ++config) {
    PolicyParameters params(kActions);
    for (std::uint32_t budget = 2; budget <= 10; ++budget) {
      std::vector<double> row(kActions);
      for (auto& v : row) v = 2.0 * (uniform_unit(rng) - 0.5);
      params.set_row(StateSummary{0, 0, static_cast<int>(budget)}.index(), row);
    }
    GrpoConfig cfg;
    cfg.kl_coef = 0.01 * uniform_unit(rng);
    cfg.entropy_coef = 0.01 * uniform_unit(rng);
    auto group = rollout_group(params, params, setup.vocab, setup.env, setup.c, cfg, rng);
    // Detach logp_old/logp_ref from the live policy so the ratios and KL
    // terms are non-trivial.
    for (auto& t : group.items) {
      for (auto& tok : t.tokens) {
        if (!tok.mask) continue;
        tok.logp_old += 0.4 * (uniform_unit(rng) - 0.5);
        tok.logp_ref += 0.4 * (uniform_unit(rng) - 0.5);
      }
    }
    attach_advantages(group, cfg);
    check_gradient_against_fd(group, cfg, params, 1e-4);
  }
}

TEST_CASE("train_loop leaves parameters alone when steps is zero") {
  const auto corpus = make_synthetic_corpus();
  const auto contexts = prepare_cases({corpus.front()});
  PolicyParameters params(kActions);
  const PolicyParameters before = params;
  Rng rng = make_rng(7);
  const auto report = train_loop(params, before, contexts, GrpoConfig{}, 0, rng);
  CHECK(report.steps.empty());
  CHECK(params == before);
}

TEST_CASE("train_loop is deterministic and reports sane statistics") {
  const auto corpus = make_synthetic_corpus();
  const auto contexts = prepare_cases({corpus[0], corpus[1]});
  GrpoConfig cfg;
  cfg.batch_size = 1;

  PolicyParameters p1(kActions), p2(kActions);
  const PolicyParameters ref(kActions);
  Rng r1 = make_rng(55), r2 = make_rng(55);
  const auto rep1 = train_loop(p1, ref, contexts, cfg, 10, r1);
  const auto rep2 = train_loop(p2, ref, contexts, cfg, 10, r2);
  CHECK(p1 == p2);
  REQUIRE(rep1.steps.size() == 10);
  for (std::size_t i = 0; i < rep1.steps.size(); ++i) {
    CHECK(rep1.steps[i].mean_reward == rep2.steps[i].mean_reward);
    CHECK(rep1.steps[i].clip_fraction >= 0.0);
    CHECK(rep1.steps[i].clip_fraction <= 1.0);
    CHECK(rep1.steps[i].mean_turns >= 0.0);
    CHECK(std::isfinite(rep1.steps[i].mean_kl));
  }
}

TEST_CASE("training improves the mean reward on a single case") {
  const auto corpus = make_synthetic_corpus();
  const auto contexts = prepare_cases({corpus.front()}, 5);
  GrpoConfig cfg;
  cfg.batch_size = 1;
  PolicyParameters params(kActions);
  const PolicyParameters ref = params;
  Rng rng = make_rng(2024);
  const auto report = train_loop(params, ref, contexts, cfg, 400, rng);

  auto window = [&](std::size_t from, std::size_t count) {
    double sum = 0.0;
    for (std::size_t i = from; i < from + count; ++i) sum += report.steps[i].mean_reward;
    return sum / static_cast<double>(count);
  };
  const double early = window(0, 30);
  const double late = window(report.steps.size() - 30, 30);
  CHECK(late > early + 2.0);
}

TEST_CASE("multi-epoch training exercises the clip machinery") {
  const auto corpus = make_synthetic_corpus();
  const auto contexts = prepare_cases({corpus.front()}, 5);
  GrpoConfig cfg;
  cfg.batch_size = 1;
  cfg.epochs = 3;
  cfg.learning_rate = 0.5;  // large steps push ratios outside the band
  PolicyParameters params(kActions);
  Rng rng = make_rng(31);
  const auto report = train_loop(params, params, contexts, cfg, 20, rng);
  REQUIRE(report.steps.size() == 20);
}

TEST_CASE("train_loop aborts on non-finite numbers") {
  const auto corpus = make_synthetic_corpus();
  const auto contexts = prepare_cases({corpus.front()}, 3);
  PolicyParameters params(kActions);
  params.set_row(StateSummary{0, 0, 3}.index(),
                 std::vector<double>(kActions, std::numeric_limits<double>::quiet_NaN()));
  GrpoConfig cfg;
  cfg.batch_size = 1;
  Rng rng = make_rng(13);
  CHECK_THROWS_AS(train_loop(params, params, contexts, cfg, 1, rng), std::runtime_error);
}
