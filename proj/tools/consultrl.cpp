#include <optional>
#include <string>

#include <CLI11.hpp>

#include "consultrl/cli.hpp"

namespace {

// Splits "lo:hi" into a budget range.
std::pair<int, int> parse_budget_range(const std::string& s) {
  const std::size_t colon = s.find(':');
  if (colon == std::string::npos) {
    throw CLI::ValidationError("--budget-range", "expected lo:hi");
  }
  try {
    return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--budget-range", "expected integers lo:hi");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"consultrl: multi-turn consultation simulation, GRPO training and scoring"};
  app.require_subcommand(1);

  consultrl::RunConfig cfg;
  int budget_flag = 0;
  std::string budget_range;
  std::string advantage_mode = "mean_std";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--corpus", cfg.corpus_path,
                    "input records file (corpus, or transcripts for score/judge)");
    sub->add_option("--seed", cfg.seed, "root random seed");
    sub->add_option("--budget", budget_flag, "fixed per-episode turn budget");
    sub->add_option("--budget-range", budget_range, "dynamic budget range lo:hi");
    sub->add_option("--group-size", cfg.grpo.group_size, "rollout group size");
    sub->add_option("--clip-low", cfg.grpo.clip_low, "lower clip epsilon");
    sub->add_option("--clip-high", cfg.grpo.clip_high, "upper clip epsilon");
    sub->add_option("--kl-coef", cfg.grpo.kl_coef, "KL penalty coefficient");
    sub->add_option("--entropy-coef", cfg.grpo.entropy_coef, "entropy bonus coefficient");
    sub->add_option("--temperature", cfg.grpo.temperature, "sampling temperature");
    sub->add_option("--learning-rate", cfg.grpo.learning_rate, "toy policy learning rate");
    sub->add_option("--batch-size", cfg.grpo.batch_size, "cases per training step");
    sub->add_option("--epochs", cfg.grpo.epochs, "optimizer epochs per batch");
    sub->add_option("--advantage-mode", advantage_mode, "mean_std or mean_only");
    sub->add_option("--steps", cfg.steps, "training steps");
    sub->add_option("--snapshot", cfg.snapshot_path, "policy snapshot path");
    sub->add_option("--endpoint", cfg.endpoint, "chat-completion endpoint URL");
    sub->add_option("--model", cfg.model, "model name for LLM-backed runs");
    sub->add_flag("--judge", cfg.use_judge, "add judge-based metrics (score)");
    sub->add_option("--jobs", cfg.jobs, "parallel episodes for batch commands");
    sub->add_option("--out", cfg.out_path, "output file path");
    return sub;
  };

  add_common(app.add_subcommand("simulate", "run scripted-patient episodes over a corpus"));
  add_common(app.add_subcommand("train", "GRPO training of the toy doctor policy"));
  add_common(app.add_subcommand("score", "offline metrics over a transcripts file"));
  add_common(app.add_subcommand("judge", "patient-fidelity judging of transcripts"));
  add_common(app.add_subcommand("stats", "corpus statistics report"));
  add_common(app.add_subcommand("consult", "interactive console, human as patient"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  cfg.command = app.get_subcommands().front()->get_name();
  if (budget_flag > 0) cfg.fixed_budget = budget_flag;
  if (!budget_range.empty()) {
    try {
      std::tie(cfg.budget_min, cfg.budget_max) = parse_budget_range(budget_range);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 1;
    }
  }
  if (advantage_mode == "mean_std") {
    cfg.grpo.advantage_mode = consultrl::AdvantageMode::MeanStd;
  } else if (advantage_mode == "mean_only") {
    cfg.grpo.advantage_mode = consultrl::AdvantageMode::MeanOnly;
  } else {
    std::cerr << "error: --advantage-mode must be mean_std or mean_only\n";
    return 1;
  }

  return consultrl::run_command(cfg);
}
