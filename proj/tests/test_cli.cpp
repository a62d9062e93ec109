#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "consultrl/cli.hpp"

using namespace consultrl;

namespace {

std::string fixture_path() { return std::string(CONSULTRL_DATA_DIR) + "/synthetic_corpus.jsonl"; }

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("consultrl-cli-" + name)).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

RunConfig base_config(const std::string& command) {
  RunConfig cfg;
  cfg.command = command;
  cfg.corpus_path = fixture_path();
  cfg.seed = 42;
  return cfg;
}

std::string format4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

TEST_CASE("invalid configurations fail with exit code 1 before any work") {
  SECTION("judge metrics need an endpoint") {
    auto cfg = base_config("score");
    cfg.use_judge = true;
    CHECK(run_command(cfg) == 1);
  }
  SECTION("bad clip band") {
    auto cfg = base_config("simulate");
    cfg.grpo.clip_low = 0.0;
    CHECK(run_command(cfg) == 1);
  }
  SECTION("bad budget range") {
    auto cfg = base_config("simulate");
    cfg.budget_min = 9;
    cfg.budget_max = 3;
    CHECK(run_command(cfg) == 1);
  }
  SECTION("missing corpus flag") {
    RunConfig cfg;
    cfg.command = "stats";
    CHECK(run_command(cfg) == 1);
  }
  SECTION("nonexistent corpus file") {
    auto cfg = base_config("stats");
    cfg.corpus_path = "/nonexistent/corpus.jsonl";
    CHECK(run_command(cfg) == 1);
  }
  SECTION("unknown command") {
    auto cfg = base_config("frobnicate");
    CHECK(run_command(cfg) == 1);
  }
}

TEST_CASE("simulate with the oracle doctor scores 10 plus the asked facts") {
  auto cfg = base_config("simulate");
  cfg.out_path = temp_path("oracle.jsonl");
  REQUIRE(run_command(cfg) == 0);

  const auto corpus = load_corpus(fixture_path());
  const auto transcripts = load_transcripts(cfg.out_path);
  REQUIRE(transcripts.size() == corpus.size());
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    const auto& t = transcripts[i];
    const auto facts = build_profile(corpus[i]).facts.size();
    const auto asked = std::min<std::size_t>(facts, static_cast<std::size_t>(t.budget_total - 1));
    CHECK(t.reward.total == 10.0 + static_cast<double>(asked));
    REQUIRE(t.final_diagnosis.has_value());
    CHECK(t.final_diagnosis->first == corpus[i].gold_diagnosis);
  }
  std::filesystem::remove(cfg.out_path);
}

TEST_CASE("simulate respects a fixed budget cap") {
  auto cfg = base_config("simulate");
  cfg.fixed_budget = 2;
  cfg.out_path = temp_path("budget2.jsonl");
  REQUIRE(run_command(cfg) == 0);
  for (const auto& t : load_transcripts(cfg.out_path)) {
    CHECK(t.budget_total == 2);
    CHECK(t.steps.size() <= 2);  // doctor messages, including the diagnose step
  }
  std::filesystem::remove(cfg.out_path);
}

TEST_CASE("simulate is byte-deterministic under a fixed seed") {
  auto cfg = base_config("simulate");
  cfg.out_path = temp_path("det1.jsonl");
  REQUIRE(run_command(cfg) == 0);
  const std::string first = read_file(cfg.out_path);

  cfg.out_path = temp_path("det2.jsonl");
  REQUIRE(run_command(cfg) == 0);
  CHECK(read_file(cfg.out_path) == first);

  SECTION("parallel execution does not change the output") {
    cfg.out_path = temp_path("det4.jsonl");
    cfg.jobs = 4;
    REQUIRE(run_command(cfg) == 0);
    CHECK(read_file(cfg.out_path) == first);
  }
  std::filesystem::remove(temp_path("det1.jsonl"));
  std::filesystem::remove(temp_path("det2.jsonl"));
  std::filesystem::remove(temp_path("det4.jsonl"));
}

TEST_CASE("training for zero steps writes the initialization snapshot") {
  auto cfg = base_config("train");
  cfg.steps = 0;
  cfg.snapshot_path = temp_path("init.snapshot");
  cfg.out_path = temp_path("init-report.jsonl");
  REQUIRE(run_command(cfg) == 0);

  std::ifstream snap(cfg.snapshot_path);
  const auto params = PolicyParameters::load(snap);
  CHECK(params == PolicyParameters(kVocabActions));
  CHECK(read_file(cfg.out_path).empty());
  std::filesystem::remove(cfg.snapshot_path);
  std::filesystem::remove(cfg.out_path);
}

TEST_CASE("a trained snapshot drives simulate") {
  auto train_cfg = base_config("train");
  train_cfg.steps = 30;
  train_cfg.grpo.batch_size = 1;
  train_cfg.snapshot_path = temp_path("short.snapshot");
  train_cfg.out_path = temp_path("short-report.jsonl");
  REQUIRE(run_command(train_cfg) == 0);

  // Report lines carry the documented fields.
  std::istringstream report(read_file(train_cfg.out_path));
  std::string line;
  int lines = 0;
  while (std::getline(report, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step") == lines);
    CHECK(j.contains("mean_reward"));
    CHECK(j.contains("mean_kl"));
    CHECK(j.at("clip_fraction") >= 0.0);
    CHECK(j.at("clip_fraction") <= 1.0);
    CHECK(j.contains("mean_turns"));
    ++lines;
  }
  CHECK(lines == 30);

  auto sim_cfg = base_config("simulate");
  sim_cfg.snapshot_path = train_cfg.snapshot_path;
  sim_cfg.out_path = temp_path("toy-sim.jsonl");
  REQUIRE(run_command(sim_cfg) == 0);
  CHECK(load_transcripts(sim_cfg.out_path).size() == 20);

  std::filesystem::remove(train_cfg.snapshot_path);
  std::filesystem::remove(train_cfg.out_path);
  std::filesystem::remove(sim_cfg.out_path);
}

TEST_CASE("train is byte-deterministic under a fixed seed") {
  auto cfg = base_config("train");
  cfg.steps = 15;
  cfg.grpo.batch_size = 1;
  cfg.snapshot_path = temp_path("det-a.snapshot");
  cfg.out_path = temp_path("det-a.jsonl");
  REQUIRE(run_command(cfg) == 0);
  const std::string snap_a = read_file(cfg.snapshot_path);
  const std::string report_a = read_file(cfg.out_path);

  cfg.snapshot_path = temp_path("det-b.snapshot");
  cfg.out_path = temp_path("det-b.jsonl");
  REQUIRE(run_command(cfg) == 0);
  CHECK(read_file(cfg.snapshot_path) == snap_a);
  CHECK(read_file(cfg.out_path) == report_a);

  for (const auto& n : {"det-a.snapshot", "det-a.jsonl", "det-b.snapshot", "det-b.jsonl"}) {
    std::filesystem::remove(temp_path(n));
  }
}

TEST_CASE("score reproduces the transcripts' recorded metrics") {
  auto sim_cfg = base_config("simulate");
  sim_cfg.out_path = temp_path("score-input.jsonl");
  REQUIRE(run_command(sim_cfg) == 0);

  auto score_cfg = base_config("score");
  score_cfg.corpus_path = sim_cfg.out_path;
  score_cfg.out_path = temp_path("score-report.txt");
  REQUIRE(run_command(score_cfg) == 0);
  const std::string report = read_file(score_cfg.out_path);

  // Oracle episodes diagnose the gold answer exactly.
  CHECK(report.find("overall: episodes=20 score_pct=100.0000") != std::string::npos);
  CHECK(report.find("warning") == std::string::npos);

  const auto transcripts = load_transcripts(sim_cfg.out_path);
  double turns = 0.0, reward = 0.0;
  for (const auto& t : transcripts) {
    turns += static_cast<double>(t.steps.size());
    reward += t.reward.total;
    CHECK(rescore_transcript(t).total == t.reward.total);
  }
  CHECK(report.find("mean_turns=" + format4(turns / 20.0)) != std::string::npos);
  CHECK(report.find("mean_reward=" + format4(reward / 20.0)) != std::string::npos);
  CHECK(report.find("category Digestive System Diseases") != std::string::npos);

  std::filesystem::remove(sim_cfg.out_path);
  std::filesystem::remove(score_cfg.out_path);
}

TEST_CASE("stats renders the corpus report") {
  auto cfg = base_config("stats");
  cfg.out_path = temp_path("stats.txt");
  REQUIRE(run_command(cfg) == 0);
  const std::string report = read_file(cfg.out_path);
  CHECK(report.find("cases: 20") != std::string::npos);
  CHECK(report.find("train: 16") != std::string::npos);
  CHECK(report.find("test: 4") != std::string::npos);
  std::filesystem::remove(cfg.out_path);
}

TEST_CASE("consult runs a piped session and its transcript re-scores identically") {
  auto cfg = base_config("consult");
  cfg.fixed_budget = 3;
  cfg.out_path = temp_path("consult.jsonl");
  std::filesystem::remove(cfg.out_path);

  // The oracle doctor asks two questions under budget 3, then diagnoses.
  std::istringstream session("my first answer\nmy second answer\n");
  std::ostringstream console;
  REQUIRE(run_command(cfg, session, console) == 0);

  const std::string shown = console.str();
  CHECK(shown.find("Doctor:") != std::string::npos);
  CHECK(shown.find("Diagnosis:") != std::string::npos);
  CHECK(shown.find("Reward:") != std::string::npos);

  const auto transcripts = load_transcripts(cfg.out_path);
  REQUIRE(transcripts.size() == 1);
  const auto& t = transcripts.front();
  CHECK(t.steps.size() == 3);
  CHECK(t.steps.back().action == "diagnose");
  CHECK(rescore_transcript(t).total == t.reward.total);

  SECTION("piped sessions are deterministic") {
    const std::string first = read_file(cfg.out_path);
    std::filesystem::remove(cfg.out_path);
    std::istringstream again("my first answer\nmy second answer\n");
    std::ostringstream sink;
    REQUIRE(run_command(cfg, again, sink) == 0);
    CHECK(read_file(cfg.out_path) == first);
  }
  std::filesystem::remove(cfg.out_path);
}

TEST_CASE("consult ends gracefully on end-of-input") {
  auto cfg = base_config("consult");
  cfg.fixed_budget = 5;
  cfg.out_path = temp_path("consult-eof.jsonl");
  std::filesystem::remove(cfg.out_path);

  std::istringstream session("only one answer\n");
  std::ostringstream console;
  REQUIRE(run_command(cfg, session, console) == 0);
  CHECK(console.str().find("session ended before a diagnosis") != std::string::npos);

  const auto transcripts = load_transcripts(cfg.out_path);
  REQUIRE(transcripts.size() == 1);
  CHECK_FALSE(transcripts.front().final_diagnosis.has_value());
  CHECK(transcripts.front().reward.compliance == -5.0);
  std::filesystem::remove(cfg.out_path);
}

TEST_CASE("refusal and repeat sentences typed by the human are classified") {
  auto cfg = base_config("consult");
  cfg.fixed_budget = 3;
  cfg.out_path = temp_path("consult-kinds.jsonl");
  std::filesystem::remove(cfg.out_path);

  std::istringstream session(
      "Sorry, I cannot answer this question.\nSorry, you've already asked this question.\n");
  std::ostringstream console;
  REQUIRE(run_command(cfg, session, console) == 0);
  const auto t = load_transcripts(cfg.out_path).front();
  REQUIRE(t.steps.size() >= 2);
  CHECK(t.steps[0].reply == "refusal");
  CHECK(t.steps[1].reply == "repeat");
  CHECK(t.reward.information == -4.0);
  std::filesystem::remove(cfg.out_path);
}
