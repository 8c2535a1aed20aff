#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "scb/data.hpp"
#include "scb/error.hpp"
#include "scb/experiments.hpp"
#include "scb/geometry.hpp"
#include "scb/serialize.hpp"

using namespace scb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("scb_test_" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

ExperimentConfig tiny_train_config(const std::string& out) {
  ExperimentConfig c = parse_config(R"({
    "dims": {"T": 120, "N": 3, "Q": 2, "C": 2.0},
    "gen_seed": 1,
    "mode": "prox",
    "seeds": [1, 2],
    "log_every": 10,
    "schedule": {
      "stage1": {"eta": 0.05, "lambda": 0.0, "batch": 16, "steps": 120},
      "lambda0": "auto",
      "stage2": {"eta": 0.03, "lambda": 1e-4, "batch": 16, "steps": 120},
      "stage3_cutoff": "auto",
      "stage3": {"eta": 0.03, "batch": 16, "steps": 30},
      "v_refit": "retrain"
    }
  })");
  c.out_dir = out;
  return c;
}

}  // namespace

TEST_CASE("config parsing fills nested fields and rejects bad values") {
  ExperimentConfig c = parse_config(R"({
    "dims": {"T": 50, "N": 4, "Q": 2, "C": 3.0},
    "mode": "sgd",
    "seeds": [7, 8, 9],
    "deterministic": true,
    "schedule": {"stage1": {"eta_V": 0.1, "eta_A": 0.2, "steps": 5},
                  "lambda0": 0.125},
    "transfer": {"theta": 0.4, "first_step_batch": 123},
    "simulate": {"B": 32, "noise_mode": "sgd",
                  "consts": {"N": 100, "T": 100000.0, "K_P": 0.02}}
  })");
  CHECK(c.dims.N == 4);
  CHECK(c.mode == "sgd");
  CHECK(c.seeds.size() == 3);
  CHECK(c.deterministic);
  CHECK(c.schedule.stage1.eta_V == doctest::Approx(0.1));
  CHECK(c.schedule.lambda0 == 0.125);
  CHECK(c.transfer.config.theta == doctest::Approx(0.4));
  CHECK(c.transfer.config.first_step_batch == 123);
  CHECK(c.simulate.consts.N == 100);
  CHECK(c.simulate.noise_mode == "sgd");

  CHECK_THROWS_AS(parse_config("{ not json"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"schedule": {"lambda0": "never"}})"),
                  ValidationError);
}

TEST_CASE("stage resolution: normalized eta divides by the task constants") {
  TaskConstants consts{0.4, 0.5};
  StageSpec spec;
  spec.eta = 0.02;
  spec.steps = 10;
  StageConfig cfg = resolve_stage(spec, consts);
  CHECK(cfg.eta_V == doctest::Approx(0.02 / 0.5));
  CHECK(cfg.eta_A == doctest::Approx(0.02 / 0.4));
  spec.eta_A = 0.7;  // explicit override wins
  CHECK(resolve_stage(spec, consts).eta_A == doctest::Approx(0.7));
}

TEST_CASE("cmd_generate writes a reloadable task and is seed-deterministic") {
  TempDir dir("generate");
  ExperimentConfig c;
  c.dims = {200, 3, 2, 2.0};
  c.gen_seed = 11;
  c.out_dir = dir.str();
  c.export_samples = 7;
  CHECK(cmd_generate(c) == 0);

  const std::string path = dir.str() + "/gt.json";
  GroundTruth gt = ground_truth_from_json(read_file(path));
  CHECK(gt.dims().T == 200);
  CHECK_NOTHROW(gt.constants());
  auto samples = samples_from_jsonl(read_file(dir.str() + "/samples.jsonl"));
  CHECK(samples.size() == 7);

  TempDir dir2("generate_again");
  c.out_dir = dir2.str();
  CHECK(cmd_generate(c) == 0);
  CHECK(read_file(path) == read_file(dir2.str() + "/gt.json"));
}

TEST_CASE("cmd_generate surfaces infeasible conditioning as an error") {
  TempDir dir("generate_bad");
  ExperimentConfig c;
  c.dims = {50, 2, 1, 1.0001};
  c.out_dir = dir.str();
  CHECK_THROWS_AS(cmd_generate(c), GenerationError);
}

TEST_CASE("cmd_train produces per-seed CSVs and a consistent summary") {
  TempDir dir("train");
  ExperimentConfig c = tiny_train_config(dir.str());
  RunSummary summary = cmd_train(c);
  REQUIRE(summary.per_seed.size() == 2);
  for (const SeedResult& r : summary.per_seed) {
    CHECK(!r.diverged);
    CHECK(r.error.empty());
    CHECK(r.postnorm_valid);
    CHECK(fs::exists(dir.path / r.csv_file));
  }
  CHECK(fs::exists(dir.path / "summary.json"));

  // CSV header matches the documented schema.
  const std::string csv = read_file((dir.path / "seed_1.csv").string());
  CHECK(csv.rfind("step,stage,loss_est,alpha_V,alpha_A,delta_V_mu,delta_A_mu,"
                  "dist_V_mu,dist_A_mu,off_support_max\n", 0) == 0);
}

TEST_CASE("identical configs give byte-identical outputs") {
  TempDir a("det_a"), b("det_b");
  ExperimentConfig ca = tiny_train_config(a.str());
  ca.deterministic = true;
  ExperimentConfig cb = tiny_train_config(b.str());
  cb.deterministic = true;
  cmd_train(ca);
  cmd_train(cb);
  for (const char* name : {"seed_1.csv", "seed_2.csv"}) {
    CHECK(read_file((a.path / name).string()) ==
          read_file((b.path / name).string()));
  }
  // Summaries agree on everything except wall-clock timings.
  auto strip_clock = [](std::string text) {
    std::string out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
      if (line.find("wall_clock_s") == std::string::npos) out += line + "\n";
    return out;
  };
  CHECK(strip_clock(read_file((a.path / "summary.json").string())) ==
        strip_clock(read_file((b.path / "summary.json").string())));
}

TEST_CASE("train CSV rows satisfy the projection identity") {
  // Reconstructing K_V from the logged alpha and residual columns must be
  // consistent: K_V = alpha_V^2 K_P + delta_V^2 within 1e-8.
  TempDir dir("rows");
  ExperimentConfig c = tiny_train_config(dir.str());
  c.seeds = {3};
  GroundTruth gt = config_ground_truth(c);
  const TaskConstants consts = gt.constants();
  Schedule schedule = resolve_schedule(c.schedule, consts);
  RunOptions opts;
  opts.log_every = 5;
  TrainState st = run_algorithm1(gt, schedule, std::nullopt, 3, opts);
  REQUIRE(!st.trajectory.empty());
  for (const TrajectoryRow& row : st.trajectory) {
    CHECK(std::abs(row.K_V - (row.alpha_V * row.alpha_V * consts.K_P +
                              row.delta_V_mu * row.delta_V_mu)) <= 1e-8);
    CHECK(std::abs(row.K_A - (row.alpha_A * row.alpha_A * consts.K_Q +
                              row.delta_A_mu * row.delta_A_mu)) <= 1e-8);
  }
}

TEST_CASE("cmd_simulate writes trajectories in the trainer schema") {
  TempDir dir("sim");
  ExperimentConfig c;
  c.mode = "reduced_sim";
  c.seeds = {1, 2, 3};
  c.out_dir = dir.str();
  c.simulate.steps = 200;
  c.simulate.eta = 0.01;
  c.simulate.B = 64;
  c.simulate.noise_mode = "prox";
  c.simulate.consts = {3, 5000.0, 2, 0.4, 0.5, 0.35};
  RunSummary summary = cmd_simulate(c);
  CHECK(summary.per_seed.size() == 3);
  const std::string csv = read_file((dir.path / "sim_seed_1.csv").string());
  CHECK(csv.rfind("step,stage,loss_est,", 0) == 0);

  // sigma_scale = 0 reproduces the deterministic recursion for every seed.
  ExperimentConfig c0 = c;
  TempDir dir0("sim0");
  c0.out_dir = dir0.str();
  c0.simulate.sigma_scale = 0.0;
  RunSummary s0 = cmd_simulate(c0);
  CHECK(read_file((dir0.path / "sim_seed_1.csv").string()) ==
        read_file((dir0.path / "sim_seed_2.csv").string()));
  CHECK(s0.per_seed[0].final_alpha_V ==
        doctest::Approx(s0.per_seed[1].final_alpha_V));
}

TEST_CASE("cmd_transfer runs end to end and records the pretrained task") {
  TempDir dir("transfer");
  ExperimentConfig c = parse_config(R"({
    "dims": {"T": 150, "N": 3, "Q": 2, "C": 2.0},
    "gen_seed": 5,
    "mode": "transfer",
    "seeds": [1, 2],
    "log_every": 50,
    "schedule": {
      "stage2": {"eta": 0.03, "lambda": 1e-4, "batch": 64, "steps": 200},
      "stage3": {"eta": 0.03, "batch": 64, "steps": 40}
    },
    "transfer": {"theta": 0.4, "gamma": 1.0, "first_step_batch": 4000,
                  "pretrain_kind": "line"}
  })");
  c.out_dir = dir.str();
  RunSummary summary = cmd_transfer(c);
  REQUIRE(summary.per_seed.size() == 2);
  CHECK(fs::exists(dir.path / "pretrained.json"));
  const std::string text = read_file((dir.path / "pretrained.json").string());
  CHECK(text.find("\"role\": \"pretrained\"") != std::string::npos);
  for (const SeedResult& r : summary.per_seed) CHECK(r.error.empty());
}

TEST_CASE("summary json round-trips the fields the acceptance suite reads") {
  RunSummary s;
  s.mode = "prox";
  SeedResult r;
  r.seed = 4;
  r.final_dist_A = 0.25;
  r.postnorm_dist_A = 0.05;
  r.postnorm_valid = true;
  s.per_seed.push_back(r);
  const std::string text = summary_to_json(s);
  CHECK(text.find("\"mode\": \"prox\"") != std::string::npos);
  CHECK(text.find("post_normalization") != std::string::npos);
}

TEST_CASE("thread budget respects the environment cap") {
  ExperimentConfig c;
  CHECK(thread_budget(c) >= 1);
}
