#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scb/population.hpp"
#include "scb/trainer.hpp"
#include "scb/transfer.hpp"
#include "scb/types.hpp"

namespace scb {

// Stage settings as written in the config; "eta" is the normalized step size
// (eta_V = eta/K_Q, eta_A = eta/K_P), resolvable only once the task
// constants are known. Explicit eta_V/eta_A override it.
struct StageSpec {
  std::optional<double> eta;
  std::optional<double> eta_V, eta_A;
  double lambda = 0.0;
  int batch = 64;
  std::optional<long> steps;
  std::optional<double> signal_threshold;
  long max_steps = 1000000;
};

StageConfig resolve_stage(const StageSpec& spec, const TaskConstants& consts);

struct ScheduleSpec {
  StageSpec stage1, stage2, stage3;
  std::optional<double> lambda0;        // nullopt = auto
  std::optional<double> stage3_cutoff;  // nullopt = auto
  std::string v_refit = "retrain";      // or "population"
};

Schedule resolve_schedule(const ScheduleSpec& spec, const TaskConstants& consts);

struct TransferSpec {
  TransferConfig config;
  std::string pretrain_kind = "metropolis";  // or "line"
  std::uint64_t pretrain_seed = 0;
};

struct SimulateSpec {
  ReducedConsts consts;
  long steps = 1000;
  double eta = 0.01;
  int B = 64;
  double sigma_scale = 1.0;
  std::string noise_mode = "prox";  // or "sgd"
};

struct SoftmaxSpec {
  long steps = 2000;
  int batch = 256;
  double eta = 0.05;     // normalized step for both V updates and linear A
  double eta_w = 50.0;   // plain-GD step on the softmax logits
};

struct ExperimentConfig {
  Dims dims{50, 3, 2, 2.0};
  std::uint64_t gen_seed = 0;
  std::string gt_file;  // when set, load instead of generating
  std::string mode = "prox";
  std::vector<std::uint64_t> seeds{1};
  std::string out_dir = "out";
  int log_every = 0;  // 0 = auto: 1 below 1e4 steps, else 10
  bool deterministic = false;
  bool sgd_plain = false;  // disable preconditioning in the SGD baseline
  double sgd_small_eta = 0.001;
  int export_samples = 0;
  ScheduleSpec schedule;
  TransferSpec transfer;
  SimulateSpec simulate;
  SoftmaxSpec softmax;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

struct SeedResult {
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string error;  // non-divergence per-seed failure (e.g. rounding)
  double final_dist_V = 0.0, final_dist_A = 0.0;
  double final_alpha_V = 0.0, final_alpha_A = 0.0;
  double postnorm_dist_V = 0.0, postnorm_dist_A = 0.0;
  bool postnorm_valid = false;
  // softmax_compare mode only
  double linear_loss = 0.0, softmax_loss = 0.0;
  double linear_cos = 0.0, softmax_cos = 0.0;
  double wall_clock_s = 0.0;
  std::string csv_file;
};

struct RunSummary {
  std::string mode;
  std::vector<SeedResult> per_seed;
  double mean_final_dist_A = 0.0;
  double mean_postnorm_dist_A = 0.0;
  double mean_postnorm_dist_V = 0.0;
};

// Resolve the ground truth for a config: load gt_file or generate
// deterministically from (dims, gen_seed).
GroundTruth config_ground_truth(const ExperimentConfig& config);

int cmd_generate(const ExperimentConfig& config);
RunSummary cmd_train(const ExperimentConfig& config);
RunSummary cmd_simulate(const ExperimentConfig& config);
RunSummary cmd_transfer(const ExperimentConfig& config);
RunSummary cmd_softmax_compare(const ExperimentConfig& config);
int cmd_oracle_check(const ExperimentConfig& config);

std::string summary_to_json(const RunSummary& summary);

// Max threads for per-seed parallelism; reads SCB_THREADS. Seeds use
// disjoint substreams and files, so outputs never depend on the budget.
int thread_budget(const ExperimentConfig& config);

}  // namespace scb
