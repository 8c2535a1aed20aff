#include "scb/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "scb/data.hpp"
#include "scb/error.hpp"
#include "scb/geometry.hpp"
#include "scb/oracle.hpp"
#include "scb/serialize.hpp"

namespace scb {

using nlohmann::json;
namespace fs = std::filesystem;

StageConfig resolve_stage(const StageSpec& spec, const TaskConstants& consts) {
  StageConfig cfg;
  if (spec.eta) {
    cfg.eta_V = *spec.eta / consts.K_Q;
    cfg.eta_A = *spec.eta / consts.K_P;
  }
  if (spec.eta_V) cfg.eta_V = *spec.eta_V;
  if (spec.eta_A) cfg.eta_A = *spec.eta_A;
  cfg.lambda = spec.lambda;
  cfg.batch_size = spec.batch;
  cfg.stop.fixed_steps = spec.steps;
  cfg.stop.signal_threshold = spec.signal_threshold;
  cfg.stop.max_steps = spec.max_steps;
  cfg.stop.validate();
  return cfg;
}

Schedule resolve_schedule(const ScheduleSpec& spec,
                          const TaskConstants& consts) {
  Schedule s;
  s.stage1 = resolve_stage(spec.stage1, consts);
  s.stage2 = resolve_stage(spec.stage2, consts);
  s.stage3 = resolve_stage(spec.stage3, consts);
  s.stage3.eta_A = 0.0;
  s.stage3.lambda = 0.0;
  s.lambda0 = spec.lambda0;
  s.stage3_cutoff = spec.stage3_cutoff;
  s.validate();
  return s;
}

namespace {

StageSpec parse_stage(const json& j) {
  StageSpec s;
  if (j.contains("eta")) s.eta = j["eta"].get<double>();
  if (j.contains("eta_V")) s.eta_V = j["eta_V"].get<double>();
  if (j.contains("eta_A")) s.eta_A = j["eta_A"].get<double>();
  if (j.contains("lambda")) s.lambda = j["lambda"].get<double>();
  if (j.contains("batch")) s.batch = j["batch"].get<int>();
  if (j.contains("steps")) s.steps = j["steps"].get<long>();
  if (j.contains("signal_threshold"))
    s.signal_threshold = j["signal_threshold"].get<double>();
  if (j.contains("max_steps")) s.max_steps = j["max_steps"].get<long>();
  return s;
}

std::optional<double> parse_auto(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  if (j[key].is_string()) {
    if (j[key].get<std::string>() == "auto") return std::nullopt;
    throw ValidationError(std::string("config: ") + key +
                          " must be a number or \"auto\"");
  }
  return j[key].get<double>();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config JSON: ") + e.what());
  }
  ExperimentConfig c;
  if (doc.contains("dims")) {
    const auto& d = doc["dims"];
    c.dims.T = d.value("T", c.dims.T);
    c.dims.N = d.value("N", c.dims.N);
    c.dims.Q = d.value("Q", c.dims.Q);
    c.dims.C = d.value("C", c.dims.C);
  }
  c.gen_seed = doc.value("gen_seed", c.gen_seed);
  c.gt_file = doc.value("gt_file", c.gt_file);
  c.mode = doc.value("mode", c.mode);
  if (doc.contains("seeds"))
    c.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
  c.out_dir = doc.value("out", c.out_dir);
  c.log_every = doc.value("log_every", c.log_every);
  c.deterministic = doc.value("deterministic", c.deterministic);
  c.sgd_plain = doc.value("sgd_plain", c.sgd_plain);
  c.sgd_small_eta = doc.value("sgd_small_eta", c.sgd_small_eta);
  c.export_samples = doc.value("export_samples", c.export_samples);

  if (doc.contains("schedule")) {
    const auto& s = doc["schedule"];
    if (s.contains("stage1")) c.schedule.stage1 = parse_stage(s["stage1"]);
    if (s.contains("stage2")) c.schedule.stage2 = parse_stage(s["stage2"]);
    if (s.contains("stage3")) c.schedule.stage3 = parse_stage(s["stage3"]);
    c.schedule.lambda0 = parse_auto(s, "lambda0");
    c.schedule.stage3_cutoff = parse_auto(s, "stage3_cutoff");
    c.schedule.v_refit = s.value("v_refit", c.schedule.v_refit);
  }
  if (doc.contains("transfer")) {
    const auto& t = doc["transfer"];
    c.transfer.config.theta = t.value("theta", c.transfer.config.theta);
    c.transfer.config.gamma = t.value("gamma", c.transfer.config.gamma);
    c.transfer.config.eps_tmp = t.value("eps_tmp", c.transfer.config.eps_tmp);
    c.transfer.config.first_step_batch =
        t.value("first_step_batch", c.transfer.config.first_step_batch);
    c.transfer.config.threshold_const =
        t.value("threshold_const", c.transfer.config.threshold_const);
    c.transfer.config.eta_first =
        t.value("eta_first", c.transfer.config.eta_first);
    c.transfer.pretrain_kind =
        t.value("pretrain_kind", c.transfer.pretrain_kind);
    c.transfer.pretrain_seed =
        t.value("pretrain_seed", c.transfer.pretrain_seed);
  }
  if (doc.contains("simulate")) {
    const auto& s = doc["simulate"];
    c.simulate.steps = s.value("steps", c.simulate.steps);
    c.simulate.eta = s.value("eta", c.simulate.eta);
    c.simulate.B = s.value("B", c.simulate.B);
    c.simulate.sigma_scale = s.value("sigma_scale", c.simulate.sigma_scale);
    c.simulate.noise_mode = s.value("noise_mode", c.simulate.noise_mode);
    if (s.contains("consts")) {
      const auto& k = s["consts"];
      c.simulate.consts.N = k.value("N", c.simulate.consts.N);
      c.simulate.consts.T = k.value("T", c.simulate.consts.T);
      c.simulate.consts.Q = k.value("Q", c.simulate.consts.Q);
      c.simulate.consts.K_P = k.value("K_P", c.simulate.consts.K_P);
      c.simulate.consts.K_Q = k.value("K_Q", c.simulate.consts.K_Q);
      c.simulate.consts.mu_norm_sq =
          k.value("mu_norm_sq", c.simulate.consts.mu_norm_sq);
    }
  }
  if (doc.contains("softmax")) {
    const auto& s = doc["softmax"];
    c.softmax.steps = s.value("steps", c.softmax.steps);
    c.softmax.batch = s.value("batch", c.softmax.batch);
    c.softmax.eta = s.value("eta", c.softmax.eta);
    c.softmax.eta_w = s.value("eta_w", c.softmax.eta_w);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  return parse_config(read_file(path));
}

int thread_budget(const ExperimentConfig& config) {
  (void)config;  // per-seed outputs are thread-count independent by design
  int budget = static_cast<int>(std::thread::hardware_concurrency());
  if (budget <= 0) budget = 1;
  if (const char* env = std::getenv("SCB_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) budget = std::min(budget, cap);
  }
  return budget;
}

GroundTruth config_ground_truth(const ExperimentConfig& config) {
  if (!config.gt_file.empty())
    return ground_truth_from_json(read_file(config.gt_file));
  return gen_ground_truth(config.dims, config.gen_seed);
}

namespace {

int auto_log_every(const ExperimentConfig& config, long total_steps) {
  if (config.log_every > 0) return config.log_every;
  return total_steps < 10000 ? 1 : 10;
}

long planned_steps(const StageSpec& s) {
  return s.steps ? *s.steps : s.max_steps;
}

void run_seeds_parallel(const ExperimentConfig& config, int count,
                        const std::function<void(int)>& body) {
  const int budget = std::min(thread_budget(config), count);
  if (budget <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(budget);
  for (int w = 0; w < budget; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        body(i);
      }
    });
  for (auto& t : pool) t.join();
}

void snapshot_final(SeedResult& result, const ModelParams& params,
                    const GroundTruth& gt) {
  PopulationProjection proj = project(params, gt);
  result.final_alpha_V = proj.alpha_V;
  result.final_alpha_A = proj.alpha_A;
  result.final_dist_V = mu_norm(params.V - gt.P(), gt.mu());
  result.final_dist_A = mu_norm(params.A - gt.Qmat(), gt.mu());
}

// Rounding + V recovery applied to a copy of the parameters; fills the
// post-normalization distances unless the rounding fails.
void snapshot_postnorm(SeedResult& result, const ModelParams& params,
                       const GroundTruth& gt, const ExperimentConfig& config,
                       TrainState* retrain_state, const Schedule* schedule,
                       const RunOptions* opts) {
  const double cutoff =
      config.schedule.stage3_cutoff.value_or(0.25 / gt.dims().Q);
  try {
    ModelParams rounded = params;
    rounded.A = thresholding_normalization(rounded.A, cutoff);
    if (config.schedule.v_refit == "population") {
      rounded.V = population_v_refit(rounded.A, gt);
    } else if (retrain_state && schedule && opts) {
      retrain_state->params = rounded;
      run_stage(*retrain_state, gt, schedule->stage3, 3, *opts);
      rounded = retrain_state->params;
    }
    result.postnorm_dist_V = mu_norm(rounded.V - gt.P(), gt.mu());
    result.postnorm_dist_A = mu_norm(rounded.A - gt.Qmat(), gt.mu());
    result.postnorm_valid = true;
  } catch (const RoundingError& e) {
    if (result.error.empty()) result.error = e.what();
  }
}

void finalize_summary(RunSummary& summary) {
  double fa = 0.0, pa = 0.0, pv = 0.0;
  int n = 0, pn = 0;
  for (const SeedResult& r : summary.per_seed) {
    fa += r.final_dist_A;
    ++n;
    if (r.postnorm_valid) {
      pa += r.postnorm_dist_A;
      pv += r.postnorm_dist_V;
      ++pn;
    }
  }
  summary.mean_final_dist_A = n > 0 ? fa / n : 0.0;
  summary.mean_postnorm_dist_A = pn > 0 ? pa / pn : 0.0;
  summary.mean_postnorm_dist_V = pn > 0 ? pv / pn : 0.0;
}

}  // namespace

int cmd_generate(const ExperimentConfig& config) {
  fs::create_directories(config.out_dir);
  GroundTruth gt = config_ground_truth(config);
  const std::string path = (fs::path(config.out_dir) / "gt.json").string();
  write_file(path, ground_truth_to_json(gt));
  TaskConstants consts = gt.constants();
  std::cout << "wrote " << path << "\n"
            << "K_P = " << consts.K_P << ", K_Q = " << consts.K_Q << "\n";
  for (const std::string& w : gt.warnings())
    std::cerr << "warning: " << w << "\n";
  if (config.export_samples > 0) {
    std::vector<Sample> samples =
        sample_batch(gt, config.export_samples, config.gen_seed, 0);
    write_file((fs::path(config.out_dir) / "samples.jsonl").string(),
               samples_to_jsonl(samples));
  }
  return 0;
}

RunSummary cmd_train(const ExperimentConfig& config) {
  fs::create_directories(config.out_dir);
  GroundTruth gt = config_ground_truth(config);
  const TaskConstants consts = gt.constants();
  Schedule schedule = resolve_schedule(config.schedule, consts);
  if (config.mode == "sgd_small_lr") {
    StageSpec small = config.schedule.stage2;
    small.eta = config.sgd_small_eta;
    small.eta_V.reset();
    small.eta_A.reset();
    schedule.stage2 = resolve_stage(small, consts);
  }

  const long total = planned_steps(config.schedule.stage1) +
                     planned_steps(config.schedule.stage2) +
                     planned_steps(config.schedule.stage3);
  RunSummary summary;
  summary.mode = config.mode;
  summary.per_seed.resize(config.seeds.size());

  run_seeds_parallel(
      config, static_cast<int>(config.seeds.size()), [&](int i) {
        const std::uint64_t seed = config.seeds[i];
        SeedResult& result = summary.per_seed[i];
        result.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();

        RunOptions opts;
        opts.log_every = auto_log_every(config, total);
        opts.source = config.mode == "population" ? GradSource::population
                                                  : GradSource::minibatch;

        TrainState state;
        state.seed = seed;
        state.params = ModelParams::scratch_init(gt);
        try {
          if (config.mode == "prox" || config.mode == "population") {
            run_stage(state, gt, schedule.stage1, 1, opts);
            PopulationProjection proj = project(state.params, gt);
            const double lambda0 = schedule.lambda0.value_or(
                0.5 * proj.alpha_V / gt.dims().Q);
            state.params.A = thresholding_projection(state.params.A, lambda0);
            run_stage(state, gt, schedule.stage2, 2, opts);
            snapshot_final(result, state.params, gt);
            snapshot_postnorm(result, state.params, gt, config, &state,
                              &schedule, &opts);
          } else if (config.mode == "sgd" || config.mode == "sgd_small_lr") {
            state = run_vanilla_sgd(gt, schedule, std::nullopt, seed, opts,
                                    !config.sgd_plain);
            snapshot_final(result, state.params, gt);
            snapshot_postnorm(result, state.params, gt, config, nullptr,
                              nullptr, nullptr);
          } else {
            throw ValidationError("cmd_train: unsupported mode " + config.mode);
          }
        } catch (const DivergenceError& e) {
          result.diverged = true;
          result.error = e.what();
          snapshot_final(result, state.params, gt);
        }

        result.csv_file = "seed_" + std::to_string(seed) + ".csv";
        write_file((fs::path(config.out_dir) / result.csv_file).string(),
                   trajectory_to_csv(state.trajectory));
        result.wall_clock_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
      });

  finalize_summary(summary);
  write_file((fs::path(config.out_dir) / "summary.json").string(),
             summary_to_json(summary));
  return summary;
}

RunSummary cmd_simulate(const ExperimentConfig& config) {
  fs::create_directories(config.out_dir);
  const ReducedConsts& rc = config.simulate.consts;
  ReducedConfig cfg;
  cfg.steps = config.simulate.steps;
  cfg.eta = config.simulate.eta;
  cfg.B = config.simulate.B;
  cfg.sigma_scale = config.simulate.sigma_scale;
  cfg.mode = config.simulate.noise_mode == "sgd" ? NoiseMode::sgd
                                                 : NoiseMode::prox;
  cfg.log_every = auto_log_every(config, config.simulate.steps);

  RunSummary summary;
  summary.mode = "reduced_sim/" + config.simulate.noise_mode;
  summary.per_seed.resize(config.seeds.size());
  run_seeds_parallel(
      config, static_cast<int>(config.seeds.size()), [&](int i) {
        const std::uint64_t seed = config.seeds[i];
        SeedResult& result = summary.per_seed[i];
        result.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<ReducedRow> rows = reduced_noise_simulate(rc, cfg, seed);

        std::vector<TrajectoryRow> traj;
        traj.reserve(rows.size());
        for (const ReducedRow& r : rows) {
          TrajectoryRow row;
          row.step = r.step;
          row.stage = 2;
          const double dv_sq = r.state.delta_V_sq * rc.K_P;
          const double da_sq = r.state.delta_A_sq * rc.K_Q;
          row.alpha_V = r.state.alpha_V;
          row.alpha_A = r.state.alpha_A;
          row.delta_V_mu = std::sqrt(std::max(0.0, dv_sq));
          row.delta_A_mu = std::sqrt(std::max(0.0, da_sq));
          row.dist_V_mu = std::sqrt(std::max(
              0.0, (1.0 - r.state.alpha_V) * (1.0 - r.state.alpha_V) * rc.K_P +
                       dv_sq));
          row.dist_A_mu = std::sqrt(std::max(
              0.0, (1.0 - r.state.alpha_A) * (1.0 - r.state.alpha_A) * rc.K_Q +
                       da_sq));
          // Population loss reconstructed from the scalar coordinates.
          const double K_VP = r.state.alpha_V * rc.K_P;
          const double K_AQ = r.state.alpha_A * rc.K_Q;
          const double K_V = r.state.alpha_V * r.state.alpha_V * rc.K_P + dv_sq;
          const double K_A = r.state.alpha_A * r.state.alpha_A * rc.K_Q + da_sq;
          const double QA = K_AQ + 1.0 / rc.T;
          const double VP = K_VP + rc.mu_norm_sq;
          const double A_musq = K_A + 1.0 / rc.T;
          const double V_musq = K_V + rc.mu_norm_sq;
          const double cross = QA * VP + (1.0 - QA) * rc.mu_norm_sq;
          const double quad = A_musq * V_musq + (1.0 - A_musq) * rc.mu_norm_sq;
          row.loss_est = 0.5 * (1.0 - 2.0 * cross + quad);
          traj.push_back(row);
        }
        result.csv_file = "sim_seed_" + std::to_string(seed) + ".csv";
        write_file((fs::path(config.out_dir) / result.csv_file).string(),
                   trajectory_to_csv(traj));
        const TrajectoryRow& last = traj.back();
        result.final_dist_V = last.dist_V_mu;
        result.final_dist_A = last.dist_A_mu;
        result.final_alpha_V = last.alpha_V;
        result.final_alpha_A = last.alpha_A;
        result.wall_clock_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
      });
  finalize_summary(summary);
  write_file((fs::path(config.out_dir) / "summary.json").string(),
             summary_to_json(summary));
  return summary;
}

RunSummary cmd_transfer(const ExperimentConfig& config) {
  fs::create_directories(config.out_dir);
  GroundTruth gt = config_ground_truth(config);
  const TaskConstants consts = gt.constants();
  ScheduleSpec spec = config.schedule;
  // Stage 1 never runs in the transfer pipeline; configs may omit it.
  if (!spec.stage1.steps && !spec.stage1.signal_threshold)
    spec.stage1.steps = 0;
  Schedule schedule = resolve_schedule(spec, consts);

  Rng pretrain_rng(config.transfer.pretrain_seed, "pretrain");
  const PretrainKind kind = config.transfer.pretrain_kind == "line"
                                ? PretrainKind::line
                                : PretrainKind::metropolis;
  PretrainedTask task =
      gen_pretrained(gt, config.transfer.config.gamma, pretrain_rng, kind);
  {
    GroundTruth pretrained = GroundTruth::unchecked(
        gt.dims(), task.P_hat, gt.mu(), gt.Qmat());
    write_file((fs::path(config.out_dir) / "pretrained.json").string(),
               ground_truth_to_json(pretrained, "pretrained"));
  }
  std::vector<std::string> warnings;
  config.transfer.config.validate(gt, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";

  const long total = planned_steps(config.schedule.stage2) +
                     planned_steps(config.schedule.stage3);
  RunSummary summary;
  summary.mode = "transfer";
  summary.per_seed.resize(config.seeds.size());
  run_seeds_parallel(
      config, static_cast<int>(config.seeds.size()), [&](int i) {
        const std::uint64_t seed = config.seeds[i];
        SeedResult& result = summary.per_seed[i];
        result.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();
        RunOptions opts;
        opts.log_every = auto_log_every(config, total);

        TrainState state;
        state.seed = seed;
        state.params = init_transfer(task, gt, config.transfer.config.theta);
        try {
          transfer_first_step(state, gt, config.transfer.config, opts.source);
          run_stage(state, gt, schedule.stage2, 2, opts);
          snapshot_final(result, state.params, gt);
          snapshot_postnorm(result, state.params, gt, config, &state,
                            &schedule, &opts);
        } catch (const TransferError& e) {
          result.error = e.what();
          snapshot_final(result, state.params, gt);
        } catch (const DivergenceError& e) {
          result.diverged = true;
          result.error = e.what();
          snapshot_final(result, state.params, gt);
        }
        result.csv_file = "transfer_seed_" + std::to_string(seed) + ".csv";
        write_file((fs::path(config.out_dir) / result.csv_file).string(),
                   trajectory_to_csv(state.trajectory));
        result.wall_clock_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
      });
  finalize_summary(summary);
  write_file((fs::path(config.out_dir) / "summary.json").string(),
             summary_to_json(summary));
  return summary;
}

namespace {

double cosine_to_targets(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Q) {
  const double num = (A.array() * Q.array()).sum();
  const double den = A.norm() * Q.norm();
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace

RunSummary cmd_softmax_compare(const ExperimentConfig& config) {
  fs::create_directories(config.out_dir);
  // Shared attention target across query tokens: the softmax variant has a
  // single logit vector, so the task must not make attention depend on the
  // last token for the comparison to be meaningful.
  Dims dims = config.dims;
  dims.validate();
  auto [P, mu] = gen_transition(dims.N, dims.C, 100000, config.gen_seed);
  Eigen::MatrixXd one_col =
      gen_attention_targets(dims.T, 1, dims.Q, dims.C, config.gen_seed);
  Eigen::MatrixXd Qmat(dims.T, dims.N);
  for (int k = 0; k < dims.N; ++k) Qmat.col(k) = one_col.col(0);
  GroundTruth gt(dims, std::move(P), std::move(mu), std::move(Qmat));
  const TaskConstants consts = gt.constants();

  RunSummary summary;
  summary.mode = "softmax_compare";
  summary.per_seed.resize(config.seeds.size());
  run_seeds_parallel(
      config, static_cast<int>(config.seeds.size()), [&](int i) {
        const std::uint64_t seed = config.seeds[i];
        SeedResult& result = summary.per_seed[i];
        result.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();

        ModelParams linear = ModelParams::scratch_init(gt);
        SoftmaxModel soft;
        soft.V = linear.V;
        soft.w = Eigen::VectorXd::Zero(gt.dims().T);

        const double eta_V = config.softmax.eta / consts.K_Q;
        const double eta_A = config.softmax.eta / consts.K_P;
        const int B = config.softmax.batch;
        const int log_every = auto_log_every(config, config.softmax.steps);

        std::string csv =
            "step,linear_loss,softmax_loss,linear_cos,softmax_cos\n";
        std::uint64_t counter = 0;
        char buf[160];
        for (long step = 0; step < config.softmax.steps; ++step) {
          std::vector<Sample> batch = sample_batch(gt, B, seed, counter);
          counter += static_cast<std::uint64_t>(B);

          double linear_loss = 0.0, soft_loss = 0.0;
          for (const Sample& s : batch) {
            linear_loss += per_sample_loss(linear, s);
            soft_loss += softmax_loss(soft, s);
          }
          linear_loss /= B;
          soft_loss /= B;

          BatchGrads lg = batch_grads(linear, batch, gt.mu());
          step_V(linear, lg.preconditioned.gV, eta_V);
          step_A_proximal(linear, lg.preconditioned.gA, eta_A, 0.0);

          Eigen::MatrixXd gV = Eigen::MatrixXd::Zero(soft.V.rows(), soft.V.cols());
          Eigen::VectorXd gw = Eigen::VectorXd::Zero(soft.w.size());
          for (const Sample& s : batch) {
            gV += softmax_grad_V(soft, s);
            gw += softmax_grad_w(soft, s);
          }
          gV /= B;
          gw /= B;
          GradPair wrapped{gV,
                           Eigen::MatrixXd::Zero(gt.dims().T, gt.dims().N)};
          soft.V -= eta_V * precondition(wrapped, gt.mu()).gV;
          soft.w -= config.softmax.eta_w * gw;

          if ((step + 1) % log_every == 0 || step + 1 == config.softmax.steps) {
            const Eigen::VectorXd a_sigma = softmax_attention(soft.w);
            Eigen::MatrixXd tiled(gt.dims().T, gt.dims().N);
            for (int k = 0; k < gt.dims().N; ++k) tiled.col(k) = a_sigma;
            std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g\n",
                          step + 1, linear_loss, soft_loss,
                          cosine_to_targets(linear.A, gt.Qmat()),
                          cosine_to_targets(tiled, gt.Qmat()));
            csv += buf;
          }
          if ((step + 1) == config.softmax.steps) {
            result.linear_loss = linear_loss;
            result.softmax_loss = soft_loss;
            result.linear_cos = cosine_to_targets(linear.A, gt.Qmat());
            Eigen::MatrixXd tiled(gt.dims().T, gt.dims().N);
            const Eigen::VectorXd a_sigma = softmax_attention(soft.w);
            for (int k = 0; k < gt.dims().N; ++k) tiled.col(k) = a_sigma;
            result.softmax_cos = cosine_to_targets(tiled, gt.Qmat());
          }
        }
        result.csv_file = "softmax_seed_" + std::to_string(seed) + ".csv";
        write_file((fs::path(config.out_dir) / result.csv_file).string(), csv);
        result.wall_clock_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
      });
  finalize_summary(summary);
  write_file((fs::path(config.out_dir) / "summary.json").string(),
             summary_to_json(summary));
  return summary;
}

int cmd_oracle_check(const ExperimentConfig& config) {
  fs::create_directories(config.out_dir);
  json report;
  double worst = 0.0;
  int pair_index = 0;
  for (const auto& [N, T] : std::vector<std::pair<int, int>>{{2, 3}, {3, 4}}) {
    Dims dims{T, N, std::min(2, T), 4.0};
    MomentReport merged;
    for (int rep = 0; rep < 20; ++rep) {
      GroundTruth gt = gen_small_task(dims, config.gen_seed + 31 * pair_index + rep);
      Rng rng(config.gen_seed, "oracle-params",
              static_cast<std::uint64_t>(31 * pair_index + rep));
      ModelParams params = random_feasible_params(N, T, gt.mu(), rng);
      MomentReport r = exact_moment_checks(gt, params);
      for (const auto& [k, v] : r.max_abs_diff)
        merged.max_abs_diff[k] = std::max(merged.max_abs_diff[k], v);
    }
    json block;
    for (const auto& [k, v] : merged.max_abs_diff) block[k] = v;
    report["N" + std::to_string(N) + "_T" + std::to_string(T)] = block;
    worst = std::max(worst, merged.worst());
    ++pair_index;
  }
  report["max_abs_diff"] = worst;
  report["tolerance"] = 1e-10;
  report["pass"] = worst <= 1e-10;
  write_file((fs::path(config.out_dir) / "oracle_report.json").string(),
             report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return worst <= 1e-10 ? 0 : 2;
}

std::string summary_to_json(const RunSummary& summary) {
  json doc;
  doc["mode"] = summary.mode;
  doc["mean_final_dist_A"] = summary.mean_final_dist_A;
  doc["mean_postnorm_dist_A"] = summary.mean_postnorm_dist_A;
  doc["mean_postnorm_dist_V"] = summary.mean_postnorm_dist_V;
  json seeds = json::array();
  for (const SeedResult& r : summary.per_seed) {
    json s;
    s["seed"] = r.seed;
    s["diverged"] = r.diverged;
    if (!r.error.empty()) s["error"] = r.error;
    s["final"] = {{"dist_V_mu", r.final_dist_V},
                  {"dist_A_mu", r.final_dist_A},
                  {"alpha_V", r.final_alpha_V},
                  {"alpha_A", r.final_alpha_A}};
    if (r.postnorm_valid)
      s["post_normalization"] = {{"dist_V_mu", r.postnorm_dist_V},
                                 {"dist_A_mu", r.postnorm_dist_A}};
    if (summary.mode == "softmax_compare")
      s["compare"] = {{"linear_loss", r.linear_loss},
                      {"softmax_loss", r.softmax_loss},
                      {"linear_cos", r.linear_cos},
                      {"softmax_cos", r.softmax_cos}};
    s["wall_clock_s"] = r.wall_clock_s;
    s["csv"] = r.csv_file;
    seeds.push_back(s);
  }
  doc["per_seed"] = seeds;
  return doc.dump(2) + "\n";
}

}  // namespace scb
