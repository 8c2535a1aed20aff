#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "scb/error.hpp"
#include "scb/experiments.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

int summary_exit_code(const scb::RunSummary& summary) {
  bool any_divergence = false;
  bool any_other = false;
  for (const auto& r : summary.per_seed) {
    if (r.diverged)
      any_divergence = true;
    else if (!r.error.empty())
      any_other = true;
  }
  if (any_divergence && !any_other) return kExitDivergence;
  return 0;
}

void print_summary(const scb::RunSummary& summary) {
  std::cout << scb::summary_to_json(summary);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse contextual bigram training laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  bool deterministic = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")
        ->required();
    cmd->add_option("--out", out_dir, "output directory (overrides config)");
    cmd->add_flag("--deterministic", deterministic,
                  "single-threaded, bit-reproducible outputs");
  };

  CLI::App* generate = app.add_subcommand("generate", "write a ground-truth task file");
  CLI::App* train = app.add_subcommand("train", "run the training pipeline over seeds");
  CLI::App* simulate = app.add_subcommand("simulate", "reduced Gaussian-noise dynamics");
  CLI::App* transfer = app.add_subcommand("transfer", "pretrained-initialization pipeline");
  CLI::App* oracle = app.add_subcommand("oracle-check", "closed forms vs enumeration report");
  CLI::App* softmax = app.add_subcommand("softmax-compare", "linear vs softmax attention");
  for (CLI::App* cmd : {generate, train, simulate, transfer, oracle, softmax})
    add_common(cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    scb::ExperimentConfig config = scb::load_config(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (deterministic) config.deterministic = true;

    if (generate->parsed()) return scb::cmd_generate(config);
    if (oracle->parsed()) return scb::cmd_oracle_check(config);

    scb::RunSummary summary;
    if (train->parsed())
      summary = scb::cmd_train(config);
    else if (simulate->parsed())
      summary = scb::cmd_simulate(config);
    else if (transfer->parsed())
      summary = scb::cmd_transfer(config);
    else
      summary = scb::cmd_softmax_compare(config);
    print_summary(summary);
    return summary_exit_code(summary);
  } catch (const scb::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const scb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
