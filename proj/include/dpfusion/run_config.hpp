#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dpfusion/traffic.hpp"
#include "dpfusion/training.hpp"

// Experiment configuration and the orchestration used by the command-line
// runner: single-budget training cells, budget sweeps with both policy
// families, and the metrics files behind the tradeoff figures.

namespace dpfusion::cli {

struct RunConfig {
  // environment
  std::string env_name;  // linear_gaussian | random_walk | traffic
  std::string data_csv;  // traffic source
  env::TrafficConfig traffic;
  env::LinearGaussianConfig linear;
  env::RandomWalkDensityConfig random_walk;

  // policy / estimator sizes
  int hidden = 32;
  int head_hidden = 32;
  int d = 2;
  double init_log_std = -1.0;

  // privacy
  double alpha = 2.0;
  double budget = 1.5;
  std::vector<double> budgets = {0.5, 1.0, 1.5, 3.0};

  train::PpoConfig ppo;

  std::uint64_t seed = 1;
  int eval_seeds = 20;
  std::string out_dir = "runs/out";

  static RunConfig defaults();
  // Throws ConfigError naming the offending field path.
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_json_text() const;
};

// Owns whatever heavyweight data environments share (the traffic dataset is
// loaded once) and stamps out per-rollout instances.
class EnvFactory {
 public:
  explicit EnvFactory(const RunConfig& cfg);

  std::unique_ptr<env::Environment> make(env::Split split) const;
  int sensors() const { return sensors_; }
  int measurement_dim() const { return measurement_dim_; }
  int horizon() const { return horizon_; }
  double state_scale() const { return state_scale_; }

 private:
  RunConfig cfg_;
  std::shared_ptr<const env::TrafficDataset> traffic_;
  int sensors_ = 0;
  int measurement_dim_ = 0;
  int horizon_ = 0;
  double state_scale_ = 1.0;
};

struct CellResult {
  double budget = 0.0;
  bool classical = false;
  train::TrainResult trained;
  train::EvalStats eval;  // test split, cfg.eval_seeds episodes
};

// Trains one (budget, policy-family) cell and evaluates it on the test
// split with common random numbers across cells.
CellResult train_cell(const EnvFactory& factory, const RunConfig& cfg,
                      double budget, bool classical);

std::vector<ad::NamedTensor> checkpoint_tensors(
    const fusion::FusionPolicy& policy, const fusion::Estimator& estimator,
    const train::Critic& critic);

struct SweepResult {
  std::vector<CellResult> cells;  // budget-major, adaptive before classical
};

// All cells of the budget sweep; cells run in parallel where cores allow.
SweepResult run_sweep(const RunConfig& cfg);

// Emission of the per-figure CSVs plus config snapshot and manifest.
void write_sweep_outputs(const RunConfig& cfg, const SweepResult& sweep);

// Single-budget training run: checkpoint + training log + config snapshot.
CellResult run_train(const RunConfig& cfg);

}  // namespace dpfusion::cli
