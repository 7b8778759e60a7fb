#pragma once

#include <string>
#include <vector>

#include "dpfusion/policy.hpp"

// Alternating optimization: joint gradient descent on filter + estimator
// under a frozen fusion head, then proximal policy optimization of the
// fusion-vector policy against a learned cost-to-go critic.

namespace dpfusion::train {

struct PpoConfig {
  double clip_epsilon = 0.2;
  double actor_lr = 3e-4;      // surrogate step size
  double critic_lr = 1e-3;     // regression step size
  double learning_rate = 1e-3; // joint-phase step size (the paper's step
                               // size symbol collides with the Renyi order)
  int batch_episodes = 64;     // M
  int epochs_per_batch = 4;
  int outer_rounds = 3;
  double inner_tol = 1e-4;     // relative improvement threshold
  int patience = 10;
  int max_joint_updates = 150;
  int max_ppo_iterations = 40;
  int critic_steps_per_batch = 25;
  int validation_episodes = 16;
  double log_ratio_cap = 20.0;

  void validate() const;
};

struct CriticConfig {
  int hidden = 32;
  int head_hidden = 32;
  int d = 2;
  double value_scale = 1.0;
};

// Cost-to-go regressor J(s_k, h_k) over released history only.
class Critic {
 public:
  Critic() = default;
  Critic(const CriticConfig& cfg, std::uint64_t seed);

  // Tracked predictions J_1..J_K along one trajectory; inputs are the
  // stored Z history and the remaining-budget fractions, nothing else.
  std::vector<ad::Tensor> predictions(
      const fusion::TrajectoryRecord& rec) const;
  std::vector<double> values(const fusion::TrajectoryRecord& rec) const;

  std::vector<ad::NamedTensor> parameters() const;
  Critic clone() const;
  const CriticConfig& config() const { return cfg_; }

 private:
  CriticConfig cfg_;
  ad::GatedCell encoder_;
  ad::Mlp head_;
};

// One Eq.-23 step: M fresh rollouts, gradient of the mean summed error
// through estimator, fusion composition, and filter; gains and noise are
// rollout constants. Returns the batch mean of the per-episode summed error.
double joint_update(const fusion::FusionPolicy& policy,
                    const fusion::Estimator& estimator, ad::Adam& optimizer,
                    env::Environment& environment, int episodes,
                    double global_budget, double alpha,
                    std::uint64_t seed_base, double learning_rate);

struct AdvantageBatch {
  std::vector<std::vector<double>> raw;         // cost-to-go minus critic
  std::vector<std::vector<double>> normalized;  // zero mean, unit variance
};

// Undiscounted cost-to-go minus the supplied critic values.
AdvantageBatch advantages_from_values(
    const std::vector<fusion::TrajectoryRecord>& batch,
    const std::vector<std::vector<double>>& critic_values);

AdvantageBatch compute_advantages(
    const std::vector<fusion::TrajectoryRecord>& batch, const Critic& critic);

// One regression step on (1/M) sum_i sum_k (J - cost-to-go)^2.
double critic_update(Critic& critic, ad::Adam& optimizer,
                     const std::vector<fusion::TrajectoryRecord>& batch,
                     double learning_rate);

struct PpoDiagnostics {
  double surrogate = 0.0;      // value after the last epoch
  double clip_fraction = 0.0;  // samples with ratio outside the band
  int masked_samples = 0;      // |log ratio| beyond the cap
};

// Clipped-surrogate update of the fusion-vector policy. Ratios use the
// diagonal-Gaussian densities of the stored pre-clip actions, recomputed
// under both policies from the released history.
PpoDiagnostics ppo_update(fusion::FusionPolicy& actor,
                          const fusion::FusionPolicy& old_actor,
                          ad::Adam& optimizer,
                          const std::vector<fusion::TrajectoryRecord>& batch,
                          const std::vector<std::vector<double>>& advantages,
                          const PpoConfig& cfg);

struct TrainLogEntry {
  int round = 0;
  std::string phase;  // "joint" | "ppo"
  int update = 0;
  double mean_error = 0.0;  // per-step, batch mean where applicable
  double surrogate = 0.0;
  double critic_loss = 0.0;
  double clip_fraction = 0.0;
  double validation_error = 0.0;  // per-step mean; -1 when not evaluated
  std::vector<double> mean_leakage_profile;

  std::string to_json() const;
};

struct TrainResult {
  fusion::FusionPolicy policy;
  fusion::Estimator estimator;
  Critic critic;
  std::vector<TrainLogEntry> log;
  double best_validation_error = 0.0;  // per-step mean
};

struct EvalStats {
  double mean_error = 0.0;    // per step, averaged over episodes
  double stderr_error = 0.0;  // standard error across episodes
  std::vector<double> step_error;    // mean d_k per k
  std::vector<double> step_leakage;  // mean L_k per k
  std::vector<double> trace_state;   // first episode, first state component
  std::vector<double> trace_estimate;
};

EvalStats evaluate_policy(env::Environment& environment,
                          const fusion::FusionPolicy& policy,
                          const fusion::Estimator& estimator,
                          double global_budget, double alpha, int episodes,
                          std::uint64_t seed_base);

// The outer alternation; returns the validation-best checkpoint. Classical
// policies run the joint phase only.
TrainResult alternate_optimize(env::Environment& train_env,
                               env::Environment& validation_env,
                               fusion::FusionPolicy policy,
                               fusion::Estimator estimator, Critic critic,
                               const PpoConfig& cfg, double global_budget,
                               double alpha, std::uint64_t seed);

}  // namespace dpfusion::train
