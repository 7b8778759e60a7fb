#pragma once

#include <optional>

#include "dpfusion/accountant.hpp"
#include "dpfusion/environment.hpp"
#include "dpfusion/nn.hpp"
#include "dpfusion/trajectory.hpp"

// The parameterized fusion mechanism: per-sensor recurrent filtering into
// [0,1]^d, an adaptive fusion vector conditioned on released history and
// remaining budget, unit Gaussian output noise, and the execution loop that
// clips gains before charging the ledger so the budget constraint holds by
// construction.

namespace dpfusion::fusion {

struct PolicyConfig {
  int hidden = 32;
  int head_hidden = 32;
  int d = 2;   // fusion output dimension
  int m = 1;   // sensor count
  int n_y = 1; // per-sensor measurement dimension
  double init_log_std = -1.0;
  // Fusion-head bias init; seeding it at the uniform-budget gain makes the
  // adaptive policy start from the classical allocation.
  double init_gain_bias = 0.0;
};

class FusionPolicy {
 public:
  static FusionPolicy adaptive(const PolicyConfig& cfg, std::uint64_t seed);
  // Constant-gain mechanism; the fusion vector never reacts to history.
  static FusionPolicy classical(const PolicyConfig& cfg, double constant_gain,
                                std::uint64_t seed);

  bool is_classical() const { return constant_gain_.has_value(); }
  double constant_gain() const { return *constant_gain_; }

  ad::Tensor encode_measurement(const ad::Tensor& h_prev,
                                const ad::Tensor& y) const;
  ad::Tensor encode_released(const ad::Tensor& h_prev,
                             const ad::Tensor& z_prev) const;
  ad::Tensor filter_output(const ad::Tensor& h_y) const;  // [0,1]^d
  // Tracked fusion vector; only meaningful for the adaptive variant.
  ad::Tensor fusion_vector(const ad::Tensor& h_z, double budget_fraction) const;
  // Plain-value fusion vector (detached); handles both variants.
  std::vector<double> gain_mean(const ad::Tensor& h_z,
                                double budget_fraction) const;

  ad::Tensor measurement_state() const { return encoder_y_.initial_state(); }
  ad::Tensor released_state() const;

  const ad::Tensor& exploration_log_std() const { return log_std_; }

  std::vector<ad::NamedTensor> parameters() const;
  // theta: measurement encoder + filter head (joint phase)
  std::vector<ad::NamedTensor> filter_parameters() const;
  // phi: released-history encoder + fusion head + exploration (PPO phase)
  std::vector<ad::NamedTensor> actor_parameters() const;

  FusionPolicy clone() const;

  const PolicyConfig& config() const { return cfg_; }

  FusionPolicy() = default;

 private:

  PolicyConfig cfg_;
  ad::GatedCell encoder_y_;
  ad::Mlp filter_head_;
  ad::GatedCell encoder_z_;   // adaptive only
  ad::Mlp fusion_head_;       // adaptive only
  ad::Tensor log_std_;        // adaptive only
  std::optional<double> constant_gain_;
};

// Uniform-budget baseline: every entry of the fusion vector pinned at the
// largest gain whose per-step leakage is B_G / K.
FusionPolicy classical_baseline(const PolicyConfig& cfg, double global_budget,
                                int horizon, const privacy::RenyiOrder& order,
                                std::uint64_t seed);

struct EstimatorConfig {
  int hidden = 32;
  int head_hidden = 32;
  int d = 2;
  int n_x = 1;
  double output_scale = 1.0;
};

// Recurrent state estimator; consumes only released fusion outputs.
class Estimator {
 public:
  Estimator() = default;
  Estimator(const EstimatorConfig& cfg, std::uint64_t seed);

  ad::Tensor initial_state() const { return encoder_.initial_state(); }
  // h' = cell(Z_k, h); estimate = scale * head(h')
  std::pair<ad::Tensor, ad::Tensor> step(const ad::Tensor& h,
                                         const ad::Tensor& z) const;

  std::vector<ad::NamedTensor> parameters() const;
  Estimator clone() const;
  const EstimatorConfig& config() const { return cfg_; }

 private:
  EstimatorConfig cfg_;
  ad::GatedCell encoder_;
  ad::Mlp head_;
};

enum class Mode { kDeterministic, kExploratory };

struct FuseStepResult {
  ad::Tensor z;                           // d, tracked under grad mode
  std::vector<double> action;             // pre-clip a_k
  std::vector<double> clipped;
  std::vector<double> noise;
  std::vector<ad::Tensor> filter_outputs; // one per sensor
  double remaining_before = 0.0;          // s_k
  double leakage = 0.0;                   // L_k
};

// One mechanism step: fusion vector, exploration sampling, clip to the
// remaining-budget bound, ledger charge, noisy release. h_y entries must
// already hold the current measurements.
FuseStepResult fuse_step(const FusionPolicy& policy, const ad::Tensor& h_z,
                         const std::vector<ad::Tensor>& h_y,
                         privacy::PrivacyLedger& ledger, Rng& noise_rng,
                         Rng& action_rng, Mode mode);

struct EpisodeResult {
  TrajectoryRecord record;
  ad::Tensor loss;  // sum of per-step errors; defined only under grad mode
};

// Full execution loop; the returned record always passes the ledger audit.
EpisodeResult run_episode(env::Environment& environment,
                          const FusionPolicy& policy, const Estimator& estimator,
                          double global_budget, double alpha, std::uint64_t seed,
                          Mode mode);

}  // namespace dpfusion::fusion
