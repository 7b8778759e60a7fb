#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpfusion/common.hpp"

// State-space processes and sensor models producing (X_k, Y_k) pairs. All
// measurements reaching a policy are normalized to [0,1] per component; the
// normalization constants are part of each environment's metadata.

namespace dpfusion::env {

struct EnvStep {
  std::vector<double> state;                      // n_x
  std::vector<std::vector<double>> measurements;  // m x n_y, each in [0,1]
  std::vector<std::uint8_t> active;               // which sensor slots report
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual int state_dim() const = 0;
  virtual int sensor_count() const = 0;
  virtual int measurement_dim() const = 0;
  virtual int horizon() const = 0;
  // Magnitude used to scale network output heads toward O(1) weights.
  virtual double state_scale() const = 0;

  virtual void reset(Rng& rng) = 0;
  // nullopt signals the end of the episode.
  virtual std::optional<EnvStep> step(Rng& rng) = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;
  virtual std::string metadata_json() const = 0;
};

// X_{k+1} = mean + A (X_k - mean) + w,  w ~ N(0, diag(q))
// Y_k(i)  = c_i . X_k + v_i,            v_i ~ N(0, r_i)
// with measurements affinely squashed into [0,1].
struct LinearGaussianConfig {
  int n_x = 1;
  int sensors = 3;
  int horizon = 40;
  std::vector<double> mean = {1.0};
  std::vector<std::vector<double>> transition = {{0.9}};
  std::vector<double> process_var = {0.19};
  std::vector<double> init_var = {4.0};
  std::vector<std::vector<double>> sensor_gain;  // per sensor, length n_x
  std::vector<double> sensor_var;                // per sensor
  double norm_half_width = 4.0;  // measurement range: c.mean +/- this

  void finalize();  // fills per-sensor defaults, validates shapes
};

class LinearGaussianEnv final : public Environment {
 public:
  explicit LinearGaussianEnv(LinearGaussianConfig cfg);

  int state_dim() const override { return cfg_.n_x; }
  int sensor_count() const override { return cfg_.sensors; }
  int measurement_dim() const override { return 1; }
  int horizon() const override { return cfg_.horizon; }
  double state_scale() const override;

  void reset(Rng& rng) override;
  std::optional<EnvStep> step(Rng& rng) override;
  std::unique_ptr<Environment> clone() const override;
  std::string metadata_json() const override;

  const LinearGaussianConfig& config() const { return cfg_; }

 private:
  LinearGaussianConfig cfg_;
  std::vector<double> state_;
  int k_ = 0;
};

// Bounded nonlinear random walk on [0, x_max]; the desk-scale stand-in for a
// density process driven by a cubic mean reversion.
struct RandomWalkDensityConfig {
  double x_max = 50.0;
  double reversion = 0.05;
  double process_std = 1.5;
  double sensor_std = 3.0;
  int sensors = 4;
  int horizon = 50;
};

class RandomWalkDensityEnv final : public Environment {
 public:
  explicit RandomWalkDensityEnv(RandomWalkDensityConfig cfg) : cfg_(cfg) {}

  int state_dim() const override { return 1; }
  int sensor_count() const override { return cfg_.sensors; }
  int measurement_dim() const override { return 1; }
  int horizon() const override { return cfg_.horizon; }
  double state_scale() const override { return cfg_.x_max; }

  void reset(Rng& rng) override;
  std::optional<EnvStep> step(Rng& rng) override;
  std::unique_ptr<Environment> clone() const override;
  std::string metadata_json() const override;

 private:
  RandomWalkDensityConfig cfg_;
  double state_ = 0.0;
  int k_ = 0;
};

}  // namespace dpfusion::env
