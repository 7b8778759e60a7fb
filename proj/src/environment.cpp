#include "dpfusion/environment.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace dpfusion::env {

void LinearGaussianConfig::finalize() {
  if (n_x < 1) throw InvalidInputError("linear env: n_x must be >= 1");
  if (sensors < 1) throw InvalidInputError("linear env: sensors must be >= 1");
  if (horizon < 1) throw InvalidInputError("linear env: horizon must be >= 1");
  auto want = [&](std::size_t got, std::size_t n, const char* what) {
    if (got != n) {
      throw InvalidInputError(std::string("linear env: ") + what +
                              " has wrong length");
    }
  };
  want(mean.size(), n_x, "mean");
  want(transition.size(), n_x, "transition");
  for (const auto& row : transition) want(row.size(), n_x, "transition row");
  want(process_var.size(), n_x, "process_var");
  want(init_var.size(), n_x, "init_var");
  if (sensor_gain.empty()) {
    sensor_gain.assign(sensors, std::vector<double>(n_x, 0.0));
    for (auto& g : sensor_gain) g[0] = 1.0;
  }
  if (sensor_var.empty()) sensor_var.assign(sensors, 0.25);
  want(sensor_gain.size(), sensors, "sensor_gain");
  for (const auto& g : sensor_gain) want(g.size(), n_x, "sensor_gain row");
  want(sensor_var.size(), sensors, "sensor_var");
}

LinearGaussianEnv::LinearGaussianEnv(LinearGaussianConfig cfg)
    : cfg_(std::move(cfg)) {
  cfg_.finalize();
  state_ = cfg_.mean;
}

double LinearGaussianEnv::state_scale() const {
  double s = 0.0;
  for (int i = 0; i < cfg_.n_x; ++i) {
    s = std::max(s, std::fabs(cfg_.mean[i]) + cfg_.norm_half_width);
  }
  return s;
}

void LinearGaussianEnv::reset(Rng& rng) {
  state_.resize(cfg_.n_x);
  for (int i = 0; i < cfg_.n_x; ++i) {
    state_[i] = cfg_.mean[i] + std::sqrt(cfg_.init_var[i]) * rng.normal();
  }
  k_ = 0;
}

std::optional<EnvStep> LinearGaussianEnv::step(Rng& rng) {
  if (k_ >= cfg_.horizon) return std::nullopt;
  if (k_ > 0) {
    std::vector<double> next(cfg_.n_x, 0.0);
    for (int i = 0; i < cfg_.n_x; ++i) {
      double acc = cfg_.mean[i];
      for (int j = 0; j < cfg_.n_x; ++j) {
        acc += cfg_.transition[i][j] * (state_[j] - cfg_.mean[j]);
      }
      next[i] = acc + std::sqrt(cfg_.process_var[i]) * rng.normal();
    }
    state_ = std::move(next);
  }
  ++k_;

  EnvStep out;
  out.state = state_;
  out.measurements.resize(cfg_.sensors);
  out.active.assign(cfg_.sensors, 1);
  for (int i = 0; i < cfg_.sensors; ++i) {
    double y = 0.0;
    for (int j = 0; j < cfg_.n_x; ++j) y += cfg_.sensor_gain[i][j] * state_[j];
    y += std::sqrt(cfg_.sensor_var[i]) * rng.normal();
    // affine squash around the nominal measurement mean
    double center = 0.0;
    for (int j = 0; j < cfg_.n_x; ++j)
      center += cfg_.sensor_gain[i][j] * cfg_.mean[j];
    double lo = center - cfg_.norm_half_width;
    double hi = center + cfg_.norm_half_width;
    out.measurements[i] = {std::clamp((y - lo) / (hi - lo), 0.0, 1.0)};
  }
  return out;
}

std::unique_ptr<Environment> LinearGaussianEnv::clone() const {
  return std::make_unique<LinearGaussianEnv>(cfg_);
}

std::string LinearGaussianEnv::metadata_json() const {
  nlohmann::json j;
  j["name"] = "linear_gaussian";
  j["n_x"] = cfg_.n_x;
  j["sensors"] = cfg_.sensors;
  j["horizon"] = cfg_.horizon;
  j["measurement_norm"] = {{"half_width", cfg_.norm_half_width}};
  j["state_scale"] = state_scale();
  return j.dump();
}

void RandomWalkDensityEnv::reset(Rng& rng) {
  state_ = rng.uniform(0.1 * cfg_.x_max, 0.9 * cfg_.x_max);
  k_ = 0;
}

std::optional<EnvStep> RandomWalkDensityEnv::step(Rng& rng) {
  if (k_ >= cfg_.horizon) return std::nullopt;
  if (k_ > 0) {
    double mid = 0.5 * cfg_.x_max;
    double dev = (state_ - mid) / mid;
    double drift = -cfg_.reversion * dev * dev * dev * mid;
    state_ = std::clamp(state_ + drift + cfg_.process_std * rng.normal(), 0.0,
                        cfg_.x_max);
  }
  ++k_;

  EnvStep out;
  out.state = {state_};
  out.measurements.resize(cfg_.sensors);
  out.active.assign(cfg_.sensors, 1);
  for (int i = 0; i < cfg_.sensors; ++i) {
    double y = state_ + cfg_.sensor_std * rng.normal();
    out.measurements[i] = {std::clamp(y / cfg_.x_max, 0.0, 1.0)};
  }
  return out;
}

std::unique_ptr<Environment> RandomWalkDensityEnv::clone() const {
  return std::make_unique<RandomWalkDensityEnv>(cfg_);
}

std::string RandomWalkDensityEnv::metadata_json() const {
  nlohmann::json j;
  j["name"] = "random_walk_density";
  j["x_max"] = cfg_.x_max;
  j["sensors"] = cfg_.sensors;
  j["horizon"] = cfg_.horizon;
  j["measurement_norm"] = {{"x_max", cfg_.x_max}};
  j["state_scale"] = state_scale();
  return j.dump();
}

}  // namespace dpfusion::env
