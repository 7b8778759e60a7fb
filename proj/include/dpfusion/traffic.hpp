#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dpfusion/environment.hpp"

// NGSIM-schema trajectory ingestion and the traffic-density environment.
// CSV schema (header required): vehicle_id,time_s,position_m,speed_mps with
// time monotone per vehicle. Vehicles report while inside the study segment;
// at most `max_reporters` hold sensor slots, assigned in entry order.

namespace dpfusion::env {

struct TrafficConfig {
  double segment_start = 200.0;
  double segment_length = 400.0;
  double dt = 0.2;
  int horizon = 100;      // K
  int max_reporters = 12; // m
  double v_max = 30.0;    // speed normalization

  void validate() const;
};

// Per-sensor measurement: [position_norm, speed_norm, active_flag].
inline constexpr int kTrafficMeasurementDim = 3;

struct TrafficEpisode {
  std::vector<double> density;  // K, vehicles per km
  std::vector<std::vector<std::vector<double>>> slots;  // K x m x 3
  std::vector<std::vector<std::uint8_t>> active;        // K x m
};

struct TrafficDataset {
  TrafficConfig cfg;
  std::vector<TrafficEpisode> episodes;
  std::vector<int> train_idx, val_idx, test_idx;
  double max_density = 0.0;
  std::string metadata;  // JSON: normalization constants, split sizes
};

// Vehicles inside [segment_start, segment_start+segment_length) per km.
double ground_truth_density(const std::vector<double>& positions,
                            const TrafficConfig& cfg);

TrafficDataset ingest_trajectories(std::istream& csv, const TrafficConfig& cfg);
TrafficDataset ingest_trajectories_file(const std::string& path,
                                        const TrafficConfig& cfg);

enum class Split { kTrain, kValidation, kTest };

class TrafficDensityEnv final : public Environment {
 public:
  TrafficDensityEnv(std::shared_ptr<const TrafficDataset> data, Split split);

  int state_dim() const override { return 1; }
  int sensor_count() const override { return data_->cfg.max_reporters; }
  int measurement_dim() const override { return kTrafficMeasurementDim; }
  int horizon() const override { return data_->cfg.horizon; }
  double state_scale() const override;

  void reset(Rng& rng) override;
  std::optional<EnvStep> step(Rng& rng) override;
  std::unique_ptr<Environment> clone() const override;
  std::string metadata_json() const override { return data_->metadata; }

  int current_episode() const { return episode_; }

 private:
  const std::vector<int>& split_indices() const;

  std::shared_ptr<const TrafficDataset> data_;
  Split split_;
  int episode_ = -1;
  int k_ = 0;
};

}  // namespace dpfusion::env
