#include "dpfusion/traffic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace dpfusion::env {

void TrafficConfig::validate() const {
  if (!(segment_length > 0.0)) {
    throw InvalidInputError("traffic config: segment_length must be > 0");
  }
  if (!(dt > 0.0)) throw InvalidInputError("traffic config: dt must be > 0");
  if (horizon < 1) throw InvalidInputError("traffic config: horizon must be >= 1");
  if (max_reporters < 1) {
    throw InvalidInputError("traffic config: max_reporters must be >= 1");
  }
  if (!(v_max > 0.0)) throw InvalidInputError("traffic config: v_max must be > 0");
}

double ground_truth_density(const std::vector<double>& positions,
                            const TrafficConfig& cfg) {
  const double lo = cfg.segment_start;
  const double hi = cfg.segment_start + cfg.segment_length;
  int count = 0;
  for (double p : positions) {
    if (p >= lo && p < hi) ++count;  // half-open on the downstream end
  }
  return count / (cfg.segment_length / 1000.0);
}

namespace {

struct VehicleTrack {
  std::vector<double> time;
  std::vector<double> position;
  std::vector<double> speed;
};

double parse_field(const std::string& s, int line_no, const char* what) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  while (p < e && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
  if (ec != std::errc() || p != e) {
    throw DataError("csv line " + std::to_string(line_no) + ": bad " + what +
                    " value '" + s + "'");
  }
  return v;
}

// Linear interpolation at t; returns false when t is outside the track.
bool sample_track(const VehicleTrack& tr, double t, double* pos, double* spd) {
  if (tr.time.empty()) return false;
  const double eps = 1e-9;
  if (t < tr.time.front() - eps || t > tr.time.back() + eps) return false;
  auto it = std::lower_bound(tr.time.begin(), tr.time.end(), t);
  std::size_t j = it - tr.time.begin();
  if (j < tr.time.size() && std::fabs(tr.time[j] - t) <= eps) {
    *pos = tr.position[j];
    *spd = tr.speed[j];
    return true;
  }
  if (j == 0 || j >= tr.time.size()) {
    *pos = j == 0 ? tr.position.front() : tr.position.back();
    *spd = j == 0 ? tr.speed.front() : tr.speed.back();
    return true;
  }
  double w = (t - tr.time[j - 1]) / (tr.time[j] - tr.time[j - 1]);
  *pos = tr.position[j - 1] + w * (tr.position[j] - tr.position[j - 1]);
  *spd = tr.speed[j - 1] + w * (tr.speed[j] - tr.speed[j - 1]);
  return true;
}

}  // namespace

TrafficDataset ingest_trajectories(std::istream& csv,
                                   const TrafficConfig& cfg) {
  cfg.validate();

  std::string line;
  if (!std::getline(csv, line)) throw DataError("csv: empty input");
  {
    std::string header = line;
    header.erase(std::remove_if(header.begin(), header.end(),
                                [](char c) { return c == ' ' || c == '\r'; }),
                 header.end());
    if (header != "vehicle_id,time_s,position_m,speed_mps") {
      throw DataError("csv: expected header "
                      "'vehicle_id,time_s,position_m,speed_mps', got '" +
                      line + "'");
    }
  }

  std::map<long, VehicleTrack> tracks;
  double t_min = 0.0, t_max = 0.0;
  bool any = false;
  int line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string f0, f1, f2, f3;
    if (!std::getline(ss, f0, ',') || !std::getline(ss, f1, ',') ||
        !std::getline(ss, f2, ',') || !std::getline(ss, f3)) {
      throw DataError("csv line " + std::to_string(line_no) +
                      ": expected 4 comma-separated fields");
    }
    double idval = parse_field(f0, line_no, "vehicle_id");
    if (idval != std::floor(idval)) {
      throw DataError("csv line " + std::to_string(line_no) +
                      ": vehicle_id must be an integer");
    }
    long vid = static_cast<long>(idval);
    double t = parse_field(f1, line_no, "time_s");
    double pos = parse_field(f2, line_no, "position_m");
    double spd = parse_field(f3, line_no, "speed_mps");

    VehicleTrack& tr = tracks[vid];
    if (!tr.time.empty() && t <= tr.time.back()) {
      throw DataError("csv line " + std::to_string(line_no) + ": vehicle " +
                      std::to_string(vid) + " time is not strictly increasing");
    }
    tr.time.push_back(t);
    tr.position.push_back(pos);
    tr.speed.push_back(spd);
    t_min = any ? std::min(t_min, t) : t;
    t_max = any ? std::max(t_max, t) : t;
    any = true;
  }
  if (!any) throw DataError("csv: no data rows");

  const int total_steps = static_cast<int>(std::floor((t_max - t_min) / cfg.dt)) + 1;
  const int n_episodes = total_steps / cfg.horizon;
  if (n_episodes < 1) {
    throw DataError("csv spans fewer than one episode horizon");
  }

  const double seg_lo = cfg.segment_start;
  const double seg_hi = cfg.segment_start + cfg.segment_length;
  const int m = cfg.max_reporters;

  TrafficDataset out;
  out.cfg = cfg;
  out.episodes.resize(n_episodes);

  for (int e = 0; e < n_episodes; ++e) {
    TrafficEpisode& ep = out.episodes[e];
    ep.density.assign(cfg.horizon, 0.0);
    ep.slots.assign(cfg.horizon,
                    std::vector<std::vector<double>>(
                        m, std::vector<double>(kTrafficMeasurementDim, 0.0)));
    ep.active.assign(cfg.horizon, std::vector<std::uint8_t>(m, 0));

    std::vector<long> slot_owner(m, -1);
    std::map<long, int> assigned;
    std::vector<long> dropped;

    for (int k = 0; k < cfg.horizon; ++k) {
      const double t = t_min + (e * cfg.horizon + k) * cfg.dt;

      struct Present {
        long vid;
        double pos;
        double spd;
      };
      std::vector<Present> present;
      for (const auto& [vid, tr] : tracks) {
        double pos, spd;
        if (sample_track(tr, t, &pos, &spd) && pos >= seg_lo && pos < seg_hi) {
          present.push_back({vid, pos, spd});
        }
      }

      std::vector<double> positions;
      positions.reserve(present.size());
      for (const auto& p : present) positions.push_back(p.pos);
      ep.density[k] = ground_truth_density(positions, cfg);

      // release slots of departed vehicles
      for (int s = 0; s < m; ++s) {
        if (slot_owner[s] < 0) continue;
        bool still = std::any_of(present.begin(), present.end(),
                                 [&](const Present& p) {
                                   return p.vid == slot_owner[s];
                                 });
        if (!still) {
          assigned.erase(slot_owner[s]);
          slot_owner[s] = -1;
        }
      }

      // entrants take the lowest free slot; overflow entrants are dropped
      // for the remainder of the episode
      for (const auto& p : present) {  // map order => vehicle_id order
        if (assigned.count(p.vid)) continue;
        if (std::find(dropped.begin(), dropped.end(), p.vid) != dropped.end())
          continue;
        int free_slot = -1;
        for (int s = 0; s < m; ++s) {
          if (slot_owner[s] < 0) {
            free_slot = s;
            break;
          }
        }
        if (free_slot < 0) {
          dropped.push_back(p.vid);
        } else {
          slot_owner[free_slot] = p.vid;
          assigned[p.vid] = free_slot;
        }
      }

      for (const auto& p : present) {
        auto it = assigned.find(p.vid);
        if (it == assigned.end()) continue;
        int s = it->second;
        ep.slots[k][s] = {(p.pos - seg_lo) / cfg.segment_length,
                          std::clamp(p.spd / cfg.v_max, 0.0, 1.0), 1.0};
        ep.active[k][s] = 1;
      }

      out.max_density = std::max(out.max_density, ep.density[k]);
    }
  }

  // 80/10/10 split by episode index
  int n_train = static_cast<int>(std::floor(0.8 * n_episodes));
  int n_val = static_cast<int>(std::floor(0.1 * n_episodes));
  if (n_episodes >= 3) {
    n_train = std::max(1, n_train);
    n_val = std::max(1, n_val);
  }
  for (int e = 0; e < n_episodes; ++e) {
    if (e < n_train) {
      out.train_idx.push_back(e);
    } else if (e < n_train + n_val) {
      out.val_idx.push_back(e);
    } else {
      out.test_idx.push_back(e);
    }
  }
  if (out.val_idx.empty()) out.val_idx = out.train_idx;
  if (out.test_idx.empty()) out.test_idx = out.val_idx;

  nlohmann::json meta;
  meta["name"] = "traffic_density";
  meta["episodes"] = n_episodes;
  meta["split"] = {{"train", out.train_idx.size()},
                   {"validation", out.val_idx.size()},
                   {"test", out.test_idx.size()}};
  meta["measurement_norm"] = {
      {"position", {seg_lo, seg_hi}}, {"v_max", cfg.v_max}};
  meta["max_density"] = out.max_density;
  meta["horizon"] = cfg.horizon;
  meta["dt"] = cfg.dt;
  meta["max_reporters"] = m;
  out.metadata = meta.dump();
  return out;
}

TrafficDataset ingest_trajectories_file(const std::string& path,
                                        const TrafficConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open csv: " + path);
  return ingest_trajectories(in, cfg);
}

TrafficDensityEnv::TrafficDensityEnv(std::shared_ptr<const TrafficDataset> data,
                                     Split split)
    : data_(std::move(data)), split_(split) {
  if (split_indices().empty()) {
    throw DataError("traffic dataset split has no episodes");
  }
}

double TrafficDensityEnv::state_scale() const {
  return std::max(1.0, data_->max_density);
}

const std::vector<int>& TrafficDensityEnv::split_indices() const {
  switch (split_) {
    case Split::kTrain:
      return data_->train_idx;
    case Split::kValidation:
      return data_->val_idx;
    default:
      return data_->test_idx;
  }
}

void TrafficDensityEnv::reset(Rng& rng) {
  const auto& idx = split_indices();
  episode_ = idx[static_cast<std::size_t>(rng.below(idx.size()))];
  k_ = 0;
}

std::optional<EnvStep> TrafficDensityEnv::step(Rng&) {
  if (episode_ < 0) throw UsageError("traffic env: step before reset");
  if (k_ >= data_->cfg.horizon) return std::nullopt;
  const TrafficEpisode& ep = data_->episodes[episode_];
  EnvStep out;
  out.state = {ep.density[k_]};
  out.measurements = ep.slots[k_];
  out.active = ep.active[k_];
  ++k_;
  return out;
}

std::unique_ptr<Environment> TrafficDensityEnv::clone() const {
  auto copy = std::make_unique<TrafficDensityEnv>(data_, split_);
  copy->episode_ = episode_;
  copy->k_ = k_;
  return copy;
}

}  // namespace dpfusion::env
