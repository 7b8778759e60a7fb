#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dpfusion/accountant.hpp"

namespace dpfusion::fusion {

struct TrajectoryStep {
  int k = 0;  // 1-based
  std::vector<double> state;
  std::vector<std::vector<double>> measurements;
  std::vector<std::uint8_t> active;
  std::vector<double> action;   // pre-clip
  std::vector<double> clipped;
  std::vector<std::vector<double>> filter_outputs;
  std::vector<double> noise;
  std::vector<double> z;
  std::vector<double> estimate;
  double error = 0.0;
  double remaining_before = 0.0;  // s_k entering the step
  double leakage = 0.0;           // L_k
};

struct TrajectoryRecord {
  std::vector<TrajectoryStep> steps;
  std::optional<privacy::PrivacyLedger> ledger;
  std::uint64_t seed = 0;
  double global_budget = 0.0;
  double alpha = 2.0;
  int d = 0;
  int m = 0;

  double total_error() const;
  double total_leakage() const;
};

// JSON-lines: one step object per line, then a ledger footer.
void write_trajectory(const TrajectoryRecord& rec, std::ostream& out);
TrajectoryRecord read_trajectory(std::istream& in);
void write_trajectory_file(const TrajectoryRecord& rec, const std::string& path);
TrajectoryRecord read_trajectory_file(const std::string& path);

struct AuditReport {
  bool pass = false;
  int first_bad_step = -1;  // 1-based; -1 when clean
  double total_leakage = 0.0;
  std::string message;
};

// Recomputes every per-step leakage from the logged post-clip gains and
// replays the budget recursion. Deliberately does not share code with the
// ledger: this is the independent verification path.
AuditReport audit_trajectory(const TrajectoryRecord& rec, double tol = 1e-9);

}  // namespace dpfusion::fusion
