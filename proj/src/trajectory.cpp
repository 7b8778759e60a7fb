#include "dpfusion/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dpfusion::fusion {

double TrajectoryRecord::total_error() const {
  double s = 0.0;
  for (const auto& st : steps) s += st.error;
  return s;
}

double TrajectoryRecord::total_leakage() const {
  double s = 0.0;
  for (const auto& st : steps) s += st.leakage;
  return s;
}

void write_trajectory(const TrajectoryRecord& rec, std::ostream& out) {
  for (const auto& st : rec.steps) {
    nlohmann::json j;
    j["k"] = st.k;
    j["state"] = st.state;
    j["measurements"] = st.measurements;
    j["active"] = st.active;
    j["action"] = st.action;
    j["clipped"] = st.clipped;
    j["filter"] = st.filter_outputs;
    j["noise"] = st.noise;
    j["z"] = st.z;
    j["estimate"] = st.estimate;
    j["error"] = st.error;
    j["remaining"] = st.remaining_before;
    j["leakage"] = st.leakage;
    out << j.dump() << "\n";
  }
  nlohmann::json footer;
  footer["ledger"] = nlohmann::json::parse(
      rec.ledger ? rec.ledger->to_json() : std::string("null"));
  footer["seed"] = rec.seed;
  footer["global_budget"] = rec.global_budget;
  footer["alpha"] = rec.alpha;
  footer["d"] = rec.d;
  footer["m"] = rec.m;
  footer["steps"] = rec.steps.size();
  out << footer.dump() << "\n";
}

TrajectoryRecord read_trajectory(std::istream& in) {
  TrajectoryRecord rec;
  std::string line;
  std::string last;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    if (j.contains("ledger")) {
      last = line;
      rec.seed = j.at("seed").get<std::uint64_t>();
      rec.global_budget = j.at("global_budget").get<double>();
      rec.alpha = j.at("alpha").get<double>();
      rec.d = j.at("d").get<int>();
      rec.m = j.at("m").get<int>();
      if (!j.at("ledger").is_null()) {
        rec.ledger =
            privacy::PrivacyLedger::from_json(j.at("ledger").dump());
      }
      continue;
    }
    TrajectoryStep st;
    st.k = j.at("k").get<int>();
    st.state = j.at("state").get<std::vector<double>>();
    st.measurements =
        j.at("measurements").get<std::vector<std::vector<double>>>();
    st.active = j.at("active").get<std::vector<std::uint8_t>>();
    st.action = j.at("action").get<std::vector<double>>();
    st.clipped = j.at("clipped").get<std::vector<double>>();
    st.filter_outputs =
        j.at("filter").get<std::vector<std::vector<double>>>();
    st.noise = j.at("noise").get<std::vector<double>>();
    st.z = j.at("z").get<std::vector<double>>();
    st.estimate = j.at("estimate").get<std::vector<double>>();
    st.error = j.at("error").get<double>();
    st.remaining_before = j.at("remaining").get<double>();
    st.leakage = j.at("leakage").get<double>();
    rec.steps.push_back(std::move(st));
  }
  if (last.empty()) {
    throw DataError("trajectory file has no ledger footer");
  }
  return rec;
}

void write_trajectory_file(const TrajectoryRecord& rec,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open trajectory file for writing: " + path);
  write_trajectory(rec, out);
}

TrajectoryRecord read_trajectory_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file: " + path);
  return read_trajectory(in);
}

AuditReport audit_trajectory(const TrajectoryRecord& rec, double tol) {
  AuditReport report;
  // Straight-line recomputation from the raw logged gains; no calls into
  // the ledger implementation.
  const double alpha = rec.alpha;
  const double d = static_cast<double>(rec.d);
  double remaining = rec.global_budget;
  double total = 0.0;
  for (const auto& st : rec.steps) {
    double g = 0.0;
    for (double v : st.clipped) g = std::max(g, std::fabs(v));
    const double bound =
        remaining > 0.0 ? std::sqrt(2.0 * remaining / (alpha * d)) : 0.0;
    if (g > bound + tol) {
      report.first_bad_step = st.k;
      report.message = "step " + std::to_string(st.k) + ": gain " +
                       std::to_string(g) + " exceeds clip bound " +
                       std::to_string(bound);
      return report;
    }
    const double leak = 0.5 * alpha * d * g * g;
    if (std::fabs(leak - st.leakage) > tol) {
      report.first_bad_step = st.k;
      report.message = "step " + std::to_string(st.k) +
                       ": logged leakage disagrees with recomputation";
      return report;
    }
    total += leak;
    remaining = std::max(0.0, remaining - leak);
  }
  report.total_leakage = total;
  if (total > rec.global_budget + tol) {
    report.first_bad_step = rec.steps.empty() ? 0 : rec.steps.back().k;
    report.message = "total leakage " + std::to_string(total) +
                     " exceeds budget " + std::to_string(rec.global_budget);
    return report;
  }
  report.pass = true;
  report.message = "ok";
  return report;
}

}  // namespace dpfusion::fusion
