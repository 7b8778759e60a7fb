#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dpfusion/common.hpp"

// Exact solution of the constrained optimality equations on tiny discrete
// instances. Mechanisms form a finite full-support menu so the adjacency
// supremum becomes a finite maximum and backward induction over released
// histories is exact; beliefs are carried over full measurement histories.

namespace dpfusion::oracle {

struct Mechanism {
  std::string name;
  // kernel[y][z]: conditional distribution over the fusion alphabet given
  // the joint current measurement symbol
  std::vector<std::vector<double>> kernel;
  double loss = 0.0;  // worst-case adjacent-pair Renyi loss, precomputed
};

struct DiscreteInstance {
  int n_x = 2;
  int m = 1;    // sensors
  int n_y = 2;  // per-sensor measurement alphabet
  int n_z = 2;
  int horizon = 2;
  std::vector<std::vector<double>> transition;  // [x][x']
  // observation[i][x][y]: per-sensor emission; sensors are conditionally
  // independent given the state
  std::vector<std::vector<std::vector<double>>> observation;
  std::vector<double> prior;
  std::vector<std::vector<double>> error;  // d[x][estimate]
  double alpha = 2.0;
  double budget = 1.0;
  std::vector<Mechanism> menu;

  int joint_y() const;  // n_y^m
  int sensor_digit(int joint, int sensor) const;
  double joint_obs_prob(int x, int joint) const;
  void validate() const;  // row normalization within 1e-12, shapes

  std::string to_json() const;
  static DiscreteInstance from_json(const std::string& text);
};

// Worst case over ordered adjacent measurement pairs (one sensor's symbol
// differs) of the finite-alphabet order-alpha Renyi divergence between rows.
double discrete_renyi_loss(const std::vector<std::vector<double>>& kernel,
                           const DiscreteInstance& inst);

// Fills mech.loss for every menu entry.
void precompute_menu_losses(DiscreteInstance& inst);

// b(x, y_history) with history encoded base joint_y, most recent last.
struct BeliefTable {
  int step = 1;        // k; history length equals k
  int n_hist = 1;      // joint_y^k
  std::vector<double> p;  // [x * n_hist + h]

  double mass() const;
};

BeliefTable initial_belief(const DiscreteInstance& inst);

// Bayes update of Appendix-A form; conditions on the realized fusion symbol
// and extends every history by one measurement.
BeliefTable belief_update(const BeliefTable& b, const Mechanism& mech,
                          int z_observed, const DiscreteInstance& inst);

struct PolicyNode {
  int mechanism = -1;
  double value = 0.0;
  double remaining = 0.0;
  std::vector<double> z_prob;
  std::vector<double> stage_cost;  // E[d | z^k], conditional per z
  std::vector<int> estimate;       // optimal estimate per z
  std::vector<std::unique_ptr<PolicyNode>> children;
};

struct DpSolution {
  double value = 0.0;
  std::unique_ptr<PolicyNode> root;

  std::string to_json() const;
};

// Exhaustive backward induction; throws InfeasibleInstanceError when no
// menu element fits the remaining budget at some prefix.
DpSolution solve_constrained_dp(const DiscreteInstance& inst);

// Value of a fixed open-loop mechanism schedule (estimator still optimal).
double evaluate_schedule(const DiscreteInstance& inst,
                         const std::vector<int>& schedule);

// Every schedule whose per-step loss fits the uniform share budget/K.
std::vector<std::vector<int>> uniform_schedules(const DiscreteInstance& inst);

struct McCheck {
  double mean = 0.0;
  double std_error = 0.0;
};

// Forward Monte Carlo of the solved policy tree.
McCheck simulate_policy(const DiscreteInstance& inst, const DpSolution& sol,
                        int samples, std::uint64_t seed);

// Largest root-to-leaf leakage sum in the solved tree.
double max_path_leakage(const DiscreteInstance& inst, const DpSolution& sol);

DiscreteInstance random_instance(std::uint64_t seed);

}  // namespace dpfusion::oracle
