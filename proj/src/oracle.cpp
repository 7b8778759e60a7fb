#include "dpfusion/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace dpfusion::oracle {

namespace {
constexpr double kMassTol = 1e-12;
constexpr double kFeasTol = 1e-12;
constexpr double kProbFloor = 1e-15;
}  // namespace

int DiscreteInstance::joint_y() const {
  int n = 1;
  for (int i = 0; i < m; ++i) n *= n_y;
  return n;
}

int DiscreteInstance::sensor_digit(int joint, int sensor) const {
  for (int i = 0; i < sensor; ++i) joint /= n_y;
  return joint % n_y;
}

double DiscreteInstance::joint_obs_prob(int x, int joint) const {
  double p = 1.0;
  for (int i = 0; i < m; ++i) {
    p *= observation[i][x][sensor_digit(joint, i)];
  }
  return p;
}

void DiscreteInstance::validate() const {
  if (n_x < 1 || n_y < 1 || n_z < 1 || m < 1 || horizon < 1) {
    throw InvalidInputError("discrete instance: dimensions must be positive");
  }
  auto check_rows = [&](const std::vector<std::vector<double>>& mat,
                        std::size_t rows, std::size_t cols, const char* what) {
    if (mat.size() != rows) {
      throw InvalidInputError(std::string("discrete instance: ") + what +
                              " row count");
    }
    for (const auto& row : mat) {
      if (row.size() != cols) {
        throw InvalidInputError(std::string("discrete instance: ") + what +
                                " column count");
      }
      double s = 0.0;
      for (double v : row) {
        if (v < 0.0) {
          throw InvalidInputError(std::string("discrete instance: ") + what +
                                  " has a negative entry");
        }
        s += v;
      }
      if (std::fabs(s - 1.0) > kMassTol) {
        throw InvalidInputError(std::string("discrete instance: ") + what +
                                " row not normalized");
      }
    }
  };
  check_rows(transition, n_x, n_x, "transition");
  if (observation.size() != static_cast<std::size_t>(m)) {
    throw InvalidInputError("discrete instance: observation sensor count");
  }
  for (const auto& obs : observation) check_rows(obs, n_x, n_y, "observation");
  double s = 0.0;
  for (double v : prior) s += v;
  if (prior.size() != static_cast<std::size_t>(n_x) ||
      std::fabs(s - 1.0) > kMassTol) {
    throw InvalidInputError("discrete instance: prior not normalized");
  }
  if (error.size() != static_cast<std::size_t>(n_x)) {
    throw InvalidInputError("discrete instance: error matrix rows");
  }
  const int jy = joint_y();
  for (const auto& mech : menu) {
    check_rows(mech.kernel, jy, n_z, ("mechanism " + mech.name).c_str());
  }
}

double discrete_renyi_loss(const std::vector<std::vector<double>>& kernel,
                           const DiscreteInstance& inst) {
  const int jy = inst.joint_y();
  const double a = inst.alpha;
  double worst = 0.0;
  for (int u = 0; u < jy; ++u) {
    for (int v = 0; v < jy; ++v) {
      if (u == v) continue;
      int differing = 0;
      for (int i = 0; i < inst.m; ++i) {
        if (inst.sensor_digit(u, i) != inst.sensor_digit(v, i)) ++differing;
      }
      if (differing != 1) continue;  // adjacency: one sensor's record
      double acc = 0.0;
      for (int z = 0; z < inst.n_z; ++z) {
        double p = kernel[u][z];
        double q = kernel[v][z];
        if (p == 0.0) continue;
        if (q == 0.0) {
          throw InvalidInputError(
              "discrete renyi loss: zero-denominator ratio; menu kernels "
              "must have full support");
        }
        acc += std::pow(p, a) * std::pow(q, 1.0 - a);
      }
      worst = std::max(worst, std::log(acc) / (a - 1.0));
    }
  }
  return std::max(0.0, worst);
}

void precompute_menu_losses(DiscreteInstance& inst) {
  for (auto& mech : inst.menu) {
    mech.loss = discrete_renyi_loss(mech.kernel, inst);
  }
}

double BeliefTable::mass() const {
  double s = 0.0;
  for (double v : p) s += v;
  return s;
}

BeliefTable initial_belief(const DiscreteInstance& inst) {
  BeliefTable b;
  b.step = 1;
  b.n_hist = inst.joint_y();
  b.p.assign(inst.n_x * b.n_hist, 0.0);
  for (int x = 0; x < inst.n_x; ++x) {
    for (int y = 0; y < b.n_hist; ++y) {
      b.p[x * b.n_hist + y] = inst.prior[x] * inst.joint_obs_prob(x, y);
    }
  }
  return b;
}

BeliefTable belief_update(const BeliefTable& b, const Mechanism& mech,
                          int z_observed, const DiscreteInstance& inst) {
  const int jy = inst.joint_y();
  const int nh = b.n_hist;

  double denom = 0.0;
  for (int x = 0; x < inst.n_x; ++x) {
    for (int h = 0; h < nh; ++h) {
      denom += b.p[x * nh + h] * mech.kernel[h % jy][z_observed];
    }
  }
  if (denom <= kProbFloor) {
    throw ImpossibleObservationError(
        "belief update: fusion symbol has zero predictive probability");
  }

  BeliefTable next;
  next.step = b.step + 1;
  next.n_hist = nh * jy;
  next.p.assign(inst.n_x * next.n_hist, 0.0);
  for (int h = 0; h < nh; ++h) {
    const double fz = mech.kernel[h % jy][z_observed];
    if (fz == 0.0) continue;
    // predict through the transition once per history branch
    std::vector<double> pred(inst.n_x, 0.0);
    for (int x = 0; x < inst.n_x; ++x) {
      const double w = b.p[x * nh + h];
      if (w == 0.0) continue;
      for (int xn = 0; xn < inst.n_x; ++xn) {
        pred[xn] += inst.transition[x][xn] * w;
      }
    }
    for (int xn = 0; xn < inst.n_x; ++xn) {
      if (pred[xn] == 0.0) continue;
      for (int yn = 0; yn < jy; ++yn) {
        next.p[xn * next.n_hist + (h * jy + yn)] +=
            inst.joint_obs_prob(xn, yn) * pred[xn] * fz / denom;
      }
    }
  }
  return next;
}

namespace {

// Predictive z distribution, optimal per-z estimate, and conditional stage
// cost for one mechanism applied to one belief.
void stage_quantities(const DiscreteInstance& inst, const BeliefTable& b,
                      const Mechanism& mech, std::vector<double>* z_prob,
                      std::vector<double>* stage, std::vector<int>* est) {
  const int jy = inst.joint_y();
  const int nh = b.n_hist;
  z_prob->assign(inst.n_z, 0.0);
  stage->assign(inst.n_z, 0.0);
  est->assign(inst.n_z, 0);
  for (int z = 0; z < inst.n_z; ++z) {
    std::vector<double> post(inst.n_x, 0.0);
    for (int x = 0; x < inst.n_x; ++x) {
      for (int h = 0; h < nh; ++h) {
        post[x] += b.p[x * nh + h] * mech.kernel[h % jy][z];
      }
    }
    double pz = 0.0;
    for (double v : post) pz += v;
    (*z_prob)[z] = pz;
    if (pz <= kProbFloor) continue;
    double best = std::numeric_limits<double>::infinity();
    int best_e = 0;
    for (int e = 0; e < inst.n_x; ++e) {
      double c = 0.0;
      for (int x = 0; x < inst.n_x; ++x) c += post[x] * inst.error[x][e];
      if (c < best) {
        best = c;
        best_e = e;
      }
    }
    (*est)[z] = best_e;
    (*stage)[z] = best / pz;
  }
}

double solve_node(const DiscreteInstance& inst, const BeliefTable& b,
                  double remaining, int k, const std::vector<int>* forced,
                  std::unique_ptr<PolicyNode>* out) {
  if (k > inst.horizon) return 0.0;

  double best_val = std::numeric_limits<double>::infinity();
  std::unique_ptr<PolicyNode> best_node;
  bool any_feasible = false;

  for (std::size_t e = 0; e < inst.menu.size(); ++e) {
    if (forced && (*forced)[k - 1] != static_cast<int>(e)) continue;
    const Mechanism& mech = inst.menu[e];
    if (mech.loss > remaining + kFeasTol) continue;
    any_feasible = true;

    auto node = std::make_unique<PolicyNode>();
    node->mechanism = static_cast<int>(e);
    node->remaining = remaining;
    stage_quantities(inst, b, mech, &node->z_prob, &node->stage_cost,
                     &node->estimate);
    node->children.resize(inst.n_z);

    double val = 0.0;
    for (int z = 0; z < inst.n_z; ++z) {
      double pz = node->z_prob[z];
      if (pz <= kProbFloor) continue;
      double cont = 0.0;
      if (k < inst.horizon) {
        BeliefTable nb = belief_update(b, mech, z, inst);
        cont = solve_node(inst, nb, remaining - mech.loss, k + 1, forced,
                          &node->children[z]);
      }
      val += pz * (node->stage_cost[z] + cont);
    }
    node->value = val;
    if (val < best_val) {
      best_val = val;
      best_node = std::move(node);
    }
  }

  if (!any_feasible) {
    throw InfeasibleInstanceError(
        "constrained dp: no menu element fits the remaining budget at step " +
        std::to_string(k) + " (menu needs a zero-leakage element)");
  }
  if (out) *out = std::move(best_node);
  return best_val;
}

}  // namespace

DpSolution solve_constrained_dp(const DiscreteInstance& inst) {
  inst.validate();
  DpSolution sol;
  BeliefTable b = initial_belief(inst);
  sol.value = solve_node(inst, b, inst.budget, 1, nullptr, &sol.root);
  return sol;
}

double evaluate_schedule(const DiscreteInstance& inst,
                         const std::vector<int>& schedule) {
  if (schedule.size() != static_cast<std::size_t>(inst.horizon)) {
    throw InvalidInputError("schedule length must equal the horizon");
  }
  BeliefTable b = initial_belief(inst);
  std::unique_ptr<PolicyNode> root;
  return solve_node(inst, b, inst.budget, 1, &schedule, &root);
}

std::vector<std::vector<int>> uniform_schedules(const DiscreteInstance& inst) {
  const double share = inst.budget / inst.horizon;
  std::vector<int> allowed;
  for (std::size_t e = 0; e < inst.menu.size(); ++e) {
    if (inst.menu[e].loss <= share + kFeasTol) {
      allowed.push_back(static_cast<int>(e));
    }
  }
  if (allowed.empty()) {
    throw InfeasibleInstanceError(
        "uniform schedules: no menu element fits budget/K");
  }
  std::vector<std::vector<int>> out;
  std::vector<int> current(inst.horizon, 0);
  std::size_t total = 1;
  for (int k = 0; k < inst.horizon; ++k) total *= allowed.size();
  out.reserve(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rem = idx;
    for (int k = 0; k < inst.horizon; ++k) {
      current[k] = allowed[rem % allowed.size()];
      rem /= allowed.size();
    }
    out.push_back(current);
  }
  return out;
}

McCheck simulate_policy(const DiscreteInstance& inst, const DpSolution& sol,
                        int samples, std::uint64_t seed) {
  Rng rng(seed);
  auto sample_from = [&](const std::vector<double>& p) {
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
  };

  double sum = 0.0;
  double sum_sq = 0.0;
  for (int it = 0; it < samples; ++it) {
    int x = sample_from(inst.prior);
    const PolicyNode* node = sol.root.get();
    double cost = 0.0;
    for (int k = 1; k <= inst.horizon; ++k) {
      int joint = 0;
      int base = 1;
      for (int i = 0; i < inst.m; ++i) {
        joint += base * sample_from(inst.observation[i][x]);
        base *= inst.n_y;
      }
      const Mechanism& mech = inst.menu[node->mechanism];
      int z = sample_from(mech.kernel[joint]);
      cost += inst.error[x][node->estimate[z]];
      if (k < inst.horizon) {
        if (!node->children[z]) {
          throw NumericalError("mc simulation reached a pruned branch");
        }
        node = node->children[z].get();
        x = sample_from(inst.transition[x]);
      }
    }
    sum += cost;
    sum_sq += cost * cost;
  }
  McCheck out;
  out.mean = sum / samples;
  double var = std::max(0.0, sum_sq / samples - out.mean * out.mean);
  out.std_error = std::sqrt(var / samples);
  return out;
}

namespace {

double max_path_leakage_rec(const DiscreteInstance& inst,
                            const PolicyNode* node) {
  if (!node) return 0.0;
  double here = inst.menu[node->mechanism].loss;
  double deepest = 0.0;
  for (const auto& c : node->children) {
    deepest = std::max(deepest, max_path_leakage_rec(inst, c.get()));
  }
  return here + deepest;
}

}  // namespace

double max_path_leakage(const DiscreteInstance& inst, const DpSolution& sol) {
  return max_path_leakage_rec(inst, sol.root.get());
}

// ----- serialization ---------------------------------------------------------

std::string DiscreteInstance::to_json() const {
  nlohmann::json j;
  j["n_x"] = n_x;
  j["m"] = m;
  j["n_y"] = n_y;
  j["n_z"] = n_z;
  j["horizon"] = horizon;
  j["transition"] = transition;
  j["observation"] = observation;
  j["prior"] = prior;
  j["error"] = error;
  j["alpha"] = alpha;
  j["budget"] = budget;
  j["menu"] = nlohmann::json::array();
  for (const auto& mech : menu) {
    j["menu"].push_back(
        {{"name", mech.name}, {"kernel", mech.kernel}, {"loss", mech.loss}});
  }
  return j.dump(2);
}

DiscreteInstance DiscreteInstance::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  DiscreteInstance inst;
  inst.n_x = j.at("n_x").get<int>();
  inst.m = j.at("m").get<int>();
  inst.n_y = j.at("n_y").get<int>();
  inst.n_z = j.at("n_z").get<int>();
  inst.horizon = j.at("horizon").get<int>();
  inst.transition = j.at("transition").get<std::vector<std::vector<double>>>();
  inst.observation =
      j.at("observation").get<std::vector<std::vector<std::vector<double>>>>();
  inst.prior = j.at("prior").get<std::vector<double>>();
  inst.error = j.at("error").get<std::vector<std::vector<double>>>();
  inst.alpha = j.at("alpha").get<double>();
  inst.budget = j.at("budget").get<double>();
  for (const auto& mj : j.at("menu")) {
    Mechanism mech;
    mech.name = mj.at("name").get<std::string>();
    mech.kernel = mj.at("kernel").get<std::vector<std::vector<double>>>();
    mech.loss = mj.value("loss", 0.0);
    inst.menu.push_back(std::move(mech));
  }
  precompute_menu_losses(inst);
  inst.validate();
  return inst;
}

namespace {

nlohmann::json node_to_json(const PolicyNode* node) {
  if (!node) return nullptr;
  nlohmann::json j;
  j["mechanism"] = node->mechanism;
  j["value"] = node->value;
  j["remaining"] = node->remaining;
  j["z_prob"] = node->z_prob;
  j["stage_cost"] = node->stage_cost;
  j["estimate"] = node->estimate;
  j["children"] = nlohmann::json::array();
  for (const auto& c : node->children) {
    j["children"].push_back(node_to_json(c.get()));
  }
  return j;
}

}  // namespace

std::string DpSolution::to_json() const {
  nlohmann::json j;
  j["value"] = value;
  j["tree"] = node_to_json(root.get());
  return j.dump(2);
}

DiscreteInstance random_instance(std::uint64_t seed) {
  Rng rng(seed);
  DiscreteInstance inst;
  inst.n_x = 2 + static_cast<int>(rng.below(2));  // 2..3
  inst.m = 1 + static_cast<int>(rng.below(2));    // 1..2
  inst.n_y = 2;
  inst.n_z = 2 + static_cast<int>(rng.below(2));  // 2..3
  inst.horizon = 2 + static_cast<int>(rng.below(2));
  inst.alpha = 2.0;

  auto random_row = [&](int n) {
    std::vector<double> row(n);
    double s = 0.0;
    for (double& v : row) {
      v = 0.05 + rng.uniform();
      s += v;
    }
    for (double& v : row) v /= s;
    return row;
  };

  inst.transition.resize(inst.n_x);
  for (auto& row : inst.transition) row = random_row(inst.n_x);
  inst.observation.resize(inst.m);
  for (auto& obs : inst.observation) {
    obs.resize(inst.n_x);
    for (int x = 0; x < inst.n_x; ++x) {
      // informative emission: biased toward y = x mod n_y
      obs[x] = random_row(inst.n_y);
      int hot = x % inst.n_y;
      for (int y = 0; y < inst.n_y; ++y) {
        obs[x][y] = 0.25 * obs[x][y] + (y == hot ? 0.75 : 0.0);
      }
    }
  }
  inst.prior = random_row(inst.n_x);
  inst.error.assign(inst.n_x, std::vector<double>(inst.n_x, 0.0));
  for (int x = 0; x < inst.n_x; ++x) {
    for (int e = 0; e < inst.n_x; ++e) {
      inst.error[x][e] = static_cast<double>((x - e) * (x - e));
    }
  }

  const int jy = inst.joint_y();
  auto informative_kernel = [&](double sharpness) {
    std::vector<std::vector<double>> k(jy, std::vector<double>(inst.n_z, 0.0));
    for (int y = 0; y < jy; ++y) {
      int hot = y % inst.n_z;
      for (int z = 0; z < inst.n_z; ++z) {
        k[y][z] = (1.0 - sharpness) / inst.n_z + (z == hot ? sharpness : 0.0);
      }
    }
    return k;
  };
  Mechanism silent;
  silent.name = "silent";
  silent.kernel.assign(jy, std::vector<double>(inst.n_z, 1.0 / inst.n_z));
  Mechanism weak{"weak", informative_kernel(0.35), 0.0};
  Mechanism strong{"strong", informative_kernel(0.85), 0.0};
  inst.menu = {silent, weak, strong};
  precompute_menu_losses(inst);

  // Budget affords the strong element once but not uniformly.
  inst.budget = 1.2 * inst.menu[2].loss;
  inst.validate();
  return inst;
}

}  // namespace dpfusion::oracle
