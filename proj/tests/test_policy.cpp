#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "dpfusion/policy.hpp"

using namespace dpfusion;
using namespace dpfusion::fusion;
using ad::Tensor;

namespace {

PolicyConfig small_policy_config(int m, int n_y = 1) {
  PolicyConfig cfg;
  cfg.hidden = 8;
  cfg.head_hidden = 8;
  cfg.d = 2;
  cfg.m = m;
  cfg.n_y = n_y;
  return cfg;
}

env::LinearGaussianConfig small_env_config(int sensors, int horizon) {
  env::LinearGaussianConfig cfg;
  cfg.sensors = sensors;
  cfg.horizon = horizon;
  return cfg;
}

// Weight surgery: the filter output saturates at ~1 for all-ones sensor
// input and ~0 for all-zeros, which attains the sensitivity bound.
void make_filter_saturating(FusionPolicy& policy) {
  for (auto& [name, tensor] : policy.filter_parameters()) {
    auto& v = tensor.values_mut();
    if (name == "policy.encoder_y.wf") {
      std::fill(v.begin(), v.end(), 0.0);
    } else if (name == "policy.encoder_y.bf") {
      std::fill(v.begin(), v.end(), 50.0);  // forget gate ~1: h <- candidate
    } else if (name == "policy.encoder_y.wc") {
      // candidate = tanh(100*y - 50): +-1 for y in {1, 0}
      std::fill(v.begin(), v.end(), 0.0);
      int hidden = tensor.shape()[0];
      int cols = tensor.shape()[1];
      for (int r = 0; r < hidden; ++r) v[r * cols] = 100.0;
    } else if (name == "policy.encoder_y.bc") {
      std::fill(v.begin(), v.end(), -50.0);
    } else if (name == "policy.filter_head.l1.weight") {
      std::fill(v.begin(), v.end(), 0.0);
      int cols = tensor.shape()[1];
      for (int r = 0; r < tensor.shape()[0]; ++r) v[r * cols] = 30.0;
    } else if (name == "policy.filter_head.l1.bias") {
      std::fill(v.begin(), v.end(), 0.0);
    } else if (name == "policy.filter_head.l2.weight") {
      std::fill(v.begin(), v.end(), 10.0);
    } else if (name == "policy.filter_head.l2.bias") {
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
}

}  // namespace

TEST_CASE("exhausted budget forces pure noise output") {
  PolicyConfig pc = small_policy_config(3);
  FusionPolicy policy = FusionPolicy::adaptive(pc, 1);
  privacy::PrivacyLedger ledger(privacy::RenyiOrder(2.0), 0.0,
                                privacy::MechanismShape(pc.d, pc.m));
  std::vector<Tensor> h_y(pc.m, policy.measurement_state());
  Rng noise(9), action(10);
  auto res = fuse_step(policy, policy.released_state(), h_y, ledger, noise,
                       action, Mode::kDeterministic);
  CHECK(res.leakage == 0.0);
  for (int i = 0; i < pc.d; ++i) CHECK(res.z[i] == res.noise[i]);
  for (double c : res.clipped) CHECK(c == 0.0);
}

TEST_CASE("single sensor with saturated filter matches hand arithmetic") {
  PolicyConfig pc = small_policy_config(1);
  FusionPolicy policy = FusionPolicy::classical(pc, 0.5, 3);
  make_filter_saturating(policy);

  privacy::PrivacyLedger ledger(privacy::RenyiOrder(2.0), 100.0,
                                privacy::MechanismShape(pc.d, pc.m));
  Tensor h_y = policy.encode_measurement(policy.measurement_state(),
                                         Tensor::constant({1.0}));
  Rng noise(4), action(5);
  auto res = fuse_step(policy, policy.released_state(), {h_y}, ledger, noise,
                       action, Mode::kDeterministic);
  // Z = 0.5 * f + N with f ~= 1 componentwise
  for (int i = 0; i < pc.d; ++i) {
    CHECK(res.z[i] == doctest::Approx(0.5 + res.noise[i]).epsilon(1e-9));
  }
  // leakage alpha*d/2 * 0.25 with alpha=2, d=2
  CHECK(res.leakage == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sensitivity bound holds for random adjacent histories") {
  Rng meta(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 2 + static_cast<int>(meta.below(3));
    const int horizon = 6;
    PolicyConfig pc = small_policy_config(m);
    FusionPolicy policy = FusionPolicy::adaptive(pc, meta.next_u64());
    privacy::MechanismShape shape(pc.d, pc.m);
    privacy::RenyiOrder order(2.0);
    const double budget = 0.5 + meta.uniform() * 2.0;
    const int differing = static_cast<int>(meta.below(m));

    // two measurement histories differing in one sensor's entire record
    std::vector<std::vector<std::vector<double>>> ys(2);
    for (int branch = 0; branch < 2; ++branch) {
      ys[branch].assign(horizon, std::vector<double>(m, 0.0));
    }
    for (int k = 0; k < horizon; ++k) {
      for (int i = 0; i < m; ++i) {
        double shared = meta.uniform();
        ys[0][k][i] = shared;
        ys[1][k][i] = i == differing ? meta.uniform() : shared;
      }
    }

    // branch 0 defines the conditioning; branch 1 replays its Z history
    std::vector<std::vector<double>> z_a;
    std::vector<double> gbar_a;
    for (int branch = 0; branch < 2; ++branch) {
      privacy::PrivacyLedger ledger(order, budget, shape);
      std::vector<Tensor> h_y(m, policy.measurement_state());
      Tensor h_z = policy.released_state();
      Tensor z_prev = Tensor::zeros({pc.d});
      Rng noise(777), action(778);
      for (int k = 0; k < horizon; ++k) {
        h_z = policy.encode_released(h_z, z_prev);
        for (int i = 0; i < m; ++i) {
          h_y[i] = policy.encode_measurement(
              h_y[i], Tensor::constant({ys[branch][k][i]}));
        }
        auto res = fuse_step(policy, h_z, h_y, ledger, noise, action,
                             Mode::kDeterministic);
        if (branch == 0) {
          z_a.push_back(res.z.values());
          gbar_a.push_back(privacy::gbar(res.clipped));
        } else {
          double dz = 0.0;
          for (int i = 0; i < pc.d; ++i) {
            double diff = res.z[i] - z_a[k][i];
            dz += diff * diff;
          }
          double bound = std::sqrt(static_cast<double>(pc.d)) * gbar_a[k];
          CHECK(std::sqrt(dz) <= bound + 1e-9);
        }
        z_prev = Tensor::constant(z_a[k]);  // identical conditioning
      }
    }
  }
}

TEST_CASE("sensitivity bound is tight at filter extremes") {
  const int m = 3;
  PolicyConfig pc = small_policy_config(m);
  const double gain = 0.3;
  FusionPolicy policy = FusionPolicy::classical(pc, gain, 5);
  make_filter_saturating(policy);
  privacy::MechanismShape shape(pc.d, pc.m);
  privacy::RenyiOrder order(2.0);

  std::vector<std::vector<double>> z_branch(2);
  double gbar_logged = 0.0;
  for (int branch = 0; branch < 2; ++branch) {
    privacy::PrivacyLedger ledger(order, 100.0, shape);
    std::vector<Tensor> h_y(m, policy.measurement_state());
    Rng noise(11), action(12);
    for (int i = 0; i < m; ++i) {
      // sensor 0 differs: all-ones vs all-zeros; others shared
      double y = i == 0 ? (branch == 0 ? 1.0 : 0.0) : 1.0;
      h_y[i] = policy.encode_measurement(h_y[i], Tensor::constant({y}));
    }
    auto res = fuse_step(policy, policy.released_state(), h_y, ledger, noise,
                         action, Mode::kDeterministic);
    z_branch[branch] = res.z.values();
    gbar_logged = privacy::gbar(res.clipped);
  }
  double dz = 0.0;
  for (int i = 0; i < pc.d; ++i) {
    double diff = z_branch[0][i] - z_branch[1][i];
    dz += diff * diff;
  }
  double bound = std::sqrt(static_cast<double>(pc.d)) * gbar_logged;
  CHECK(std::sqrt(dz) <= bound + 1e-9);
  CHECK(std::sqrt(dz) >= 0.99 * bound);  // attained within 1%
}

TEST_CASE("run_episode obeys the ledger on every fuzzed rollout") {
  Rng meta(31337);
  const double budgets[] = {0.0, 0.1, 1.5, 50.0};
  for (int trial = 0; trial < 200; ++trial) {
    const double budget = budgets[meta.below(4)];
    const int m = 1 + static_cast<int>(meta.below(4));
    env::LinearGaussianConfig ec = small_env_config(m, 12);
    env::LinearGaussianEnv environment(ec);
    PolicyConfig pc = small_policy_config(m);
    pc.init_gain_bias = meta.uniform(-1.0, 1.0);
    const bool classical = meta.uniform() < 0.3;
    FusionPolicy policy =
        classical
            ? classical_baseline(pc, budget, ec.horizon,
                                 privacy::RenyiOrder(2.0), meta.next_u64())
            : FusionPolicy::adaptive(pc, meta.next_u64());
    EstimatorConfig est_cfg;
    est_cfg.hidden = 8;
    est_cfg.head_hidden = 8;
    est_cfg.d = pc.d;
    Estimator estimator(est_cfg, meta.next_u64());

    Mode mode = classical ? Mode::kDeterministic
                          : (meta.uniform() < 0.5 ? Mode::kExploratory
                                                  : Mode::kDeterministic);
    auto result = run_episode(environment, policy, estimator, budget, 2.0,
                              meta.next_u64(), mode);
    CHECK(result.record.total_leakage() <= budget + 1e-9);
    auto audit = audit_trajectory(result.record);
    CHECK(audit.pass);
    REQUIRE(result.record.ledger.has_value());
    CHECK(result.record.ledger->spent() <= budget + 1e-9);
  }
}

TEST_CASE("classical baseline leaks exactly budget/K each step") {
  const double budget = 1.5;
  const int horizon = 100;
  env::LinearGaussianConfig ec = small_env_config(3, horizon);
  env::LinearGaussianEnv environment(ec);
  PolicyConfig pc = small_policy_config(3);
  privacy::RenyiOrder order(2.0);
  FusionPolicy policy = classical_baseline(pc, budget, horizon, order, 1);
  CHECK(policy.constant_gain() ==
        doctest::Approx(0.08660254037844387).epsilon(1e-15));

  EstimatorConfig est_cfg;
  est_cfg.hidden = 8;
  est_cfg.d = pc.d;
  Estimator estimator(est_cfg, 2);
  auto result = run_episode(environment, policy, estimator, budget, 2.0, 4,
                            Mode::kDeterministic);
  for (const auto& st : result.record.steps) {
    CHECK(st.leakage == doctest::Approx(budget / horizon).epsilon(1e-9));
  }
  CHECK(result.record.total_leakage() <= budget + 1e-9);
}

TEST_CASE("single step with zero budget") {
  env::LinearGaussianConfig ec = small_env_config(2, 1);
  env::LinearGaussianEnv environment(ec);
  PolicyConfig pc = small_policy_config(2);
  FusionPolicy policy = FusionPolicy::adaptive(pc, 9);
  EstimatorConfig est_cfg;
  est_cfg.d = pc.d;
  Estimator estimator(est_cfg, 10);
  auto result = run_episode(environment, policy, estimator, 0.0, 2.0, 11,
                            Mode::kDeterministic);
  REQUIRE(result.record.steps.size() == 1);
  const auto& st = result.record.steps[0];
  CHECK(st.leakage == 0.0);
  CHECK(st.z == st.noise);
}

TEST_CASE("estimator output depends only on the released sequence") {
  EstimatorConfig cfg;
  cfg.hidden = 8;
  cfg.d = 2;
  Estimator estimator(cfg, 21);
  Rng rng(5);
  Tensor h1 = estimator.initial_state();
  Tensor h2 = estimator.initial_state();
  for (int k = 0; k < 10; ++k) {
    std::vector<double> z = {rng.normal(), rng.normal()};
    auto [n1, e1] = estimator.step(h1, Tensor::constant(z));
    auto [n2, e2] = estimator.step(h2, Tensor::constant(z));
    h1 = n1;
    h2 = n2;
    CHECK(e1.values() == e2.values());
  }
}

TEST_CASE("zero-initialized estimator head emits zero") {
  EstimatorConfig cfg;
  cfg.d = 2;
  Estimator estimator(cfg, 3);
  for (auto& [name, tensor] : estimator.parameters()) {
    if (name.rfind("estimator.head.l2", 0) == 0) {
      auto& v = tensor.values_mut();
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
  Rng rng(6);
  Tensor h = estimator.initial_state();
  for (int k = 0; k < 5; ++k) {
    auto [hn, est] =
        estimator.step(h, Tensor::constant({rng.normal(), rng.normal()}));
    h = hn;
    CHECK(est.values()[0] == 0.0);
  }
}

TEST_CASE("deterministic rollouts reproduce bit for bit") {
  env::LinearGaussianConfig ec = small_env_config(2, 15);
  env::LinearGaussianEnv environment(ec);
  PolicyConfig pc = small_policy_config(2);
  FusionPolicy policy = FusionPolicy::adaptive(pc, 77);
  EstimatorConfig est_cfg;
  est_cfg.d = pc.d;
  Estimator estimator(est_cfg, 78);

  auto r1 = run_episode(environment, policy, estimator, 1.0, 2.0, 555,
                        Mode::kDeterministic);
  auto r2 = run_episode(environment, policy, estimator, 1.0, 2.0, 555,
                        Mode::kDeterministic);
  REQUIRE(r1.record.steps.size() == r2.record.steps.size());
  for (std::size_t k = 0; k < r1.record.steps.size(); ++k) {
    CHECK(r1.record.steps[k].z == r2.record.steps[k].z);
    CHECK(r1.record.steps[k].estimate == r2.record.steps[k].estimate);
    CHECK(r1.record.steps[k].leakage == r2.record.steps[k].leakage);
  }
}

TEST_CASE("vanishing exploration matches the deterministic rollout") {
  env::LinearGaussianConfig ec = small_env_config(2, 10);
  env::LinearGaussianEnv environment(ec);
  PolicyConfig pc = small_policy_config(2);
  pc.init_log_std = -60.0;  // exp(-60) is below one ulp of any O(1) gain
  pc.init_gain_bias = 0.2;
  FusionPolicy policy = FusionPolicy::adaptive(pc, 31);
  EstimatorConfig est_cfg;
  est_cfg.d = pc.d;
  Estimator estimator(est_cfg, 32);

  auto det = run_episode(environment, policy, estimator, 1.0, 2.0, 99,
                         Mode::kDeterministic);
  auto expl = run_episode(environment, policy, estimator, 1.0, 2.0, 99,
                          Mode::kExploratory);
  REQUIRE(det.record.steps.size() == expl.record.steps.size());
  for (std::size_t k = 0; k < det.record.steps.size(); ++k) {
    CHECK(det.record.steps[k].z == expl.record.steps[k].z);
  }
}

TEST_CASE("remaining budget strictly decreases under nonzero gains") {
  env::LinearGaussianConfig ec = small_env_config(2, 20);
  env::LinearGaussianEnv environment(ec);
  PolicyConfig pc = small_policy_config(2);
  pc.init_gain_bias = 0.1;
  FusionPolicy policy = FusionPolicy::adaptive(pc, 41);
  EstimatorConfig est_cfg;
  est_cfg.d = pc.d;
  Estimator estimator(est_cfg, 42);
  auto result = run_episode(environment, policy, estimator, 5.0, 2.0, 43,
                            Mode::kDeterministic);
  for (std::size_t k = 1; k < result.record.steps.size(); ++k) {
    const auto& prev = result.record.steps[k - 1];
    const auto& cur = result.record.steps[k];
    if (prev.leakage > 0.0) {
      CHECK(cur.remaining_before < prev.remaining_before);
    }
  }
}

TEST_CASE("trajectory records serialize and audit through files") {
  env::LinearGaussianConfig ec = small_env_config(2, 8);
  env::LinearGaussianEnv environment(ec);
  PolicyConfig pc = small_policy_config(2);
  FusionPolicy policy = FusionPolicy::adaptive(pc, 51);
  EstimatorConfig est_cfg;
  est_cfg.d = pc.d;
  Estimator estimator(est_cfg, 52);
  auto result = run_episode(environment, policy, estimator, 1.0, 2.0, 53,
                            Mode::kExploratory);

  std::stringstream buffer;
  write_trajectory(result.record, buffer);
  TrajectoryRecord restored = read_trajectory(buffer);
  REQUIRE(restored.steps.size() == result.record.steps.size());
  CHECK(restored.global_budget == result.record.global_budget);
  CHECK(restored.steps[3].z == result.record.steps[3].z);
  CHECK(audit_trajectory(restored).pass);

  SUBCASE("tampered gain fails at the edited step") {
    restored.steps[4].clipped[0] = 10.0;  // exceeds any clip bound here
    auto report = audit_trajectory(restored);
    CHECK_FALSE(report.pass);
    CHECK(report.first_bad_step == 5);
  }
  SUBCASE("an empty trajectory audits clean") {
    TrajectoryRecord empty;
    empty.global_budget = 1.0;
    empty.alpha = 2.0;
    empty.d = 2;
    empty.m = 2;
    auto report = audit_trajectory(empty);
    CHECK(report.pass);
    CHECK(report.total_leakage == 0.0);
  }
}

TEST_CASE("exploratory mode on a classical policy is rejected") {
  env::LinearGaussianConfig ec = small_env_config(2, 5);
  env::LinearGaussianEnv environment(ec);
  PolicyConfig pc = small_policy_config(2);
  FusionPolicy policy =
      classical_baseline(pc, 1.0, 5, privacy::RenyiOrder(2.0), 1);
  EstimatorConfig est_cfg;
  est_cfg.d = pc.d;
  Estimator estimator(est_cfg, 2);
  CHECK_THROWS_AS(run_episode(environment, policy, estimator, 1.0, 2.0, 3,
                              Mode::kExploratory),
                  UsageError);
}
