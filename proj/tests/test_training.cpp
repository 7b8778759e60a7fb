#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "dpfusion/training.hpp"
#include "support.hpp"

using namespace dpfusion;
using namespace dpfusion::train;
using dpfusion::fusion::FusionPolicy;
using dpfusion::fusion::Mode;
using dpfusion::fusion::TrajectoryRecord;
using dpfusion::fusion::TrajectoryStep;
using ad::Tensor;

namespace {

env::LinearGaussianConfig bench_env(int sensors, int horizon) {
  env::LinearGaussianConfig cfg;
  cfg.sensors = sensors;
  cfg.horizon = horizon;
  return cfg;
}

fusion::PolicyConfig bench_policy_cfg(int m, int hidden = 8) {
  fusion::PolicyConfig pc;
  pc.hidden = hidden;
  pc.head_hidden = hidden;
  pc.d = 2;
  pc.m = m;
  pc.n_y = 1;
  return pc;
}

fusion::EstimatorConfig bench_est_cfg(int hidden = 8, double scale = 5.0) {
  fusion::EstimatorConfig ec;
  ec.hidden = hidden;
  ec.head_hidden = hidden;
  ec.d = 2;
  ec.output_scale = scale;
  return ec;
}

std::vector<double> dump_params(const std::vector<ad::NamedTensor>& params) {
  std::vector<double> out;
  for (const auto& nt : params) {
    out.insert(out.end(), nt.tensor.values().begin(), nt.tensor.values().end());
  }
  return out;
}

// One-step bandit record batch drawn from the policy's own exploration; the
// cost prefers the largest feasible gain.
std::vector<TrajectoryRecord> bandit_batch(const FusionPolicy& policy,
                                           double budget, double target,
                                           int episodes, Rng& rng) {
  std::vector<TrajectoryRecord> batch;
  const double bound = std::sqrt(budget);  // d=1, alpha=2
  for (int i = 0; i < episodes; ++i) {
    ad::NoGradGuard no_grad;
    Tensor h = policy.encode_released(policy.released_state(),
                                      Tensor::zeros({1}));
    double g = policy.gain_mean(h, 1.0)[0];
    double sigma = std::exp(policy.exploration_log_std().values()[0]);
    double a = g + sigma * rng.normal();
    double clipped = std::clamp(a, -bound, bound);
    TrajectoryRecord rec;
    rec.global_budget = budget;
    rec.alpha = 2.0;
    rec.d = 1;
    rec.m = 1;
    TrajectoryStep st;
    st.k = 1;
    st.state = {target};
    st.action = {a};
    st.clipped = {clipped};
    st.z = {clipped};
    st.error = (target - clipped) * (target - clipped);
    st.remaining_before = budget;
    st.leakage = clipped * clipped;  // alpha*d/2 = 1
    rec.steps.push_back(st);
    batch.push_back(std::move(rec));
  }
  return batch;
}

}  // namespace

TEST_CASE("advantages from hand-built costs and critic values") {
  TrajectoryRecord rec;
  rec.global_budget = 1.0;
  rec.alpha = 2.0;
  rec.d = 1;
  rec.m = 1;
  for (int k = 1; k <= 2; ++k) {
    TrajectoryStep st;
    st.k = k;
    st.error = k == 1 ? 1.0 : 0.5;
    st.z = {0.0};
    st.remaining_before = 1.0;
    rec.steps.push_back(st);
  }
  auto adv = advantages_from_values({rec}, {{1.6, 0.6}});
  // cost-to-go {1.5, 0.5} minus critic {1.6, 0.6}
  CHECK(adv.raw[0][0] == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(adv.raw[0][1] == doctest::Approx(-0.1).epsilon(1e-12));
  // identical raw advantages normalize to zeros
  CHECK(adv.normalized[0][0] == doctest::Approx(0.0));
  CHECK(adv.normalized[0][1] == doctest::Approx(0.0));
}

TEST_CASE("joint update with zero learning rate reports error only") {
  env::LinearGaussianEnv environment(bench_env(2, 10));
  FusionPolicy policy = FusionPolicy::adaptive(bench_policy_cfg(2), 1);
  fusion::Estimator estimator(bench_est_cfg(), 2);
  auto params = policy.parameters();
  auto est_params = estimator.parameters();
  auto before = dump_params(params);
  auto before_est = dump_params(est_params);

  auto joint = ad::tensors_of(policy.filter_parameters());
  auto est_tensors = ad::tensors_of(est_params);
  joint.insert(joint.end(), est_tensors.begin(), est_tensors.end());
  ad::Adam opt(joint);
  double err = joint_update(policy, estimator, opt, environment, 4, 1.0, 2.0,
                            99, 0.0);
  CHECK(err > 0.0);
  CHECK(dump_params(policy.parameters()) == before);
  CHECK(dump_params(estimator.parameters()) == before_est);
}

TEST_CASE("joint update leaves the fusion head byte-identical") {
  env::LinearGaussianEnv environment(bench_env(2, 10));
  FusionPolicy policy = FusionPolicy::adaptive(bench_policy_cfg(2), 3);
  fusion::Estimator estimator(bench_est_cfg(), 4);
  auto actor_before = dump_params(policy.actor_parameters());
  auto filter_before = dump_params(policy.filter_parameters());

  auto joint = ad::tensors_of(policy.filter_parameters());
  auto est_tensors = ad::tensors_of(estimator.parameters());
  joint.insert(joint.end(), est_tensors.begin(), est_tensors.end());
  ad::Adam opt(joint);
  for (int i = 0; i < 3; ++i) {
    joint_update(policy, estimator, opt, environment, 4, 1.0, 2.0, 100 + i,
                 1e-3);
  }
  CHECK(dump_params(policy.actor_parameters()) == actor_before);
  CHECK(dump_params(policy.filter_parameters()) != filter_before);
}

TEST_CASE("critic regression loss is monotone on a fixed batch") {
  env::LinearGaussianEnv environment(bench_env(2, 10));
  FusionPolicy policy = FusionPolicy::adaptive(bench_policy_cfg(2), 5);
  fusion::Estimator estimator(bench_est_cfg(), 6);
  std::vector<TrajectoryRecord> batch;
  {
    ad::NoGradGuard no_grad;
    for (int i = 0; i < 4; ++i) {
      batch.push_back(fusion::run_episode(environment, policy, estimator, 1.0,
                                          2.0, 200 + i, Mode::kExploratory)
                          .record);
    }
  }
  CriticConfig cc;
  cc.hidden = 8;
  cc.head_hidden = 8;
  cc.d = 2;
  cc.value_scale = 10.0;
  Critic critic(cc, 7);
  ad::Adam opt(ad::tensors_of(critic.parameters()));
  double prev = 1e300;
  for (int step = 0; step < 100; ++step) {
    double loss = critic_update(critic, opt, batch, 1e-3);
    CHECK(loss <= prev + 1e-6);
    prev = loss;
  }
}

TEST_CASE("critic values are a function of released history and budget only") {
  CriticConfig cc;
  cc.hidden = 8;
  cc.d = 2;
  cc.value_scale = 1.0;
  Critic critic(cc, 8);
  TrajectoryRecord a, b;
  for (auto* rec : {&a, &b}) {
    rec->global_budget = 2.0;
    rec->alpha = 2.0;
    rec->d = 2;
    rec->m = 1;
    for (int k = 1; k <= 4; ++k) {
      TrajectoryStep st;
      st.k = k;
      st.z = {0.1 * k, -0.2 * k};
      st.remaining_before = 2.0 - 0.3 * k;
      st.error = rec == &a ? 1.0 : 9.0;      // costs differ
      st.state = {rec == &a ? 0.0 : 42.0};   // states differ
      rec->steps.push_back(st);
    }
  }
  CHECK(critic.values(a) == critic.values(b));
}

TEST_CASE("ppo surrogate gradient at ratio one equals vanilla policy gradient") {
  env::LinearGaussianEnv environment(bench_env(2, 6));
  fusion::PolicyConfig pc = bench_policy_cfg(2);
  FusionPolicy policy = FusionPolicy::adaptive(pc, 9);
  fusion::Estimator estimator(bench_est_cfg(), 10);
  std::vector<TrajectoryRecord> batch;
  {
    ad::NoGradGuard no_grad;
    for (int i = 0; i < 3; ++i) {
      batch.push_back(fusion::run_episode(environment, policy, estimator, 1.0,
                                          2.0, 300 + i, Mode::kExploratory)
                          .record);
    }
  }
  std::vector<std::vector<double>> adv(batch.size());
  Rng rng(11);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t k = 0; k < batch[i].steps.size(); ++k) {
      adv[i].push_back(rng.uniform(-1.0, 1.0));
    }
  }

  // route A: one ppo epoch starting from ratios == 1
  FusionPolicy actor_a = policy.clone();
  ad::Adam opt_a(ad::tensors_of(actor_a.actor_parameters()));
  PpoConfig cfg;
  cfg.epochs_per_batch = 1;
  cfg.actor_lr = 1e-3;
  cfg.clip_epsilon = 0.2;
  ppo_update(actor_a, policy, opt_a, batch, adv, cfg);

  // route B: one adam step on the plain policy-gradient objective
  FusionPolicy actor_b = policy.clone();
  ad::Adam opt_b(ad::tensors_of(actor_b.actor_parameters()));
  {
    Tensor loss;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tensor h = actor_b.released_state();
      Tensor z_prev = Tensor::zeros({pc.d});
      for (std::size_t k = 0; k < batch[i].steps.size(); ++k) {
        const auto& st = batch[i].steps[k];
        h = actor_b.encode_released(h, z_prev);
        Tensor mean = actor_b.fusion_vector(
            h, st.remaining_before / batch[i].global_budget);
        Tensor diff = ad::sub(Tensor::constant(st.action), mean);
        Tensor inv_var = ad::exp_t(
            ad::mul_scalar(actor_b.exploration_log_std(), -2.0));
        Tensor quad = ad::sum(ad::mul(ad::square(diff), inv_var));
        Tensor logp = ad::add(ad::mul_scalar(quad, -0.5),
                              ad::neg(ad::sum(actor_b.exploration_log_std())));
        Tensor term = ad::mul_scalar(logp, adv[i][k]);
        loss = loss.defined() ? ad::add(loss, term) : term;
        z_prev = Tensor::constant(st.z);
      }
    }
    ad::mul_scalar(loss, 1.0 / batch.size()).backward();
    opt_b.step(cfg.actor_lr);
  }

  auto pa = dump_params(actor_a.actor_parameters());
  auto pb = dump_params(actor_b.actor_parameters());
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i] == doctest::Approx(pb[i]).epsilon(1e-9));
  }
}

TEST_CASE("zero advantages leave the actor unchanged") {
  env::LinearGaussianEnv environment(bench_env(2, 6));
  FusionPolicy policy = FusionPolicy::adaptive(bench_policy_cfg(2), 12);
  fusion::Estimator estimator(bench_est_cfg(), 13);
  std::vector<TrajectoryRecord> batch;
  {
    ad::NoGradGuard no_grad;
    batch.push_back(fusion::run_episode(environment, policy, estimator, 1.0,
                                        2.0, 400, Mode::kExploratory)
                        .record);
  }
  std::vector<std::vector<double>> adv = {
      std::vector<double>(batch[0].steps.size(), 0.0)};
  auto before = dump_params(policy.actor_parameters());
  ad::Adam opt(ad::tensors_of(policy.actor_parameters()));
  PpoConfig cfg;
  ppo_update(policy, policy.clone(), opt, batch, adv, cfg);
  CHECK(dump_params(policy.actor_parameters()) == before);
}

TEST_CASE("zero clip epsilon makes the actor update a no-op") {
  env::LinearGaussianEnv environment(bench_env(2, 6));
  FusionPolicy policy = FusionPolicy::adaptive(bench_policy_cfg(2), 14);
  fusion::Estimator estimator(bench_est_cfg(), 15);
  std::vector<TrajectoryRecord> batch;
  {
    ad::NoGradGuard no_grad;
    for (int i = 0; i < 2; ++i) {
      batch.push_back(fusion::run_episode(environment, policy, estimator, 1.0,
                                          2.0, 500 + i, Mode::kExploratory)
                          .record);
    }
  }
  auto adv = compute_advantages(batch, Critic(CriticConfig{8, 8, 2, 1.0}, 16));
  auto before = dump_params(policy.actor_parameters());
  ad::Adam opt(ad::tensors_of(policy.actor_parameters()));
  PpoConfig cfg;
  cfg.clip_epsilon = 0.0;
  cfg.epochs_per_batch = 4;
  ppo_update(policy, policy.clone(), opt, batch, adv.normalized, cfg);
  CHECK(dump_params(policy.actor_parameters()) == before);
}

TEST_CASE("huge parameter jumps are masked out of the surrogate") {
  env::LinearGaussianEnv environment(bench_env(2, 6));
  FusionPolicy policy = FusionPolicy::adaptive(bench_policy_cfg(2), 17);
  fusion::Estimator estimator(bench_est_cfg(), 18);
  std::vector<TrajectoryRecord> batch;
  {
    ad::NoGradGuard no_grad;
    batch.push_back(fusion::run_episode(environment, policy, estimator, 1.0,
                                        2.0, 600, Mode::kExploratory)
                        .record);
  }
  FusionPolicy old_actor = policy.clone();
  // push the current policy far from the behavior policy
  for (auto& [name, tensor] : policy.actor_parameters()) {
    if (name == "policy.log_std") {
      for (double& v : tensor.values_mut()) v = -30.0;
    }
  }
  std::vector<std::vector<double>> adv = {
      std::vector<double>(batch[0].steps.size(), 1.0)};
  ad::Adam opt(ad::tensors_of(policy.actor_parameters()));
  PpoConfig cfg;
  cfg.epochs_per_batch = 1;
  auto diag = ppo_update(policy, old_actor, opt, batch, adv, cfg);
  CHECK(diag.masked_samples > 0);
}

TEST_CASE("one-step bandit learns to push its gain to the clip bound") {
  const double budget = 0.25;          // bound = 0.5 at d=1, alpha=2
  const double bound = 0.5;
  const double target = 0.6;           // optimum sits at the bound
  // two-level oracle: the higher gain has strictly lower expected cost
  const double lo = 0.1, hi = bound;
  CHECK((target - hi) * (target - hi) < (target - lo) * (target - lo));

  fusion::PolicyConfig pc;
  pc.hidden = 8;
  pc.head_hidden = 8;
  pc.d = 1;
  pc.m = 1;
  pc.n_y = 1;
  pc.init_log_std = -1.6;
  pc.init_gain_bias = lo;
  FusionPolicy policy = FusionPolicy::adaptive(pc, 19);

  CriticConfig cc;
  cc.hidden = 8;
  cc.head_hidden = 8;
  cc.d = 1;
  cc.value_scale = 1.0;
  Critic critic(cc, 20);
  ad::Adam critic_opt(ad::tensors_of(critic.parameters()));
  ad::Adam actor_opt(ad::tensors_of(policy.actor_parameters()));
  PpoConfig cfg;
  cfg.actor_lr = 2e-3;
  cfg.critic_lr = 3e-3;
  cfg.epochs_per_batch = 4;

  Rng rng(21);
  auto gain_now = [&]() {
    ad::NoGradGuard no_grad;
    Tensor h = policy.encode_released(policy.released_state(),
                                      Tensor::zeros({1}));
    return policy.gain_mean(h, 1.0)[0];
  };
  const double g0 = gain_now();
  for (int iter = 0; iter < 60; ++iter) {
    auto batch = bandit_batch(policy, budget, target, 32, rng);
    auto adv = compute_advantages(batch, critic);
    for (int c = 0; c < 10; ++c) critic_update(critic, critic_opt, batch, cfg.critic_lr);
    ppo_update(policy, policy.clone(), actor_opt, batch, adv.normalized, cfg);
  }
  const double g1 = gain_now();
  CHECK(g1 > g0 + 0.1);                  // moved decisively upward
  CHECK(std::fabs(g1 - bound) < 0.12);   // settled near the bound
}

TEST_CASE("alternate optimize with zero rounds returns the initial setup") {
  env::LinearGaussianEnv train_env(bench_env(2, 8));
  env::LinearGaussianEnv val_env(bench_env(2, 8));
  FusionPolicy policy = FusionPolicy::adaptive(bench_policy_cfg(2), 22);
  fusion::Estimator estimator(bench_est_cfg(), 23);
  Critic critic(CriticConfig{8, 8, 2, 1.0}, 24);
  auto before = dump_params(policy.parameters());
  PpoConfig cfg;
  cfg.outer_rounds = 0;
  cfg.batch_episodes = 2;
  cfg.validation_episodes = 2;
  auto result = alternate_optimize(train_env, val_env, policy.clone(),
                                   estimator.clone(), critic.clone(), cfg, 1.0,
                                   2.0, 25);
  CHECK(result.log.empty());
  CHECK(dump_params(result.policy.parameters()) == before);
}

TEST_CASE("training runs are reproducible") {
  PpoConfig cfg;
  cfg.outer_rounds = 1;
  cfg.batch_episodes = 4;
  cfg.max_joint_updates = 5;
  cfg.max_ppo_iterations = 3;
  cfg.critic_steps_per_batch = 4;
  cfg.validation_episodes = 4;
  cfg.patience = 3;

  auto run_once = [&]() {
    env::LinearGaussianEnv train_env(bench_env(2, 8));
    env::LinearGaussianEnv val_env(bench_env(2, 8));
    FusionPolicy policy = FusionPolicy::adaptive(bench_policy_cfg(2), 26);
    fusion::Estimator estimator(bench_est_cfg(), 27);
    Critic critic(CriticConfig{8, 8, 2, 10.0}, 28);
    auto result = alternate_optimize(train_env, val_env, std::move(policy),
                                     std::move(estimator), std::move(critic),
                                     cfg, 1.0, 2.0, 29);
    std::ostringstream log;
    for (const auto& entry : result.log) log << entry.to_json() << "\n";
    return log.str();
  };
  std::string a = run_once();
  CHECK_FALSE(a.empty());
  CHECK(a == run_once());
}

TEST_CASE("ppo log entries carry a leakage profile") {
  env::LinearGaussianEnv train_env(bench_env(2, 8));
  env::LinearGaussianEnv val_env(bench_env(2, 8));
  PpoConfig cfg;
  cfg.outer_rounds = 1;
  cfg.batch_episodes = 3;
  cfg.max_joint_updates = 2;
  cfg.max_ppo_iterations = 2;
  cfg.critic_steps_per_batch = 2;
  cfg.validation_episodes = 2;
  cfg.patience = 2;
  auto result = alternate_optimize(
      train_env, val_env, FusionPolicy::adaptive(bench_policy_cfg(2), 30),
      fusion::Estimator(bench_est_cfg(), 31), Critic(CriticConfig{8, 8, 2, 10.0}, 32),
      cfg, 1.0, 2.0, 33);
  bool saw_ppo = false;
  for (const auto& entry : result.log) {
    if (entry.phase == "ppo") {
      saw_ppo = true;
      CHECK(entry.mean_leakage_profile.size() == 8);
    }
  }
  CHECK(saw_ppo);
}

TEST_CASE("classical policies train through the joint phase only") {
  env::LinearGaussianEnv train_env(bench_env(2, 8));
  env::LinearGaussianEnv val_env(bench_env(2, 8));
  fusion::PolicyConfig pc = bench_policy_cfg(2);
  FusionPolicy policy =
      fusion::classical_baseline(pc, 1.0, 8, privacy::RenyiOrder(2.0), 34);
  PpoConfig cfg;
  cfg.outer_rounds = 1;
  cfg.batch_episodes = 3;
  cfg.max_joint_updates = 4;
  cfg.validation_episodes = 2;
  cfg.patience = 2;
  auto result = alternate_optimize(
      train_env, val_env, std::move(policy), fusion::Estimator(bench_est_cfg(), 35),
      Critic(CriticConfig{8, 8, 2, 10.0}, 36), cfg, 1.0, 2.0, 37);
  for (const auto& entry : result.log) CHECK(entry.phase == "joint");
}

TEST_CASE("joint training approaches the conditional-mean filter") {
  // easy tracking instance with a nearly transparent fusion channel
  env::LinearGaussianConfig ec;
  ec.sensors = 2;
  ec.horizon = 20;
  ec.mean = {1.0};
  ec.transition = {{0.9}};
  ec.process_var = {0.19};
  ec.init_var = {1.0};
  ec.sensor_var = {0.25, 0.25};
  env::LinearGaussianEnv environment(ec);

  fusion::PolicyConfig pc = bench_policy_cfg(2, 24);
  FusionPolicy policy = FusionPolicy::classical(pc, 50.0, 40);
  fusion::EstimatorConfig est_cfg = bench_est_cfg(24, 5.0);
  fusion::Estimator estimator(est_cfg, 41);

  auto joint = ad::tensors_of(policy.filter_parameters());
  auto est_tensors = ad::tensors_of(estimator.parameters());
  joint.insert(joint.end(), est_tensors.begin(), est_tensors.end());
  ad::Adam opt(joint);

  const double budget = 1e6;
  for (int update = 0; update < 2000; ++update) {
    double lr = update < 1200 ? 4e-3 : 1e-3;
    joint_update(policy, estimator, opt, environment, 8, budget, 2.0,
                 split_seed(7000, update), lr);
  }

  auto stats = evaluate_policy(environment, policy, estimator, budget, 2.0,
                               200, 123456);
  const double kf = dpfusion::testing::kalman_mean_mse(ec);
  MESSAGE("trained mse ", stats.mean_error, " vs kalman ", kf);
  CHECK(stats.mean_error <= 1.10 * kf);
  CHECK(stats.mean_error >= 0.90 * kf);  // nothing beats the exact filter
}
