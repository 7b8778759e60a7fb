#include "dpfusion/training.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace dpfusion::train {

using ad::Tensor;

void PpoConfig::validate() const {
  if (!(clip_epsilon >= 0.0 && clip_epsilon < 1.0)) {
    throw InvalidInputError("ppo config: clip_epsilon must be in [0, 1)");
  }
  if (!(actor_lr >= 0.0) || !(critic_lr >= 0.0) || !(learning_rate >= 0.0)) {
    throw InvalidInputError("ppo config: learning rates must be >= 0");
  }
  if (batch_episodes < 1) {
    throw InvalidInputError("ppo config: batch_episodes must be >= 1");
  }
  if (epochs_per_batch < 1) {
    throw InvalidInputError("ppo config: epochs_per_batch must be >= 1");
  }
  if (outer_rounds < 0) {
    throw InvalidInputError("ppo config: outer_rounds must be >= 0");
  }
}

Critic::Critic(const CriticConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(split_seed(seed, 303));
  encoder_ = ad::GatedCell(cfg.d, cfg.hidden, rng);
  head_ = ad::Mlp(cfg.hidden + 1, cfg.head_hidden, 1,
                  ad::HeadActivation::kLinear, rng);
}

std::vector<Tensor> Critic::predictions(
    const fusion::TrajectoryRecord& rec) const {
  std::vector<Tensor> out;
  out.reserve(rec.steps.size());
  Tensor h = encoder_.initial_state();
  Tensor z_prev = Tensor::zeros({cfg_.d});
  const double b_g = rec.global_budget;
  for (const auto& st : rec.steps) {
    h = encoder_.forward(z_prev, h);
    double fraction = b_g > 0.0 ? st.remaining_before / b_g : 0.0;
    Tensor input = ad::concat(h, Tensor::scalar(fraction));
    out.push_back(ad::mul_scalar(head_.forward(input), cfg_.value_scale));
    z_prev = Tensor::constant(st.z);
  }
  return out;
}

std::vector<double> Critic::values(const fusion::TrajectoryRecord& rec) const {
  ad::NoGradGuard no_grad;
  auto preds = predictions(rec);
  std::vector<double> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(p.scalar_value());
  return out;
}

std::vector<ad::NamedTensor> Critic::parameters() const {
  std::vector<ad::NamedTensor> out;
  encoder_.collect("critic.encoder", out);
  head_.collect("critic.head", out);
  return out;
}

Critic Critic::clone() const {
  Critic c = *this;
  c.encoder_.wf = encoder_.wf.clone_leaf();
  c.encoder_.bf = encoder_.bf.clone_leaf();
  c.encoder_.wc = encoder_.wc.clone_leaf();
  c.encoder_.bc = encoder_.bc.clone_leaf();
  c.head_.l1.weight = head_.l1.weight.clone_leaf();
  c.head_.l1.bias = head_.l1.bias.clone_leaf();
  c.head_.l2.weight = head_.l2.weight.clone_leaf();
  c.head_.l2.bias = head_.l2.bias.clone_leaf();
  return c;
}

double joint_update(const fusion::FusionPolicy& policy,
                    const fusion::Estimator& estimator, ad::Adam& optimizer,
                    env::Environment& environment, int episodes,
                    double global_budget, double alpha,
                    std::uint64_t seed_base, double learning_rate) {
  Tensor total;
  double error_sum = 0.0;
  for (int i = 0; i < episodes; ++i) {
    auto result = fusion::run_episode(environment, policy, estimator,
                                      global_budget, alpha,
                                      split_seed(seed_base, i),
                                      fusion::Mode::kDeterministic);
    auto audit = fusion::audit_trajectory(result.record);
    if (!audit.pass) {
      throw BudgetOverrunError("training rollout failed the ledger audit: " +
                               audit.message);
    }
    error_sum += result.record.total_error();
    total = total.defined() ? ad::add(total, result.loss) : result.loss;
  }
  Tensor objective = ad::mul_scalar(total, 1.0 / episodes);
  objective.backward();
  optimizer.step(learning_rate);
  return error_sum / episodes;
}

AdvantageBatch advantages_from_values(
    const std::vector<fusion::TrajectoryRecord>& batch,
    const std::vector<std::vector<double>>& critic_values) {
  AdvantageBatch out;
  out.raw.resize(batch.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& steps = batch[i].steps;
    out.raw[i].resize(steps.size());
    double ctg = 0.0;
    for (std::size_t k = steps.size(); k-- > 0;) {
      ctg += steps[k].error;
      double adv = ctg - critic_values[i][k];
      out.raw[i][k] = adv;
      sum += adv;
      sum_sq += adv * adv;
      ++count;
    }
  }
  double mean = count ? sum / count : 0.0;
  double var = count ? std::max(0.0, sum_sq / count - mean * mean) : 0.0;
  double scale = 1.0 / (std::sqrt(var) + 1e-8);
  out.normalized = out.raw;
  for (auto& episode : out.normalized) {
    for (double& a : episode) a = (a - mean) * scale;
  }
  return out;
}

AdvantageBatch compute_advantages(
    const std::vector<fusion::TrajectoryRecord>& batch, const Critic& critic) {
  std::vector<std::vector<double>> values;
  values.reserve(batch.size());
  for (const auto& rec : batch) values.push_back(critic.values(rec));
  return advantages_from_values(batch, values);
}

double critic_update(Critic& critic, ad::Adam& optimizer,
                     const std::vector<fusion::TrajectoryRecord>& batch,
                     double learning_rate) {
  Tensor loss;
  for (const auto& rec : batch) {
    auto preds = critic.predictions(rec);
    double ctg = 0.0;
    std::vector<double> targets(rec.steps.size(), 0.0);
    for (std::size_t k = rec.steps.size(); k-- > 0;) {
      ctg += rec.steps[k].error;
      targets[k] = ctg;
    }
    for (std::size_t k = 0; k < preds.size(); ++k) {
      Tensor err = ad::square(ad::add_scalar(preds[k], -targets[k]));
      loss = loss.defined() ? ad::add(loss, err) : err;
    }
  }
  Tensor objective = ad::mul_scalar(loss, 1.0 / batch.size());
  double value = objective.scalar_value();
  objective.backward();
  optimizer.step(learning_rate);
  return value;
}

namespace {

// log N(action; mean, diag exp(2*log_std)) as a graph over (mean, log_std)
Tensor gaussian_log_density(const std::vector<double>& action,
                            const Tensor& mean, const Tensor& log_std) {
  Tensor diff = ad::sub(Tensor::constant(action), mean);
  Tensor inv_var = ad::exp_t(ad::mul_scalar(log_std, -2.0));
  Tensor quad = ad::sum(ad::mul(ad::square(diff), inv_var));
  Tensor out = ad::add(ad::mul_scalar(quad, -0.5),
                       ad::neg(ad::sum(log_std)));
  double c = -0.5 * static_cast<double>(action.size()) *
             std::log(2.0 * M_PI);
  return ad::add_scalar(out, c);
}

// Recomputes per-step action log densities for one trajectory by running
// the policy's released-history encoder over the stored Z sequence.
std::vector<Tensor> action_log_densities(const fusion::FusionPolicy& policy,
                                         const fusion::TrajectoryRecord& rec) {
  std::vector<Tensor> out;
  out.reserve(rec.steps.size());
  Tensor h = policy.released_state();
  Tensor z_prev = Tensor::zeros({policy.config().d});
  const double b_g = rec.global_budget;
  for (const auto& st : rec.steps) {
    h = policy.encode_released(h, z_prev);
    double fraction = b_g > 0.0 ? st.remaining_before / b_g : 0.0;
    Tensor mean = policy.fusion_vector(h, fraction);
    out.push_back(
        gaussian_log_density(st.action, mean, policy.exploration_log_std()));
    z_prev = Tensor::constant(st.z);
  }
  return out;
}

}  // namespace

PpoDiagnostics ppo_update(fusion::FusionPolicy& actor,
                          const fusion::FusionPolicy& old_actor,
                          ad::Adam& optimizer,
                          const std::vector<fusion::TrajectoryRecord>& batch,
                          const std::vector<std::vector<double>>& advantages,
                          const PpoConfig& cfg) {
  if (actor.is_classical()) {
    throw UsageError("ppo_update on a classical constant-gain policy");
  }

  // Behavior-policy log densities are batch constants.
  std::vector<std::vector<double>> old_logp(batch.size());
  {
    ad::NoGradGuard no_grad;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto dens = action_log_densities(old_actor, batch[i]);
      old_logp[i].reserve(dens.size());
      for (const auto& t : dens) old_logp[i].push_back(t.scalar_value());
    }
  }

  PpoDiagnostics diag;
  const double lo = 1.0 - cfg.clip_epsilon;
  const double hi = 1.0 + cfg.clip_epsilon;

  for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
    Tensor surrogate;
    diag.masked_samples = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto logp = action_log_densities(actor, batch[i]);
      for (std::size_t k = 0; k < logp.size(); ++k) {
        double log_ratio_value = logp[k].scalar_value() - old_logp[i][k];
        if (std::fabs(log_ratio_value) > cfg.log_ratio_cap) {
          ++diag.masked_samples;
          continue;
        }
        Tensor ratio =
            ad::exp_t(ad::add_scalar(logp[k], -old_logp[i][k]));
        double g_adv = advantages[i][k];
        Tensor unclipped = ad::mul_scalar(ratio, g_adv);
        Tensor clipped = ad::mul_scalar(ad::clamp_t(ratio, lo, hi), g_adv);
        // the verbatim min form; ties take the clipped branch
        Tensor term = ad::min_t(unclipped, clipped);
        surrogate = surrogate.defined() ? ad::add(surrogate, term) : term;
      }
    }
    if (!surrogate.defined()) break;  // everything masked
    Tensor objective = ad::mul_scalar(surrogate, 1.0 / batch.size());
    diag.surrogate = objective.scalar_value();
    objective.backward();
    optimizer.step(cfg.actor_lr);
  }

  // Post-update clip activity.
  {
    ad::NoGradGuard no_grad;
    std::size_t clipped_count = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto dens = action_log_densities(actor, batch[i]);
      for (std::size_t k = 0; k < dens.size(); ++k) {
        double r = std::exp(dens[k].scalar_value() - old_logp[i][k]);
        if (r < lo || r > hi) ++clipped_count;
        ++total;
      }
    }
    diag.clip_fraction = total ? static_cast<double>(clipped_count) / total : 0.0;
  }
  return diag;
}

std::string TrainLogEntry::to_json() const {
  nlohmann::json j;
  j["round"] = round;
  j["phase"] = phase;
  j["update"] = update;
  j["mean_error"] = mean_error;
  j["surrogate"] = surrogate;
  j["critic_loss"] = critic_loss;
  j["clip_fraction"] = clip_fraction;
  j["validation_error"] = validation_error;
  j["mean_leakage_profile"] = mean_leakage_profile;
  return j.dump();
}

EvalStats evaluate_policy(env::Environment& environment,
                          const fusion::FusionPolicy& policy,
                          const fusion::Estimator& estimator,
                          double global_budget, double alpha, int episodes,
                          std::uint64_t seed_base) {
  ad::NoGradGuard no_grad;
  EvalStats stats;
  std::vector<double> per_episode;
  per_episode.reserve(episodes);
  for (int i = 0; i < episodes; ++i) {
    auto result = fusion::run_episode(environment, policy, estimator,
                                      global_budget, alpha,
                                      split_seed(seed_base, i),
                                      fusion::Mode::kDeterministic);
    auto audit = fusion::audit_trajectory(result.record);
    if (!audit.pass) {
      throw BudgetOverrunError("evaluation rollout failed the ledger audit: " +
                               audit.message);
    }
    const auto& steps = result.record.steps;
    if (stats.step_error.empty()) {
      stats.step_error.assign(steps.size(), 0.0);
      stats.step_leakage.assign(steps.size(), 0.0);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      stats.step_error[k] += steps[k].error;
      stats.step_leakage[k] += steps[k].leakage;
      total += steps[k].error;
    }
    per_episode.push_back(total / steps.size());
    if (i == 0) {
      for (const auto& st : steps) {
        stats.trace_state.push_back(st.state[0]);
        stats.trace_estimate.push_back(st.estimate[0]);
      }
    }
  }
  for (double& v : stats.step_error) v /= episodes;
  for (double& v : stats.step_leakage) v /= episodes;
  double sum = 0.0;
  for (double v : per_episode) sum += v;
  stats.mean_error = sum / episodes;
  double var = 0.0;
  for (double v : per_episode) {
    var += (v - stats.mean_error) * (v - stats.mean_error);
  }
  var = episodes > 1 ? var / (episodes - 1) : 0.0;
  stats.stderr_error = std::sqrt(var / episodes);
  return stats;
}

TrainResult alternate_optimize(env::Environment& train_env,
                               env::Environment& validation_env,
                               fusion::FusionPolicy policy,
                               fusion::Estimator estimator, Critic critic,
                               const PpoConfig& cfg, double global_budget,
                               double alpha, std::uint64_t seed) {
  cfg.validate();

  TrainResult result{policy.clone(), estimator.clone(), critic.clone(), {}, 0.0};
  std::uint64_t rollout_counter = 1;
  auto next_seed = [&]() { return split_seed(seed, rollout_counter++); };
  const std::uint64_t validation_seed = split_seed(seed, 0xfeedULL);

  auto validate = [&]() {
    auto stats = evaluate_policy(validation_env, policy, estimator,
                                 global_budget, alpha,
                                 cfg.validation_episodes, validation_seed);
    return stats.mean_error;
  };

  double best_validation = validate();
  result.best_validation_error = best_validation;

  auto maybe_snapshot = [&](double validation_error) {
    if (validation_error < best_validation) {
      best_validation = validation_error;
      result.policy = policy.clone();
      result.estimator = estimator.clone();
      result.critic = critic.clone();
      result.best_validation_error = best_validation;
    }
  };

  auto joint_params = ad::tensors_of(policy.filter_parameters());
  {
    auto est_params = ad::tensors_of(estimator.parameters());
    joint_params.insert(joint_params.end(), est_params.begin(),
                        est_params.end());
  }
  ad::Adam joint_opt(joint_params);
  ad::Adam critic_opt(ad::tensors_of(critic.parameters()));
  ad::Adam actor_opt(policy.is_classical()
                         ? std::vector<Tensor>{}
                         : ad::tensors_of(policy.actor_parameters()));

  double prev_round_best = best_validation;
  for (int round = 1; round <= cfg.outer_rounds; ++round) {
    // Phase 1: joint filter + estimator descent under frozen fusion head.
    double phase_best = std::numeric_limits<double>::infinity();
    int stall = 0;
    for (int update = 1; update <= cfg.max_joint_updates; ++update) {
      double err = joint_update(policy, estimator, joint_opt, train_env,
                                cfg.batch_episodes, global_budget, alpha,
                                next_seed(), cfg.learning_rate);
      double val = validate();
      maybe_snapshot(val);
      TrainLogEntry entry;
      entry.round = round;
      entry.phase = "joint";
      entry.update = update;
      entry.mean_error = err / train_env.horizon();
      entry.validation_error = val;
      result.log.push_back(std::move(entry));

      if (err < phase_best * (1.0 - cfg.inner_tol)) {
        phase_best = err;
        stall = 0;
      } else {
        ++stall;
        if (stall >= cfg.patience) break;
      }
    }

    // Phase 2: PPO on the fusion vector; classical policies have none.
    if (!policy.is_classical()) {
      double surrogate_best = std::numeric_limits<double>::infinity();
      stall = 0;
      for (int update = 1; update <= cfg.max_ppo_iterations; ++update) {
        std::vector<fusion::TrajectoryRecord> batch;
        batch.reserve(cfg.batch_episodes);
        std::vector<double> leakage_profile;
        {
          ad::NoGradGuard no_grad;
          for (int i = 0; i < cfg.batch_episodes; ++i) {
            auto rollout = fusion::run_episode(
                train_env, policy, estimator, global_budget, alpha,
                next_seed(), fusion::Mode::kExploratory);
            auto audit = fusion::audit_trajectory(rollout.record);
            if (!audit.pass) {
              throw BudgetOverrunError(
                  "ppo rollout failed the ledger audit: " + audit.message);
            }
            if (leakage_profile.empty()) {
              leakage_profile.assign(rollout.record.steps.size(), 0.0);
            }
            for (std::size_t k = 0; k < rollout.record.steps.size(); ++k) {
              leakage_profile[k] += rollout.record.steps[k].leakage;
            }
            batch.push_back(std::move(rollout.record));
          }
        }
        for (double& v : leakage_profile) v /= cfg.batch_episodes;

        // Advantages under the pre-update critic and behavior policy.
        auto adv = compute_advantages(batch, critic);
        double closs = 0.0;
        for (int c = 0; c < cfg.critic_steps_per_batch; ++c) {
          closs = critic_update(critic, critic_opt, batch, cfg.critic_lr);
        }
        fusion::FusionPolicy old_actor = policy.clone();
        auto diag =
            ppo_update(policy, old_actor, actor_opt, batch, adv.normalized, cfg);

        double batch_error = 0.0;
        for (const auto& rec : batch) batch_error += rec.total_error();
        batch_error /= cfg.batch_episodes * train_env.horizon();

        double val = validate();
        maybe_snapshot(val);

        TrainLogEntry entry;
        entry.round = round;
        entry.phase = "ppo";
        entry.update = update;
        entry.mean_error = batch_error;
        entry.surrogate = diag.surrogate;
        entry.critic_loss = closs;
        entry.clip_fraction = diag.clip_fraction;
        entry.validation_error = val;
        entry.mean_leakage_profile = std::move(leakage_profile);
        result.log.push_back(std::move(entry));

        if (diag.surrogate <
            surrogate_best - cfg.inner_tol * std::fabs(surrogate_best)) {
          surrogate_best = diag.surrogate;
          stall = 0;
        } else {
          ++stall;
          if (stall >= cfg.patience) break;
        }
      }
    }

    if (best_validation >= prev_round_best * (1.0 - cfg.inner_tol) &&
        round > 1) {
      break;  // no round-over-round improvement
    }
    prev_round_best = best_validation;
  }

  return result;
}

}  // namespace dpfusion::train
