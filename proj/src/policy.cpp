#include "dpfusion/policy.hpp"

#include <cassert>
#include <cmath>

namespace dpfusion::fusion {

using ad::Tensor;

FusionPolicy FusionPolicy::adaptive(const PolicyConfig& cfg,
                                    std::uint64_t seed) {
  FusionPolicy p;
  p.cfg_ = cfg;
  Rng rng(split_seed(seed, 101));
  p.encoder_y_ = ad::GatedCell(cfg.n_y, cfg.hidden, rng);
  p.filter_head_ = ad::Mlp(cfg.hidden, cfg.head_hidden, cfg.d,
                           ad::HeadActivation::kSigmoid, rng);
  p.encoder_z_ = ad::GatedCell(cfg.d, cfg.hidden, rng);
  p.fusion_head_ = ad::Mlp(cfg.hidden + 1, cfg.head_hidden, cfg.m,
                           ad::HeadActivation::kLinear, rng);
  if (cfg.init_gain_bias != 0.0) {
    auto& bias = p.fusion_head_.l2.bias.values_mut();
    for (double& b : bias) b = cfg.init_gain_bias;
  }
  p.log_std_ = Tensor::parameter(
      std::vector<double>(cfg.m, cfg.init_log_std), {cfg.m});
  return p;
}

FusionPolicy FusionPolicy::classical(const PolicyConfig& cfg,
                                     double constant_gain,
                                     std::uint64_t seed) {
  FusionPolicy p;
  p.cfg_ = cfg;
  Rng rng(split_seed(seed, 101));
  p.encoder_y_ = ad::GatedCell(cfg.n_y, cfg.hidden, rng);
  p.filter_head_ = ad::Mlp(cfg.hidden, cfg.head_hidden, cfg.d,
                           ad::HeadActivation::kSigmoid, rng);
  p.constant_gain_ = constant_gain;
  return p;
}

Tensor FusionPolicy::encode_measurement(const Tensor& h_prev,
                                        const Tensor& y) const {
  return encoder_y_.forward(y, h_prev);
}

Tensor FusionPolicy::encode_released(const Tensor& h_prev,
                                     const Tensor& z_prev) const {
  if (is_classical()) return h_prev;
  return encoder_z_.forward(z_prev, h_prev);
}

Tensor FusionPolicy::filter_output(const Tensor& h_y) const {
  return filter_head_.forward(h_y);
}

Tensor FusionPolicy::fusion_vector(const Tensor& h_z,
                                   double budget_fraction) const {
  if (is_classical()) {
    throw UsageError("fusion_vector on a classical constant-gain policy");
  }
  Tensor input = ad::concat(h_z, Tensor::scalar(budget_fraction));
  return fusion_head_.forward(input);
}

std::vector<double> FusionPolicy::gain_mean(const Tensor& h_z,
                                            double budget_fraction) const {
  if (is_classical()) {
    return std::vector<double>(cfg_.m, *constant_gain_);
  }
  ad::NoGradGuard no_grad;
  return fusion_vector(h_z, budget_fraction).values();
}

Tensor FusionPolicy::released_state() const {
  if (is_classical()) return Tensor::zeros({cfg_.hidden});
  return encoder_z_.initial_state();
}

std::vector<ad::NamedTensor> FusionPolicy::parameters() const {
  std::vector<ad::NamedTensor> out = filter_parameters();
  auto actor = actor_parameters();
  out.insert(out.end(), actor.begin(), actor.end());
  return out;
}

std::vector<ad::NamedTensor> FusionPolicy::filter_parameters() const {
  std::vector<ad::NamedTensor> out;
  encoder_y_.collect("policy.encoder_y", out);
  filter_head_.collect("policy.filter_head", out);
  return out;
}

std::vector<ad::NamedTensor> FusionPolicy::actor_parameters() const {
  std::vector<ad::NamedTensor> out;
  if (is_classical()) return out;
  encoder_z_.collect("policy.encoder_z", out);
  fusion_head_.collect("policy.fusion_head", out);
  out.push_back({"policy.log_std", log_std_});
  return out;
}

FusionPolicy FusionPolicy::clone() const {
  FusionPolicy p;
  p.cfg_ = cfg_;
  p.constant_gain_ = constant_gain_;
  auto copy_cell = [](const ad::GatedCell& src) {
    ad::GatedCell dst = src;
    dst.wf = src.wf.clone_leaf();
    dst.bf = src.bf.clone_leaf();
    dst.wc = src.wc.clone_leaf();
    dst.bc = src.bc.clone_leaf();
    return dst;
  };
  auto copy_mlp = [](const ad::Mlp& src) {
    ad::Mlp dst = src;
    dst.l1.weight = src.l1.weight.clone_leaf();
    dst.l1.bias = src.l1.bias.clone_leaf();
    dst.l2.weight = src.l2.weight.clone_leaf();
    dst.l2.bias = src.l2.bias.clone_leaf();
    return dst;
  };
  p.encoder_y_ = copy_cell(encoder_y_);
  p.filter_head_ = copy_mlp(filter_head_);
  if (!is_classical()) {
    p.encoder_z_ = copy_cell(encoder_z_);
    p.fusion_head_ = copy_mlp(fusion_head_);
    p.log_std_ = log_std_.clone_leaf();
  }
  return p;
}

FusionPolicy classical_baseline(const PolicyConfig& cfg, double global_budget,
                                int horizon, const privacy::RenyiOrder& order,
                                std::uint64_t seed) {
  if (horizon < 1) throw InvalidInputError("classical baseline: horizon >= 1");
  privacy::MechanismShape shape(cfg.d, cfg.m);
  double per_step = global_budget / horizon;
  double gain = privacy::clip_bound(per_step, shape, order);
  return FusionPolicy::classical(cfg, gain, seed);
}

Estimator::Estimator(const EstimatorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  Rng rng(split_seed(seed, 202));
  encoder_ = ad::GatedCell(cfg.d, cfg.hidden, rng);
  head_ = ad::Mlp(cfg.hidden, cfg.head_hidden, cfg.n_x,
                  ad::HeadActivation::kLinear, rng);
}

std::pair<Tensor, Tensor> Estimator::step(const Tensor& h,
                                          const Tensor& z) const {
  Tensor h_next = encoder_.forward(z, h);
  Tensor estimate = ad::mul_scalar(head_.forward(h_next), cfg_.output_scale);
  return {h_next, estimate};
}

std::vector<ad::NamedTensor> Estimator::parameters() const {
  std::vector<ad::NamedTensor> out;
  encoder_.collect("estimator.encoder", out);
  head_.collect("estimator.head", out);
  return out;
}

Estimator Estimator::clone() const {
  Estimator e = *this;
  e.encoder_.wf = encoder_.wf.clone_leaf();
  e.encoder_.bf = encoder_.bf.clone_leaf();
  e.encoder_.wc = encoder_.wc.clone_leaf();
  e.encoder_.bc = encoder_.bc.clone_leaf();
  e.head_.l1.weight = head_.l1.weight.clone_leaf();
  e.head_.l1.bias = head_.l1.bias.clone_leaf();
  e.head_.l2.weight = head_.l2.weight.clone_leaf();
  e.head_.l2.bias = head_.l2.bias.clone_leaf();
  return e;
}

FuseStepResult fuse_step(const FusionPolicy& policy, const Tensor& h_z,
                         const std::vector<Tensor>& h_y,
                         privacy::PrivacyLedger& ledger, Rng& noise_rng,
                         Rng& action_rng, Mode mode) {
  const auto& cfg = policy.config();
  if (static_cast<int>(h_y.size()) != cfg.m) {
    throw InvalidInputError("fuse_step: expected one hidden state per sensor");
  }

  FuseStepResult res;
  res.remaining_before = ledger.remaining();
  const double b_g = ledger.global_budget();
  const double fraction = b_g > 0.0 ? res.remaining_before / b_g : 0.0;

  // Gains are constants of the rollout; gradient flow through them is the
  // PPO update's job, which recomputes them from the stored history.
  std::vector<double> g = policy.gain_mean(h_z, fraction);
  res.action = g;
  if (mode == Mode::kExploratory) {
    if (policy.is_classical()) {
      throw UsageError("exploratory rollout on a classical policy");
    }
    const auto& log_std = policy.exploration_log_std().values();
    for (int i = 0; i < cfg.m; ++i) {
      res.action[i] = g[i] + std::exp(log_std[i]) * action_rng.normal();
    }
  }

  const double bound = ledger.clip_bound();
  res.clipped = privacy::clip_fusion_vector(res.action, bound);
  const double g_post = privacy::gbar(res.clipped);
  ledger.charge(g_post);  // cannot overrun: the clip enforces the bound
  assert(ledger.remaining() >= 0.0);
  res.leakage = ledger.history().back();

  res.noise.resize(cfg.d);
  for (double& n : res.noise) n = noise_rng.normal();

  Tensor z = Tensor::constant(res.noise);
  res.filter_outputs.reserve(cfg.m);
  for (int i = 0; i < cfg.m; ++i) {
    Tensor f = policy.filter_output(h_y[i]);
    res.filter_outputs.push_back(f);
    if (res.clipped[i] != 0.0) {
      z = ad::add(z, ad::mul_scalar(f, res.clipped[i]));
    }
  }
  res.z = std::move(z);
  return res;
}

EpisodeResult run_episode(env::Environment& environment,
                          const FusionPolicy& policy,
                          const Estimator& estimator, double global_budget,
                          double alpha, std::uint64_t seed, Mode mode) {
  const auto& cfg = policy.config();
  if (environment.sensor_count() != cfg.m) {
    throw InvalidInputError("run_episode: policy sensor count differs from env");
  }
  if (environment.measurement_dim() != cfg.n_y) {
    throw InvalidInputError("run_episode: measurement dimension mismatch");
  }

  Rng env_rng(split_seed(seed, 0));
  Rng noise_rng(split_seed(seed, 1));
  Rng action_rng(split_seed(seed, 2));

  privacy::RenyiOrder order(alpha);
  privacy::MechanismShape shape(cfg.d, cfg.m);
  privacy::PrivacyLedger ledger(order, global_budget, shape);

  EpisodeResult out;
  out.record.seed = seed;
  out.record.global_budget = global_budget;
  out.record.alpha = alpha;
  out.record.d = cfg.d;
  out.record.m = cfg.m;

  const bool tracked = ad::grad_enabled();
  Tensor loss;

  std::vector<Tensor> h_y(cfg.m, policy.measurement_state());
  Tensor h_z = policy.released_state();
  Tensor h_est = estimator.initial_state();
  Tensor z_prev = Tensor::zeros({cfg.d});

  environment.reset(env_rng);
  int k = 0;
  while (true) {
    auto step = environment.step(env_rng);
    if (!step) break;
    ++k;

    h_z = policy.encode_released(h_z, z_prev);
    for (int i = 0; i < cfg.m; ++i) {
      h_y[i] = policy.encode_measurement(
          h_y[i], Tensor::constant(step->measurements[i]));
    }

    FuseStepResult fused =
        fuse_step(policy, h_z, h_y, ledger, noise_rng, action_rng, mode);

    auto [h_next, estimate] = estimator.step(h_est, fused.z);
    h_est = h_next;

    Tensor err = ad::sum(
        ad::square(ad::sub(estimate, Tensor::constant(step->state))));
    if (tracked) {
      loss = loss.defined() ? ad::add(loss, err) : err;
    }

    TrajectoryStep rec;
    rec.k = k;
    rec.state = step->state;
    rec.measurements = step->measurements;
    rec.active = step->active;
    rec.action = fused.action;
    rec.clipped = fused.clipped;
    for (const auto& f : fused.filter_outputs) {
      rec.filter_outputs.push_back(f.values());
    }
    rec.noise = fused.noise;
    rec.z = fused.z.values();
    rec.estimate = estimate.values();
    rec.error = err.scalar_value();
    rec.remaining_before = fused.remaining_before;
    rec.leakage = fused.leakage;
    out.record.steps.push_back(std::move(rec));

    // The released value is data for the next step's encoders; only the
    // estimator path keeps the gradient through Z_k.
    z_prev = fused.z.detach();
  }

  out.record.ledger = std::move(ledger);
  out.loss = loss;
  return out;
}

}  // namespace dpfusion::fusion
