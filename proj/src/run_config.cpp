#include "dpfusion/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace dpfusion::cli {

using nlohmann::json;

namespace {

// Typed getters that report the full field path on any mismatch.
template <typename T>
T get_field(const json& j, const std::string& path, const std::string& key,
            T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path.empty() ? key : path + "." + key,
                      "has the wrong type");
  }
}

const json& get_object(const json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_object()) throw ConfigError(key, "must be an object");
  return v;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  cfg.env_name = "linear_gaussian";
  cfg.data_csv = "data/synthetic_traffic.csv";
  return cfg;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("invalid json: ") + e.what());
  }
  RunConfig cfg = defaults();

  if (!j.contains("environment")) {
    throw ConfigError("environment", "missing (expected an object with a "
                                     "'name' field)");
  }
  const json& e = get_object(j, "environment");
  if (!e.contains("name")) throw ConfigError("environment.name", "missing");
  cfg.env_name = get_field<std::string>(e, "environment", "name", "");
  if (cfg.env_name == "linear_gaussian") {
    auto& lc = cfg.linear;
    lc.sensors = get_field<int>(e, "environment", "sensors", lc.sensors);
    lc.horizon = get_field<int>(e, "environment", "horizon", lc.horizon);
    double mean = get_field<double>(e, "environment", "mean", lc.mean[0]);
    double a = get_field<double>(e, "environment", "a", lc.transition[0][0]);
    double q = get_field<double>(e, "environment", "process_var",
                                 lc.process_var[0]);
    double p0 = get_field<double>(e, "environment", "init_var", lc.init_var[0]);
    lc.mean = {mean};
    lc.transition = {{a}};
    lc.process_var = {q};
    lc.init_var = {p0};
    lc.norm_half_width =
        get_field<double>(e, "environment", "norm_half_width", lc.norm_half_width);
    double r = get_field<double>(e, "environment", "sensor_var", 0.25);
    lc.sensor_var.assign(lc.sensors, r);
    lc.sensor_gain.clear();
  } else if (cfg.env_name == "random_walk") {
    auto& rc = cfg.random_walk;
    rc.x_max = get_field<double>(e, "environment", "x_max", rc.x_max);
    rc.sensors = get_field<int>(e, "environment", "sensors", rc.sensors);
    rc.horizon = get_field<int>(e, "environment", "horizon", rc.horizon);
    rc.process_std =
        get_field<double>(e, "environment", "process_std", rc.process_std);
    rc.sensor_std =
        get_field<double>(e, "environment", "sensor_std", rc.sensor_std);
  } else if (cfg.env_name == "traffic") {
    cfg.data_csv = get_field<std::string>(e, "environment", "csv", cfg.data_csv);
    auto& tc = cfg.traffic;
    tc.segment_start =
        get_field<double>(e, "environment", "segment_start", tc.segment_start);
    tc.segment_length = get_field<double>(e, "environment", "segment_length",
                                          tc.segment_length);
    tc.dt = get_field<double>(e, "environment", "dt", tc.dt);
    tc.horizon = get_field<int>(e, "environment", "horizon", tc.horizon);
    tc.max_reporters =
        get_field<int>(e, "environment", "max_reporters", tc.max_reporters);
    tc.v_max = get_field<double>(e, "environment", "v_max", tc.v_max);
  } else {
    throw ConfigError("environment.name",
                      "unknown environment '" + cfg.env_name +
                          "' (expected linear_gaussian, random_walk, traffic)");
  }

  if (j.contains("policy")) {
    const json& p = get_object(j, "policy");
    cfg.hidden = get_field<int>(p, "policy", "hidden", cfg.hidden);
    cfg.head_hidden = get_field<int>(p, "policy", "head_hidden", cfg.head_hidden);
    cfg.d = get_field<int>(p, "policy", "d", cfg.d);
    cfg.init_log_std =
        get_field<double>(p, "policy", "init_log_std", cfg.init_log_std);
    if (cfg.hidden < 1) throw ConfigError("policy.hidden", "must be >= 1");
    if (cfg.d < 1) throw ConfigError("policy.d", "must be >= 1");
  }

  if (j.contains("ppo")) {
    const json& p = get_object(j, "ppo");
    auto& pc = cfg.ppo;
    pc.clip_epsilon = get_field<double>(p, "ppo", "clip_epsilon", pc.clip_epsilon);
    pc.actor_lr = get_field<double>(p, "ppo", "actor_lr", pc.actor_lr);
    pc.critic_lr = get_field<double>(p, "ppo", "critic_lr", pc.critic_lr);
    pc.learning_rate =
        get_field<double>(p, "ppo", "learning_rate", pc.learning_rate);
    pc.batch_episodes =
        get_field<int>(p, "ppo", "batch_episodes", pc.batch_episodes);
    pc.epochs_per_batch =
        get_field<int>(p, "ppo", "epochs_per_batch", pc.epochs_per_batch);
    pc.outer_rounds = get_field<int>(p, "ppo", "outer_rounds", pc.outer_rounds);
    pc.inner_tol = get_field<double>(p, "ppo", "inner_tol", pc.inner_tol);
    pc.patience = get_field<int>(p, "ppo", "patience", pc.patience);
    pc.max_joint_updates =
        get_field<int>(p, "ppo", "max_joint_updates", pc.max_joint_updates);
    pc.max_ppo_iterations =
        get_field<int>(p, "ppo", "max_ppo_iterations", pc.max_ppo_iterations);
    pc.critic_steps_per_batch = get_field<int>(p, "ppo", "critic_steps_per_batch",
                                               pc.critic_steps_per_batch);
    pc.validation_episodes = get_field<int>(p, "ppo", "validation_episodes",
                                            pc.validation_episodes);
    try {
      pc.validate();
    } catch (const InvalidInputError& err) {
      throw ConfigError("ppo", err.what());
    }
  }

  cfg.alpha = get_field<double>(j, "", "alpha", cfg.alpha);
  if (!(cfg.alpha > 1.0)) throw ConfigError("alpha", "must be > 1");
  cfg.budget = get_field<double>(j, "", "budget", cfg.budget);
  if (cfg.budget < 0.0) throw ConfigError("budget", "must be >= 0");
  cfg.budgets = get_field<std::vector<double>>(j, "", "budgets", cfg.budgets);
  for (double b : cfg.budgets) {
    if (b < 0.0) throw ConfigError("budgets", "entries must be >= 0");
  }
  cfg.seed = get_field<std::uint64_t>(j, "", "seed", cfg.seed);
  cfg.eval_seeds = get_field<int>(j, "", "eval_seeds", cfg.eval_seeds);
  if (cfg.eval_seeds < 1) throw ConfigError("eval_seeds", "must be >= 1");
  cfg.out_dir = get_field<std::string>(j, "", "out", cfg.out_dir);
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
  json e;
  e["name"] = env_name;
  if (env_name == "linear_gaussian") {
    e["sensors"] = linear.sensors;
    e["horizon"] = linear.horizon;
    e["mean"] = linear.mean[0];
    e["a"] = linear.transition[0][0];
    e["process_var"] = linear.process_var[0];
    e["init_var"] = linear.init_var[0];
    e["sensor_var"] = linear.sensor_var.empty() ? 0.25 : linear.sensor_var[0];
    e["norm_half_width"] = linear.norm_half_width;
  } else if (env_name == "random_walk") {
    e["x_max"] = random_walk.x_max;
    e["sensors"] = random_walk.sensors;
    e["horizon"] = random_walk.horizon;
    e["process_std"] = random_walk.process_std;
    e["sensor_std"] = random_walk.sensor_std;
  } else {
    e["csv"] = data_csv;
    e["segment_start"] = traffic.segment_start;
    e["segment_length"] = traffic.segment_length;
    e["dt"] = traffic.dt;
    e["horizon"] = traffic.horizon;
    e["max_reporters"] = traffic.max_reporters;
    e["v_max"] = traffic.v_max;
  }

  json j;
  j["environment"] = e;
  j["policy"] = {{"hidden", hidden},
                 {"head_hidden", head_hidden},
                 {"d", d},
                 {"init_log_std", init_log_std}};
  j["ppo"] = {{"clip_epsilon", ppo.clip_epsilon},
              {"actor_lr", ppo.actor_lr},
              {"critic_lr", ppo.critic_lr},
              {"learning_rate", ppo.learning_rate},
              {"batch_episodes", ppo.batch_episodes},
              {"epochs_per_batch", ppo.epochs_per_batch},
              {"outer_rounds", ppo.outer_rounds},
              {"inner_tol", ppo.inner_tol},
              {"patience", ppo.patience},
              {"max_joint_updates", ppo.max_joint_updates},
              {"max_ppo_iterations", ppo.max_ppo_iterations},
              {"critic_steps_per_batch", ppo.critic_steps_per_batch},
              {"validation_episodes", ppo.validation_episodes}};
  j["alpha"] = alpha;
  j["budget"] = budget;
  j["budgets"] = budgets;
  j["seed"] = seed;
  j["eval_seeds"] = eval_seeds;
  j["out"] = out_dir;
  return j.dump(2) + "\n";
}

EnvFactory::EnvFactory(const RunConfig& cfg) : cfg_(cfg) {
  if (cfg_.env_name == "traffic") {
    traffic_ = std::make_shared<const env::TrafficDataset>(
        env::ingest_trajectories_file(cfg_.data_csv, cfg_.traffic));
  }
  auto probe = make(env::Split::kTrain);
  sensors_ = probe->sensor_count();
  measurement_dim_ = probe->measurement_dim();
  horizon_ = probe->horizon();
  state_scale_ = probe->state_scale();
}

std::unique_ptr<env::Environment> EnvFactory::make(env::Split split) const {
  if (cfg_.env_name == "linear_gaussian") {
    return std::make_unique<env::LinearGaussianEnv>(cfg_.linear);
  }
  if (cfg_.env_name == "random_walk") {
    return std::make_unique<env::RandomWalkDensityEnv>(cfg_.random_walk);
  }
  return std::make_unique<env::TrafficDensityEnv>(traffic_, split);
}

CellResult train_cell(const EnvFactory& factory, const RunConfig& cfg,
                      double budget, bool classical) {
  privacy::RenyiOrder order(cfg.alpha);
  privacy::MechanismShape shape(cfg.d, factory.sensors());

  fusion::PolicyConfig pc;
  pc.hidden = cfg.hidden;
  pc.head_hidden = cfg.head_hidden;
  pc.d = cfg.d;
  pc.m = factory.sensors();
  pc.n_y = factory.measurement_dim();
  pc.init_log_std = cfg.init_log_std;

  const double uniform_gain =
      privacy::clip_bound(budget / factory.horizon(), shape, order);
  std::uint64_t cell_seed =
      split_seed(cfg.seed, 7000 + static_cast<std::uint64_t>(budget * 1000) +
                               (classical ? 1 : 0));

  fusion::FusionPolicy policy = [&]() {
    if (classical) {
      return fusion::classical_baseline(pc, budget, factory.horizon(), order,
                                        cell_seed);
    }
    pc.init_gain_bias = uniform_gain;  // start from the uniform allocation
    return fusion::FusionPolicy::adaptive(pc, cell_seed);
  }();

  fusion::EstimatorConfig ec;
  ec.hidden = cfg.hidden;
  ec.head_hidden = cfg.head_hidden;
  ec.d = cfg.d;
  ec.output_scale = factory.state_scale();
  fusion::Estimator estimator(ec, cell_seed);

  train::CriticConfig cc;
  cc.hidden = cfg.hidden;
  cc.head_hidden = cfg.head_hidden;
  cc.d = cfg.d;
  cc.value_scale = factory.state_scale() * factory.state_scale() *
                   factory.horizon() * 0.1;
  train::Critic critic(cc, cell_seed);

  auto train_env = factory.make(env::Split::kTrain);
  auto val_env = factory.make(env::Split::kValidation);

  CellResult cell;
  cell.budget = budget;
  cell.classical = classical;
  cell.trained = train::alternate_optimize(*train_env, *val_env,
                                           std::move(policy),
                                           std::move(estimator),
                                           std::move(critic), cfg.ppo, budget,
                                           cfg.alpha, cell_seed);

  auto test_env = factory.make(env::Split::kTest);
  cell.eval = train::evaluate_policy(
      *test_env, cell.trained.policy, cell.trained.estimator, budget,
      cfg.alpha, cfg.eval_seeds, split_seed(cfg.seed, 0xe7a1ULL));
  return cell;
}

std::vector<ad::NamedTensor> checkpoint_tensors(
    const fusion::FusionPolicy& policy, const fusion::Estimator& estimator,
    const train::Critic& critic) {
  auto tensors = policy.parameters();
  auto est = estimator.parameters();
  auto cr = critic.parameters();
  tensors.insert(tensors.end(), est.begin(), est.end());
  tensors.insert(tensors.end(), cr.begin(), cr.end());
  return tensors;
}

SweepResult run_sweep(const RunConfig& cfg) {
  EnvFactory factory(cfg);
  struct Job {
    double budget;
    bool classical;
  };
  std::vector<Job> jobs;
  for (double b : cfg.budgets) {
    jobs.push_back({b, false});
    jobs.push_back({b, true});
  }

  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::future<CellResult>> futures(jobs.size());
  std::vector<CellResult> cells(jobs.size());
  std::size_t next = 0;
  while (next < jobs.size()) {
    std::size_t launched = 0;
    for (; launched < workers && next + launched < jobs.size(); ++launched) {
      const Job& job = jobs[next + launched];
      futures[next + launched] =
          std::async(std::launch::async, [&factory, &cfg, job]() {
            return train_cell(factory, cfg, job.budget, job.classical);
          });
    }
    for (std::size_t i = 0; i < launched; ++i) {
      cells[next + i] = futures[next + i].get();
    }
    next += launched;
  }

  SweepResult out;
  out.cells = std::move(cells);
  return out;
}

namespace {

std::string cell_tag(const CellResult& cell) {
  return std::string(cell.classical ? "classical" : "adaptive") + "_b" +
         format_double(cell.budget);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

void write_sweep_outputs(const RunConfig& cfg, const SweepResult& sweep) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);

  write_file(dir / "config.json", cfg.to_json_text());

  std::ostringstream tradeoff;
  tradeoff << "budget,policy,mean_error,stderr,seeds\n";
  std::ostringstream allocation;
  allocation << "budget,policy,k,mean_leakage\n";
  std::ostringstream est_error;
  est_error << "budget,policy,k,mean_error\n";
  std::ostringstream trace;
  trace << "budget,policy,k,state,estimate\n";

  nlohmann::json manifest;
  manifest["seed"] = cfg.seed;
  manifest["checkpoints"] = nlohmann::json::object();

  for (const auto& cell : sweep.cells) {
    const std::string policy_name = cell.classical ? "classical" : "adaptive";
    tradeoff << format_double(cell.budget) << "," << policy_name << ","
             << format_double(cell.eval.mean_error) << ","
             << format_double(cell.eval.stderr_error) << "," << cfg.eval_seeds
             << "\n";
    for (std::size_t k = 0; k < cell.eval.step_leakage.size(); ++k) {
      allocation << format_double(cell.budget) << "," << policy_name << ","
                 << (k + 1) << "," << format_double(cell.eval.step_leakage[k])
                 << "\n";
      est_error << format_double(cell.budget) << "," << policy_name << ","
                << (k + 1) << "," << format_double(cell.eval.step_error[k])
                << "\n";
      trace << format_double(cell.budget) << "," << policy_name << ","
            << (k + 1) << "," << format_double(cell.eval.trace_state[k]) << ","
            << format_double(cell.eval.trace_estimate[k]) << "\n";
    }

    const std::string tag = cell_tag(cell);
    const fs::path ckpt = dir / ("checkpoint_" + tag + ".ckpt");
    ad::save_checkpoint(ckpt.string(),
                        checkpoint_tensors(cell.trained.policy,
                                           cell.trained.estimator,
                                           cell.trained.critic),
                        cfg.seed);
    std::ostringstream log;
    for (const auto& entry : cell.trained.log) log << entry.to_json() << "\n";
    write_file(dir / ("training_log_" + tag + ".jsonl"), log.str());

    std::ifstream ck(ckpt, std::ios::binary);
    std::stringstream buf;
    buf << ck.rdbuf();
    const std::string bytes = buf.str();
    manifest["checkpoints"][tag] = hex64(fnv1a(bytes.data(), bytes.size()));
  }

  write_file(dir / "tradeoff.csv", tradeoff.str());
  write_file(dir / "budget_allocation.csv", allocation.str());
  write_file(dir / "est_error.csv", est_error.str());
  write_file(dir / "density_trace.csv", trace.str());
  {
    const std::string cfg_text = cfg.to_json_text();
    manifest["config_hash"] = hex64(fnv1a(cfg_text.data(), cfg_text.size()));
  }
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

CellResult run_train(const RunConfig& cfg) {
  EnvFactory factory(cfg);
  CellResult cell = train_cell(factory, cfg, cfg.budget, false);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  write_file(dir / "config.json", cfg.to_json_text());
  ad::save_checkpoint((dir / "checkpoint.ckpt").string(),
                      checkpoint_tensors(cell.trained.policy,
                                         cell.trained.estimator,
                                         cell.trained.critic),
                      cfg.seed);
  std::ostringstream log;
  for (const auto& entry : cell.trained.log) log << entry.to_json() << "\n";
  write_file(dir / "training_log.jsonl", log.str());

  nlohmann::json metrics;
  metrics["budget"] = cell.budget;
  metrics["mean_error"] = cell.eval.mean_error;
  metrics["stderr"] = cell.eval.stderr_error;
  metrics["best_validation_error"] = cell.trained.best_validation_error;
  write_file(dir / "metrics.json", metrics.dump(2) + "\n");
  return cell;
}

}  // namespace dpfusion::cli
