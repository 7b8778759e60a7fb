#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dpfusion/oracle.hpp"
#include "dpfusion/run_config.hpp"
#include "json.hpp"

namespace {

using namespace dpfusion;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitAuditFailure = 3;

cli::RunConfig load_config(const std::string& path, std::uint64_t* seed,
                           const std::string& out, const std::string& env_name,
                           const std::string& data,
                           const std::vector<double>& budgets) {
  cli::RunConfig cfg = path.empty() ? cli::RunConfig::defaults()
                                    : cli::RunConfig::from_file(path);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.out_dir = out;
  if (!env_name.empty()) cfg.env_name = env_name;
  if (!data.empty()) cfg.data_csv = data;
  if (!budgets.empty()) cfg.budgets = budgets;
  if (cfg.env_name.empty()) {
    throw ConfigError("environment.name", "missing");
  }
  return cfg;
}

int cmd_train(const cli::RunConfig& cfg) {
  auto cell = cli::run_train(cfg);
  std::cout << "trained budget=" << cfg.budget
            << " mean_error=" << cell.eval.mean_error
            << " (stderr " << cell.eval.stderr_error << ")\n"
            << "artifacts in " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_eval(const cli::RunConfig& cfg, const std::string& checkpoint,
             bool classical) {
  cli::EnvFactory factory(cfg);
  privacy::RenyiOrder order(cfg.alpha);
  privacy::MechanismShape shape(cfg.d, factory.sensors());

  fusion::PolicyConfig pc;
  pc.hidden = cfg.hidden;
  pc.head_hidden = cfg.head_hidden;
  pc.d = cfg.d;
  pc.m = factory.sensors();
  pc.n_y = factory.measurement_dim();
  pc.init_log_std = cfg.init_log_std;
  fusion::FusionPolicy policy =
      classical ? fusion::classical_baseline(pc, cfg.budget, factory.horizon(),
                                             order, cfg.seed)
                : fusion::FusionPolicy::adaptive(pc, cfg.seed);

  fusion::EstimatorConfig ec;
  ec.hidden = cfg.hidden;
  ec.head_hidden = cfg.head_hidden;
  ec.d = cfg.d;
  ec.output_scale = factory.state_scale();
  fusion::Estimator estimator(ec, cfg.seed);

  train::CriticConfig cc;
  cc.hidden = cfg.hidden;
  cc.head_hidden = cfg.head_hidden;
  cc.d = cfg.d;
  cc.value_scale =
      factory.state_scale() * factory.state_scale() * factory.horizon() * 0.1;
  train::Critic critic(cc, cfg.seed);

  ad::load_checkpoint(checkpoint,
                      cli::checkpoint_tensors(policy, estimator, critic));

  auto test_env = factory.make(env::Split::kTest);
  auto stats = train::evaluate_policy(*test_env, policy, estimator, cfg.budget,
                                      cfg.alpha, cfg.eval_seeds,
                                      split_seed(cfg.seed, 0xe7a1ULL));

  std::filesystem::create_directories(cfg.out_dir);
  nlohmann::json metrics;
  metrics["budget"] = cfg.budget;
  metrics["mean_error"] = stats.mean_error;
  metrics["stderr"] = stats.stderr_error;
  metrics["episodes"] = cfg.eval_seeds;
  std::ofstream(std::filesystem::path(cfg.out_dir) / "eval_metrics.json")
      << metrics.dump(2) << "\n";

  // one full trajectory for auditing and inspection
  auto episode_env = factory.make(env::Split::kTest);
  auto rollout = fusion::run_episode(*episode_env, policy, estimator,
                                     cfg.budget, cfg.alpha,
                                     split_seed(cfg.seed, 0xe7a1ULL),
                                     fusion::Mode::kDeterministic);
  fusion::write_trajectory_file(
      rollout.record,
      (std::filesystem::path(cfg.out_dir) / "trajectory_0.jsonl").string());

  std::cout << "eval mean_error=" << stats.mean_error << " (stderr "
            << stats.stderr_error << ") over " << cfg.eval_seeds
            << " episodes\n";
  return kExitOk;
}

int cmd_sweep(const cli::RunConfig& cfg) {
  auto sweep = cli::run_sweep(cfg);
  cli::write_sweep_outputs(cfg, sweep);
  std::cout << "budget,policy,mean_error,stderr\n";
  for (const auto& cell : sweep.cells) {
    std::cout << cell.budget << ","
              << (cell.classical ? "classical" : "adaptive") << ","
              << cell.eval.mean_error << "," << cell.eval.stderr_error << "\n";
  }
  std::cout << "metrics written to " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_oracle(const std::string& instance_path, int random_count,
               std::uint64_t seed, const std::string& out_path) {
  std::vector<oracle::DiscreteInstance> instances;
  if (!instance_path.empty()) {
    std::ifstream in(instance_path);
    if (!in) throw DataError("cannot open instance: " + instance_path);
    std::stringstream ss;
    ss << in.rdbuf();
    instances.push_back(oracle::DiscreteInstance::from_json(ss.str()));
  } else {
    for (int i = 0; i < random_count; ++i) {
      instances.push_back(oracle::random_instance(split_seed(seed, i)));
    }
  }

  nlohmann::json report = nlohmann::json::array();
  bool all_dominant = true;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    auto solution = oracle::solve_constrained_dp(inst);
    auto schedules = oracle::uniform_schedules(inst);
    double best_uniform = std::numeric_limits<double>::infinity();
    for (const auto& sched : schedules) {
      best_uniform = std::min(best_uniform,
                              oracle::evaluate_schedule(inst, sched));
    }
    bool dominant = solution.value <= best_uniform + 1e-9;
    bool strict = solution.value < best_uniform - 1e-9;
    all_dominant = all_dominant && dominant;

    std::cout << "instance " << i << ": adaptive=" << solution.value
              << " best_uniform=" << best_uniform << " (" << schedules.size()
              << " uniform schedules) "
              << (dominant ? (strict ? "STRICTLY DOMINANT" : "dominant (tie)")
                           : "VIOLATION")
              << "\n";
    report.push_back({{"adaptive", solution.value},
                      {"best_uniform", best_uniform},
                      {"uniform_schedules", schedules.size()},
                      {"dominant", dominant},
                      {"strict", strict}});
  }
  if (!out_path.empty()) {
    std::ofstream(out_path) << report.dump(2) << "\n";
  }
  if (!all_dominant) {
    std::cerr << "dominance violated; this indicates a solver defect\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_audit(const std::string& path) {
  auto rec = fusion::read_trajectory_file(path);
  auto report = fusion::audit_trajectory(rec);
  if (report.pass) {
    std::cout << "PASS: " << rec.steps.size() << " steps, total leakage "
              << report.total_leakage << " <= budget " << rec.global_budget
              << "\n";
    return kExitOk;
  }
  std::cout << "FAIL at step " << report.first_bad_step << ": "
            << report.message << "\n";
  return kExitAuditFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"privacy-aware sensor fusion experiment runner"};
  app.require_subcommand(1);

  std::string config_path, out_dir, env_name, data_csv, checkpoint;
  std::string instance_path, oracle_out, audit_path;
  std::vector<double> budgets;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool classical = false;
  int random_count = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config JSON path");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { seed = s; seed_set = true; },
        "override the config seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--env", env_name,
                    "environment name (linear_gaussian|random_walk|traffic)");
    sub->add_option("--data", data_csv, "traffic CSV path");
  };

  auto* train = app.add_subcommand("train", "train the adaptive policy");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  eval->add_flag("--classical", classical,
                 "checkpoint holds a classical constant-gain policy");
  auto* sweep = app.add_subcommand("sweep", "budget sweep, both policies");
  add_common(sweep);
  sweep->add_option("--budgets", budgets, "budget list override");
  auto* oracle_cmd =
      app.add_subcommand("oracle", "constrained-dp oracle on tiny instances");
  oracle_cmd->add_option("--instance", instance_path, "instance JSON");
  oracle_cmd->add_option("--random", random_count,
                         "solve N random tiny instances");
  oracle_cmd->add_option("--seed", seed, "random instance seed");
  oracle_cmd->add_option("--out", oracle_out, "report JSON path");
  auto* audit = app.add_subcommand("audit", "audit a trajectory file");
  audit->add_option("file", audit_path, "trajectory JSON-lines path")
      ->required();
  auto* defaults =
      app.add_subcommand("print-defaults", "print the default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (defaults->parsed()) {
      std::cout << cli::RunConfig::defaults().to_json_text();
      return kExitOk;
    }
    if (oracle_cmd->parsed()) {
      if (instance_path.empty() && random_count <= 0) {
        std::cerr << "oracle: pass --instance FILE or --random N\n";
        return kExitValidation;
      }
      return cmd_oracle(instance_path, random_count, seed, oracle_out);
    }
    if (audit->parsed()) return cmd_audit(audit_path);

    auto cfg = load_config(config_path, seed_set ? &seed : nullptr, out_dir,
                           env_name, data_csv, budgets);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg, checkpoint, classical);
    if (sweep->parsed()) return cmd_sweep(cfg);
    return kExitValidation;
  } catch (const ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
