#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "v2g/baselines.hpp"
#include "v2g/config.hpp"
#include "v2g/env.hpp"
#include "v2g/fleet.hpp"
#include "v2g/macpo.hpp"
#include "v2g/reporting.hpp"
#include "v2g/system.hpp"
#include "v2g/trainer.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  long long seed = -1;  // <0 means keep the configured seed
};

v2g::RunConfig load_config(const CommonArgs& args) {
  v2g::RunConfig cfg;
  if (!args.config_path.empty()) {
    std::ifstream f(args.config_path, std::ios::binary);
    if (!f) throw v2g::ConfigError("cannot open config: " + args.config_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw v2g::ConfigError(std::string("config parse: ") + e.what());
    }
    cfg = v2g::RunConfig::from_json(j);
  }
  if (args.seed >= 0) cfg.set("master_seed", static_cast<long long>(args.seed));
  return cfg;
}

std::string prepare_out(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw v2g::IoError("cannot create output dir: " + dir + ": " + ec.message());
  return dir.back() == '/' ? dir : dir + "/";
}

std::vector<v2g::EvSpec> fleet_from_config(const v2g::RunConfig& cfg) {
  const std::string csv = cfg.str("fleet.csv_path");
  if (!csv.empty()) return v2g::read_fleet_csv(csv);
  return v2g::sample_fleet(v2g::make_fleet_params(cfg),
                           static_cast<std::uint64_t>(cfg.integer("master_seed")));
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "configuration JSON");
  cmd->add_option("--seed", args.seed, "override master_seed");
  cmd->add_option("--out", args.out_dir, "output directory");
}

int cmd_gen_fleet(const CommonArgs& args) {
  const v2g::RunConfig cfg = load_config(args);
  const std::string out = prepare_out(args.out_dir);
  const auto fleet = v2g::sample_fleet(
      v2g::make_fleet_params(cfg), static_cast<std::uint64_t>(cfg.integer("master_seed")));
  v2g::write_fleet_csv(out + "fleet.csv", fleet);
  std::cout << "wrote " << fleet.size() << " EVs to " << out << "fleet.csv\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& resume_path) {
  const v2g::RunConfig cfg = load_config(args);
  const std::string out = prepare_out(args.out_dir);
  const auto specs = fleet_from_config(cfg);
  const v2g::TrainerParams params = v2g::make_trainer_params(cfg);

  std::vector<v2g::CmdpEnv> envs;
  const v2g::CmdpEnv proto = v2g::make_env(cfg, specs);
  for (int i = 0; i < std::max(1, params.parallel_envs); ++i) envs.push_back(proto);

  v2g::Trainer trainer(std::move(envs), params);
  const bool resuming = !resume_path.empty();
  if (resuming)
    trainer.set_state(v2g::load_checkpoint(resume_path, proto.n_agents(), v2g::kObsDim,
                                           params));

  std::size_t logged = 0;
  const std::string log_path = out + "training_log.csv";
  bool log_started = false;
  if (resuming && std::filesystem::exists(log_path)) log_started = true;
  auto flush_log = [&]() {
    if (trainer.log().size() == logged && log_started) return;
    const std::vector<v2g::EpisodeStats> fresh(trainer.log().begin() + logged,
                                               trainer.log().end());
    v2g::write_training_log_csv(fresh, log_path, log_started);
    log_started = true;
    logged = trainer.log().size();
  };
  if (!log_started) flush_log();  // header even for episodes=0

  trainer.train([&](int episodes_done) {
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_ep%06d.json", episodes_done);
    v2g::save_checkpoint(trainer.state(), params.master_seed, out + name);
    v2g::save_checkpoint(trainer.state(), params.master_seed, out + "checkpoint.json");
    flush_log();
  });
  flush_log();
  std::cout << "trained to episode " << trainer.state().episodes_done << ", log at "
            << log_path << "\n";
  return 0;
}

v2g::DispatchSource make_source(const std::string& baseline,
                                const std::vector<v2g::GaussianPolicy>* policies) {
  v2g::DispatchSource src;
  if (!baseline.empty()) {
    src.is_baseline = true;
    src.kind = v2g::baseline_from_name(baseline);
  } else {
    src.policies = policies;
  }
  return src;
}

int run_eval_like(const CommonArgs& args, const std::string& checkpoint,
                  const std::string& baseline, int year_days, bool year_only) {
  const v2g::RunConfig cfg = load_config(args);
  const std::string out = prepare_out(args.out_dir);
  const auto specs = fleet_from_config(cfg);
  v2g::CmdpEnv env = v2g::make_env(cfg, specs);

  v2g::LearnerState state;
  if (baseline.empty()) {
    if (checkpoint.empty())
      throw v2g::ConfigError("need --checkpoint or --baseline");
    state = v2g::load_checkpoint(checkpoint, env.n_agents(), v2g::kObsDim,
                                 v2g::make_trainer_params(cfg));
  }
  const v2g::DispatchSource src = make_source(baseline, &state.policies);
  const std::uint64_t eval_seed =
      v2g::mix_seed(static_cast<std::uint64_t>(cfg.integer("master_seed")), 0xeba1u);

  if (year_only) {
    const v2g::YearResult yr = v2g::simulate_year(env, src, eval_seed, year_days);
    v2g::write_soh_year_csv(yr, out + "soh_year.csv");
    std::cout << "final mean SOH " << v2g::format_double(yr.mean_soh.back()) << " after "
              << year_days << " days\n";
    return 0;
  }
  const v2g::EvaluationReport rep =
      v2g::run_evaluation(env, src, eval_seed, out, year_days);
  std::cout << rep.strategy << ": variance " << v2g::format_double(rep.one_day_load_variance)
            << " kW^2, EV cost " << v2g::format_double(rep.one_day_ev_cost)
            << ", year SOH " << v2g::format_double(rep.one_year_soh) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"V2G coordination engine"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, year_args, base_args;
  std::string resume, eval_ckpt, eval_baseline, year_ckpt, year_baseline, which;
  int year_days = 365, base_days = 365;

  CLI::App* gen = app.add_subcommand("gen-fleet", "sample a fleet snapshot");
  add_common(gen, gen_args);

  CLI::App* train = app.add_subcommand("train", "train the aggregator policies");
  add_common(train, train_args);
  train->add_option("--resume", resume, "checkpoint to continue from");

  CLI::App* ev = app.add_subcommand("evaluate", "run one day with a frozen policy");
  add_common(ev, eval_args);
  ev->add_option("--checkpoint", eval_ckpt, "trained checkpoint");
  ev->add_option("--baseline", eval_baseline, "bl1|bl2|bl3|bl4 instead of a checkpoint");
  ev->add_option("--days", year_days, "days for the aging projection");

  CLI::App* year = app.add_subcommand("simulate-year", "one-year SOH projection");
  add_common(year, year_args);
  year->add_option("--checkpoint", year_ckpt, "trained checkpoint");
  year->add_option("--baseline", year_baseline, "bl1|bl2|bl3|bl4 instead of a checkpoint");
  year->add_option("--days", base_days, "number of days to replay");

  CLI::App* base = app.add_subcommand("baseline", "evaluate a reference strategy");
  add_common(base, base_args);
  base->add_option("--which", which, "bl1|bl2|bl3|bl4")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_fleet(gen_args);
    if (train->parsed()) return cmd_train(train_args, resume);
    if (ev->parsed()) return run_eval_like(eval_args, eval_ckpt, eval_baseline, year_days, false);
    if (year->parsed())
      return run_eval_like(year_args, year_ckpt, year_baseline, base_days, true);
    if (base->parsed()) return run_eval_like(base_args, "", which, 365, false);
  } catch (const v2g::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const v2g::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const v2g::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
