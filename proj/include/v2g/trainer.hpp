#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "v2g/config.hpp"
#include "v2g/csv.hpp"
#include "v2g/env.hpp"
#include "v2g/macpo.hpp"
#include "v2g/net.hpp"
#include "v2g/rng.hpp"

namespace v2g {

constexpr int kCheckpointFormatVersion = 1;

struct TrainerParams {
  int episodes = 3500;
  int parallel_envs = 5;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  TrustRegionParams tr;
  double value_lr = 5e-4;
  int value_iters = 80;
  int checkpoint_every = 500;
  std::vector<int> hidden = {64, 64};
  double log_std_init = -0.5;
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  double policy_out_scale = 0.01;
  std::uint64_t master_seed = 12345;
};

struct EpisodeStats {
  int episode = 0;
  double mean_return = 0.0;           // mean over agents of the episode return
  std::vector<double> agent_return;
  std::vector<double> agent_cost;     // discounted episodic cost per agent
  double kl = 0.0;                    // max accepted KL in the owning iteration
  bool accepted = false;              // all agents' line searches accepted
  bool recovery_used = false;
};

// Learner state: per-agent policies, the joint value net (one output per
// agent) and one cost critic per agent, plus their optimizer moments.
struct LearnerState {
  std::vector<GaussianPolicy> policies;
  Mlp value_net;
  Adam value_opt;
  std::vector<Mlp> cost_nets;
  std::vector<Adam> cost_opts;
  int episodes_done = 0;
};

inline LearnerState make_learner(int n_agents, int obs_dim, const TrainerParams& p) {
  LearnerState st;
  st.policies.reserve(static_cast<std::size_t>(n_agents));
  for (int a = 0; a < n_agents; ++a) {
    GaussianPolicy pol(obs_dim, p.hidden, 1, p.log_std_init, p.log_std_min, p.log_std_max);
    Rng rng(mix_seed(p.master_seed, 0x901c0de + static_cast<std::uint64_t>(a)));
    pol.init(rng, p.policy_out_scale);
    st.policies.push_back(std::move(pol));
  }
  std::vector<int> vsizes;
  vsizes.push_back(obs_dim * n_agents);
  for (int h : p.hidden) vsizes.push_back(h);
  vsizes.push_back(n_agents);
  st.value_net = Mlp(vsizes);
  Rng vrng(mix_seed(p.master_seed, 0x7a13e));
  st.value_net.init(vrng);
  st.value_opt = Adam(static_cast<std::size_t>(st.value_net.n_params()), p.value_lr);
  std::vector<int> csizes = vsizes;
  csizes.back() = 1;
  for (int a = 0; a < n_agents; ++a) {
    Mlp net(csizes);
    Rng crng(mix_seed(p.master_seed, 0xc057 + static_cast<std::uint64_t>(a)));
    net.init(crng);
    st.cost_opts.emplace_back(static_cast<std::size_t>(net.n_params()), p.value_lr);
    st.cost_nets.push_back(std::move(net));
  }
  return st;
}

inline nlohmann::ordered_json checkpoint_to_json(const LearnerState& st,
                                                 std::uint64_t master_seed) {
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["master_seed"] = master_seed;
  j["episodes_done"] = st.episodes_done;
  j["n_agents"] = st.policies.size();
  nlohmann::ordered_json pols = nlohmann::ordered_json::array();
  for (const auto& p : st.policies) pols.push_back(p.to_json());
  j["policies"] = std::move(pols);
  j["value_net"] = st.value_net.to_json();
  j["value_opt"] = st.value_opt.to_json();
  nlohmann::ordered_json cnets = nlohmann::ordered_json::array();
  for (const auto& n : st.cost_nets) cnets.push_back(n.to_json());
  j["cost_nets"] = std::move(cnets);
  nlohmann::ordered_json copts = nlohmann::ordered_json::array();
  for (const auto& o : st.cost_opts) copts.push_back(o.to_json());
  j["cost_opts"] = std::move(copts);
  return j;
}

inline void save_checkpoint(const LearnerState& st, std::uint64_t master_seed,
                            const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f << checkpoint_to_json(st, master_seed).dump(1) << "\n";
  if (!f) throw IoError("short write on checkpoint: " + path);
}

// Loads and validates against the expected layout; any disagreement in the
// layout is reported with both sides.
inline LearnerState load_checkpoint(const std::string& path, int n_agents, int obs_dim,
                                    const TrainerParams& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corrupt checkpoint: ") + e.what());
  }
  const int ver = j.at("format_version").get<int>();
  if (ver != kCheckpointFormatVersion)
    throw ConfigError("checkpoint format_version " + std::to_string(ver) + ", expected " +
                      std::to_string(kCheckpointFormatVersion));
  const int ckpt_agents = j.at("n_agents").get<int>();
  if (ckpt_agents != n_agents)
    throw ConfigError("checkpoint layout mismatch: n_agents " + std::to_string(ckpt_agents) +
                      ", expected " + std::to_string(n_agents));
  LearnerState expect = make_learner(n_agents, obs_dim, params);
  LearnerState st;
  st.episodes_done = j.at("episodes_done").get<int>();
  for (const auto& pj : j.at("policies"))
    st.policies.push_back(GaussianPolicy::from_json(pj));
  st.value_net = Mlp::from_json(j.at("value_net"));
  st.value_opt = Adam::from_json(j.at("value_opt"));
  for (const auto& nj : j.at("cost_nets")) st.cost_nets.push_back(Mlp::from_json(nj));
  for (const auto& oj : j.at("cost_opts")) st.cost_opts.push_back(Adam::from_json(oj));
  auto diff = [](const std::string& what, const std::vector<int>& got,
                 const std::vector<int>& want) {
    auto fmt = [](const std::vector<int>& v) {
      std::string s = "[";
      for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + std::to_string(v[i]);
      return s + "]";
    };
    throw ConfigError("checkpoint layout mismatch: " + what + " sizes " + fmt(got) +
                      ", expected " + fmt(want));
  };
  for (std::size_t a = 0; a < st.policies.size(); ++a)
    if (st.policies[a].net().sizes() != expect.policies[a].net().sizes())
      diff("policy " + std::to_string(a), st.policies[a].net().sizes(),
           expect.policies[a].net().sizes());
  if (st.value_net.sizes() != expect.value_net.sizes())
    diff("value_net", st.value_net.sizes(), expect.value_net.sizes());
  if (st.cost_nets.size() != expect.cost_nets.size())
    throw ConfigError("checkpoint layout mismatch: cost net count");
  for (std::size_t a = 0; a < st.cost_nets.size(); ++a)
    if (st.cost_nets[a].sizes() != expect.cost_nets[a].sizes())
      diff("cost_net " + std::to_string(a), st.cost_nets[a].sizes(),
           expect.cost_nets[a].sizes());
  return st;
}

// Orchestrates rollout collection across parallel environments, advantage
// estimation, the sequential constrained update, and critic fitting.
class Trainer {
 public:
  Trainer(std::vector<CmdpEnv> envs, TrainerParams params)
      : envs_(std::move(envs)), params_(params) {
    if (envs_.empty()) throw std::invalid_argument("Trainer: need at least one env");
    n_agents_ = envs_[0].n_agents();
    state_ = make_learner(n_agents_, kObsDim, params_);
  }

  LearnerState& state() { return state_; }
  const LearnerState& state() const { return state_; }
  const std::vector<EpisodeStats>& log() const { return log_; }

  void set_state(LearnerState st) { state_ = std::move(st); }

  // Runs until episodes_done reaches params.episodes. Writes one log row per
  // episode; calls on_checkpoint(episodes_done) at checkpoint boundaries.
  template <typename CheckpointFn>
  void train(CheckpointFn&& on_checkpoint) {
    if (state_.episodes_done == 0) on_checkpoint(0);
    while (state_.episodes_done < params_.episodes) {
      run_iteration();
      const int done = state_.episodes_done;
      const int every = params_.checkpoint_every;
      if (done >= params_.episodes || (every > 0 && done % every < n_envs_used_))
        on_checkpoint(done);
    }
  }

  void train() {
    train([](int) {});
  }

 private:
  struct Rollout {
    std::vector<std::vector<std::vector<double>>> obs;   // [agent][t][dim]
    std::vector<std::vector<double>> global_obs;         // [t][dim*N]
    std::vector<std::vector<std::vector<double>>> act;   // [agent][t][1]
    std::vector<std::vector<double>> rewards;            // [agent][t]
    std::vector<std::vector<double>> costs;              // [agent][t]
    std::vector<std::vector<std::vector<double>>> mean_old;
    std::vector<std::vector<std::vector<double>>> std_old;
    std::vector<std::vector<double>> logp_old;           // [agent][t]
  };

  void run_iteration() {
    const int remaining = params_.episodes - state_.episodes_done;
    n_envs_used_ = std::min<int>(static_cast<int>(envs_.size()), remaining);
    std::vector<Rollout> rollouts;
    rollouts.reserve(static_cast<std::size_t>(n_envs_used_));
    for (int e = 0; e < n_envs_used_; ++e) {
      const int episode_index = state_.episodes_done + e;
      rollouts.push_back(collect_episode(envs_[static_cast<std::size_t>(e)], episode_index));
    }

    // per-agent batches, environments concatenated in fixed index order
    std::vector<AgentBatch> batches(static_cast<std::size_t>(n_agents_));
    std::vector<double> j_cost(static_cast<std::size_t>(n_agents_), 0.0);
    std::vector<std::vector<double>> value_inputs;
    std::vector<std::vector<double>> value_targets;
    std::vector<std::vector<std::vector<double>>> cost_targets(
        static_cast<std::size_t>(n_agents_));
    std::vector<EpisodeStats> iter_stats;

    for (int e = 0; e < n_envs_used_; ++e) {
      const Rollout& ro = rollouts[static_cast<std::size_t>(e)];
      const std::size_t t = ro.global_obs.size();
      // critic predictions along the episode, bootstrap 0 at the fixed end
      std::vector<std::vector<double>> v_pred(t);
      std::vector<std::vector<double>> c_pred(static_cast<std::size_t>(n_agents_),
                                              std::vector<double>(t, 0.0));
      for (std::size_t i = 0; i < t; ++i) {
        v_pred[i] = state_.value_net.forward(ro.global_obs[i]);
        for (int a = 0; a < n_agents_; ++a)
          c_pred[static_cast<std::size_t>(a)][i] =
              state_.cost_nets[static_cast<std::size_t>(a)].forward(ro.global_obs[i])[0];
      }
      EpisodeStats ep;
      ep.episode = state_.episodes_done + e;
      ep.agent_return.assign(static_cast<std::size_t>(n_agents_), 0.0);
      ep.agent_cost.assign(static_cast<std::size_t>(n_agents_), 0.0);
      for (int a = 0; a < n_agents_; ++a) {
        const std::size_t ai = static_cast<std::size_t>(a);
        std::vector<double> values(t + 1, 0.0), cvalues(t + 1, 0.0);
        for (std::size_t i = 0; i < t; ++i) {
          values[i] = v_pred[i][ai];
          cvalues[i] = c_pred[ai][i];
        }
        const GaeResult gr = gae(ro.rewards[ai], values, params_.gamma, params_.gae_lambda);
        const GaeResult gc = gae(ro.costs[ai], cvalues, params_.gamma, params_.gae_lambda);
        AgentBatch& b = batches[ai];
        for (std::size_t i = 0; i < t; ++i) {
          b.obs.push_back(ro.obs[ai][i]);
          b.act.push_back(ro.act[ai][i]);
          b.adv.push_back(gr.advantages[i]);
          b.cost_adv.push_back(gc.advantages[i]);
          b.mean_old.push_back(ro.mean_old[ai][i]);
          b.std_old.push_back(ro.std_old[ai][i]);
          b.logp_old.push_back(ro.logp_old[ai][i]);
          cost_targets[ai].push_back({gc.returns[i]});
        }
        const double jc = discounted_return(ro.costs[ai], params_.gamma);
        double ret = 0.0;
        for (double r : ro.rewards[ai]) ret += r;
        j_cost[ai] += jc / static_cast<double>(n_envs_used_);
        ep.agent_return[ai] = ret;
        ep.agent_cost[ai] = jc;
        ep.mean_return += ret / static_cast<double>(n_agents_);
        // one value-target row per step, all agents' returns side by side
        if (a == 0)
          for (std::size_t i = 0; i < t; ++i) {
            value_inputs.push_back(ro.global_obs[i]);
            value_targets.push_back(std::vector<double>(static_cast<std::size_t>(n_agents_), 0.0));
          }
        const std::size_t base = value_targets.size() - t;
        for (std::size_t i = 0; i < t; ++i) value_targets[base + i][ai] = gr.returns[i];
      }
      iter_stats.push_back(std::move(ep));
    }

    for (int a = 0; a < n_agents_; ++a)
      normalize_advantages(batches[static_cast<std::size_t>(a)].adv);

    // fresh uniform-random permutation of the update order each iteration
    std::vector<std::size_t> order(static_cast<std::size_t>(n_agents_));
    for (std::size_t n = 0; n < order.size(); ++n) order[n] = n;
    Rng order_rng(mix_seed(mix_seed(params_.master_seed, 0x04de4),
                           static_cast<std::uint64_t>(state_.episodes_done)));
    order_rng.shuffle(order);

    const std::vector<UpdateResult> results =
        sequential_joint_update(state_.policies, batches, j_cost, params_.tr, order);

    double max_kl = 0.0;
    bool all_accepted = true, any_recovery = false;
    for (const UpdateResult& r : results) {
      max_kl = std::max(max_kl, r.kl);
      all_accepted = all_accepted && r.accepted;
      any_recovery = any_recovery || r.recovery;
    }

    const double vloss =
        fit_value_mse(state_.value_net, state_.value_opt, value_inputs, value_targets,
                      params_.value_iters);
    double closs = 0.0;
    for (int a = 0; a < n_agents_; ++a)
      closs += fit_value_mse(state_.cost_nets[static_cast<std::size_t>(a)],
                             state_.cost_opts[static_cast<std::size_t>(a)], value_inputs,
                             cost_targets[static_cast<std::size_t>(a)], params_.value_iters);
    if (!std::isfinite(vloss) || !std::isfinite(closs) || !std::isfinite(max_kl)) {
      throw NumericError("non-finite training loss at episode " +
                         std::to_string(state_.episodes_done) + ": value_loss=" +
                         format_double(vloss) + " cost_loss=" + format_double(closs) +
                         " kl=" + format_double(max_kl));
    }

    for (EpisodeStats& ep : iter_stats) {
      ep.kl = max_kl;
      ep.accepted = all_accepted;
      ep.recovery_used = any_recovery;
      log_.push_back(std::move(ep));
    }
    state_.episodes_done += n_envs_used_;
  }

  Rollout collect_episode(CmdpEnv& env, int episode_index) {
    const std::uint64_t ep_seed =
        mix_seed(mix_seed(params_.master_seed, 0xe415de), static_cast<std::uint64_t>(episode_index));
    Rng act_rng(mix_seed(mix_seed(params_.master_seed, 0xac7de),
                         static_cast<std::uint64_t>(episode_index)));
    Rollout ro;
    const std::size_t n = static_cast<std::size_t>(n_agents_);
    ro.obs.resize(n);
    ro.act.resize(n);
    ro.rewards.resize(n);
    ro.costs.resize(n);
    ro.mean_old.resize(n);
    ro.std_old.resize(n);
    ro.logp_old.resize(n);
    std::vector<std::vector<double>> obs = env.reset(ep_seed);
    bool done = false;
    while (!done) {
      std::vector<double> global;
      global.reserve(n * static_cast<std::size_t>(kObsDim));
      for (const auto& row : obs) global.insert(global.end(), row.begin(), row.end());
      ro.global_obs.push_back(global);
      std::vector<double> actions(n, 0.0);
      for (std::size_t a = 0; a < n; ++a) {
        const GaussianPolicy& pol = state_.policies[a];
        std::vector<double> m = pol.mean(obs[a]);
        std::vector<double> s = pol.stddev();
        std::vector<double> u(m.size());
        for (std::size_t d = 0; d < m.size(); ++d)
          u[d] = m[d] + s[d] * act_rng.normal(0.0, 1.0);
        actions[a] = u[0];
        ro.obs[a].push_back(obs[a]);
        ro.act[a].push_back(u);
        ro.logp_old[a].push_back(GaussianPolicy::log_prob(m, s, u));
        ro.mean_old[a].push_back(std::move(m));
        ro.std_old[a].push_back(std::move(s));
      }
      StepResult sr = env.step(actions);
      for (std::size_t a = 0; a < n; ++a) {
        ro.rewards[a].push_back(sr.rewards[a]);
        ro.costs[a].push_back(sr.costs[a]);
      }
      obs = std::move(sr.obs);
      done = sr.done;
    }
    return ro;
  }

  std::vector<CmdpEnv> envs_;
  TrainerParams params_;
  int n_agents_ = 0;
  int n_envs_used_ = 0;
  LearnerState state_;
  std::vector<EpisodeStats> log_;
};

inline TrainerParams make_trainer_params(const RunConfig& cfg) {
  TrainerParams p;
  p.episodes = static_cast<int>(cfg.integer("train.episodes"));
  p.parallel_envs = static_cast<int>(cfg.integer("train.parallel_envs"));
  p.gamma = cfg.num("train.gamma");
  p.gae_lambda = cfg.num("train.gae_lambda");
  p.tr.delta = cfg.num("train.kl_delta");
  p.tr.cg_iters = static_cast<int>(cfg.integer("train.cg_iters"));
  p.tr.cg_damping = cfg.num("train.cg_damping");
  p.tr.cg_tol = cfg.num("train.cg_tol");
  p.tr.backtrack_iters = static_cast<int>(cfg.integer("train.backtrack_iters"));
  p.tr.backtrack_coeff = cfg.num("train.backtrack_coeff");
  p.tr.line_search_init = cfg.num("train.line_search_init");
  p.tr.factor_clamp = cfg.num("train.factor_clamp");
  p.tr.cost_limit = cfg.num("env.cost_limit");
  p.value_lr = cfg.num("train.value_lr");
  p.value_iters = static_cast<int>(cfg.integer("train.value_iters"));
  p.checkpoint_every = static_cast<int>(cfg.integer("train.checkpoint_every"));
  p.hidden = {static_cast<int>(cfg.integer("net.hidden1")),
              static_cast<int>(cfg.integer("net.hidden2"))};
  p.log_std_init = cfg.num("net.log_std_init");
  p.log_std_min = cfg.num("net.log_std_min");
  p.log_std_max = cfg.num("net.log_std_max");
  p.policy_out_scale = cfg.num("net.policy_out_scale");
  p.master_seed = static_cast<std::uint64_t>(cfg.integer("master_seed"));
  if (!(p.gamma > 0.0 && p.gamma <= 1.0))
    throw ConfigError("train.gamma must lie in (0,1]");
  if (!(p.gae_lambda > 0.0 && p.gae_lambda <= 1.0))
    throw ConfigError("train.gae_lambda must lie in (0,1]");
  if (p.tr.delta <= 0.0) throw ConfigError("train.kl_delta must be positive");
  if (p.tr.cg_iters < 1 || p.tr.backtrack_iters < 1 || p.value_iters < 1)
    throw ConfigError("iteration counts must be at least 1");
  if (p.episodes < 0 || p.parallel_envs < 1)
    throw ConfigError("train.episodes and train.parallel_envs out of range");
  return p;
}

inline void write_training_log_csv(const std::vector<EpisodeStats>& log,
                                   const std::string& path, bool append = false) {
  std::vector<std::string> header = {"episode", "mean_return", "cost_rate",
                                     "kl",      "accepted",    "recovery_used"};
  std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
  if (!f) throw IoError("cannot write training log: " + path);
  if (!append) {
    for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
    f << "\n";
  }
  for (const EpisodeStats& e : log) {
    double cost = 0.0;
    for (double c : e.agent_cost) cost += c;
    if (!e.agent_cost.empty()) cost /= static_cast<double>(e.agent_cost.size());
    f << e.episode << "," << format_double(e.mean_return) << "," << format_double(cost)
      << "," << format_double(e.kl) << "," << (e.accepted ? 1 : 0) << ","
      << (e.recovery_used ? 1 : 0) << "\n";
  }
  if (!f) throw IoError("short write on training log: " + path);
}

}  // namespace v2g
