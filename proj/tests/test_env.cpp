#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "v2g/env.hpp"
#include "v2g/rng.hpp"

using namespace v2g;

namespace {

EvSpec basic_spec(int id, double soc_arrival = 0.5) {
  EvSpec s;
  s.id = id;
  s.arrival_hour = 15;
  s.depart_hour_abs = 34;
  s.soc_arrival = soc_arrival;
  return s;
}

GridDay flat_fixed_day(double base = 100.0, double tariff = 0.1) {
  GridDay d;
  d.base_kw.fill(base);
  d.pv_kw.fill(0.0);
  d.wind_kw.fill(0.0);
  d.tariff.fill(tariff);
  return d;
}

SohParams fresh_battery_params() {
  SohParams p;
  p.initial_cycles_w = 0.0;  // health exactly 100, so q_eff == capacity
  return p;
}

CmdpEnv make_env_n(int n_ev, int n_agents, EnvConfig cfg,
                   double soc_arrival = 0.5) {
  std::vector<EvSpec> specs;
  for (int i = 0; i < n_ev; ++i) specs.push_back(basic_spec(i, soc_arrival));
  std::vector<std::vector<std::size_t>> partition(n_agents);
  for (int i = 0; i < n_ev; ++i)
    partition[i % n_agents].push_back(static_cast<std::size_t>(i));
  return CmdpEnv(specs, partition, CellPack{}, OcvCurve::default_curve(),
                 fresh_battery_params(), SyntheticDayParams{}, cfg);
}

}  // namespace

TEST_CASE("reset is deterministic per seed") {
  EnvConfig cfg;
  CmdpEnv a = make_env_n(4, 2, cfg);
  CmdpEnv b = make_env_n(4, 2, cfg);
  auto oa = a.reset(31);
  auto ob = b.reset(31);
  REQUIRE(oa == ob);
  auto oc = b.reset(32);
  REQUIRE(oa != oc);

  // same actions, same transitions
  a.reset(31);
  b.reset(31);
  std::vector<double> act = {0.3, -0.2};
  for (int k = 0; k < 5; ++k) {
    StepResult ra = a.step(act);
    StepResult rb = b.step(act);
    REQUIRE(ra.obs == rb.obs);
    REQUIRE(ra.rewards == rb.rewards);
    REQUIRE(ra.costs == rb.costs);
  }
}

TEST_CASE("initial aggregate energy follows arrival soc") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(1, 1, cfg);
  env.reset(5);
  REQUIRE(env.agent_energy(0) == Catch::Approx(12.0).margin(1e-12));
}

TEST_CASE("observations have the fixed width and finite entries") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(4, 2, cfg);
  auto obs = env.reset(7);
  REQUIRE(obs.size() == 2);
  for (const auto& row : obs) {
    REQUIRE(row.size() == static_cast<std::size_t>(kObsDim));
    for (double v : row) REQUIRE(std::isfinite(v));
  }
  StepResult r = env.step({0.5, -0.5});
  for (const auto& row : r.obs) {
    REQUIRE(row.size() == static_cast<std::size_t>(kObsDim));
    for (double v : row) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("history warm-fills with the base-net profile") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(1, 1, cfg);
  env.set_fixed_day(flat_fixed_day(100.0));
  env.reset(1);
  const auto& hist = env.trailing_load();
  REQUIRE(hist.size() == 24);
  for (double v : hist) REQUIRE(v == Catch::Approx(100.0).margin(1e-12));
}

TEST_CASE("normalized observation of a flat fixed day") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(1, 1, cfg);
  env.set_fixed_day(flat_fixed_day(100.0, 0.1));
  auto obs = env.reset(1);
  for (int i = 0; i < 24; ++i)
    REQUIRE(obs[0][i] == Catch::Approx(100.0 / 3200.0).margin(1e-12));
  REQUIRE(obs[0][24] == Catch::Approx(0.5).margin(1e-12));  // 12 of 24 kWh
  REQUIRE(obs[0][25] == 0.0);                               // flat history
  REQUIRE(obs[0][26] == Catch::Approx(1.0).margin(1e-12));  // tariff at max
  REQUIRE(obs[0][27] == 0.0);
}

TEST_CASE("action scaling maps the unit interval onto the power box") {
  EnvConfig cfg;
  auto scaled_for = [&](double u) {
    CmdpEnv env = make_env_n(1, 1, cfg);
    env.set_fixed_day(flat_fixed_day());
    env.reset(3);
    env.step({u});
    return env.records()[0].agents[0].p_scaled_kw;
  };
  REQUIRE(scaled_for(-1.0) == Catch::Approx(-6.0).margin(1e-12));
  REQUIRE(scaled_for(0.0) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(scaled_for(1.0) == Catch::Approx(6.0).margin(1e-12));
  REQUIRE(scaled_for(0.5) == Catch::Approx(3.0).margin(1e-12));
  // raw values beyond the interval clamp to the endpoint
  REQUIRE(scaled_for(2.0) == Catch::Approx(6.0).margin(1e-12));
  REQUIRE(scaled_for(-7.0) == Catch::Approx(-6.0).margin(1e-12));
}

TEST_CASE("feasible zero actions incur no cost") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(2, 2, cfg);
  env.set_fixed_day(flat_fixed_day());
  env.reset(11);
  for (int k = 0; k < 3; ++k) {
    StepResult r = env.step({0.0, 0.0});
    REQUIRE(r.costs == std::vector<double>{0.0, 0.0});
    REQUIRE(r.rewards[0] > 0.0);
  }
}

TEST_CASE("energy ceiling clips the action and fires the cost") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(1, 1, cfg, 0.875);  // 21 of 24 kWh on arrival
  env.set_fixed_day(flat_fixed_day());
  env.reset(2);
  REQUIRE(env.agent_energy(0) == Catch::Approx(21.0).margin(1e-12));
  StepResult r = env.step({1.0});  // scaled to +6 kW
  const AgentStepRecord& rec = env.records()[0].agents[0];
  REQUIRE(rec.energy_violation);
  REQUIRE(r.costs[0] == 1.0);
  // clipped so that 21 + 0.95 p = 21.6
  REQUIRE(rec.p_energy_clip_kw == Catch::Approx(0.6 / 0.95).margin(1e-9));
  REQUIRE(rec.e_sum_after_kwh <= 21.6 + 1e-9);
}

TEST_CASE("actions below the floor clip up without extra cost") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(1, 1, cfg, 0.21);  // just above the soc floor
  env.set_fixed_day(flat_fixed_day());
  env.reset(2);
  StepResult r = env.step({-1.0});  // scaled to -6 kW, but floor is 4.8 kWh
  const AgentStepRecord& rec = env.records()[0].agents[0];
  REQUIRE(rec.energy_violation);
  REQUIRE(r.costs[0] == 1.0);
  REQUIRE(env.members()[0].state.energy_kwh >=
          0.2 * env.members()[0].q_eff_kwh() - 1e-9);
}

TEST_CASE("cost is exactly the pre-clip violation indicator") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(4, 2, cfg);
  Rng rng(909);
  for (int ep = 0; ep < 10; ++ep) {
    env.reset(1000 + ep);
    for (int k = 0; k < env.horizon(); ++k) {
      StepResult r = env.step({rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)});
      const StepRecord& rec = env.records().back();
      for (int a = 0; a < 2; ++a) {
        REQUIRE((r.costs[a] == 0.0 || r.costs[a] == 1.0));
        const bool expect =
            rec.agents[a].energy_violation || rec.grid_preclip_violation;
        REQUIRE(r.costs[a] == (expect ? 1.0 : 0.0));
      }
    }
  }
}

TEST_CASE("grid violations are collective and the clamp restores the band") {
  EnvConfig cfg;
  cfg.tie_line_max_kw = 105.0;
  CmdpEnv env = make_env_n(2, 2, cfg);
  env.set_fixed_day(flat_fixed_day(100.0, 0.1));
  env.reset(4);
  StepResult r = env.step({1.0, 1.0});  // 100 + 6 + 6 breaches 105
  const StepRecord& rec = env.records()[0];
  REQUIRE(rec.grid_preclip_violation);
  REQUIRE(r.costs == std::vector<double>{1.0, 1.0});
  REQUIRE(rec.total_preclip_kw == Catch::Approx(112.0).margin(1e-9));
  REQUIRE(rec.total_realized_kw == Catch::Approx(105.0).margin(1e-9));
  REQUIRE(rec.agents[0].p_realized_kw == Catch::Approx(2.5).margin(1e-9));
  REQUIRE(rec.agents[1].p_realized_kw == Catch::Approx(2.5).margin(1e-9));
}

TEST_CASE("trailing variance reflects the newest realized load") {
  EnvConfig cfg;
  cfg.tie_line_max_kw = 105.0;
  CmdpEnv env = make_env_n(2, 2, cfg);
  env.set_fixed_day(flat_fixed_day(100.0, 0.1));
  env.reset(4);
  env.step({1.0, 1.0});  // realized 105 against 23 samples at 100
  const StepRecord& rec = env.records()[0];
  REQUIRE(rec.sigma2_kw2 == Catch::Approx(25.0 * 23.0 / 576.0).margin(1e-9));
}

TEST_CASE("step reward matches the shaped reciprocal") {
  EnvConfig cfg;
  cfg.tie_line_max_kw = 105.0;
  CmdpEnv env = make_env_n(2, 2, cfg);
  env.set_fixed_day(flat_fixed_day(100.0, 0.1));
  env.reset(4);
  // beta: 1 + tariff_max * own discharge + psi * (renewables + all discharge)
  REQUIRE(env.beta_eff(0) == Catch::Approx(1.0 + 0.1 * 6.0 + 0.1 * 12.0).margin(1e-12));
  StepResult r = env.step({1.0, 1.0});
  const double var = 25.0 * 23.0 / 576.0;
  const double denom = 0.01 * var + 0.1 * 5.0 + 0.1 * 2.5 + 0.15 * (0.95 * 2.5) + 2.8;
  REQUIRE(r.rewards[0] == Catch::Approx(1.0 / denom).margin(1e-9));
  REQUIRE(r.rewards[1] == Catch::Approx(1.0 / denom).margin(1e-9));
}

TEST_CASE("denominator guard caps the reward at the floor reciprocal") {
  EnvConfig cfg;
  cfg.reward_beta_auto = false;
  cfg.reward_beta = 0.0;
  cfg.alpha_variance = 0.0;
  cfg.psi_mean_load = 0.0;
  cfg.reward_upsilon = 0.0;
  cfg.deg_cost_per_kwh = 0.0;
  CmdpEnv env = make_env_n(1, 1, cfg);
  env.set_fixed_day(flat_fixed_day());
  env.reset(9);
  StepResult r = env.step({0.0});
  REQUIRE(r.rewards[0] == Catch::Approx(100.0).margin(1e-12));
}

TEST_CASE("episodes run exactly the horizon and then refuse to step") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(2, 1, cfg);
  env.reset(77);
  StepResult r;
  for (int k = 0; k < env.horizon(); ++k) {
    REQUIRE(env.slot() == k);
    r = env.step({0.1});
    REQUIRE(r.done == (k == env.horizon() - 1));
  }
  REQUIRE(env.records().size() == 20);
  REQUIRE_THROWS_AS(env.step({0.1}), std::logic_error);
}

TEST_CASE("realized trajectories satisfy the aggregate envelope") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(4, 2, cfg);
  Rng rng(31415);
  for (int ep = 0; ep < 10; ++ep) {
    env.reset(500 + ep);
    std::vector<std::vector<double>> traj(2);
    for (int k = 0; k < env.horizon(); ++k) {
      env.step({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
      const StepRecord& rec = env.records().back();
      for (int a = 0; a < 2; ++a) traj[a].push_back(rec.agents[a].e_sum_after_kwh);
    }
    for (int a = 0; a < 2; ++a)
      REQUIRE(envelope_admits(env.envelope(a), traj[a], cfg.dt_hours, 1e-6));
  }
}

TEST_CASE("post-clip member states never leave their soc windows") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(6, 3, cfg);
  Rng rng(2718);
  for (int ep = 0; ep < 50; ++ep) {
    env.reset(9000 + ep);
    for (int k = 0; k < env.horizon(); ++k) {
      env.step({rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                rng.uniform(-1.5, 1.5)});
      for (const EvMember& m : env.members()) {
        const double q = m.q_eff_kwh();
        REQUIRE(m.state.energy_kwh >= m.spec.soc_min * q - 1e-9);
        REQUIRE(m.state.energy_kwh <= m.spec.soc_max * q + 1e-9);
      }
    }
    for (const StepRecord& rec : env.records())
      for (const AgentStepRecord& a : rec.agents) REQUIRE(a.plan_validated);
  }
}

TEST_CASE("departed vehicles freeze and the requirement is met") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(2, 1, cfg);
  env.set_fixed_day(flat_fixed_day());
  env.reset(55);
  for (int k = 0; k < env.horizon(); ++k) env.step({0.0});
  for (const EvMember& m : env.members()) {
    REQUIRE(m.state.departed);
    const double q = m.q_eff_kwh();
    // mandatory floor charging must have hit the departure band
    REQUIRE(m.state.energy_kwh >= m.spec.soc_depart_low * q - 1e-9);
  }
  // energy history has one point per boundary plus the start
  for (const auto& series : env.member_energy_history())
    REQUIRE(series.size() == static_cast<std::size_t>(env.horizon()) + 1);
}

TEST_CASE("a day of cycling ages the batteries") {
  EnvConfig cfg;
  CmdpEnv env = make_env_n(2, 1, cfg);
  env.set_fixed_day(flat_fixed_day());
  env.reset(66);
  Rng rng(8);
  for (int k = 0; k < env.horizon(); ++k) env.step({rng.uniform(-1.0, 1.0)});
  const double w_before = env.members()[0].state.soh.equivalent_full_cycles;
  const double soh_before = env.members()[0].state.soh.soh_percent;
  env.advance_day_soh();
  const double w_after = env.members()[0].state.soh.equivalent_full_cycles;
  const double soh_after = env.members()[0].state.soh.soh_percent;
  REQUIRE(w_after > w_before);
  REQUIRE(soh_after <= soh_before);
}

TEST_CASE("environment construction validates its inputs") {
  EnvConfig cfg;
  std::vector<EvSpec> specs = {basic_spec(0)};
  REQUIRE_THROWS_AS(CmdpEnv({}, {{0}}, CellPack{}, OcvCurve::default_curve(),
                            SohParams{}, SyntheticDayParams{}, cfg),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(CmdpEnv(specs, {}, CellPack{}, OcvCurve::default_curve(),
                            SohParams{}, SyntheticDayParams{}, cfg),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(CmdpEnv(specs, {{0, 0}}, CellPack{}, OcvCurve::default_curve(),
                            SohParams{}, SyntheticDayParams{}, cfg),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(CmdpEnv(specs, {{1}}, CellPack{}, OcvCurve::default_curve(),
                            SohParams{}, SyntheticDayParams{}, cfg),
                    std::invalid_argument);
  CmdpEnv env(specs, {{0}}, CellPack{}, OcvCurve::default_curve(), SohParams{},
              SyntheticDayParams{}, cfg);
  env.reset(1);
  REQUIRE_THROWS_AS(env.step({0.0, 0.0}), std::invalid_argument);
}
