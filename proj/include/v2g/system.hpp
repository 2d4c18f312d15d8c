#pragma once

#include <string>
#include <vector>

#include "v2g/config.hpp"
#include "v2g/env.hpp"

namespace v2g {

inline FleetParams make_fleet_params(const RunConfig& cfg) {
  FleetParams p;
  p.count = static_cast<int>(cfg.integer("fleet.count"));
  p.arrival_mean_hour = cfg.num("fleet.arrival_mean_hour");
  p.arrival_std_hours = cfg.num("fleet.arrival_std_hours");
  p.arrival_min_hour = cfg.num("fleet.arrival_min_hour");
  p.arrival_max_hour = cfg.num("fleet.arrival_max_hour");
  p.depart_mean_hour = cfg.num("fleet.depart_mean_hour");
  p.depart_std_hours = cfg.num("fleet.depart_std_hours");
  p.depart_min_hour = cfg.num("fleet.depart_min_hour");
  p.depart_max_hour = cfg.num("fleet.depart_max_hour");
  p.soc_arrival_mean = cfg.num("fleet.soc_arrival_mean");
  p.soc_arrival_std = cfg.num("fleet.soc_arrival_std");
  p.soc_arrival_min = cfg.num("fleet.soc_arrival_min");
  p.soc_arrival_max = cfg.num("fleet.soc_arrival_max");
  p.p_charge_max_kw = cfg.num("fleet.p_charge_max_kw");
  p.p_discharge_max_kw = cfg.num("fleet.p_discharge_max_kw");
  p.capacity_kwh = cfg.num("fleet.capacity_kwh");
  p.soc_min = cfg.num("fleet.soc_min");
  p.soc_max = cfg.num("fleet.soc_max");
  p.soc_depart_low = cfg.num("fleet.soc_depart_low");
  p.soc_depart_high = cfg.num("fleet.soc_depart_high");
  p.efficiency = cfg.num("fleet.efficiency");
  return p;
}

inline CellPack make_cell_pack(const RunConfig& cfg) {
  CellPack p;
  p.series_count = static_cast<int>(cfg.integer("battery.series_count"));
  p.parallel_count = static_cast<int>(cfg.integer("battery.parallel_count"));
  p.cell_voltage_v = cfg.num("battery.cell_voltage_v");
  p.cell_capacity_ah = cfg.num("battery.cell_capacity_ah");
  p.internal_resistance_ohm = cfg.num("battery.internal_resistance_ohm");
  p.design_current_charge_a = cfg.num("battery.design_current_charge_a");
  p.design_current_discharge_a = cfg.num("battery.design_current_discharge_a");
  p.u_min_v = cfg.num("battery.u_min_v");
  p.u_max_v = cfg.num("battery.u_max_v");
  p.capacity_scale = cfg.num("battery.capacity_scale");
  p.capacity_kwh = cfg.num("fleet.capacity_kwh");
  return p;
}

inline SohParams make_soh_params(const RunConfig& cfg) {
  SohParams p;
  p.m1_cycles = cfg.num("battery.m1_cycles");
  p.cycle_life_h = cfg.num("battery.cycle_life_h");
  p.kappa_dod = cfg.num("battery.kappa_dod");
  p.gamma_discharge = cfg.num("battery.gamma_discharge");
  p.gamma_charge = cfg.num("battery.gamma_charge");
  p.soc_avg_ref = cfg.num("battery.soc_avg_ref");
  p.delta_soc_ref = cfg.num("battery.delta_soc_ref");
  p.dod_floor_pct = cfg.num("battery.dod_floor_pct");
  p.initial_cycles_w = cfg.num("battery.initial_cycles_w");
  p.initial_aging_factor = cfg.num("battery.initial_aging_factor");
  return p;
}

inline SyntheticDayParams make_day_params(const RunConfig& cfg) {
  SyntheticDayParams p;
  p.n_ev = static_cast<int>(cfg.integer("fleet.count"));
  p.base_peak_per_ev_kw = cfg.num("grid.base_peak_per_ev_kw");
  p.pv_peak_per_ev_kw = cfg.num("grid.pv_peak_per_ev_kw");
  p.wind_base_per_ev_kw = cfg.num("grid.wind_base_per_ev_kw");
  p.noise_frac = cfg.num("grid.noise_frac");
  p.tariff_low = cfg.num("grid.tariff_low");
  p.tariff_high = cfg.num("grid.tariff_high");
  p.tariff_low_start_hour = static_cast<int>(cfg.integer("grid.tariff_low_start_hour"));
  p.tariff_low_end_hour = static_cast<int>(cfg.integer("grid.tariff_low_end_hour"));
  p.transformer_kva = cfg.num("grid.transformer_kva");
  p.power_factor = cfg.num("grid.power_factor");
  p.tie_line_min_kw = cfg.num("grid.tie_line_min_kw");
  p.alpha_variance = cfg.num("grid.alpha_variance");
  p.psi_mean_load = cfg.num("grid.psi_mean_load");
  return p;
}

inline EnvConfig make_env_config(const RunConfig& cfg) {
  EnvConfig e;
  e.horizon_slots = static_cast<int>(cfg.integer("env.horizon_slots"));
  e.dt_hours = cfg.num("env.slot_hours");
  e.window_start_hour = static_cast<int>(cfg.integer("env.window_start_hour"));
  e.cost_limit = cfg.num("env.cost_limit");
  e.reward_beta = cfg.num("env.reward_beta");
  e.reward_beta_auto = cfg.boolean("env.reward_beta_auto");
  e.reward_upsilon = cfg.num("env.reward_upsilon");
  e.deg_cost_per_kwh = cfg.num("env.deg_cost_per_kwh");
  e.reward_denom_floor = cfg.num("env.reward_denom_floor");
  e.alpha_variance = cfg.num("grid.alpha_variance");
  e.psi_mean_load = cfg.num("grid.psi_mean_load");
  e.tie_line_min_kw = cfg.num("grid.tie_line_min_kw");
  e.tie_line_max_kw = cfg.num("grid.transformer_kva") * cfg.num("grid.power_factor");
  e.stake_fraction = cfg.num("pos.stake_fraction");
  e.age_discount_ref_cycles = cfg.num("pos.age_discount_ref_cycles");
  return e;
}

// Builds a ready-to-reset environment from config and a fleet snapshot.
// n_agents_override < 1 keeps the configured aggregator count.
inline CmdpEnv make_env(const RunConfig& cfg, const std::vector<EvSpec>& specs,
                        int n_agents_override = 0) {
  const int n_agents = n_agents_override > 0
                           ? n_agents_override
                           : static_cast<int>(cfg.integer("fleet.n_agents"));
  const std::vector<std::vector<int>> part =
      partition_evas(static_cast<int>(specs.size()), n_agents,
                     static_cast<std::uint64_t>(cfg.integer("master_seed")));
  std::vector<std::vector<std::size_t>> partition;
  partition.reserve(part.size());
  for (const auto& g : part) {
    std::vector<std::size_t> grp;
    grp.reserve(g.size());
    for (int idx : g) grp.push_back(static_cast<std::size_t>(idx));
    partition.push_back(std::move(grp));
  }
  CmdpEnv env(specs, std::move(partition), make_cell_pack(cfg),
              OcvCurve(cfg.curve("battery.ocv_curve")), make_soh_params(cfg),
              make_day_params(cfg), make_env_config(cfg));
  const std::string profile = cfg.str("grid.profile_csv");
  if (!profile.empty()) {
    SyntheticDayParams dp = make_day_params(cfg);
    GridDay defaults;
    defaults.transformer_kva = dp.transformer_kva;
    defaults.power_factor = dp.power_factor;
    defaults.tie_line_min_kw = dp.tie_line_min_kw;
    defaults.alpha_variance = dp.alpha_variance;
    defaults.psi_mean_load = dp.psi_mean_load;
    env.set_fixed_day(load_profile_csv(profile, defaults));
  }
  return env;
}

}  // namespace v2g
