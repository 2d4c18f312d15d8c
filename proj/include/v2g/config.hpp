#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace v2g {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using OcvCurvePoints = std::vector<std::pair<double, double>>;
using ConfigValue = std::variant<double, long long, bool, std::string, OcvCurvePoints>;

namespace detail {

struct ConfigEntry {
  const char* key;
  ConfigValue def;
};

inline OcvCurvePoints default_ocv_points() {
  return {{0.0, 2.80}, {0.1, 3.05}, {0.2, 3.18}, {0.3, 3.25}, {0.4, 3.28},
          {0.5, 3.30}, {0.6, 3.32}, {0.7, 3.35}, {0.8, 3.40}, {0.9, 3.48},
          {1.0, 3.60}};
}

// Flat namespaced key registry; parsing rejects anything not listed here.
inline const std::vector<ConfigEntry>& registry() {
  static const std::vector<ConfigEntry> entries = {
      {"master_seed", static_cast<long long>(12345)},
      {"output_dir", std::string("out")},

      {"fleet.count", static_cast<long long>(509)},
      {"fleet.n_agents", static_cast<long long>(4)},
      {"fleet.csv_path", std::string("")},
      {"fleet.arrival_mean_hour", 18.0},
      {"fleet.arrival_std_hours", 1.0},
      {"fleet.arrival_min_hour", 15.0},
      {"fleet.arrival_max_hour", 21.0},
      {"fleet.depart_mean_hour", 8.0},
      {"fleet.depart_std_hours", 1.0},
      {"fleet.depart_min_hour", 6.0},
      {"fleet.depart_max_hour", 10.0},
      {"fleet.soc_arrival_mean", 0.5},
      {"fleet.soc_arrival_std", 0.1},
      {"fleet.soc_arrival_min", 0.2},
      {"fleet.soc_arrival_max", 0.8},
      {"fleet.p_charge_max_kw", 6.0},
      {"fleet.p_discharge_max_kw", -6.0},
      {"fleet.capacity_kwh", 24.0},
      {"fleet.soc_min", 0.2},
      {"fleet.soc_max", 0.9},
      {"fleet.soc_depart_low", 0.8},
      {"fleet.soc_depart_high", 0.9},
      {"fleet.efficiency", 0.95},

      {"grid.transformer_kva", 4000.0},
      {"grid.power_factor", 0.8},
      {"grid.tie_line_min_kw", 0.0},
      {"grid.alpha_variance", 0.01},
      {"grid.psi_mean_load", 0.1},
      {"grid.base_peak_per_ev_kw", 5.7},
      {"grid.pv_peak_per_ev_kw", 1.2},
      {"grid.wind_base_per_ev_kw", 0.8},
      {"grid.noise_frac", 0.02},
      {"grid.tariff_low", 0.05},
      {"grid.tariff_high", 0.12},
      {"grid.tariff_low_start_hour", static_cast<long long>(23)},
      {"grid.tariff_low_end_hour", static_cast<long long>(7)},
      {"grid.profile_csv", std::string("")},

      {"battery.series_count", static_cast<long long>(39)},
      {"battery.parallel_count", static_cast<long long>(4)},
      {"battery.cell_voltage_v", 3.3},
      {"battery.cell_capacity_ah", 2.3},
      {"battery.internal_resistance_ohm", 0.01},
      {"battery.design_current_charge_a", 6.9},
      {"battery.design_current_discharge_a", 6.9},
      {"battery.u_min_v", 2.8},
      {"battery.u_max_v", 3.65},
      {"battery.capacity_scale", 0.0},  // 0 = derive from fleet.capacity_kwh
      {"battery.m1_cycles", 1500.0},
      {"battery.cycle_life_h", 1500.0},
      {"battery.kappa_dod", 0.5},
      {"battery.gamma_discharge", 0.2},
      {"battery.gamma_charge", 0.2},
      {"battery.initial_cycles_w", 50.0},
      {"battery.initial_aging_factor", 1e-5},
      {"battery.soc_avg_ref", 0.5},
      {"battery.delta_soc_ref", 0.6},
      {"battery.dod_floor_pct", 1.0},
      {"battery.soh_eol", 0.8},
      {"battery.cost_per_kwh", 300.0},
      {"battery.labor_cost", 240.0},
      {"battery.ocv_curve", default_ocv_points()},

      {"env.horizon_slots", static_cast<long long>(20)},
      {"env.slot_hours", 1.0},
      {"env.window_start_hour", static_cast<long long>(15)},
      {"env.cost_limit", 0.1},
      {"env.reward_beta", 1.0},
      {"env.reward_beta_auto", true},
      {"env.reward_upsilon", 1.0},
      {"env.deg_cost_per_kwh", 0.15},
      {"env.reward_denom_floor", 0.01},

      {"pos.stake_fraction", 0.1},
      {"pos.slash_fraction", 0.05},
      {"pos.age_discount_ref_cycles", 1000.0},

      {"train.episodes", static_cast<long long>(3500)},
      {"train.parallel_envs", static_cast<long long>(5)},
      {"train.gamma", 0.99},
      {"train.gae_lambda", 0.95},
      {"train.kl_delta", 0.01},
      {"train.cg_iters", static_cast<long long>(10)},
      {"train.cg_damping", 0.1},
      {"train.cg_tol", 1e-10},
      {"train.backtrack_iters", static_cast<long long>(10)},
      {"train.backtrack_coeff", 0.5},
      {"train.line_search_init", 1.0},
      {"train.value_lr", 5e-4},
      {"train.value_iters", static_cast<long long>(80)},
      {"train.checkpoint_every", static_cast<long long>(500)},
      {"train.factor_clamp", 20.0},

      {"net.hidden1", static_cast<long long>(64)},
      {"net.hidden2", static_cast<long long>(64)},
      {"net.log_std_init", -0.5},
      {"net.log_std_min", -5.0},
      {"net.log_std_max", 2.0},
      {"net.policy_out_scale", 0.01},
  };
  return entries;
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& e : detail::registry()) values_[e.key] = e.def;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    RunConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) {
      auto slot = cfg.values_.find(it.key());
      if (slot == cfg.values_.end())
        throw ConfigError("unknown config key: " + it.key());
      slot->second = parse_value(it.key(), slot->second, it.value());
    }
    return cfg;
  }

  static RunConfig from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return from_json(j);
  }

  // Emits every key in registry order; parsing the result reproduces *this.
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    for (const auto& e : detail::registry()) {
      const ConfigValue& v = values_.at(e.key);
      if (std::holds_alternative<double>(v)) {
        j[e.key] = std::get<double>(v);
      } else if (std::holds_alternative<long long>(v)) {
        j[e.key] = std::get<long long>(v);
      } else if (std::holds_alternative<bool>(v)) {
        j[e.key] = std::get<bool>(v);
      } else if (std::holds_alternative<std::string>(v)) {
        j[e.key] = std::get<std::string>(v);
      } else {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& p : std::get<OcvCurvePoints>(v))
          arr.push_back({p.first, p.second});
        j[e.key] = arr;
      }
    }
    return j;
  }

  double num(const std::string& key) const {
    const ConfigValue& v = get(key);
    if (std::holds_alternative<double>(v)) return std::get<double>(v);
    if (std::holds_alternative<long long>(v))
      return static_cast<double>(std::get<long long>(v));
    throw ConfigError("config key is not numeric: " + key);
  }

  long long integer(const std::string& key) const {
    const ConfigValue& v = get(key);
    if (std::holds_alternative<long long>(v)) return std::get<long long>(v);
    if (std::holds_alternative<double>(v)) {
      double d = std::get<double>(v);
      long long i = static_cast<long long>(d);
      if (static_cast<double>(i) != d)
        throw ConfigError("config key is not an integer: " + key);
      return i;
    }
    throw ConfigError("config key is not numeric: " + key);
  }

  bool boolean(const std::string& key) const {
    const ConfigValue& v = get(key);
    if (!std::holds_alternative<bool>(v))
      throw ConfigError("config key is not a bool: " + key);
    return std::get<bool>(v);
  }

  const std::string& str(const std::string& key) const {
    const ConfigValue& v = get(key);
    if (!std::holds_alternative<std::string>(v))
      throw ConfigError("config key is not a string: " + key);
    return std::get<std::string>(v);
  }

  OcvCurvePoints curve(const std::string& key) const {
    const ConfigValue& v = get(key);
    if (!std::holds_alternative<OcvCurvePoints>(v))
      throw ConfigError("config key is not a curve: " + key);
    return std::get<OcvCurvePoints>(v);
  }

  void set(const std::string& key, ConfigValue v) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    if (it->second.index() != v.index()) {
      // allow int <-> double coercion on programmatic sets
      if (std::holds_alternative<long long>(it->second) &&
          std::holds_alternative<double>(v)) {
        double d = std::get<double>(v);
        long long i = static_cast<long long>(d);
        if (static_cast<double>(i) != d)
          throw ConfigError("non-integer value for integer key: " + key);
        it->second = i;
        return;
      }
      if (std::holds_alternative<double>(it->second) &&
          std::holds_alternative<long long>(v)) {
        it->second = static_cast<double>(std::get<long long>(v));
        return;
      }
      throw ConfigError("wrong value type for config key: " + key);
    }
    it->second = std::move(v);
  }

 private:
  const ConfigValue& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
  }

  static ConfigValue parse_value(const std::string& key, const ConfigValue& def,
                                 const nlohmann::json& j) {
    if (std::holds_alternative<double>(def)) {
      if (!j.is_number()) throw ConfigError("expected number for " + key);
      return j.get<double>();
    }
    if (std::holds_alternative<long long>(def)) {
      if (j.is_number_integer()) return j.get<long long>();
      if (j.is_number()) {
        double d = j.get<double>();
        long long i = static_cast<long long>(d);
        if (static_cast<double>(i) != d)
          throw ConfigError("expected integer for " + key);
        return i;
      }
      throw ConfigError("expected integer for " + key);
    }
    if (std::holds_alternative<bool>(def)) {
      if (!j.is_boolean()) throw ConfigError("expected bool for " + key);
      return j.get<bool>();
    }
    if (std::holds_alternative<std::string>(def)) {
      if (!j.is_string()) throw ConfigError("expected string for " + key);
      return j.get<std::string>();
    }
    if (!j.is_array()) throw ConfigError("expected array of [x,y] for " + key);
    OcvCurvePoints pts;
    for (const auto& el : j) {
      if (!el.is_array() || el.size() != 2 || !el[0].is_number() || !el[1].is_number())
        throw ConfigError("expected [soc, volts] pairs for " + key);
      pts.emplace_back(el[0].get<double>(), el[1].get<double>());
    }
    return pts;
  }

  std::map<std::string, ConfigValue> values_;
};

}  // namespace v2g
