#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "v2g/baselines.hpp"
#include "v2g/csv.hpp"
#include "v2g/env.hpp"
#include "v2g/microgrid.hpp"
#include "v2g/net.hpp"

namespace v2g {

// What drives the day: a frozen policy set (deterministic, mean actions) or
// one of the reference strategies.
struct DispatchSource {
  const std::vector<GaussianPolicy>* policies = nullptr;
  bool is_baseline = false;
  BaselineKind kind = BaselineKind::uncontrolled;
};

// Runs one scheduling day. For baselines the plan is rebuilt from the live
// fleet state, so capacity fade feeds back into later plans.
inline BaselinePlan run_day(CmdpEnv& env, const DispatchSource& src, std::uint64_t seed) {
  std::vector<std::vector<double>> obs = env.reset(seed);
  if (src.is_baseline) {
    BaselinePlan plan =
        plan_baseline(src.kind, env.members(), env.day(), env.config().window_start_hour,
                      env.horizon(), env.config().dt_hours);
    execute_plan(env, plan);
    return plan;
  }
  if (!src.policies || static_cast<int>(src.policies->size()) != env.n_agents())
    throw std::invalid_argument("run_day: policy count mismatch");
  bool done = false;
  while (!done) {
    std::vector<double> actions(obs.size(), 0.0);
    for (std::size_t a = 0; a < obs.size(); ++a)
      actions[a] = (*src.policies)[a].mean(obs[a])[0];
    StepResult r = env.step(actions);
    obs = std::move(r.obs);
    done = r.done;
  }
  return {};
}

struct YearResult {
  std::vector<double> mean_soh;  // index 0 is the state before the first day
  std::vector<double> min_soh;
  std::vector<double> max_soh;
};

// Replays the scheduling day with daily aging. The day profile is pinned by
// the seed; dispatch is re-planned each morning against the faded fleet.
inline YearResult simulate_year(CmdpEnv& env, const DispatchSource& src,
                                std::uint64_t seed, int days = 365) {
  YearResult yr;
  auto snapshot = [&]() {
    double mean = 0.0, lo = 1e18, hi = -1e18;
    for (const EvMember& m : env.members()) {
      const double s = m.state.soh.soh_percent;
      mean += s;
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    mean /= static_cast<double>(env.members().size());
    yr.mean_soh.push_back(mean);
    yr.min_soh.push_back(lo);
    yr.max_soh.push_back(hi);
  };
  snapshot();
  for (int d = 0; d < days; ++d) {
    run_day(env, src, seed);
    env.advance_day_soh();
    snapshot();
  }
  return yr;
}

struct EvaluationReport {
  std::string strategy;
  double one_year_soh = 100.0;
  double one_day_load_variance = 0.0;
  double one_day_ev_cost = 0.0;
  CostBreakdown dso_breakdown;
  double mean_departure_soc = 0.0;
  bool has_discharge_slots = false;
  bool baseline_shortfall = false;
  bool baseline_converged = true;
  std::vector<double> eva_kw;
  std::vector<double> total_load_kw;
  std::vector<double> trailing_day_load_kw;  // the 24 loads behind the variance
  std::vector<double> soc_mean;              // fleet mean per slot boundary
};

inline nlohmann::ordered_json report_to_json(const EvaluationReport& r) {
  nlohmann::ordered_json j;
  j["strategy"] = r.strategy;
  j["one_year_soh"] = r.one_year_soh;
  j["one_day_load_variance"] = r.one_day_load_variance;
  j["one_day_ev_cost"] = r.one_day_ev_cost;
  j["dso_breakdown"] = {{"charging", r.dso_breakdown.charging},
                        {"degradation", r.dso_breakdown.degradation},
                        {"fluctuation", r.dso_breakdown.fluctuation},
                        {"variance", r.dso_breakdown.variance},
                        {"total", r.dso_breakdown.total}};
  j["mean_departure_soc"] = r.mean_departure_soc;
  j["has_discharge_slots"] = r.has_discharge_slots;
  j["baseline_shortfall"] = r.baseline_shortfall;
  j["baseline_converged"] = r.baseline_converged;
  j["eva_kw"] = r.eva_kw;
  j["total_load_kw"] = r.total_load_kw;
  j["trailing_day_load_kw"] = r.trailing_day_load_kw;
  j["soc_mean"] = r.soc_mean;
  return j;
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write: " + path);
  return f;
}

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  if (i + 1 >= v.size()) return v.back();
  const double frac = pos - static_cast<double>(i);
  return v[i] * (1.0 - frac) + v[i + 1] * frac;
}

}  // namespace detail

inline void write_load_profile_csv(const CmdpEnv& env, const std::string& path) {
  std::ofstream f = detail::open_out(path);
  f << "slot,hour,base_kw,pv_kw,wind_kw,net_base_kw,eva_kw,total_kw,tariff\n";
  for (const StepRecord& rec : env.records()) {
    const std::size_t h = static_cast<std::size_t>(((rec.hour % 24) + 24) % 24);
    double eva = 0.0;
    for (const AgentStepRecord& a : rec.agents) eva += a.p_realized_kw;
    f << rec.slot << "," << rec.hour << "," << format_double(env.day().base_kw[h]) << ","
      << format_double(env.day().pv_kw[h]) << "," << format_double(env.day().wind_kw[h])
      << "," << format_double(rec.base_net_kw) << "," << format_double(eva) << ","
      << format_double(rec.total_realized_kw) << "," << format_double(rec.tariff) << "\n";
  }
  if (!f) throw IoError("short write: " + path);
}

inline void write_soc_distribution_csv(const CmdpEnv& env, const std::string& path) {
  std::ofstream f = detail::open_out(path);
  f << "slot,hour,soc_mean,soc_min,soc_p25,soc_p75,soc_max\n";
  const auto& hist = env.member_energy_history();
  const auto& members = env.members();
  for (const StepRecord& rec : env.records()) {
    const std::size_t b = static_cast<std::size_t>(rec.slot) + 1;  // boundary after slot
    std::vector<double> socs;
    socs.reserve(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) {
      const double q = members[i].q_eff_kwh();
      if (q > 0.0 && b < hist[i].size()) socs.push_back(hist[i][b] / q);
    }
    double mean = 0.0;
    for (double s : socs) mean += s;
    if (!socs.empty()) mean /= static_cast<double>(socs.size());
    f << rec.slot << "," << rec.hour << "," << format_double(mean) << ","
      << format_double(detail::quantile(socs, 0.0)) << ","
      << format_double(detail::quantile(socs, 0.25)) << ","
      << format_double(detail::quantile(socs, 0.75)) << ","
      << format_double(detail::quantile(socs, 1.0)) << "\n";
  }
  if (!f) throw IoError("short write: " + path);
}

// Realized power of one EV against its live charge/discharge capability.
inline void write_ev_power_sop_csv(const CmdpEnv& env, std::size_t member_index,
                                   const std::string& path) {
  if (member_index >= env.members().size())
    throw std::invalid_argument("write_ev_power_sop_csv: bad member index");
  std::ofstream f = detail::open_out(path);
  f << "slot,hour,ev_id,power_kw,sop_charge_kw,sop_discharge_kw\n";
  const EvMember& m = env.members()[member_index];
  const auto& hist = env.member_energy_history()[member_index];
  for (const StepRecord& rec : env.records()) {
    const std::size_t k = static_cast<std::size_t>(rec.slot);
    const double q = m.q_eff_kwh();
    const double soc = q > 0.0 ? std::clamp(hist[k] / q, 0.0, 1.0) : 0.0;
    const PowerLimits lim =
        sop_power_limits(env.pack(), env.ocv(), soc, m.spec.soc_min, m.spec.soc_max, 1,
                         env.config().dt_hours);
    f << rec.slot << "," << rec.hour << "," << m.spec.id << ","
      << format_double(rec.member_power_kw[member_index]) << ","
      << format_double(lim.p_charge_max_kw) << ","
      << format_double(lim.p_discharge_max_kw) << "\n";
  }
  if (!f) throw IoError("short write: " + path);
}

inline void write_trajectory_csv(const CmdpEnv& env, const std::string& path) {
  std::ofstream f = detail::open_out(path);
  const int n = env.n_agents();
  f << "slot";
  for (int a = 0; a < n; ++a)
    f << ",a" << a << "_raw,a" << a << "_scaled,a" << a << "_clipped";
  for (int a = 0; a < n; ++a) f << ",a" << a << "_reward";
  for (int a = 0; a < n; ++a) f << ",a" << a << "_cost";
  for (int a = 0; a < n; ++a) f << ",a" << a << "_energy_kwh";
  f << ",sigma2_kw2\n";
  for (const StepRecord& rec : env.records()) {
    f << rec.slot;
    for (int a = 0; a < n; ++a) {
      const AgentStepRecord& ar = rec.agents[static_cast<std::size_t>(a)];
      f << "," << format_double(ar.raw_action) << "," << format_double(ar.p_scaled_kw)
        << "," << format_double(ar.p_realized_kw);
    }
    for (int a = 0; a < n; ++a)
      f << "," << format_double(rec.agents[static_cast<std::size_t>(a)].reward);
    for (int a = 0; a < n; ++a)
      f << "," << format_double(rec.agents[static_cast<std::size_t>(a)].cost);
    for (int a = 0; a < n; ++a)
      f << "," << format_double(rec.agents[static_cast<std::size_t>(a)].e_sum_after_kwh);
    f << "," << format_double(rec.sigma2_kw2) << "\n";
  }
  if (!f) throw IoError("short write: " + path);
}

inline void write_allocation_audit_csv(const CmdpEnv& env, const std::string& path) {
  std::ofstream f = detail::open_out(path);
  f << "slot,eva,ev_id,proposed_kw,corrected_kw,soc_before,soc_after,validated\n";
  const auto& hist = env.member_energy_history();
  const auto& partition = env.partition();
  for (const StepRecord& rec : env.records()) {
    const std::size_t k = static_cast<std::size_t>(rec.slot);
    for (std::size_t a = 0; a < partition.size(); ++a) {
      for (std::size_t idx : partition[a]) {
        const EvMember& m = env.members()[idx];
        const double q = m.q_eff_kwh();
        const double before = q > 0.0 ? hist[idx][k] / q : 0.0;
        const double after = q > 0.0 ? hist[idx][k + 1] / q : 0.0;
        f << rec.slot << "," << a << "," << m.spec.id << ","
          << format_double(rec.member_proposed_kw[idx]) << ","
          << format_double(rec.member_power_kw[idx]) << "," << format_double(before)
          << "," << format_double(after) << ","
          << (rec.agents[a].plan_validated ? 1 : 0) << "\n";
      }
    }
  }
  if (!f) throw IoError("short write: " + path);
}

inline void write_soh_year_csv(const YearResult& yr, const std::string& path) {
  std::ofstream f = detail::open_out(path);
  f << "day,mean_soh,min_soh,max_soh\n";
  for (std::size_t d = 0; d < yr.mean_soh.size(); ++d)
    f << d << "," << format_double(yr.mean_soh[d]) << "," << format_double(yr.min_soh[d])
      << "," << format_double(yr.max_soh[d]) << "\n";
  if (!f) throw IoError("short write: " + path);
}

// One evaluation day plus the one-year aging projection. Pass an out_dir to
// emit the full file set; an empty out_dir computes the report only.
inline EvaluationReport run_evaluation(CmdpEnv env, const DispatchSource& src,
                                       std::uint64_t eval_seed, const std::string& out_dir,
                                       int year_days = 365) {
  EvaluationReport rep;
  rep.strategy = src.is_baseline ? baseline_name(src.kind) : "policy";

  CmdpEnv year_env = env;  // aging projection runs on its own copy
  const BaselinePlan plan = run_day(env, src, eval_seed);
  if (src.is_baseline) {
    rep.baseline_shortfall = plan.shortfall;
    rep.baseline_converged = plan.converged;
  }

  const auto& records = env.records();
  if (records.empty()) throw std::logic_error("run_evaluation: no steps recorded");
  std::vector<double> eva(records.size(), 0.0);
  for (std::size_t k = 0; k < records.size(); ++k) {
    for (const AgentStepRecord& a : records[k].agents) eva[k] += a.p_realized_kw;
    rep.total_load_kw.push_back(records[k].total_realized_kw);
    for (double pm : records[k].member_power_kw)
      if (pm < -1e-9) rep.has_discharge_slots = true;
  }
  rep.eva_kw = eva;
  rep.trailing_day_load_kw = env.trailing_load();
  rep.one_day_load_variance = records.back().sigma2_kw2;
  rep.one_day_ev_cost =
      cost_f2(env.day(), eva, env.config().window_start_hour, env.config().dt_hours);

  const auto& hist = env.member_energy_history();
  for (std::size_t k = 0; k < records.size(); ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < env.members().size(); ++i) {
      const double q = env.members()[i].q_eff_kwh();
      if (q > 0.0) mean += hist[i][k + 1] / q;
    }
    rep.soc_mean.push_back(mean / static_cast<double>(env.members().size()));
  }
  double dep = 0.0;
  for (const EvMember& m : env.members()) {
    const double q = m.q_eff_kwh();
    if (q > 0.0) dep += m.state.energy_kwh / q;
  }
  rep.mean_departure_soc = dep / static_cast<double>(env.members().size());

  // day-scale battery wear for the DSO breakdown: advance a copy one day
  {
    CmdpEnv worn = env;
    std::vector<double> before;
    before.reserve(worn.members().size());
    for (const EvMember& m : worn.members()) before.push_back(m.state.soh.soh_percent);
    worn.advance_day_soh();
    std::vector<double> fractions;
    fractions.reserve(before.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
      const double drop = (before[i] - worn.members()[i].state.soh.soh_percent) / 100.0;
      fractions.push_back(std::clamp(1.0 - drop, 0.0, 1.0));
    }
    const double capacity =
        env.members().empty() ? 0.0 : env.members()[0].spec.capacity_kwh;
    rep.dso_breakdown = dso_decomposition(env.day(), eva, fractions, capacity,
                                          env.config().window_start_hour,
                                          env.config().dt_hours);
  }

  const YearResult yr = simulate_year(year_env, src, eval_seed, year_days);
  rep.one_year_soh = yr.mean_soh.back();

  if (!out_dir.empty()) {
    const std::string base = out_dir.back() == '/' ? out_dir : out_dir + "/";
    {
      std::ofstream f = detail::open_out(base + "report.json");
      f << report_to_json(rep).dump(1) << "\n";
      if (!f) throw IoError("short write: report.json");
    }
    write_load_profile_csv(env, base + "load_profile.csv");
    write_soc_distribution_csv(env, base + "soc_distribution.csv");
    write_ev_power_sop_csv(env, env.partition()[0][0], base + "ev_power_sop.csv");
    write_trajectory_csv(env, base + "trajectory.csv");
    write_allocation_audit_csv(env, base + "allocation_audit.csv");
    write_soh_year_csv(yr, base + "soh_year.csv");
  }
  return rep;
}

}  // namespace v2g
