#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "v2g/allocator.hpp"
#include "v2g/battery.hpp"
#include "v2g/fleet.hpp"
#include "v2g/microgrid.hpp"
#include "v2g/rng.hpp"

namespace v2g {

constexpr int kObsDim = 28;  // 24 load history + energy + variance + tariff + |dE|

struct EnvConfig {
  int horizon_slots = 20;
  double dt_hours = 1.0;
  int window_start_hour = 15;
  double cost_limit = 0.1;
  double reward_beta = 1.0;
  bool reward_beta_auto = true;
  double reward_upsilon = 1.0;
  double deg_cost_per_kwh = 0.15;
  double reward_denom_floor = 0.01;
  double alpha_variance = 0.01;
  double psi_mean_load = 0.1;
  double tie_line_min_kw = 0.0;
  double tie_line_max_kw = 3200.0;
  double stake_fraction = 0.1;
  double age_discount_ref_cycles = 1000.0;
};

// Everything needed to audit one slot after the fact: the action at each
// pipeline stage, which clip stages fired, and the realized outcome.
struct AgentStepRecord {
  double raw_action = 0.0;        // policy output, pre squash-clamp
  double p_scaled_kw = 0.0;       // affine map of clamped action onto power box
  double p_energy_clip_kw = 0.0;  // after per-agent energy-bound clip
  double p_refined_kw = 0.0;      // after per-EV window aggregation clip
  double p_grid_kw = 0.0;         // after collective tie-line clamp
  double p_realized_kw = 0.0;     // what the allocator actually dispatched
  bool energy_violation = false;  // pre-clip energy bound breach
  double reward = 0.0;
  double cost = 0.0;
  double e_sum_before_kwh = 0.0;
  double e_sum_after_kwh = 0.0;
  double residual_kw = 0.0;
  int proposer_ev_id = -1;
  bool plan_validated = false;
};

struct StepRecord {
  int slot = 0;
  int hour = 0;  // absolute hour of the slot start
  double base_net_kw = 0.0;
  double tariff = 0.0;
  double total_preclip_kw = 0.0;
  double total_realized_kw = 0.0;
  double sigma2_kw2 = 0.0;  // trailing-24h variance after this slot's load lands
  bool grid_preclip_violation = false;
  std::vector<AgentStepRecord> agents;
  std::vector<double> member_power_kw;     // flat, in member order
  std::vector<double> member_proposed_kw;  // pre-correction proposal
};

struct StepResult {
  std::vector<std::vector<double>> obs;  // normalized, one row per agent
  std::vector<double> rewards;
  std::vector<double> costs;
  bool done = false;
};

// Constrained multi-agent scheduling environment. Each agent controls one
// aggregator's total setpoint per slot; the pipeline scales, safety-clips,
// refines against per-EV windows, clamps the collective tie-line flow, and
// finally splits the request across member EVs.
class CmdpEnv {
 public:
  CmdpEnv(std::vector<EvSpec> specs, std::vector<std::vector<std::size_t>> partition,
          CellPack pack, OcvCurve ocv, SohParams soh_params,
          SyntheticDayParams day_params, EnvConfig cfg)
      : pack_(pack), ocv_(std::move(ocv)), soh_params_(soh_params),
        day_params_(day_params), cfg_(cfg), partition_(std::move(partition)) {
    if (specs.empty()) throw std::invalid_argument("CmdpEnv: empty fleet");
    if (partition_.empty()) throw std::invalid_argument("CmdpEnv: empty partition");
    members_.reserve(specs.size());
    const SohState init_soh = initial_soh_state(soh_params_);
    for (const EvSpec& s : specs) {
      EvMember m;
      m.spec = s;
      m.state.soh = init_soh;
      m.state.energy_kwh = s.soc_arrival * m.q_eff_kwh();
      members_.push_back(m);
    }
    std::vector<bool> seen(members_.size(), false);
    for (const auto& group : partition_)
      for (std::size_t idx : group) {
        if (idx >= members_.size() || seen[idx])
          throw std::invalid_argument("CmdpEnv: bad partition");
        seen[idx] = true;
      }
  }

  // Fixed-day constructor (profile loaded from file); the day never resamples.
  void set_fixed_day(const GridDay& day) {
    fixed_day_ = day;
    has_fixed_day_ = true;
  }

  int n_agents() const { return static_cast<int>(partition_.size()); }
  int horizon() const { return cfg_.horizon_slots; }
  int slot() const { return slot_; }
  const GridDay& day() const { return day_; }
  const EnvConfig& config() const { return cfg_; }
  const CellPack& pack() const { return pack_; }
  const OcvCurve& ocv() const { return ocv_; }
  const std::vector<EvMember>& members() const { return members_; }
  std::vector<EvMember>& members_mutable() { return members_; }
  const std::vector<std::vector<std::size_t>>& partition() const { return partition_; }
  const FleetEnvelope& envelope(int agent) const { return envelopes_.at(agent); }
  const std::vector<StepRecord>& records() const { return records_; }
  const std::vector<std::vector<double>>& member_energy_history() const {
    return energy_history_;
  }
  double beta_eff(int agent) const { return beta_eff_.at(agent); }
  const std::vector<double>& trailing_load() const { return load_hist_; }

  std::vector<std::vector<double>> reset(std::uint64_t episode_seed) {
    rng_ = Rng(mix_seed(episode_seed, 0xe417));
    day_ = has_fixed_day_ ? fixed_day_ : synthetic_day(day_params_, mix_seed(episode_seed, 0xda7));
    slot_ = 0;
    records_.clear();
    for (EvMember& m : members_) {
      m.state.departed = false;
      m.state.energy_kwh = m.spec.soc_arrival * m.q_eff_kwh();
    }
    envelopes_.clear();
    for (const auto& group : partition_) {
      std::vector<EvMember> sub;
      sub.reserve(group.size());
      for (std::size_t idx : group) sub.push_back(members_[idx]);
      envelopes_.push_back(
          build_envelope(sub, cfg_.window_start_hour, cfg_.horizon_slots, cfg_.dt_hours));
    }

    // realized-load ring: 24 hours ending just before the window, seeded with
    // the day's own base-net profile so early-slot variance is meaningful
    load_hist_.assign(24, 0.0);
    for (int i = 0; i < 24; ++i)
      load_hist_[i] = day_.net_base_at(cfg_.window_start_hour - 24 + i);

    energy_history_.assign(members_.size(), {});
    for (std::size_t i = 0; i < members_.size(); ++i)
      energy_history_[i].push_back(members_[i].state.energy_kwh);

    prev_agent_energy_.assign(partition_.size(), 0.0);
    for (std::size_t a = 0; a < partition_.size(); ++a)
      prev_agent_energy_[a] = agent_energy(a);

    compute_scales_and_beta();
    return observe();
  }

  StepResult step(const std::vector<double>& actions) {
    if (static_cast<int>(actions.size()) != n_agents())
      throw std::invalid_argument("CmdpEnv::step: action count mismatch");
    if (slot_ >= cfg_.horizon_slots)
      throw std::logic_error("CmdpEnv::step: episode already done");

    const int hour = cfg_.window_start_hour + slot_;
    const int n = n_agents();
    StepRecord rec;
    rec.slot = slot_;
    rec.hour = hour;
    rec.base_net_kw = day_.net_base_at(hour);
    rec.tariff = day_.tariff_at(hour);
    rec.agents.resize(n);

    // stage 1: affine map of the clamped action onto the static power box
    std::vector<double> p(n, 0.0);
    for (int a = 0; a < n; ++a) {
      const double u = std::clamp(actions[a], -1.0, 1.0);
      const double lo = envelopes_[a].p_lower_kw[slot_];
      const double hi = envelopes_[a].p_upper_kw[slot_];
      rec.agents[a].raw_action = actions[a];
      p[a] = lo + 0.5 * (u + 1.0) * (hi - lo);
      rec.agents[a].p_scaled_kw = p[a];
      rec.agents[a].e_sum_before_kwh = agent_energy(a);
    }

    // pre-clip audit: these two checks decide the constraint cost
    rec.total_preclip_kw = rec.base_net_kw;
    for (int a = 0; a < n; ++a) rec.total_preclip_kw += p[a];
    rec.grid_preclip_violation = rec.total_preclip_kw > cfg_.tie_line_max_kw + 1e-9 ||
                                 rec.total_preclip_kw < cfg_.tie_line_min_kw - 1e-9;

    // stage 2: per-agent energy-bound clip against the envelope box at the
    // next boundary; a breach here is the per-agent constraint violation
    for (int a = 0; a < n; ++a) {
      const double e = rec.agents[a].e_sum_before_kwh;
      const double eta = fleet_efficiency(a);
      const double lo = (envelopes_[a].e_lower_kwh[slot_] - e) / (eta * cfg_.dt_hours);
      const double hi = (envelopes_[a].e_upper_kwh[slot_] - e) / (eta * cfg_.dt_hours);
      rec.agents[a].energy_violation = p[a] > hi + 1e-9 || p[a] < lo - 1e-9;
      p[a] = std::clamp(p[a], std::min(lo, hi), std::max(lo, hi));
      rec.agents[a].p_energy_clip_kw = p[a];
    }

    // stage 3: tighten to what the member EVs can actually absorb this slot
    std::vector<std::vector<AllocMember>> views(n);
    std::vector<double> agg_lo(n, 0.0), agg_hi(n, 0.0);
    for (int a = 0; a < n; ++a) {
      views[a].reserve(partition_[a].size());
      for (std::size_t idx : partition_[a]) {
        AllocMember am = make_alloc_member(members_[idx], pack_, ocv_, hour, cfg_.dt_hours);
        auto [l, h] = member_power_window(am, cfg_.dt_hours);
        agg_lo[a] += l;
        agg_hi[a] += h;
        views[a].push_back(am);
      }
      p[a] = std::clamp(p[a], agg_lo[a], agg_hi[a]);
      rec.agents[a].p_refined_kw = p[a];
    }

    // stage 4: collective tie-line clamp; per-EV energy floors keep priority,
    // so the reduction never digs below an agent's aggregate floor
    double total = rec.base_net_kw;
    for (int a = 0; a < n; ++a) total += p[a];
    if (total > cfg_.tie_line_max_kw) {
      double need = total - cfg_.tie_line_max_kw;
      double room = 0.0;
      for (int a = 0; a < n; ++a) room += p[a] - agg_lo[a];
      if (room > 0.0) {
        const double f = std::min(1.0, need / room);
        for (int a = 0; a < n; ++a) p[a] -= f * (p[a] - agg_lo[a]);
      }
    } else if (total < cfg_.tie_line_min_kw) {
      double need = cfg_.tie_line_min_kw - total;
      double room = 0.0;
      for (int a = 0; a < n; ++a) room += agg_hi[a] - p[a];
      if (room > 0.0) {
        const double f = std::min(1.0, need / room);
        for (int a = 0; a < n; ++a) p[a] += f * (agg_hi[a] - p[a]);
      }
    }
    for (int a = 0; a < n; ++a) rec.agents[a].p_grid_kw = p[a];

    // stage 5: stake-weighted proposer, headroom split, feasibility correction
    rec.member_power_kw.assign(members_.size(), 0.0);
    rec.member_proposed_kw.assign(members_.size(), 0.0);
    for (int a = 0; a < n; ++a) {
      std::vector<Stake> stakes;
      stakes.reserve(views[a].size());
      for (std::size_t j = 0; j < views[a].size(); ++j) {
        const EvMember& m = members_[partition_[a][j]];
        stakes.push_back({m.spec.id, cfg_.stake_fraction * std::max(0.0, m.state.energy_kwh),
                          m.state.soh.equivalent_full_cycles});
      }
      const std::size_t prop = select_proposer(stakes, rng_, cfg_.age_discount_ref_cycles);
      rec.agents[a].proposer_ev_id = stakes[prop].ev_id;
      AllocationPlan plan = propose_allocation(views[a], p[a]);
      plan.proposer_index = static_cast<int>(prop);
      for (std::size_t j = 0; j < views[a].size(); ++j)
        rec.member_proposed_kw[partition_[a][j]] = plan.power_kw[j];
      plan = safety_correct(views[a], plan, cfg_.dt_hours);
      rec.agents[a].plan_validated = validate_plan(views[a], plan, cfg_.dt_hours);
      double realized = 0.0;
      for (std::size_t j = 0; j < views[a].size(); ++j) {
        const std::size_t idx = partition_[a][j];
        rec.member_power_kw[idx] = plan.power_kw[j];
        members_[idx].state.energy_kwh = soc_step(
            members_[idx].state.energy_kwh, plan.power_kw[j], cfg_.dt_hours,
            members_[idx].spec.efficiency);
        realized += plan.power_kw[j];
      }
      rec.agents[a].p_realized_kw = realized;
      rec.agents[a].residual_kw = plan.residual_kw;
      rec.agents[a].e_sum_after_kwh = agent_energy(a);
    }

    // departures freeze at the end of the slot they leave in
    const int boundary = hour + 1;
    for (EvMember& m : members_)
      if (!m.state.departed && boundary >= m.spec.depart_hour_abs) m.state.departed = true;
    for (std::size_t i = 0; i < members_.size(); ++i)
      energy_history_[i].push_back(members_[i].state.energy_kwh);

    // realized total load enters the trailing window used for variance
    rec.total_realized_kw = rec.base_net_kw;
    for (int a = 0; a < n; ++a) rec.total_realized_kw += rec.agents[a].p_realized_kw;
    load_hist_.erase(load_hist_.begin());
    load_hist_.push_back(rec.total_realized_kw);

    const double var_k = load_variance(load_hist_);
    rec.sigma2_kw2 = var_k;
    double eva_total = 0.0;
    for (int a = 0; a < n; ++a) eva_total += rec.agents[a].p_realized_kw;
    const double p_load = -day_.pv_kw[static_cast<std::size_t>(((hour % 24) + 24) % 24)] -
                          day_.wind_kw[static_cast<std::size_t>(((hour % 24) + 24) % 24)] +
                          eva_total;

    StepResult out;
    out.rewards.assign(n, 0.0);
    out.costs.assign(n, 0.0);
    for (int a = 0; a < n; ++a) {
      double deg = 0.0;
      for (std::size_t idx : partition_[a])
        deg += members_[idx].spec.efficiency * std::abs(rec.member_power_kw[idx]) *
               cfg_.dt_hours;
      const double denom = cfg_.alpha_variance * var_k + cfg_.psi_mean_load * p_load +
                           cfg_.reward_upsilon * rec.tariff *
                               rec.agents[a].p_realized_kw * cfg_.dt_hours +
                           cfg_.deg_cost_per_kwh * deg + beta_eff_[a];
      rec.agents[a].reward = 1.0 / std::max(denom, cfg_.reward_denom_floor);
      const bool violated = rec.agents[a].energy_violation || rec.grid_preclip_violation;
      rec.agents[a].cost = violated ? 1.0 : 0.0;
      out.rewards[a] = rec.agents[a].reward;
      out.costs[a] = rec.agents[a].cost;
    }

    records_.push_back(rec);
    slot_ += 1;
    out.done = slot_ >= cfg_.horizon_slots;
    out.obs = observe();
    for (std::size_t a = 0; a < partition_.size(); ++a)
      prev_agent_energy_[a] = agent_energy(a);
    return out;
  }

  // Raw (unnormalized) feature rows, one per agent.
  std::vector<std::vector<double>> observe_raw() const {
    std::vector<std::vector<double>> rows;
    rows.reserve(partition_.size());
    const int hour = cfg_.window_start_hour + std::min(slot_, cfg_.horizon_slots - 1);
    const double var_k = load_variance(load_hist_);
    for (std::size_t a = 0; a < partition_.size(); ++a) {
      std::vector<double> f;
      f.reserve(kObsDim);
      f.insert(f.end(), load_hist_.begin(), load_hist_.end());
      const double e = agent_energy(a);
      f.push_back(e);
      f.push_back(var_k);
      f.push_back(day_.tariff_at(hour));
      f.push_back(std::abs(e - prev_agent_energy_[a]));
      rows.push_back(std::move(f));
    }
    return rows;
  }

  std::vector<std::vector<double>> observe() const {
    std::vector<std::vector<double>> rows = observe_raw();
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (int i = 0; i < 24; ++i) rows[a][i] /= load_scale_;
      rows[a][24] /= energy_scale_[a];
      rows[a][25] /= load_scale_ * load_scale_;
      rows[a][26] /= tariff_scale_;
      rows[a][27] /= energy_scale_[a];
    }
    return rows;
  }

  double agent_energy(std::size_t a) const {
    double e = 0.0;
    for (std::size_t idx : partition_[a]) e += members_[idx].state.energy_kwh;
    return e;
  }

  // End-of-day battery bookkeeping: count half-cycles on each EV's realized
  // SOC series and push the aging recursion one day forward.
  void advance_day_soh() {
    for (std::size_t i = 0; i < members_.size(); ++i) {
      EvMember& m = members_[i];
      const double q = m.q_eff_kwh();
      if (q <= 0.0) continue;
      const std::vector<double>& es = energy_history_[i];
      if (es.size() < 2) continue;
      std::vector<double> soc(es.size());
      for (std::size_t k = 0; k < es.size(); ++k) soc[k] = std::clamp(es[k] / q, 0.0, 1.0);
      // sample k carries the current of the transition it starts; the final
      // sample has no outgoing transition and stays neutral
      std::vector<double> current(es.size(), 0.0);
      for (std::size_t k = 0; k + 1 < es.size(); ++k) {
        const double p_kw = (es[k + 1] - es[k]) / (m.spec.efficiency * cfg_.dt_hours);
        const double amps = branch_current_from_power(pack_, std::abs(p_kw));
        current[k] = (p_kw >= 0.0) ? amps : -amps;
      }
      const std::vector<HalfCycle> hc = count_half_cycles(soc, current, soh_params_.dod_floor_pct);
      double avg = 0.0, lo = soc[0], hi = soc[0];
      for (double s : soc) {
        avg += s;
        lo = std::min(lo, s);
        hi = std::max(hi, s);
      }
      avg /= static_cast<double>(soc.size());
      m.state.soh = soh_advance(m.state.soh, soh_params_, hc, avg, hi - lo);
    }
  }

 private:
  double fleet_efficiency(int agent) const {
    // single fleet-wide efficiency; specs all carry the same value
    return members_[partition_[static_cast<std::size_t>(agent)][0]].spec.efficiency;
  }

  void compute_scales_and_beta() {
    double renew_max = 0.0, tariff_max = 0.0;
    for (int h = 0; h < 24; ++h) {
      renew_max = std::max(renew_max, day_.pv_kw[static_cast<std::size_t>(h)] +
                                          day_.wind_kw[static_cast<std::size_t>(h)]);
      tariff_max = std::max(tariff_max, day_.tariff[static_cast<std::size_t>(h)]);
    }
    double dis_all = 0.0;
    for (const EvMember& m : members_) dis_all += std::abs(m.spec.p_discharge_max_kw);
    load_scale_ = std::max(1.0, cfg_.tie_line_max_kw);
    tariff_scale_ = std::max(1e-9, tariff_max);
    energy_scale_.assign(partition_.size(), 1.0);
    beta_eff_.assign(partition_.size(), cfg_.reward_beta);
    for (std::size_t a = 0; a < partition_.size(); ++a) {
      double cap = 0.0, dis_own = 0.0;
      for (std::size_t idx : partition_[a]) {
        cap += members_[idx].q_eff_kwh();
        dis_own += std::abs(members_[idx].spec.p_discharge_max_kw);
      }
      energy_scale_[a] = std::max(1.0, cap);
      if (cfg_.reward_beta_auto) {
        // offset large enough that the denominator stays positive whatever
        // the fleet discharges and whatever the renewables produce
        beta_eff_[a] = cfg_.reward_beta +
                       cfg_.reward_upsilon * tariff_max * cfg_.dt_hours * dis_own +
                       cfg_.psi_mean_load * (renew_max + dis_all);
      }
    }
  }

  CellPack pack_;
  OcvCurve ocv_;
  SohParams soh_params_;
  SyntheticDayParams day_params_;
  EnvConfig cfg_;
  std::vector<std::vector<std::size_t>> partition_;
  std::vector<EvMember> members_;
  std::vector<FleetEnvelope> envelopes_;
  GridDay day_;
  GridDay fixed_day_;
  bool has_fixed_day_ = false;
  Rng rng_{0};
  int slot_ = 0;
  std::vector<double> load_hist_;
  std::vector<double> prev_agent_energy_;
  std::vector<std::vector<double>> energy_history_;
  std::vector<StepRecord> records_;
  double load_scale_ = 1.0;
  double tariff_scale_ = 1.0;
  std::vector<double> energy_scale_;
  std::vector<double> beta_eff_;
};

}  // namespace v2g
