#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "v2g/battery.hpp"
#include "v2g/fleet.hpp"
#include "v2g/rng.hpp"

namespace v2g {

struct Stake {
  int ev_id = 0;
  double locked_kwh = 0.0;
  double cycles_w = 0.0;
};

// Stake-weighted draw, discounted by battery age so heavily cycled packs
// propose less often. All-zero weights fall back to uniform.
inline std::size_t select_proposer(const std::vector<Stake>& stakes, Rng& rng,
                                   double age_ref_cycles = 1000.0) {
  if (stakes.empty()) throw std::invalid_argument("select_proposer: no stakes");
  std::vector<double> weights;
  weights.reserve(stakes.size());
  for (const Stake& s : stakes) {
    if (s.locked_kwh < 0.0) throw std::invalid_argument("select_proposer: negative stake");
    weights.push_back(s.locked_kwh / (1.0 + std::max(0.0, s.cycles_w) / age_ref_cycles));
  }
  return rng.weighted_index(weights);
}

// One EV's feasible window for a single slot, with every binding limit merged
// in: spec power, state-of-power, and the energy band at the next boundary
// (which may force a minimum charge toward the departure floor).
struct AllocMember {
  int ev_id = 0;
  double energy_kwh = 0.0;
  double e_lo_next_kwh = 0.0;
  double e_hi_next_kwh = 0.0;
  double p_lo_kw = 0.0;
  double p_hi_kw = 0.0;
  double efficiency = 0.95;
};

// Feasible [lo, hi] power window; collapses to a point if the constraints
// cross (floor priority: the energy floor wins over the power cap).
inline std::pair<double, double> member_power_window(const AllocMember& m,
                                                     double dt_hours) {
  double lo = std::max(m.p_lo_kw, (m.e_lo_next_kwh - m.energy_kwh) / (m.efficiency * dt_hours));
  double hi = std::min(m.p_hi_kw, (m.e_hi_next_kwh - m.energy_kwh) / (m.efficiency * dt_hours));
  if (lo > hi) {
    const double mid = (m.e_lo_next_kwh > m.energy_kwh) ? hi : lo;
    // keep a degenerate window at the reachable edge
    lo = hi = mid;
  }
  return {lo, hi};
}

// Normalized energy-headroom shares for splitting an EVA request: charging
// splits by room to the ceiling, discharging by room above the floor.
inline std::vector<double> energy_weights(const std::vector<AllocMember>& members,
                                          bool charging) {
  std::vector<double> w(members.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const AllocMember& m = members[i];
    const double room = charging ? (m.e_hi_next_kwh - m.energy_kwh)
                                 : (m.energy_kwh - m.e_lo_next_kwh);
    w[i] = std::max(0.0, room);
    total += w[i];
  }
  if (total > 0.0)
    for (double& x : w) x /= total;
  return w;
}

struct AllocationPlan {
  int proposer_index = -1;
  double requested_kw = 0.0;
  std::vector<int> ev_ids;
  std::vector<double> power_kw;
  double residual_kw = 0.0;
  bool corrected = false;
};

// Headroom-proportional split of the request; no feasibility clipping yet.
inline AllocationPlan propose_allocation(const std::vector<AllocMember>& members,
                                         double request_kw) {
  AllocationPlan plan;
  plan.requested_kw = request_kw;
  plan.ev_ids.reserve(members.size());
  for (const AllocMember& m : members) plan.ev_ids.push_back(m.ev_id);
  const std::vector<double> w = energy_weights(members, request_kw >= 0.0);
  plan.power_kw.assign(members.size(), 0.0);
  double assigned = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    plan.power_kw[i] = request_kw * w[i];
    assigned += plan.power_kw[i];
  }
  plan.residual_kw = request_kw - assigned;
  return plan;
}

// Clips every share into its member's feasible window and water-fills the
// surplus across members that still have room, staying sign-consistent with
// the request (mandatory floor charging excepted). Conservation is exact:
// sum(power) + residual == request.
inline AllocationPlan safety_correct(const std::vector<AllocMember>& members,
                                     const AllocationPlan& proposal,
                                     double dt_hours) {
  if (members.size() != proposal.power_kw.size())
    throw std::invalid_argument("safety_correct: member/plan size mismatch");
  AllocationPlan plan = proposal;
  const double request = plan.requested_kw;
  const std::size_t n = members.size();

  std::vector<double> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [l, h] = member_power_window(members[i], dt_hours);
    const double mandatory = std::clamp(0.0, l, h);
    if (request >= 0.0) { lo[i] = mandatory; hi[i] = h; }
    else { lo[i] = l; hi[i] = mandatory; }
  }

  bool changed = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double clipped = std::clamp(plan.power_kw[i], lo[i], hi[i]);
    if (clipped != plan.power_kw[i]) changed = true;
    plan.power_kw[i] = clipped;
  }

  const double scale = std::max(1.0, std::abs(request));
  for (int round = 0; round < 64; ++round) {
    double assigned = 0.0;
    for (double p : plan.power_kw) assigned += p;
    const double remaining = request - assigned;
    if (std::abs(remaining) <= 1e-13 * scale) break;
    double room_total = 0.0;
    std::vector<double> room(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      room[i] = (remaining > 0.0) ? hi[i] - plan.power_kw[i] : plan.power_kw[i] - lo[i];
      if (room[i] < 0.0) room[i] = 0.0;
      room_total += room[i];
    }
    if (room_total <= 0.0) break;
    for (std::size_t i = 0; i < n; ++i) {
      if (room[i] <= 0.0) continue;
      const double share = remaining * room[i] / room_total;
      const double next = std::clamp(plan.power_kw[i] + share, lo[i], hi[i]);
      if (next != plan.power_kw[i]) changed = true;
      plan.power_kw[i] = next;
    }
  }

  double assigned = 0.0;
  for (double p : plan.power_kw) assigned += p;
  plan.residual_kw = request - assigned;
  plan.corrected = changed;
  return plan;
}

// The deterministic per-member feasibility check; validation is unanimous
// because every member runs exactly this.
inline bool member_validate(const std::vector<AllocMember>& members,
                            const AllocationPlan& plan, double dt_hours,
                            double tol = 1e-9) {
  if (members.size() != plan.power_kw.size()) return false;
  double assigned = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const AllocMember& m = members[i];
    const double p = plan.power_kw[i];
    auto [l, h] = member_power_window(m, dt_hours);
    if (p < l - tol || p > h + tol) return false;
    const double e_next = soc_step(m.energy_kwh, p, dt_hours, m.efficiency);
    if (e_next < m.e_lo_next_kwh - tol || e_next > m.e_hi_next_kwh + tol) return false;
    assigned += p;
  }
  return std::abs(assigned + plan.residual_kw - plan.requested_kw) <= tol;
}

inline bool validate_plan(const std::vector<AllocMember>& members,
                          const AllocationPlan& plan, double dt_hours,
                          double tol = 1e-9) {
  for (std::size_t voter = 0; voter < std::max<std::size_t>(members.size(), 1); ++voter)
    if (!member_validate(members, plan, dt_hours, tol)) return false;
  return true;
}

struct SettlementEntry {
  int ev_id = 0;
  double energy_cost = 0.0;       // tariff * power * dt, signed
  double degradation_cost = 0.0;  // throughput-proportional share
  double slash_kwh = 0.0;
};

// Per-EV ledger for one slot: signed energy cost at the posted tariff, a
// throughput-proportional share of the degradation cost, and a stake slash
// for flagged members.
inline std::vector<SettlementEntry> settle_rewards(
    const AllocationPlan& plan, double tariff, double dt_hours,
    double degradation_cost_total, const std::vector<Stake>& stakes,
    const std::vector<bool>& slashed, double slash_fraction = 0.05) {
  if (!slashed.empty() && slashed.size() != plan.power_kw.size())
    throw std::invalid_argument("settle_rewards: slash flag size mismatch");
  if (!stakes.empty() && stakes.size() != plan.power_kw.size())
    throw std::invalid_argument("settle_rewards: stake size mismatch");
  double throughput = 0.0;
  for (double p : plan.power_kw) throughput += std::abs(p);
  std::vector<SettlementEntry> ledger;
  ledger.reserve(plan.power_kw.size());
  for (std::size_t i = 0; i < plan.power_kw.size(); ++i) {
    SettlementEntry e;
    e.ev_id = plan.ev_ids[i];
    e.energy_cost = tariff * plan.power_kw[i] * dt_hours;
    e.degradation_cost = (throughput > 0.0)
                             ? degradation_cost_total * std::abs(plan.power_kw[i]) / throughput
                             : 0.0;
    if (!slashed.empty() && slashed[i] && !stakes.empty())
      e.slash_kwh = slash_fraction * stakes[i].locked_kwh;
    ledger.push_back(e);
  }
  return ledger;
}

// Builds the merged per-slot window for one EV from its battery state.
inline AllocMember make_alloc_member(const EvMember& m, const CellPack& pack,
                                     const OcvCurve& ocv, int slot_hour,
                                     double dt_hours) {
  AllocMember a;
  a.ev_id = m.spec.id;
  a.energy_kwh = m.state.energy_kwh;
  a.efficiency = m.spec.efficiency;
  const EnergyBand band = ev_energy_band(m, slot_hour + 1, dt_hours);
  a.e_lo_next_kwh = band.lo;
  a.e_hi_next_kwh = band.hi;
  const double q = m.q_eff_kwh();
  const double soc = (q > 0.0) ? std::clamp(m.state.energy_kwh / q, 0.0, 1.0) : 0.0;
  const PowerLimits sop =
      sop_power_limits(pack, ocv, soc, m.spec.soc_min, m.spec.soc_max, 1, dt_hours);
  a.p_lo_kw = std::max(m.spec.p_discharge_max_kw, sop.p_discharge_max_kw);
  a.p_hi_kw = std::min(m.spec.p_charge_max_kw, sop.p_charge_max_kw);
  return a;
}

}  // namespace v2g
