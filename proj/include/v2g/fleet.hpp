#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2g/battery.hpp"
#include "v2g/csv.hpp"
#include "v2g/rng.hpp"

namespace v2g {

// Hours are absolute across the scheduling window: arrivals land on day 0
// (15..21), departures on day 1 and are stored as hour + 24 (30..34).
struct EvSpec {
  int id = 0;
  int arrival_hour = 18;
  int depart_hour_abs = 32;
  double soc_arrival = 0.5;
  double p_charge_max_kw = 6.0;
  double p_discharge_max_kw = -6.0;
  double capacity_kwh = 24.0;
  double soc_min = 0.2;
  double soc_max = 0.9;
  double soc_depart_low = 0.8;
  double soc_depart_high = 0.9;
  double efficiency = 0.95;
};

struct EvState {
  double energy_kwh = 0.0;
  bool departed = false;
  SohState soh;
};

struct EvMember {
  EvSpec spec;
  EvState state;

  double q_eff_kwh() const {
    return spec.capacity_kwh * state.soh.soh_percent / 100.0;
  }
};

struct FleetParams {
  int count = 509;
  double arrival_mean_hour = 18.0, arrival_std_hours = 1.0;
  double arrival_min_hour = 15.0, arrival_max_hour = 21.0;
  double depart_mean_hour = 8.0, depart_std_hours = 1.0;
  double depart_min_hour = 6.0, depart_max_hour = 10.0;
  double soc_arrival_mean = 0.5, soc_arrival_std = 0.1;
  double soc_arrival_min = 0.2, soc_arrival_max = 0.8;
  double p_charge_max_kw = 6.0;
  double p_discharge_max_kw = -6.0;
  double capacity_kwh = 24.0;
  double soc_min = 0.2, soc_max = 0.9;
  double soc_depart_low = 0.8, soc_depart_high = 0.9;
  double efficiency = 0.95;
};

// Deterministic per seed: one stream, fixed draw order (arrival, departure,
// SOC) per EV. Plug-in times round to whole hours.
inline std::vector<EvSpec> sample_fleet(const FleetParams& p, std::uint64_t seed) {
  if (p.count < 0) throw std::invalid_argument("sample_fleet: negative count");
  Rng rng(mix_seed(seed, 0xf1ee7ULL));
  std::vector<EvSpec> fleet;
  fleet.reserve(static_cast<std::size_t>(p.count));
  for (int i = 0; i < p.count; ++i) {
    EvSpec ev;
    ev.id = i;
    ev.arrival_hour = static_cast<int>(std::lround(rng.normal_clipped(
        p.arrival_mean_hour, p.arrival_std_hours, p.arrival_min_hour, p.arrival_max_hour)));
    ev.depart_hour_abs = 24 + static_cast<int>(std::lround(rng.normal_clipped(
        p.depart_mean_hour, p.depart_std_hours, p.depart_min_hour, p.depart_max_hour)));
    ev.soc_arrival = rng.normal_clipped(p.soc_arrival_mean, p.soc_arrival_std,
                                        p.soc_arrival_min, p.soc_arrival_max);
    ev.p_charge_max_kw = p.p_charge_max_kw;
    ev.p_discharge_max_kw = p.p_discharge_max_kw;
    ev.capacity_kwh = p.capacity_kwh;
    ev.soc_min = p.soc_min;
    ev.soc_max = p.soc_max;
    ev.soc_depart_low = p.soc_depart_low;
    ev.soc_depart_high = p.soc_depart_high;
    ev.efficiency = p.efficiency;
    fleet.push_back(ev);
  }
  return fleet;
}

// Near-equal random partition: shuffled ids dealt round-robin, so the first
// (count mod n_agents) aggregators hold one extra EV.
inline std::vector<std::vector<int>> partition_evas(int count, int n_agents,
                                                    std::uint64_t seed) {
  if (n_agents <= 0) throw std::invalid_argument("partition_evas: n_agents < 1");
  if (count < 0) throw std::invalid_argument("partition_evas: negative count");
  if (count < n_agents)
    throw std::invalid_argument("partition_evas: more aggregators than vehicles");
  std::vector<int> ids(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) ids[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(seed, 0x9a57ULL));
  rng.shuffle(ids);
  std::vector<std::vector<int>> parts(static_cast<std::size_t>(n_agents));
  for (std::size_t i = 0; i < ids.size(); ++i)
    parts[i % static_cast<std::size_t>(n_agents)].push_back(ids[i]);
  return parts;
}

// Per-EV energy band at a boundary hour. Before arrival the EV is frozen at
// its arrival energy; while plugged the band is the SOC window tightened from
// behind by the departure requirement (charge-by-deadline floor); after
// departure it is the realized energy if known, else the admissible
// departure band.
struct EnergyBand {
  double lo = 0.0;
  double hi = 0.0;
};

inline EnergyBand ev_energy_band(const EvMember& m, int boundary_hour, double dt_hours) {
  const EvSpec& s = m.spec;
  const double q = m.q_eff_kwh();
  const double e_arrival = s.soc_arrival * q;
  const double floor_dep = s.soc_depart_low * q;
  if (boundary_hour <= s.arrival_hour) return {e_arrival, e_arrival};
  if (boundary_hour > s.depart_hour_abs || m.state.departed) {
    if (m.state.departed) return {m.state.energy_kwh, m.state.energy_kwh};
    return {std::max(s.soc_min * q, floor_dep), s.soc_max * q};
  }
  const double slots_left = static_cast<double>(s.depart_hour_abs - boundary_hour);
  double lo = floor_dep - s.efficiency * s.p_charge_max_kw * dt_hours * slots_left;
  lo = std::max(lo, s.soc_min * q);
  const double hi = s.soc_max * q;
  // an unreachable requirement collapses onto the ceiling rather than
  // inverting the band
  return {std::min(lo, hi), hi};
}

inline bool ev_plugged_during(const EvSpec& s, int slot_hour) {
  return slot_hour >= s.arrival_hour && slot_hour < s.depart_hour_abs;
}

// Aggregate feasible region over the window. Array index k refers to slot k
// (absolute hour start_hour + k); energy bounds apply to the EVA energy at the
// END of slot k, power bounds to the power during slot k. e_initial_kwh is the
// aggregate energy at the window start.
struct FleetEnvelope {
  int start_hour = 15;
  double dt_hours = 1.0;
  double e_initial_kwh = 0.0;
  std::vector<double> e_lower_kwh;
  std::vector<double> e_upper_kwh;
  std::vector<double> p_lower_kw;
  std::vector<double> p_upper_kw;

  std::size_t horizon() const { return e_lower_kwh.size(); }
};

inline FleetEnvelope build_envelope(const std::vector<EvMember>& members,
                                    int start_hour, int horizon_slots,
                                    double dt_hours) {
  if (horizon_slots < 0) throw std::invalid_argument("build_envelope: negative horizon");
  FleetEnvelope env;
  env.start_hour = start_hour;
  env.dt_hours = dt_hours;
  env.e_lower_kwh.assign(static_cast<std::size_t>(horizon_slots), 0.0);
  env.e_upper_kwh.assign(static_cast<std::size_t>(horizon_slots), 0.0);
  env.p_lower_kw.assign(static_cast<std::size_t>(horizon_slots), 0.0);
  env.p_upper_kw.assign(static_cast<std::size_t>(horizon_slots), 0.0);
  for (const EvMember& m : members) env.e_initial_kwh += m.state.energy_kwh;
  for (int k = 0; k < horizon_slots; ++k) {
    const int hour = start_hour + k;
    for (const EvMember& m : members) {
      const EnergyBand band = ev_energy_band(m, hour + 1, dt_hours);
      env.e_lower_kwh[static_cast<std::size_t>(k)] += band.lo;
      env.e_upper_kwh[static_cast<std::size_t>(k)] += band.hi;
      if (!m.state.departed && ev_plugged_during(m.spec, hour)) {
        env.p_lower_kw[static_cast<std::size_t>(k)] += m.spec.p_discharge_max_kw;
        env.p_upper_kw[static_cast<std::size_t>(k)] += m.spec.p_charge_max_kw;
      }
    }
  }
  return env;
}

// Pairwise second-order admission test on an EVA energy trajectory.
// energy_traj[k] is the EVA energy at the end of slot k; the window start
// value is taken from the envelope. Power sums bound energy moves without the
// charging-efficiency contraction, which keeps the region an outer bound.
inline bool envelope_admits(const FleetEnvelope& env,
                            const std::vector<double>& energy_traj,
                            double dt_hours, double tol = 1e-9) {
  const std::size_t t = energy_traj.size();
  if (t > env.horizon())
    throw std::invalid_argument("envelope_admits: trajectory longer than envelope");
  auto e_lo = [&](long k) { return k < 0 ? env.e_initial_kwh : env.e_lower_kwh[static_cast<std::size_t>(k)]; };
  auto e_hi = [&](long k) { return k < 0 ? env.e_initial_kwh : env.e_upper_kwh[static_cast<std::size_t>(k)]; };
  auto e_at = [&](long k) { return k < 0 ? env.e_initial_kwh : energy_traj[static_cast<std::size_t>(k)]; };
  for (long k = 0; k < static_cast<long>(t); ++k) {
    if (e_at(k) < e_lo(k) - tol || e_at(k) > e_hi(k) + tol) return false;
  }
  for (long k2 = -1; k2 < static_cast<long>(t); ++k2) {
    double p_lo_sum = 0.0, p_hi_sum = 0.0;
    for (long k1 = k2 + 1; k1 < static_cast<long>(t); ++k1) {
      p_lo_sum += env.p_lower_kw[static_cast<std::size_t>(k1)] * dt_hours;
      p_hi_sum += env.p_upper_kw[static_cast<std::size_t>(k1)] * dt_hours;
      const double diff = e_at(k1) - e_at(k2);
      const double lo = std::max(e_lo(k1) - e_hi(k2), p_lo_sum);
      const double hi = std::min(e_hi(k1) - e_lo(k2), p_hi_sum);
      if (diff < lo - tol || diff > hi + tol) return false;
    }
  }
  return true;
}

inline const std::vector<std::string>& fleet_csv_header() {
  static const std::vector<std::string> h = {
      "id", "arrival_hour", "depart_hour_abs", "soc_arrival", "p_charge_max_kw",
      "p_discharge_max_kw", "capacity_kwh", "soc_min", "soc_max",
      "soc_depart_low", "soc_depart_high", "efficiency"};
  return h;
}

inline void write_fleet_csv(const std::string& path, const std::vector<EvSpec>& fleet) {
  CsvWriter w(path, fleet_csv_header());
  for (const EvSpec& ev : fleet) {
    w.write({static_cast<double>(ev.id), static_cast<double>(ev.arrival_hour),
             static_cast<double>(ev.depart_hour_abs), ev.soc_arrival,
             ev.p_charge_max_kw, ev.p_discharge_max_kw, ev.capacity_kwh,
             ev.soc_min, ev.soc_max, ev.soc_depart_low, ev.soc_depart_high,
             ev.efficiency});
  }
  w.close();
}

inline std::vector<EvSpec> read_fleet_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  if (t.header != fleet_csv_header()) throw IoError("fleet csv: bad header in " + path);
  std::vector<EvSpec> fleet;
  for (const auto& row : t.rows) {
    EvSpec ev;
    ev.id = static_cast<int>(parse_double(row[0]));
    ev.arrival_hour = static_cast<int>(parse_double(row[1]));
    ev.depart_hour_abs = static_cast<int>(parse_double(row[2]));
    ev.soc_arrival = parse_double(row[3]);
    ev.p_charge_max_kw = parse_double(row[4]);
    ev.p_discharge_max_kw = parse_double(row[5]);
    ev.capacity_kwh = parse_double(row[6]);
    ev.soc_min = parse_double(row[7]);
    ev.soc_max = parse_double(row[8]);
    ev.soc_depart_low = parse_double(row[9]);
    ev.soc_depart_high = parse_double(row[10]);
    ev.efficiency = parse_double(row[11]);
    fleet.push_back(ev);
  }
  return fleet;
}

}  // namespace v2g
