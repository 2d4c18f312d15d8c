#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "v2g/config.hpp"

namespace v2g {

// Piecewise-linear open-circuit voltage over SOC in [0,1].
class OcvCurve {
 public:
  explicit OcvCurve(OcvCurvePoints points) : pts_(std::move(points)) {
    if (pts_.size() < 2) throw std::invalid_argument("ocv curve needs >= 2 points");
    for (std::size_t i = 1; i < pts_.size(); ++i) {
      if (pts_[i].first <= pts_[i - 1].first)
        throw std::invalid_argument("ocv curve soc must be strictly increasing");
      if (pts_[i].second < pts_[i - 1].second)
        throw std::invalid_argument("ocv curve voltage must be non-decreasing");
    }
  }

  static OcvCurve default_curve() { return OcvCurve(detail::default_ocv_points()); }

  double voltage(double soc) const {
    const auto& p = pts_;
    if (soc <= p.front().first) return p.front().second;
    if (soc >= p.back().first) return p.back().second;
    std::size_t i = segment(soc);
    const double t = (soc - p[i].first) / (p[i + 1].first - p[i].first);
    return p[i].second + t * (p[i + 1].second - p[i].second);
  }

  // Slope of the containing segment; clamped to the end segments outside [0,1].
  double slope(double soc) const {
    const auto& p = pts_;
    std::size_t i;
    if (soc <= p.front().first) {
      i = 0;
    } else if (soc >= p.back().first) {
      i = p.size() - 2;
    } else {
      i = segment(soc);
    }
    return (p[i + 1].second - p[i].second) / (p[i + 1].first - p[i].first);
  }

 private:
  std::size_t segment(double soc) const {
    std::size_t lo = 0, hi = pts_.size() - 1;
    while (hi - lo > 1) {
      std::size_t mid = (lo + hi) / 2;
      if (pts_[mid].first <= soc) lo = mid; else hi = mid;
    }
    return lo;
  }

  OcvCurvePoints pts_;
};

struct CellPack {
  int series_count = 39;
  int parallel_count = 4;
  double cell_voltage_v = 3.3;
  double cell_capacity_ah = 2.3;
  double internal_resistance_ohm = 0.01;
  double design_current_charge_a = 6.9;     // per branch
  double design_current_discharge_a = 6.9;  // per branch
  double u_min_v = 2.8;
  double u_max_v = 3.65;
  double capacity_scale = 0.0;  // 0 = derive so the vehicle holds capacity_kwh
  double capacity_kwh = 24.0;

  double pack_capacity_ah() const { return cell_capacity_ah * parallel_count; }
  double pack_voltage_v() const { return cell_voltage_v * series_count; }

  double scale() const {
    if (capacity_scale > 0.0) return capacity_scale;
    const double pack_kwh =
        pack_voltage_v() * parallel_count * cell_capacity_ah / 1000.0;
    return capacity_kwh / pack_kwh;
  }
};

struct SohParams {
  double m1_cycles = 1500.0;     // reference cycle count per aging-factor unit
  double cycle_life_h = 1500.0;  // cycle life scale at full DOD and unit currents
  double kappa_dod = 0.5;
  double gamma_discharge = 0.2;
  double gamma_charge = 0.2;
  double soc_avg_ref = 0.5;
  double delta_soc_ref = 0.6;
  double dod_floor_pct = 1.0;
  double initial_cycles_w = 50.0;
  // calibrated so a year of daily single-cycle use costs a few tenths of a
  // point of health, the magnitude reported for comparable fleets
  double initial_aging_factor = 1e-5;
};

struct HalfCycle {
  double dod_pct = 0.0;
  double i_discharge_a = 1.0;  // mean |current| over discharging samples
  double i_charge_a = 1.0;     // mean |current| over charging samples
};

struct SohState {
  double equivalent_full_cycles = 50.0;  // w
  double aging_factor = 1e-5;            // epsilon
  double soh_percent = 100.0;
  std::vector<HalfCycle> half_cycle_history;
  long dod_floor_guard_count = 0;
};

// Capacity-fade model: percent health from average SOC, SOC swing and
// accumulated equivalent cycles.
inline double soh_evaluate(double soc_avg, double delta_soc, double cycles_w) {
  if (soc_avg < 0.0 || soc_avg > 1.0 || delta_soc < 0.0 || delta_soc > 1.0)
    throw std::invalid_argument("soh_evaluate: soc arguments must be fractions");
  if (cycles_w < 0.0) throw std::invalid_argument("soh_evaluate: negative cycles");
  if (cycles_w == 0.0) return 100.0;
  const double quad = 1.0 + 3.25 * delta_soc - 2.25 * delta_soc * delta_soc;
  return 100.0 - 3.25 * soc_avg * quad * std::pow(cycles_w / 100.0, 0.453);
}

inline SohState initial_soh_state(const SohParams& p) {
  SohState s;
  s.equivalent_full_cycles = p.initial_cycles_w;
  s.aging_factor = p.initial_aging_factor;
  s.soh_percent = soh_evaluate(p.soc_avg_ref, p.delta_soc_ref, p.initial_cycles_w);
  return s;
}

// Battery energy bookkeeping: a single efficiency applies to both signs, so
// grid power p maps to the battery as e' = e + eta * p * dt.
inline double soc_step(double energy_kwh, double power_kw, double dt_hours,
                       double efficiency) {
  if (efficiency <= 0.0 || efficiency > 1.0)
    throw std::invalid_argument("soc_step: efficiency out of (0,1]");
  if (dt_hours < 0.0) throw std::invalid_argument("soc_step: negative dt");
  return energy_kwh + efficiency * power_kw * dt_hours;
}

// Splits the SOC series at local extrema into half-cycles. Zero deltas extend
// the current run; swings below the DOD floor are discarded. current_series
// must have the same length; sample t is the current while moving from t to
// t+1 (the final sample is unused).
inline std::vector<HalfCycle> count_half_cycles(
    const std::vector<double>& soc_series, const std::vector<double>& current_series,
    double dod_floor_pct = 1.0) {
  if (soc_series.empty()) throw std::invalid_argument("count_half_cycles: empty series");
  if (soc_series.size() != current_series.size())
    throw std::invalid_argument("count_half_cycles: series length mismatch");

  std::vector<HalfCycle> out;
  const std::size_t n = soc_series.size();
  std::size_t start = 0;
  int dir = 0;
  for (std::size_t t = 1; t <= n; ++t) {
    int d = 0;
    if (t < n) {
      const double delta = soc_series[t] - soc_series[t - 1];
      d = (delta > 0.0) - (delta < 0.0);
    }
    const bool closes = (t == n) || (d != 0 && dir != 0 && d != dir);
    if (closes && dir != 0) {
      const std::size_t end = t - 1;
      const double dod = std::abs(soc_series[end] - soc_series[start]) * 100.0;
      if (dod >= dod_floor_pct) {
        HalfCycle hc;
        hc.dod_pct = dod;
        double dis_sum = 0.0, ch_sum = 0.0;
        std::size_t dis_n = 0, ch_n = 0;
        for (std::size_t k = start; k < end; ++k) {
          const double i = current_series[k];
          if (i < 0.0) { dis_sum += -i; ++dis_n; }
          else if (i > 0.0) { ch_sum += i; ++ch_n; }
        }
        // a side with no samples contributes a neutral unit current
        hc.i_discharge_a = dis_n ? dis_sum / static_cast<double>(dis_n) : 1.0;
        hc.i_charge_a = ch_n ? ch_sum / static_cast<double>(ch_n) : 1.0;
        out.push_back(hc);
      }
      start = end;
    }
    if (d != 0) dir = d;
  }
  return out;
}

// Cycle life at a half-cycle's conditions.
inline double cycle_life(const SohParams& p, const HalfCycle& hc) {
  const double dod = std::max(hc.dod_pct, 1e-6) / 100.0;
  const double idis = std::max(hc.i_discharge_a, 1e-6);
  const double ich = std::max(hc.i_charge_a, 1e-6);
  return p.cycle_life_h * std::pow(dod, -p.kappa_dod) *
         std::pow(idis, -p.gamma_discharge) * std::pow(ich, -p.gamma_charge);
}

// Advances the aging recursion over newly counted half-cycles, then
// re-evaluates health at the episode's SOC statistics. Health never increases
// and the cycle count never decreases.
inline SohState soh_advance(const SohState& state, const SohParams& params,
                            const std::vector<HalfCycle>& half_cycles,
                            double episode_soc_avg = -1.0,
                            double episode_delta_soc = -1.0) {
  SohState s = state;
  for (const HalfCycle& hc : half_cycles) {
    s.equivalent_full_cycles += s.aging_factor * params.m1_cycles;
    const std::size_t m = s.half_cycle_history.size();
    if (m >= 1) {
      const HalfCycle& prev = s.half_cycle_history[m - 1];
      const double m_prev = cycle_life(params, prev);
      double ratio_term;
      if (prev.dod_pct < params.dod_floor_pct) {
        ratio_term = 0.0;  // guard: treat the bracketed term as fully cancelled
        ++s.dod_floor_guard_count;
      } else {
        const double dod_before = (m >= 2) ? s.half_cycle_history[m - 2].dod_pct : prev.dod_pct;
        ratio_term = 2.0 - (dod_before + hc.dod_pct) / prev.dod_pct;
      }
      s.aging_factor += (0.5 / m_prev) * ratio_term;
      if (s.aging_factor < 0.0) s.aging_factor = 0.0;
    }
    s.half_cycle_history.push_back(hc);
  }
  const double avg = (episode_soc_avg >= 0.0) ? episode_soc_avg : params.soc_avg_ref;
  const double swing = (episode_delta_soc >= 0.0) ? episode_delta_soc : params.delta_soc_ref;
  const double candidate = soh_evaluate(avg, swing, s.equivalent_full_cycles);
  s.soh_percent = std::min(s.soh_percent, candidate);
  return s;
}

struct CurrentLimits {
  double i_charge_max_a = 0.0;     // >= 0, per branch
  double i_discharge_max_a = 0.0;  // >= 0, per branch
};

// Per-branch current limits over an n-slot horizon: the binding minimum of the
// SOC headroom limit, the terminal-voltage limit and the design limit.
inline CurrentLimits sop_current_limits(const CellPack& pack, const OcvCurve& ocv,
                                        double soc, double soc_min, double soc_max,
                                        int horizon_slots, double slot_hours) {
  if (horizon_slots <= 0 || slot_hours <= 0.0)
    throw std::invalid_argument("sop_current_limits: horizon must be positive");
  if (soc_min > soc_max)
    throw std::invalid_argument("sop_current_limits: soc_min > soc_max");
  const double q = pack.pack_capacity_ah();
  const double span_h = static_cast<double>(horizon_slots) * slot_hours;

  const double soc_clamped = std::clamp(soc, 0.0, 1.0);
  const double i_soc_dis = q * std::max(0.0, soc_clamped - soc_min) / span_h;
  const double i_soc_ch = q * std::max(0.0, soc_max - soc_clamped) / span_h;

  const double u_oc = ocv.voltage(soc_clamped);
  const double du = ocv.slope(soc_clamped);
  const double denom = pack.internal_resistance_ohm + (span_h / q) * du;
  double i_volt_dis = (u_oc - pack.u_min_v) / denom;
  double i_volt_ch = std::abs(u_oc - pack.u_max_v) / denom;
  if (i_volt_dis < 0.0) i_volt_dis = 0.0;

  CurrentLimits lim;
  lim.i_discharge_max_a =
      std::min({i_soc_dis, i_volt_dis, pack.design_current_discharge_a});
  lim.i_charge_max_a = std::min({i_soc_ch, i_volt_ch, pack.design_current_charge_a});
  return lim;
}

struct PowerLimits {
  double p_charge_max_kw = 0.0;     // >= 0
  double p_discharge_max_kw = 0.0;  // <= 0, signed for direct comparison
};

// Vehicle-level power window: pack terminal voltage times branch current,
// times the branch count and the capacity scale.
inline PowerLimits sop_power_limits(const CellPack& pack, const OcvCurve& ocv,
                                    double soc, double soc_min, double soc_max,
                                    int horizon_slots, double slot_hours) {
  const CurrentLimits lim =
      sop_current_limits(pack, ocv, soc, soc_min, soc_max, horizon_slots, slot_hours);
  const double u_pack = pack.pack_voltage_v();
  const double to_kw = u_pack * pack.parallel_count * pack.scale() / 1000.0;
  PowerLimits p;
  p.p_charge_max_kw = to_kw * lim.i_charge_max_a;
  p.p_discharge_max_kw = -to_kw * lim.i_discharge_max_a;
  return p;
}

// |power| at the vehicle plug mapped back to per-branch amperes.
inline double branch_current_from_power(const CellPack& pack, double power_kw) {
  const double to_kw =
      pack.pack_voltage_v() * pack.parallel_count * pack.scale() / 1000.0;
  return std::abs(power_kw) / to_kw;
}

}  // namespace v2g
