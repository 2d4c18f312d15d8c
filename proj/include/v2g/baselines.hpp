#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "v2g/env.hpp"
#include "v2g/fleet.hpp"
#include "v2g/microgrid.hpp"

namespace v2g {

enum class BaselineKind { uncontrolled, optimal_charging, min_variance_v2g, min_cost_v2g };

inline const char* baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::uncontrolled: return "bl1";
    case BaselineKind::optimal_charging: return "bl2";
    case BaselineKind::min_variance_v2g: return "bl3";
    case BaselineKind::min_cost_v2g: return "bl4";
  }
  return "?";
}

inline BaselineKind baseline_from_name(const std::string& s) {
  if (s == "bl1" || s == "uncontrolled") return BaselineKind::uncontrolled;
  if (s == "bl2" || s == "optimal_charging") return BaselineKind::optimal_charging;
  if (s == "bl3" || s == "min_variance_v2g") return BaselineKind::min_variance_v2g;
  if (s == "bl4" || s == "min_cost_v2g") return BaselineKind::min_cost_v2g;
  throw std::invalid_argument("unknown baseline: " + s);
}

// One scheduling-window plan. Powers are grid side, signed (charge positive),
// one row per fleet member over the window slots.
struct BaselinePlan {
  BaselineKind kind = BaselineKind::uncontrolled;
  std::vector<std::vector<double>> ev_power_kw;
  std::vector<double> total_kw;
  bool shortfall = false;
  bool converged = true;
  int iterations = 0;
};

namespace detail {

inline void finish_totals(BaselinePlan& plan, int horizon) {
  plan.total_kw.assign(static_cast<std::size_t>(horizon), 0.0);
  for (const auto& row : plan.ev_power_kw)
    for (int k = 0; k < horizon; ++k)
      plan.total_kw[static_cast<std::size_t>(k)] += row[static_cast<std::size_t>(k)];
}

}  // namespace detail

// Charge at maximum rate from arrival until full; never discharge.
inline BaselinePlan bl1_uncontrolled(const std::vector<EvMember>& fleet, int start_hour,
                                     int horizon, double dt_hours) {
  BaselinePlan plan;
  plan.kind = BaselineKind::uncontrolled;
  plan.ev_power_kw.assign(fleet.size(), std::vector<double>(static_cast<std::size_t>(horizon), 0.0));
  for (std::size_t n = 0; n < fleet.size(); ++n) {
    const EvSpec& s = fleet[n].spec;
    const double q = fleet[n].q_eff_kwh();
    double e = fleet[n].state.energy_kwh;
    for (int k = 0; k < horizon; ++k) {
      const int hour = start_hour + k;
      if (!ev_plugged_during(s, hour)) continue;
      const double headroom = s.soc_max * q - e;
      if (headroom <= 1e-12) break;
      const double p = std::min(s.p_charge_max_kw, headroom / (s.efficiency * dt_hours));
      plan.ev_power_kw[n][static_cast<std::size_t>(k)] = p;
      e += s.efficiency * p * dt_hours;
    }
  }
  detail::finish_totals(plan, horizon);
  return plan;
}

// Charge-only valley filling: every EV charges to full, energy placed greedily
// in the lowest-net-load slot of its plug window (ties break to the lowest
// slot index), sequentially over the fleet so later EVs see earlier
// assignments. A window too short to reach full leaves the EV charging at
// maximum in every slot and flags the shortfall.
inline BaselinePlan bl2_optimal_charging(const std::vector<EvMember>& fleet,
                                         const GridDay& day, int start_hour, int horizon,
                                         double dt_hours) {
  BaselinePlan plan;
  plan.kind = BaselineKind::optimal_charging;
  plan.ev_power_kw.assign(fleet.size(), std::vector<double>(static_cast<std::size_t>(horizon), 0.0));
  std::vector<double> load(static_cast<std::size_t>(horizon), 0.0);
  for (int k = 0; k < horizon; ++k)
    load[static_cast<std::size_t>(k)] = day.net_base_at(start_hour + k);
  for (std::size_t n = 0; n < fleet.size(); ++n) {
    const EvSpec& s = fleet[n].spec;
    const double q = fleet[n].q_eff_kwh();
    double need = std::max(0.0, s.soc_max * q - fleet[n].state.energy_kwh);
    while (need > 1e-9) {
      int best = -1;
      for (int k = 0; k < horizon; ++k) {
        if (!ev_plugged_during(s, start_hour + k)) continue;
        if (plan.ev_power_kw[n][static_cast<std::size_t>(k)] >= s.p_charge_max_kw - 1e-12)
          continue;
        if (best < 0 || load[static_cast<std::size_t>(k)] < load[static_cast<std::size_t>(best)])
          best = k;
      }
      if (best < 0) {
        plan.shortfall = true;
        break;
      }
      const std::size_t b = static_cast<std::size_t>(best);
      const double room = s.p_charge_max_kw - plan.ev_power_kw[n][b];
      const double p_add = std::min(room, need / (s.efficiency * dt_hours));
      plan.ev_power_kw[n][b] += p_add;
      load[b] += p_add;
      need -= s.efficiency * p_add * dt_hours;
    }
  }
  detail::finish_totals(plan, horizon);
  return plan;
}

namespace detail {

// Objective pieces for the variance program: the trailing day is the fixed
// pre-window net-base hours followed by the window loads.
struct VarianceObjective {
  std::vector<double> fixed;    // loads for the hours before the window
  std::vector<double> base;     // net base load per window slot
  double inv_eta_dt = 1.0;

  std::size_t total() const { return fixed.size() + base.size(); }

  // window loads from the aggregate energy trajectory
  std::vector<double> loads(const std::vector<double>& x, double x_init) const {
    std::vector<double> out = fixed;
    for (std::size_t k = 0; k < base.size(); ++k) {
      const double prev = k == 0 ? x_init : x[k - 1];
      out.push_back(base[k] + (x[k] - prev) * inv_eta_dt);
    }
    return out;
  }

  double value(const std::vector<double>& x, double x_init) const {
    return load_variance(loads(x, x_init));
  }

  std::vector<double> gradient(const std::vector<double>& x, double x_init) const {
    const std::vector<double> l = loads(x, x_init);
    const double inv_t = 1.0 / static_cast<double>(l.size());
    double mean = 0.0;
    for (double v : l) mean += v;
    mean *= inv_t;
    // d var / d load_k, then chain through the energy increments
    std::vector<double> gl(l.size());
    for (std::size_t k = 0; k < l.size(); ++k) gl[k] = 2.0 * inv_t * (l[k] - mean);
    const std::size_t off = fixed.size();
    std::vector<double> gx(x.size(), 0.0);
    for (std::size_t k = 0; k < x.size(); ++k) {
      gx[k] = gl[off + k] * inv_eta_dt;
      if (k + 1 < x.size()) gx[k] -= gl[off + k + 1] * inv_eta_dt;
    }
    return gx;
  }
};

// Dykstra's alternating projection onto the intersection of the per-slot
// energy boxes and the increment slabs of the aggregate chain.
inline void project_chain(std::vector<double>& x, double x_init,
                          const std::vector<double>& e_lo, const std::vector<double>& e_hi,
                          const std::vector<double>& d_lo, const std::vector<double>& d_hi,
                          int max_cycles = 400, double tol = 1e-11) {
  const std::size_t t = x.size();
  if (t == 0) return;
  // corrections: one for the box, one per slab
  std::vector<double> box_corr(t, 0.0);
  std::vector<std::vector<double>> slab_corr(t, std::vector<double>(2, 0.0));
  double scale = 1.0;
  for (std::size_t k = 0; k < t; ++k)
    scale = std::max({scale, std::abs(e_lo[k]), std::abs(e_hi[k])});
  for (int cycle = 0; cycle < max_cycles; ++cycle) {
    double moved = 0.0;
    for (std::size_t k = 0; k < t; ++k) {
      const double y = x[k] + box_corr[k];
      const double p = std::clamp(y, e_lo[k], e_hi[k]);
      box_corr[k] = y - p;
      moved += std::abs(p - x[k]);
      x[k] = p;
    }
    for (std::size_t k = 0; k < t; ++k) {
      if (k == 0) {
        // the first increment constrains x[0] alone
        const double y = x[0] + slab_corr[0][1];
        const double p = std::clamp(y, x_init + d_lo[0], x_init + d_hi[0]);
        slab_corr[0][1] = y - p;
        moved += std::abs(p - x[0]);
        x[0] = p;
        continue;
      }
      double a = x[k - 1] + slab_corr[k][0];
      double b = x[k] + slab_corr[k][1];
      double pa = a, pb = b;
      const double d = b - a;
      if (d > d_hi[k]) {
        const double shift = (d - d_hi[k]) / 2.0;
        pa = a + shift;
        pb = b - shift;
      } else if (d < d_lo[k]) {
        const double shift = (d_lo[k] - d) / 2.0;
        pa = a - shift;
        pb = b + shift;
      }
      slab_corr[k][0] = a - pa;
      slab_corr[k][1] = b - pb;
      moved += std::abs(pa - x[k - 1]) + std::abs(pb - x[k]);
      x[k - 1] = pa;
      x[k] = pb;
    }
    if (moved < tol * scale) break;
  }
}

}  // namespace detail

// Accelerated projected gradient descent on the aggregate-energy chain,
// minimizing the trailing-day load variance subject to the fleet envelope.
// Returns the per-EV decomposition of the optimized aggregate trajectory.
inline BaselinePlan bl3_min_variance(const std::vector<EvMember>& fleet, const GridDay& day,
                                     int start_hour, int horizon, double dt_hours,
                                     int fixed_hours = 4, int max_iters = 5000,
                                     double tol = 1e-6) {
  BaselinePlan plan;
  plan.kind = BaselineKind::min_variance_v2g;
  plan.ev_power_kw.assign(fleet.size(), std::vector<double>(static_cast<std::size_t>(horizon), 0.0));
  const std::size_t t = static_cast<std::size_t>(horizon);
  if (t == 0 || fleet.empty()) {
    detail::finish_totals(plan, horizon);
    return plan;
  }
  double eta = 0.0;
  for (const EvMember& m : fleet) eta += m.spec.efficiency;
  eta /= static_cast<double>(fleet.size());

  const FleetEnvelope env = build_envelope(fleet, start_hour, horizon, dt_hours);
  detail::VarianceObjective obj;
  obj.inv_eta_dt = 1.0 / (eta * dt_hours);
  for (int h = fixed_hours; h > 0; --h) obj.fixed.push_back(day.net_base_at(start_hour - h));
  for (int k = 0; k < horizon; ++k) obj.base.push_back(day.net_base_at(start_hour + k));

  std::vector<double> d_lo(t), d_hi(t);
  for (std::size_t k = 0; k < t; ++k) {
    d_lo[k] = eta * dt_hours * env.p_lower_kw[k];
    d_hi[k] = eta * dt_hours * env.p_upper_kw[k];
  }
  auto project = [&](std::vector<double>& x) {
    detail::project_chain(x, env.e_initial_kwh, env.e_lower_kwh, env.e_upper_kwh, d_lo, d_hi);
  };

  // Lipschitz constant of the quadratic gradient via power iteration on the
  // linear part
  const std::vector<double> zero(t, 0.0);
  const std::vector<double> g0 = obj.gradient(zero, 0.0);
  std::vector<double> v(t, 1.0 / std::sqrt(static_cast<double>(t)));
  double lip = 1.0;
  for (int it = 0; it < 60; ++it) {
    std::vector<double> gv = obj.gradient(v, 0.0);
    for (std::size_t k = 0; k < t; ++k) gv[k] -= g0[k];
    double norm = 0.0;
    for (double g : gv) norm += g * g;
    norm = std::sqrt(norm);
    if (norm < 1e-300) break;
    lip = norm;
    for (std::size_t k = 0; k < t; ++k) v[k] = gv[k] / norm;
  }
  const double step = 1.0 / std::max(lip, 1e-12);

  // x starts from the do-nothing trajectory
  std::vector<double> x(t, env.e_initial_kwh);
  project(x);
  std::vector<double> y = x, x_prev = x;
  double tk = 1.0;
  double f_prev = obj.value(x, env.e_initial_kwh);
  double f_best = f_prev;
  std::vector<double> x_best = x;
  plan.converged = false;
  for (int it = 0; it < max_iters; ++it) {
    const std::vector<double> g = obj.gradient(y, env.e_initial_kwh);
    for (std::size_t k = 0; k < t; ++k) x[k] = y[k] - step * g[k];
    project(x);
    const double tk1 = (1.0 + std::sqrt(1.0 + 4.0 * tk * tk)) / 2.0;
    for (std::size_t k = 0; k < t; ++k)
      y[k] = x[k] + ((tk - 1.0) / tk1) * (x[k] - x_prev[k]);
    tk = tk1;
    x_prev = x;
    const double f = obj.value(x, env.e_initial_kwh);
    if (f < f_best) {
      f_best = f;
      x_best = x;
    }
    plan.iterations = it + 1;
    if (std::abs(f_prev - f) <= tol * std::max(1.0, std::abs(f_prev))) {
      plan.converged = true;
      break;
    }
    f_prev = f;
  }
  x = x_best;

  // decompose the aggregate trajectory into per-EV powers: every plugged EV
  // moves the same fraction of its live feasible window
  std::vector<double> energy(fleet.size());
  for (std::size_t n = 0; n < fleet.size(); ++n) energy[n] = fleet[n].state.energy_kwh;
  double agg = env.e_initial_kwh;
  for (std::size_t k = 0; k < t; ++k) {
    const int hour = start_hour + static_cast<int>(k);
    double sum_lo = 0.0, sum_hi = 0.0;
    std::vector<double> lo(fleet.size(), 0.0), hi(fleet.size(), 0.0);
    for (std::size_t n = 0; n < fleet.size(); ++n) {
      const EvSpec& s = fleet[n].spec;
      if (!ev_plugged_during(s, hour)) continue;
      const EnergyBand band = ev_energy_band(fleet[n], hour + 1, dt_hours);
      const double inv = 1.0 / (s.efficiency * dt_hours);
      lo[n] = std::max(s.p_discharge_max_kw, (band.lo - energy[n]) * inv);
      hi[n] = std::min(s.p_charge_max_kw, (band.hi - energy[n]) * inv);
      if (lo[n] > hi[n]) lo[n] = hi[n];
      sum_lo += lo[n];
      sum_hi += hi[n];
    }
    double target = (x[k] - agg) / (eta * dt_hours);
    target = std::clamp(target, sum_lo, sum_hi);
    const double range = sum_hi - sum_lo;
    const double theta = range > 1e-12 ? (target - sum_lo) / range : 0.0;
    for (std::size_t n = 0; n < fleet.size(); ++n) {
      if (!ev_plugged_during(fleet[n].spec, hour)) continue;
      const double p = lo[n] + theta * (hi[n] - lo[n]);
      plan.ev_power_kw[n][k] = p;
      energy[n] += fleet[n].spec.efficiency * p * dt_hours;
    }
    agg = 0.0;
    for (double e : energy) agg += e;
  }
  detail::finish_totals(plan, horizon);
  return plan;
}

// Greedy tariff arbitrage per EV: first cover the departure-floor energy in
// the cheapest slots (latest first among equal prices, so a uniform tariff
// charges as late as possible), then move energy from expensive to cheap slots
// while the spread is positive and the trajectory stays inside the band.
inline BaselinePlan bl4_min_cost(const std::vector<EvMember>& fleet, const GridDay& day,
                                 int start_hour, int horizon, double dt_hours) {
  BaselinePlan plan;
  plan.kind = BaselineKind::min_cost_v2g;
  plan.ev_power_kw.assign(fleet.size(), std::vector<double>(static_cast<std::size_t>(horizon), 0.0));
  for (std::size_t n = 0; n < fleet.size(); ++n) {
    const EvSpec& s = fleet[n].spec;
    const double q = fleet[n].q_eff_kwh();
    std::vector<double>& p = plan.ev_power_kw[n];
    std::vector<int> slots;
    for (int k = 0; k < horizon; ++k)
      if (ev_plugged_during(s, start_hour + k)) slots.push_back(k);
    if (slots.empty()) continue;

    // mandatory charge, cheapest slots first, latest first on ties
    std::vector<int> by_price = slots;
    std::sort(by_price.begin(), by_price.end(), [&](int a, int b) {
      const double ta = day.tariff_at(start_hour + a), tb = day.tariff_at(start_hour + b);
      if (ta != tb) return ta < tb;
      return a > b;
    });
    double need = std::max(0.0, s.soc_depart_low * q - fleet[n].state.energy_kwh);
    for (int k : by_price) {
      if (need <= 1e-9) break;
      const std::size_t ks = static_cast<std::size_t>(k);
      const double p_add = std::min(s.p_charge_max_kw, need / (s.efficiency * dt_hours));
      p[ks] += p_add;
      need -= s.efficiency * p_add * dt_hours;
    }

    auto trajectory = [&](std::vector<double>& e_out) {
      double e = fleet[n].state.energy_kwh;
      e_out.assign(static_cast<std::size_t>(horizon), 0.0);
      for (int k = 0; k < horizon; ++k) {
        e += s.efficiency * p[static_cast<std::size_t>(k)] * dt_hours;
        e_out[static_cast<std::size_t>(k)] = e;
      }
    };

    // arbitrage: move energy from the priciest slot with discharge room to
    // the cheapest with charge room; a pair blocked by the band does not end
    // the search, the next-widest spread is tried
    for (int guard = 0; guard < 1000; ++guard) {
      std::vector<double> e;
      trajectory(e);
      struct Pair {
        int d, c;
        double spread;
      };
      std::vector<Pair> pairs;
      for (int d : slots) {
        if (p[static_cast<std::size_t>(d)] <= s.p_discharge_max_kw + 1e-9) continue;
        for (int c : slots) {
          if (c == d) continue;
          if (p[static_cast<std::size_t>(c)] >= s.p_charge_max_kw - 1e-9) continue;
          const double spread =
              day.tariff_at(start_hour + d) - day.tariff_at(start_hour + c);
          if (spread > 1e-12) pairs.push_back({d, c, spread});
        }
      }
      std::stable_sort(pairs.begin(), pairs.end(),
                       [](const Pair& a, const Pair& b) { return a.spread > b.spread; });
      bool applied = false;
      for (const Pair& pr : pairs) {
        double amount = std::min(p[static_cast<std::size_t>(pr.d)] - s.p_discharge_max_kw,
                                 s.p_charge_max_kw - p[static_cast<std::size_t>(pr.c)]);
        const int k_from = std::min(pr.d, pr.c), k_to = std::max(pr.d, pr.c);
        for (int k = k_from; k < k_to; ++k) {
          const EnergyBand band = ev_energy_band(fleet[n], start_hour + k + 1, dt_hours);
          const double slack = pr.d < pr.c ? (e[static_cast<std::size_t>(k)] - band.lo)
                                           : (band.hi - e[static_cast<std::size_t>(k)]);
          amount = std::min(amount, slack / (s.efficiency * dt_hours));
        }
        if (amount <= 1e-9) continue;
        p[static_cast<std::size_t>(pr.d)] -= amount;
        p[static_cast<std::size_t>(pr.c)] += amount;
        applied = true;
        break;
      }
      if (!applied) break;
      plan.iterations = guard + 1;
    }
  }
  detail::finish_totals(plan, horizon);
  return plan;
}

inline BaselinePlan plan_baseline(BaselineKind kind, const std::vector<EvMember>& fleet,
                                  const GridDay& day, int start_hour, int horizon,
                                  double dt_hours) {
  switch (kind) {
    case BaselineKind::uncontrolled:
      return bl1_uncontrolled(fleet, start_hour, horizon, dt_hours);
    case BaselineKind::optimal_charging:
      return bl2_optimal_charging(fleet, day, start_hour, horizon, dt_hours);
    case BaselineKind::min_variance_v2g:
      return bl3_min_variance(fleet, day, start_hour, horizon, dt_hours);
    case BaselineKind::min_cost_v2g:
      return bl4_min_cost(fleet, day, start_hour, horizon, dt_hours);
  }
  throw std::invalid_argument("plan_baseline: bad kind");
}

// Drives a planned dispatch through the environment so it passes the same
// allocation and safety path as a learned policy. The env must be freshly
// reset; the action for each agent is the plan's aggregate mapped back through
// the static envelope power box.
inline void execute_plan(CmdpEnv& env, const BaselinePlan& plan) {
  const int n = env.n_agents();
  for (int k = 0; k < env.horizon(); ++k) {
    std::vector<double> actions(static_cast<std::size_t>(n), 0.0);
    for (int a = 0; a < n; ++a) {
      double target = 0.0;
      for (std::size_t ev : env.partition()[static_cast<std::size_t>(a)])
        target += plan.ev_power_kw[ev][static_cast<std::size_t>(k)];
      const FleetEnvelope& fe = env.envelope(a);
      const double lo = fe.p_lower_kw[static_cast<std::size_t>(k)];
      const double hi = fe.p_upper_kw[static_cast<std::size_t>(k)];
      double u = 0.0;
      if (hi - lo > 1e-12) u = 2.0 * (target - lo) / (hi - lo) - 1.0;
      actions[static_cast<std::size_t>(a)] = std::clamp(u, -1.0, 1.0);
    }
    const StepResult r = env.step(actions);
    if (r.done) break;
  }
}

}  // namespace v2g
