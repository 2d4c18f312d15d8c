#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "v2g/baselines.hpp"
#include "v2g/fleet.hpp"
#include "v2g/microgrid.hpp"
#include "v2g/rng.hpp"

using namespace v2g;

namespace {

EvMember mk(int id, double soc, int arrival = 15, int depart = 35) {
  EvMember m;
  m.spec.id = id;
  m.spec.arrival_hour = arrival;
  m.spec.depart_hour_abs = depart;
  m.spec.soc_arrival = soc;
  m.state.energy_kwh = soc * m.q_eff_kwh();
  return m;
}

std::vector<EvMember> members_from(const std::vector<EvSpec>& specs) {
  std::vector<EvMember> out;
  for (const EvSpec& s : specs) {
    EvMember m;
    m.spec = s;
    m.state.energy_kwh = s.soc_arrival * m.q_eff_kwh();
    out.push_back(m);
  }
  return out;
}

GridDay flat_day(double base = 100.0, double tariff = 0.1) {
  GridDay d;
  d.base_kw.fill(base);
  d.pv_kw.fill(0.0);
  d.wind_kw.fill(0.0);
  d.tariff.fill(tariff);
  return d;
}

// energy after each slot for one EV's power row
std::vector<double> energy_series(const EvMember& m, const std::vector<double>& p,
                                  double dt) {
  std::vector<double> e;
  double cur = m.state.energy_kwh;
  for (double pk : p) {
    cur += m.spec.efficiency * pk * dt;
    e.push_back(cur);
  }
  return e;
}

double window_variance(const GridDay& day, const std::vector<double>& total, int start,
                       int fixed_hours) {
  std::vector<double> loads;
  for (int h = fixed_hours; h > 0; --h) loads.push_back(day.net_base_at(start - h));
  for (std::size_t k = 0; k < total.size(); ++k)
    loads.push_back(day.net_base_at(start + static_cast<int>(k)) + total[k]);
  return load_variance(loads);
}

void check_plan_sound(const std::vector<EvMember>& fleet, const BaselinePlan& plan,
                      int start, int horizon, double dt) {
  for (std::size_t n = 0; n < fleet.size(); ++n) {
    const EvSpec& s = fleet[n].spec;
    const double q = fleet[n].q_eff_kwh();
    const std::vector<double> e = energy_series(fleet[n], plan.ev_power_kw[n], dt);
    for (int k = 0; k < horizon; ++k) {
      REQUIRE(plan.ev_power_kw[n][static_cast<std::size_t>(k)] >=
              s.p_discharge_max_kw - 1e-9);
      REQUIRE(plan.ev_power_kw[n][static_cast<std::size_t>(k)] <=
              s.p_charge_max_kw + 1e-9);
      REQUIRE(e[static_cast<std::size_t>(k)] >= s.soc_min * q - 1e-9);
      REQUIRE(e[static_cast<std::size_t>(k)] <= s.soc_max * q + 1e-9);
      if (!ev_plugged_during(s, start + k))
        REQUIRE(plan.ev_power_kw[n][static_cast<std::size_t>(k)] == 0.0);
    }
    // departure requirement whenever the car leaves inside the window
    if (!plan.shortfall && s.depart_hour_abs <= start + horizon) {
      const int kd = s.depart_hour_abs - start - 1;
      if (kd >= 0)
        REQUIRE(e[static_cast<std::size_t>(kd)] >= s.soc_depart_low * q - 1e-9);
    }
  }
  // aggregate energy trajectory stays inside the fleet envelope
  const FleetEnvelope env = build_envelope(fleet, start, horizon, dt);
  std::vector<double> agg(static_cast<std::size_t>(horizon), 0.0);
  for (std::size_t n = 0; n < fleet.size(); ++n) {
    const std::vector<double> e = energy_series(fleet[n], plan.ev_power_kw[n], dt);
    for (int k = 0; k < horizon; ++k) agg[static_cast<std::size_t>(k)] += e[static_cast<std::size_t>(k)];
  }
  REQUIRE(envelope_admits(env, agg, dt, 1e-6));
}

}  // namespace

TEST_CASE("uncontrolled charging leaves a full battery alone") {
  const std::vector<EvMember> fleet = {mk(0, 0.9)};
  const BaselinePlan plan = bl1_uncontrolled(fleet, 15, 20, 1.0);
  for (double p : plan.ev_power_kw[0]) REQUIRE(p == 0.0);
  for (double p : plan.total_kw) REQUIRE(p == 0.0);
}

TEST_CASE("uncontrolled charging fills the gap in two slots") {
  // 9.6 kWh of headroom at 6 kW and 0.95 efficiency: one full slot, one partial
  const std::vector<EvMember> fleet = {mk(0, 0.5)};
  const BaselinePlan plan = bl1_uncontrolled(fleet, 15, 20, 1.0);
  const std::vector<double>& p = plan.ev_power_kw[0];
  REQUIRE(p[0] == Catch::Approx(6.0).margin(1e-12));
  REQUIRE(p[1] == Catch::Approx(3.9 / 0.95).margin(1e-12));
  REQUIRE(p[2] == 0.0);
  const std::vector<double> e = energy_series(fleet[0], p, 1.0);
  REQUIRE(e[1] == Catch::Approx(21.6).margin(1e-9));
  for (double pk : p) REQUIRE(pk >= 0.0);  // never discharges
}

TEST_CASE("uncontrolled aggregate peaks near the arrival mode") {
  const std::vector<EvMember> fleet = members_from(sample_fleet(FleetParams{}, 99));
  const BaselinePlan plan = bl1_uncontrolled(fleet, 15, 20, 1.0);
  std::size_t peak = 0;
  for (std::size_t k = 1; k < plan.total_kw.size(); ++k)
    if (plan.total_kw[k] > plan.total_kw[peak]) peak = k;
  const int peak_hour = 15 + static_cast<int>(peak);
  REQUIRE(peak_hour >= 17);
  REQUIRE(peak_hour <= 19);
  for (const auto& row : plan.ev_power_kw)
    for (double p : row) REQUIRE(p >= 0.0);
}

TEST_CASE("valley filling picks the earliest slots on a flat day") {
  const std::vector<EvMember> fleet = {mk(0, 0.2)};
  const BaselinePlan plan = bl2_optimal_charging(fleet, flat_day(), 15, 20, 1.0);
  const std::vector<double>& p = plan.ev_power_kw[0];
  REQUIRE(p[0] == Catch::Approx(6.0).margin(1e-12));
  REQUIRE(p[1] == Catch::Approx(6.0).margin(1e-12));
  REQUIRE(p[2] == Catch::Approx((16.8 - 2.0 * 5.7) / 0.95).margin(1e-9));
  for (std::size_t k = 3; k < p.size(); ++k) REQUIRE(p[k] == 0.0);
  REQUIRE_FALSE(plan.shortfall);
}

TEST_CASE("valley filling sends the first energy into a deep valley") {
  GridDay day = flat_day();
  day.base_kw[18] = 50.0;  // the valley, window slot 3
  const std::vector<EvMember> fleet = {mk(0, 0.5)};
  const BaselinePlan plan = bl2_optimal_charging(fleet, day, 15, 20, 1.0);
  const std::vector<double>& p = plan.ev_power_kw[0];
  REQUIRE(p[3] == Catch::Approx(6.0).margin(1e-12));
  for (std::size_t k = 0; k < p.size(); ++k)
    REQUIRE(p[3] >= p[k] - 1e-12);
}

TEST_CASE("valley filling matches the exhaustive minimum-variance assignment") {
  // three cars with whole-slot energy needs over a shared 5-slot window
  std::vector<EvMember> fleet = {mk(0, 0.425, 15, 20), mk(1, 0.6625, 15, 20),
                                 mk(2, 0.6625, 15, 20)};
  // needs: 11.4, 5.7, 5.7 kWh of battery energy, i.e. 2, 1 and 1 full slots
  GridDay day = flat_day();
  day.base_kw[15] = 100.0;
  day.base_kw[16] = 90.0;
  day.base_kw[17] = 95.0;
  day.base_kw[18] = 105.0;
  day.base_kw[19] = 110.0;
  const int horizon = 5;
  const BaselinePlan plan = bl2_optimal_charging(fleet, day, 15, horizon, 1.0);
  REQUIRE_FALSE(plan.shortfall);

  double got_var = window_variance(day, plan.total_kw, 15, 0);

  // oracle: enumerate all full-power slot subsets per car
  double best = 1e300;
  for (int m0 = 0; m0 < 32; ++m0) {
    if (__builtin_popcount(static_cast<unsigned>(m0)) != 2) continue;
    for (int m1 = 0; m1 < 32; ++m1) {
      if (__builtin_popcount(static_cast<unsigned>(m1)) != 1) continue;
      for (int m2 = 0; m2 < 32; ++m2) {
        if (__builtin_popcount(static_cast<unsigned>(m2)) != 1) continue;
        std::vector<double> total(5, 0.0);
        for (int k = 0; k < 5; ++k) {
          if (m0 & (1 << k)) total[static_cast<std::size_t>(k)] += 6.0;
          if (m1 & (1 << k)) total[static_cast<std::size_t>(k)] += 6.0;
          if (m2 & (1 << k)) total[static_cast<std::size_t>(k)] += 6.0;
        }
        best = std::min(best, window_variance(day, total, 15, 0));
      }
    }
  }
  REQUIRE(got_var == Catch::Approx(best).margin(1e-9));
}

TEST_CASE("valley filling reports unreachable demand as shortfall") {
  const std::vector<EvMember> fleet = {mk(0, 0.2, 15, 16)};  // one-slot window
  const BaselinePlan plan = bl2_optimal_charging(fleet, flat_day(), 15, 20, 1.0);
  REQUIRE(plan.shortfall);
  REQUIRE(plan.ev_power_kw[0][0] == Catch::Approx(6.0).margin(1e-12));
  for (std::size_t k = 1; k < 20; ++k) REQUIRE(plan.ev_power_kw[0][k] == 0.0);
}

TEST_CASE("variance smoothing flattens a ripple it can absorb") {
  GridDay day = flat_day(100.0);
  for (int h = 15; h < 35; ++h)
    day.base_kw[((h % 24) + 24) % 24] = 100.0;  // keep the mean at the base
  // a zero-mean ripple over the window hours
  const double amp = 2.0;
  for (int k = 0; k < 20; ++k) {
    const int h = ((15 + k) % 24 + 24) % 24;
    day.base_kw[h] = 100.0 + amp * std::sin(2.0 * M_PI * k / 20.0);
  }
  std::vector<EvMember> fleet;
  for (int i = 0; i < 4; ++i) {
    EvMember m = mk(i, 0.5, 15, 40);   // never departs inside the window
    m.spec.soc_depart_low = 0.2;       // no departure demand to distort the mean
    fleet.push_back(m);
  }
  const BaselinePlan plan = bl3_min_variance(fleet, day, 15, 20, 1.0, 0, 50000, 1e-12);
  REQUIRE(plan.converged);
  REQUIRE(window_variance(day, plan.total_kw, 15, 0) < 1e-5);
}

TEST_CASE("variance smoothing with no fleet changes nothing") {
  const BaselinePlan plan = bl3_min_variance({}, flat_day(), 15, 20, 1.0);
  REQUIRE(plan.ev_power_kw.empty());
  for (double p : plan.total_kw) REQUIRE(p == 0.0);
}

TEST_CASE("variance smoothing matches a grid search on a four-slot toy") {
  GridDay day = flat_day(0.0);
  day.base_kw[15] = 10.0;
  day.base_kw[16] = 2.0;
  day.base_kw[17] = 6.0;
  day.base_kw[18] = 8.0;
  std::vector<EvMember> fleet = {mk(0, 0.5, 15, 40)};
  fleet[0].spec.soc_depart_low = 0.2;
  const BaselinePlan plan = bl3_min_variance(fleet, day, 15, 4, 1.0, 0);
  const double got = window_variance(day, plan.total_kw, 15, 0);
  check_plan_sound(fleet, plan, 15, 4, 1.0);

  // oracle: exhaustive grid over the ev's four powers
  const FleetEnvelope env = build_envelope(fleet, 15, 4, 1.0);
  double best = 1e300;
  const double step = 0.25;
  for (double p0 = -6.0; p0 <= 6.0 + 1e-9; p0 += step)
    for (double p1 = -6.0; p1 <= 6.0 + 1e-9; p1 += step)
      for (double p2 = -6.0; p2 <= 6.0 + 1e-9; p2 += step)
        for (double p3 = -6.0; p3 <= 6.0 + 1e-9; p3 += step) {
          const std::vector<double> p = {p0, p1, p2, p3};
          double e = 12.0;
          bool ok = true;
          for (int k = 0; k < 4 && ok; ++k) {
            e += 0.95 * p[static_cast<std::size_t>(k)];
            ok = e >= env.e_lower_kwh[static_cast<std::size_t>(k)] - 1e-9 &&
                 e <= env.e_upper_kwh[static_cast<std::size_t>(k)] + 1e-9;
          }
          if (!ok) continue;
          std::vector<double> total(4);
          for (int k = 0; k < 4; ++k) total[static_cast<std::size_t>(k)] = p[static_cast<std::size_t>(k)];
          best = std::min(best, window_variance(day, total, 15, 0));
        }
  REQUIRE(got <= best + 1e-6);   // continuous optimum cannot lose to the grid
  REQUIRE(best <= got + 0.05);   // and the grid pins it down
}

TEST_CASE("cost planner charges as late as possible under a uniform tariff") {
  const std::vector<EvMember> fleet = {mk(0, 0.5, 15, 34)};
  const BaselinePlan plan = bl4_min_cost(fleet, flat_day(100.0, 0.1), 15, 20, 1.0);
  const std::vector<double>& p = plan.ev_power_kw[0];
  // plugged through hour 33, so slots 18 then 17 carry the mandatory charge
  REQUIRE(p[18] == Catch::Approx(6.0).margin(1e-12));
  REQUIRE(p[17] == Catch::Approx(1.5 / 0.95).margin(1e-9));
  for (int k = 0; k < 20; ++k)
    if (k != 17 && k != 18) REQUIRE(p[static_cast<std::size_t>(k)] == 0.0);
}

TEST_CASE("cost planner pushes all charging into the cheap band") {
  GridDay day = flat_day(100.0, 0.2);
  day.tariff[23] = 0.05;  // window slots 8 and 9 are cheap
  day.tariff[0] = 0.05;
  const std::vector<EvMember> fleet = {mk(0, 0.5, 15, 34)};
  const BaselinePlan plan = bl4_min_cost(fleet, day, 15, 20, 1.0);
  const std::vector<double>& p = plan.ev_power_kw[0];
  REQUIRE(p[8] == Catch::Approx(6.0).margin(1e-9));
  REQUIRE(p[9] == Catch::Approx(6.0).margin(1e-9));
  for (int k = 0; k < 20; ++k)
    if (k != 8 && k != 9) REQUIRE(p[static_cast<std::size_t>(k)] <= 1e-12);
  // departure energy is still met
  const std::vector<double> e = energy_series(fleet[0], p, 1.0);
  REQUIRE(e[18] >= 0.8 * 24.0 - 1e-9);
  check_plan_sound(fleet, plan, 15, 20, 1.0);
}

TEST_CASE("cost planner matches enumeration on a three-slot toy") {
  GridDay day = flat_day(100.0, 0.2);
  day.tariff[16] = 0.05;
  day.tariff[17] = 0.1;
  const std::vector<EvMember> fleet = {mk(0, 0.5, 15, 18)};
  const BaselinePlan plan = bl4_min_cost(fleet, day, 15, 3, 1.0);
  check_plan_sound(fleet, plan, 15, 3, 1.0);
  const double got = cost_f2(day, plan.total_kw, 15, 1.0);

  const EvMember& m = fleet[0];
  double best = 1e300;
  for (double p0 = -6.0; p0 <= 6.0 + 1e-9; p0 += 0.1)
    for (double p1 = -6.0; p1 <= 6.0 + 1e-9; p1 += 0.1)
      for (double p2 = -6.0; p2 <= 6.0 + 1e-9; p2 += 0.1) {
        double e = 12.0;
        bool ok = true;
        const double ps[3] = {p0, p1, p2};
        for (int k = 0; k < 3 && ok; ++k) {
          const EnergyBand band = ev_energy_band(m, 15 + k + 1, 1.0);
          e += 0.95 * ps[k];
          ok = e >= band.lo - 1e-9 && e <= band.hi + 1e-9;
        }
        if (!ok) continue;
        best = std::min(best, 0.2 * p0 + 0.05 * p1 + 0.1 * p2);
      }
  REQUIRE(got <= best + 1e-9);
  REQUIRE(best <= got + 0.05);
}

TEST_CASE("all baselines produce sound dispatches for sampled fleets") {
  for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
    FleetParams fp;
    fp.count = 30;
    const std::vector<EvMember> fleet = members_from(sample_fleet(fp, seed));
    const GridDay day = synthetic_day(SyntheticDayParams{}, seed);
    for (BaselineKind kind :
         {BaselineKind::uncontrolled, BaselineKind::optimal_charging,
          BaselineKind::min_variance_v2g, BaselineKind::min_cost_v2g}) {
      const BaselinePlan plan = plan_baseline(kind, fleet, day, 15, 20, 1.0);
      REQUIRE_FALSE(plan.shortfall);
      check_plan_sound(fleet, plan, 15, 20, 1.0);
    }
  }
}

TEST_CASE("baseline orderings on the default synthetic day") {
  const std::vector<EvMember> fleet = members_from(sample_fleet(FleetParams{}, 7));
  const GridDay day = synthetic_day(SyntheticDayParams{}, 7);
  const BaselinePlan p1 = bl1_uncontrolled(fleet, 15, 20, 1.0);
  const BaselinePlan p2 = bl2_optimal_charging(fleet, day, 15, 20, 1.0);
  const BaselinePlan p3 = bl3_min_variance(fleet, day, 15, 20, 1.0);
  const BaselinePlan p4 = bl4_min_cost(fleet, day, 15, 20, 1.0);
  const double v1 = window_variance(day, p1.total_kw, 15, 4);
  const double v2 = window_variance(day, p2.total_kw, 15, 4);
  const double v3 = window_variance(day, p3.total_kw, 15, 4);
  REQUIRE(v3 <= v2);
  REQUIRE(v2 <= v1);
  const double c1 = cost_f2(day, p1.total_kw, 15, 1.0);
  const double c2 = cost_f2(day, p2.total_kw, 15, 1.0);
  const double c3 = cost_f2(day, p3.total_kw, 15, 1.0);
  const double c4 = cost_f2(day, p4.total_kw, 15, 1.0);
  REQUIRE(c4 <= c1 + 1e-9);
  REQUIRE(c4 <= c2 + 1e-9);
  REQUIRE(c4 <= c3 + 1e-9);
}

TEST_CASE("baseline names round-trip") {
  for (BaselineKind k :
       {BaselineKind::uncontrolled, BaselineKind::optimal_charging,
        BaselineKind::min_variance_v2g, BaselineKind::min_cost_v2g})
    REQUIRE(baseline_from_name(baseline_name(k)) == k);
  REQUIRE(baseline_from_name("optimal_charging") == BaselineKind::optimal_charging);
  REQUIRE_THROWS_AS(baseline_from_name("bl9"), std::invalid_argument);
}
