#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <vector>

#include "v2g/fleet.hpp"
#include "v2g/rng.hpp"

using namespace v2g;

namespace {

EvMember plugged_member(const EvSpec& spec) {
  EvMember m;
  m.spec = spec;
  m.state.energy_kwh = spec.soc_arrival * spec.capacity_kwh;
  m.state.departed = false;
  return m;
}

EvSpec window_spanning_spec() {
  EvSpec s;
  s.arrival_hour = 15;
  s.depart_hour_abs = 34;
  s.soc_arrival = 0.5;
  return s;
}

}  // namespace

TEST_CASE("sampled fleet respects the clipping windows") {
  FleetParams p;
  auto fleet = sample_fleet(p, 123);
  REQUIRE(fleet.size() == 509);
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    const EvSpec& ev = fleet[i];
    REQUIRE(ev.id == static_cast<int>(i));
    REQUIRE(ev.arrival_hour >= 15);
    REQUIRE(ev.arrival_hour <= 21);
    REQUIRE(ev.depart_hour_abs >= 24 + 6);
    REQUIRE(ev.depart_hour_abs <= 24 + 10);
    REQUIRE(ev.soc_arrival >= 0.2);
    REQUIRE(ev.soc_arrival <= 0.8);
    REQUIRE(ev.p_charge_max_kw == 6.0);
    REQUIRE(ev.p_discharge_max_kw == -6.0);
    REQUIRE(ev.capacity_kwh == 24.0);
    REQUIRE(ev.soc_min < ev.soc_depart_low);
    REQUIRE(ev.soc_depart_low <= ev.soc_depart_high);
    REQUIRE(ev.soc_depart_high <= ev.soc_max);
  }
}

TEST_CASE("zero-variance sampling is degenerate") {
  FleetParams p;
  p.count = 1;
  p.arrival_std_hours = 0.0;
  p.depart_std_hours = 0.0;
  p.soc_arrival_std = 0.0;
  auto fleet = sample_fleet(p, 5);
  REQUIRE(fleet.size() == 1);
  REQUIRE(fleet[0].arrival_hour == 18);
  REQUIRE(fleet[0].depart_hour_abs == 32);
  REQUIRE(fleet[0].soc_arrival == 0.5);
}

TEST_CASE("large-sample arrival mean sits at the distribution centre") {
  FleetParams p;
  p.count = 10000;
  auto fleet = sample_fleet(p, 99);
  double sum = 0.0;
  for (const EvSpec& ev : fleet) sum += ev.arrival_hour;
  REQUIRE(sum / 10000.0 == Catch::Approx(18.0).margin(0.05));
}

TEST_CASE("fleet sampling is reproducible per seed") {
  FleetParams p;
  p.count = 64;
  auto a = sample_fleet(p, 7);
  auto b = sample_fleet(p, 7);
  auto c = sample_fleet(p, 8);
  REQUIRE(a.size() == b.size());
  bool same = true, diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a[i].arrival_hour == b[i].arrival_hour &&
           a[i].depart_hour_abs == b[i].depart_hour_abs &&
           a[i].soc_arrival == b[i].soc_arrival;
    diff = diff || a[i].arrival_hour != c[i].arrival_hour ||
           a[i].soc_arrival != c[i].soc_arrival;
  }
  REQUIRE(same);
  REQUIRE(diff);
}

TEST_CASE("partition deals near-equal shares") {
  auto parts = partition_evas(509, 4, 11);
  REQUIRE(parts.size() == 4);
  std::vector<std::size_t> sizes;
  for (const auto& part : parts) sizes.push_back(part.size());
  std::sort(sizes.begin(), sizes.end());
  REQUIRE(sizes == std::vector<std::size_t>{127, 127, 127, 128});

  std::set<int> seen;
  for (const auto& part : parts)
    for (int id : part) {
      REQUIRE(seen.insert(id).second);  // disjoint
      REQUIRE(id >= 0);
      REQUIRE(id < 509);
    }
  REQUIRE(seen.size() == 509);
}

TEST_CASE("partition edge shapes") {
  auto solo = partition_evas(13, 1, 3);
  REQUIRE(solo.size() == 1);
  REQUIRE(solo[0].size() == 13);

  auto pairs = partition_evas(8, 4, 3);
  for (const auto& part : pairs) REQUIRE(part.size() == 2);

  REQUIRE_THROWS_AS(partition_evas(3, 4, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(partition_evas(10, 0, 3), std::invalid_argument);
}

TEST_CASE("partition is deterministic and actually shuffles") {
  auto a = partition_evas(100, 4, 21);
  auto b = partition_evas(100, 4, 21);
  REQUIRE(a == b);
  // sequential ids dealt in order would put 0..3 in distinct parts
  bool scrambled = false;
  for (const auto& part : a) {
    for (std::size_t i = 1; i < part.size(); ++i)
      if (part[i] != part[i - 1] + 4) scrambled = true;
  }
  REQUIRE(scrambled);
}

TEST_CASE("single plugged vehicle spans its soc window") {
  EvMember m = plugged_member(window_spanning_spec());
  FleetEnvelope env = build_envelope({m}, 15, 20, 1.0);
  REQUIRE(env.horizon() == 20);
  REQUIRE(env.e_initial_kwh == Catch::Approx(12.0).margin(1e-12));
  // mid-window: plenty of slots left before departure
  REQUIRE(env.e_lower_kwh[0] == Catch::Approx(4.8).margin(1e-12));
  REQUIRE(env.e_upper_kwh[0] == Catch::Approx(21.6).margin(1e-12));
  REQUIRE(env.p_lower_kw[0] == -6.0);
  REQUIRE(env.p_upper_kw[0] == 6.0);
}

TEST_CASE("departure requirement raises the tail energy floor") {
  EvMember m = plugged_member(window_spanning_spec());
  FleetEnvelope env = build_envelope({m}, 15, 20, 1.0);
  // boundary 34 is departure: floor at 0.8 * 24
  REQUIRE(env.e_lower_kwh[18] == Catch::Approx(19.2).margin(1e-12));
  // two slots out the floor relaxes by the max charge energy per slot
  REQUIRE(env.e_lower_kwh[16] ==
          Catch::Approx(19.2 - 2.0 * 0.95 * 6.0).margin(1e-12));
  // after departure the band keeps the admissible departure range
  REQUIRE(env.e_lower_kwh[19] == Catch::Approx(19.2).margin(1e-12));
  REQUIRE(env.e_upper_kwh[19] == Catch::Approx(21.6).margin(1e-12));
  REQUIRE(env.p_upper_kw[19] == 0.0);
  REQUIRE(env.p_lower_kw[19] == 0.0);
}

TEST_CASE("vehicles are frozen before arrival") {
  EvSpec s = window_spanning_spec();
  s.arrival_hour = 18;
  EvMember m = plugged_member(s);
  FleetEnvelope env = build_envelope({m}, 15, 20, 1.0);
  for (int k = 0; k < 3; ++k) {  // boundaries 16, 17, 18
    REQUIRE(env.e_lower_kwh[k] == Catch::Approx(12.0).margin(1e-12));
    REQUIRE(env.e_upper_kwh[k] == Catch::Approx(12.0).margin(1e-12));
    REQUIRE(env.p_lower_kw[k] == 0.0);
    REQUIRE(env.p_upper_kw[k] == 0.0);
  }
  REQUIRE(env.e_upper_kwh[3] == Catch::Approx(21.6).margin(1e-12));
  REQUIRE(env.p_upper_kw[3] == 6.0);
}

TEST_CASE("empty membership yields a zero envelope") {
  FleetEnvelope env = build_envelope({}, 15, 20, 1.0);
  REQUIRE(env.e_initial_kwh == 0.0);
  for (std::size_t k = 0; k < env.horizon(); ++k) {
    REQUIRE(env.e_lower_kwh[k] == 0.0);
    REQUIRE(env.e_upper_kwh[k] == 0.0);
    REQUIRE(env.p_lower_kw[k] == 0.0);
    REQUIRE(env.p_upper_kw[k] == 0.0);
  }
}

TEST_CASE("envelopes add over disjoint memberships") {
  EvMember m = plugged_member(window_spanning_spec());
  FleetEnvelope one = build_envelope({m}, 15, 20, 1.0);
  FleetEnvelope two = build_envelope({m, m}, 15, 20, 1.0);
  REQUIRE(two.e_initial_kwh == Catch::Approx(2.0 * one.e_initial_kwh).margin(1e-12));
  for (std::size_t k = 0; k < one.horizon(); ++k) {
    REQUIRE(two.e_lower_kwh[k] == Catch::Approx(2.0 * one.e_lower_kwh[k]).margin(1e-12));
    REQUIRE(two.e_upper_kwh[k] == Catch::Approx(2.0 * one.e_upper_kwh[k]).margin(1e-12));
    REQUIRE(two.p_lower_kw[k] == Catch::Approx(2.0 * one.p_lower_kw[k]).margin(1e-12));
    REQUIRE(two.p_upper_kw[k] == Catch::Approx(2.0 * one.p_upper_kw[k]).margin(1e-12));
  }

  EvSpec late = window_spanning_spec();
  late.arrival_hour = 19;
  late.soc_arrival = 0.3;
  EvMember m2 = plugged_member(late);
  FleetEnvelope other = build_envelope({m2}, 15, 20, 1.0);
  FleetEnvelope both = build_envelope({m, m2}, 15, 20, 1.0);
  for (std::size_t k = 0; k < both.horizon(); ++k) {
    REQUIRE(both.e_lower_kwh[k] ==
            Catch::Approx(one.e_lower_kwh[k] + other.e_lower_kwh[k]).margin(1e-12));
    REQUIRE(both.p_upper_kw[k] ==
            Catch::Approx(one.p_upper_kw[k] + other.p_upper_kw[k]).margin(1e-12));
  }
}

TEST_CASE("degraded health shrinks the energy band") {
  EvMember m = plugged_member(window_spanning_spec());
  m.state.soh.soh_percent = 90.0;
  REQUIRE(m.q_eff_kwh() == Catch::Approx(21.6).margin(1e-12));
  FleetEnvelope env = build_envelope({m}, 15, 20, 1.0);
  REQUIRE(env.e_upper_kwh[0] == Catch::Approx(0.9 * 21.6).margin(1e-12));
  REQUIRE(env.e_lower_kwh[0] == Catch::Approx(0.2 * 21.6).margin(1e-12));
}

TEST_CASE("admission accepts an idle trajectory inside the band") {
  EvMember m = plugged_member(window_spanning_spec());
  FleetEnvelope env = build_envelope({m}, 15, 20, 1.0);
  std::vector<double> flat(10, 12.0);
  REQUIRE(envelope_admits(env, flat, 1.0));
}

TEST_CASE("admission rejects an energy jump beyond the power sum") {
  EvMember m = plugged_member(window_spanning_spec());
  FleetEnvelope env = build_envelope({m}, 15, 20, 1.0);
  REQUIRE_FALSE(envelope_admits(env, {12.0, 18.5}, 1.0));
  REQUIRE(envelope_admits(env, {12.0, 18.0}, 1.0));
  // and a drop beyond the discharge sum
  REQUIRE_FALSE(envelope_admits(env, {12.0, 5.5}, 1.0));
}

TEST_CASE("admission rejects out-of-band energies") {
  EvMember m = plugged_member(window_spanning_spec());
  FleetEnvelope env = build_envelope({m}, 15, 20, 1.0);
  REQUIRE_FALSE(envelope_admits(env, {22.0}, 1.0));
  // idling past the departure floor fails the tail bound
  std::vector<double> idle(20, 12.0);
  REQUIRE_FALSE(envelope_admits(env, idle, 1.0));
}

TEST_CASE("admission validates the trajectory length") {
  EvMember m = plugged_member(window_spanning_spec());
  FleetEnvelope env = build_envelope({m}, 15, 4, 1.0);
  REQUIRE_THROWS_AS(envelope_admits(env, std::vector<double>(5, 12.0), 1.0),
                    std::invalid_argument);
}

TEST_CASE("per-vehicle feasible dispatch is always admitted") {
  Rng rng(4711);
  for (int trial = 0; trial < 30; ++trial) {
    const int n_ev = 1 + static_cast<int>(rng.uniform_index(4));
    std::vector<EvMember> members;
    for (int i = 0; i < n_ev; ++i) {
      EvSpec s;
      s.id = i;
      s.arrival_hour = 15 + static_cast<int>(rng.uniform_index(7));
      s.depart_hour_abs = 30 + static_cast<int>(rng.uniform_index(5));
      s.soc_arrival = rng.uniform(0.2, 0.8);
      members.push_back(plugged_member(s));
    }
    const int horizon = 20;
    FleetEnvelope env = build_envelope(members, 15, horizon, 1.0);

    std::vector<double> energies;
    for (const auto& m : members) energies.push_back(m.state.energy_kwh);
    std::vector<double> traj;
    for (int k = 0; k < horizon; ++k) {
      const int hour = 15 + k;
      double total = 0.0;
      for (std::size_t i = 0; i < members.size(); ++i) {
        const EvSpec& s = members[i].spec;
        if (ev_plugged_during(s, hour)) {
          EnergyBand next = ev_energy_band(members[i], hour + 1, 1.0);
          double p_lo = std::max(s.p_discharge_max_kw,
                                 (next.lo - energies[i]) / s.efficiency);
          double p_hi = std::min(s.p_charge_max_kw,
                                 (next.hi - energies[i]) / s.efficiency);
          REQUIRE(p_lo <= p_hi + 1e-9);
          const double p = rng.uniform(p_lo, std::max(p_lo, p_hi));
          energies[i] = soc_step(energies[i], p, 1.0, s.efficiency);
        }
        total += energies[i];
      }
      traj.push_back(total);
      REQUIRE(envelope_admits(env, traj, 1.0));
    }
  }
}

TEST_CASE("exhaustive small-instance dispatches are admitted") {
  EvSpec s;
  s.arrival_hour = 15;
  s.depart_hour_abs = 18;
  s.soc_arrival = 0.5;
  s.soc_depart_low = 0.3;
  s.soc_depart_high = 0.9;
  EvMember m = plugged_member(s);
  FleetEnvelope env = build_envelope({m, m}, 15, 3, 1.0);

  const std::vector<double> grid = {-6.0, -3.0, 0.0, 3.0, 6.0};
  auto feasible = [&](const std::vector<double>& powers, std::vector<double>& out) {
    double e = 12.0;
    out.clear();
    for (std::size_t k = 0; k < powers.size(); ++k) {
      e = soc_step(e, powers[k], 1.0, s.efficiency);
      EnergyBand band = ev_energy_band(m, 15 + static_cast<int>(k) + 1, 1.0);
      if (e < band.lo - 1e-9 || e > band.hi + 1e-9) return false;
      out.push_back(e);
    }
    return true;
  };

  std::vector<std::vector<double>> admitted_single;
  std::vector<double> seq(3), traj;
  for (double a : grid)
    for (double b : grid)
      for (double c : grid) {
        seq = {a, b, c};
        if (feasible(seq, traj)) admitted_single.push_back(traj);
      }
  REQUIRE(admitted_single.size() > 10);

  for (const auto& t1 : admitted_single)
    for (const auto& t2 : admitted_single) {
      std::vector<double> sum(3);
      for (int k = 0; k < 3; ++k) sum[k] = t1[k] + t2[k];
      REQUIRE(envelope_admits(env, sum, 1.0));
    }
}

TEST_CASE("fleet csv round-trips exactly") {
  namespace fs = std::filesystem;
  FleetParams p;
  p.count = 17;
  auto fleet = sample_fleet(p, 31);
  const fs::path path = fs::temp_directory_path() / "v2g_test_fleet.csv";
  write_fleet_csv(path.string(), fleet);
  auto back = read_fleet_csv(path.string());
  REQUIRE(back.size() == fleet.size());
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    REQUIRE(back[i].id == fleet[i].id);
    REQUIRE(back[i].arrival_hour == fleet[i].arrival_hour);
    REQUIRE(back[i].depart_hour_abs == fleet[i].depart_hour_abs);
    REQUIRE(back[i].soc_arrival == fleet[i].soc_arrival);
    REQUIRE(back[i].efficiency == fleet[i].efficiency);
  }
  fs::remove(path);

  const fs::path bad = fs::temp_directory_path() / "v2g_test_fleet_bad.csv";
  {
    std::ofstream out(bad);
    out << "id,arrival\n1,15\n";
  }
  REQUIRE_THROWS_AS(read_fleet_csv(bad.string()), IoError);
  fs::remove(bad);
}
