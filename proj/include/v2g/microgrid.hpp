#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2g/csv.hpp"
#include "v2g/rng.hpp"

namespace v2g {

inline constexpr double kPi = 3.14159265358979323846;

// One day of exogenous profiles, hour-indexed 0..23. Scheduling slots beyond
// midnight wrap via hour % 24.
struct GridDay {
  std::array<double, 24> base_kw{};
  std::array<double, 24> pv_kw{};
  std::array<double, 24> wind_kw{};
  std::array<double, 24> tariff{};  // $/kWh
  double transformer_kva = 4000.0;
  double power_factor = 0.8;
  double tie_line_min_kw = 0.0;
  double alpha_variance = 0.01;   // $/kW^2 weight on load variance
  double psi_mean_load = 0.1;     // weight on mean net load

  double tie_line_max_kw() const { return transformer_kva * power_factor; }

  double base_at(int hour) const { return base_kw[((hour % 24) + 24) % 24]; }
  double pv_at(int hour) const { return pv_kw[((hour % 24) + 24) % 24]; }
  double wind_at(int hour) const { return wind_kw[((hour % 24) + 24) % 24]; }
  double tariff_at(int hour) const { return tariff[((hour % 24) + 24) % 24]; }
  double net_base_at(int hour) const {
    return base_at(hour) - pv_at(hour) - wind_at(hour);
  }
};

// Population variance of a load profile.
inline double load_variance(const std::vector<double>& p) {
  if (p.empty()) throw std::invalid_argument("load_variance: empty profile");
  double mean = 0.0;
  for (double v : p) mean += v;
  mean /= static_cast<double>(p.size());
  double acc = 0.0;
  for (double v : p) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(p.size());
}

// Net load seen through the tie line at each hour of the profile window.
inline std::vector<double> total_load(const GridDay& day, const std::vector<double>& p_eva,
                                      int start_hour) {
  std::vector<double> out(p_eva.size());
  for (std::size_t k = 0; k < p_eva.size(); ++k)
    out[k] = day.base_at(start_hour + static_cast<int>(k)) -
             day.pv_at(start_hour + static_cast<int>(k)) -
             day.wind_at(start_hour + static_cast<int>(k)) + p_eva[k];
  return out;
}

// The dispatch-facing load component: renewables netted against EVA power,
// excluding the fixed base (kept exactly in that form on purpose).
inline std::vector<double> power_load(const GridDay& day, const std::vector<double>& p_eva,
                                      int start_hour) {
  std::vector<double> out(p_eva.size());
  for (std::size_t k = 0; k < p_eva.size(); ++k)
    out[k] = -day.pv_at(start_hour + static_cast<int>(k)) -
             day.wind_at(start_hour + static_cast<int>(k)) + p_eva[k];
  return out;
}

// F1: fluctuation plus mean net-load cost.
inline double cost_f1(const GridDay& day, const std::vector<double>& p_total,
                      const std::vector<double>& p_net_load) {
  if (p_net_load.empty()) throw std::invalid_argument("cost_f1: empty profile");
  double mean = 0.0;
  for (double v : p_net_load) mean += v;
  mean /= static_cast<double>(p_net_load.size());
  return day.alpha_variance * load_variance(p_total) + day.psi_mean_load * mean;
}

// F2: tariff-weighted EVA energy cost over the window.
inline double cost_f2(const GridDay& day, const std::vector<double>& p_eva,
                      int start_hour, double dt_hours) {
  double acc = 0.0;
  for (std::size_t k = 0; k < p_eva.size(); ++k)
    acc += day.tariff_at(start_hour + static_cast<int>(k)) * p_eva[k] * dt_hours;
  return acc;
}

// F3: battery depreciation for the fade incurred, replacement plus labor
// prorated over the usable health band.
inline double cost_f3(const std::vector<double>& soh_fractions, double capacity_kwh,
                      double cost_per_kwh = 300.0, double labor_cost = 240.0,
                      double soh_eol = 0.8) {
  if (soh_eol >= 1.0) throw std::invalid_argument("cost_f3: soh_eol must be < 1");
  const double unit = cost_per_kwh + labor_cost / (1.0 - soh_eol);
  double acc = 0.0;
  for (double soh : soh_fractions) {
    if (soh < 0.0 || soh > 1.0)
      throw std::invalid_argument("cost_f3: soh must be a fraction");
    acc += unit * (1.0 - soh) * capacity_kwh;
  }
  return acc;
}

struct CostBreakdown {
  double charging = 0.0;     // F2
  double degradation = 0.0;  // F3
  double fluctuation = 0.0;  // alpha * variance
  double total = 0.0;        // sum of the above, exact by construction
  double variance = 0.0;
};

inline CostBreakdown dso_decomposition(const GridDay& day,
                                       const std::vector<double>& p_eva,
                                       const std::vector<double>& soh_fractions,
                                       double capacity_kwh, int start_hour,
                                       double dt_hours, double cost_per_kwh = 300.0,
                                       double labor_cost = 240.0, double soh_eol = 0.8) {
  CostBreakdown b;
  b.charging = cost_f2(day, p_eva, start_hour, dt_hours);
  b.degradation = cost_f3(soh_fractions, capacity_kwh, cost_per_kwh, labor_cost, soh_eol);
  b.variance = load_variance(total_load(day, p_eva, start_hour));
  b.fluctuation = day.alpha_variance * b.variance;
  b.total = b.charging + b.degradation + b.fluctuation;
  return b;
}

struct GridViolation {
  int slot = 0;
  double p_total_kw = 0.0;
  double bound_kw = 0.0;
};

// Tie-line band check on a realized total-load profile.
inline std::vector<GridViolation> check_grid_constraints(const GridDay& day,
                                                         const std::vector<double>& p_total) {
  std::vector<GridViolation> v;
  const double hi = day.tie_line_max_kw();
  const double lo = day.tie_line_min_kw;
  for (std::size_t k = 0; k < p_total.size(); ++k) {
    if (p_total[k] > hi) v.push_back({static_cast<int>(k), p_total[k], hi});
    else if (p_total[k] < lo) v.push_back({static_cast<int>(k), p_total[k], lo});
  }
  return v;
}

namespace detail {
// Residential shape: night valley, morning shoulder, evening peak at 17-19.
inline const std::array<double, 24>& base_shape() {
  static const std::array<double, 24> s = {
      0.62, 0.57, 0.54, 0.52, 0.52, 0.55, 0.62, 0.72, 0.80, 0.84, 0.86, 0.88,
      0.87, 0.85, 0.84, 0.86, 0.92, 1.00, 1.00, 0.97, 0.92, 0.84, 0.74, 0.67};
  return s;
}
}  // namespace detail

struct SyntheticDayParams {
  int n_ev = 509;
  double base_peak_per_ev_kw = 5.7;
  double pv_peak_per_ev_kw = 1.2;
  double wind_base_per_ev_kw = 0.8;
  double noise_frac = 0.02;
  double tariff_low = 0.05;
  double tariff_high = 0.12;
  int tariff_low_start_hour = 23;
  int tariff_low_end_hour = 7;
  double transformer_kva = 4000.0;
  double power_factor = 0.8;
  double tie_line_min_kw = 0.0;
  double alpha_variance = 0.01;
  double psi_mean_load = 0.1;
};

// Deterministic per-seed synthetic day, scaled by fleet size so that EV power
// is a meaningful fraction of the system at any scale.
inline GridDay synthetic_day(const SyntheticDayParams& p, std::uint64_t seed) {
  GridDay day;
  day.transformer_kva = p.transformer_kva;
  day.power_factor = p.power_factor;
  day.tie_line_min_kw = p.tie_line_min_kw;
  day.alpha_variance = p.alpha_variance;
  day.psi_mean_load = p.psi_mean_load;
  Rng rng(mix_seed(seed, 0x6d47ULL));
  const double n = static_cast<double>(p.n_ev);
  for (int h = 0; h < 24; ++h) {
    const double noise = 1.0 + p.noise_frac * rng.normal(0.0, 1.0);
    day.base_kw[h] = p.base_peak_per_ev_kw * n * detail::base_shape()[h] * noise;
    double pv = 0.0;
    if (h >= 7 && h <= 17)
      pv = p.pv_peak_per_ev_kw * n *
           std::sin(kPi * (static_cast<double>(h) - 7.0) / 10.0);
    day.pv_kw[h] = pv * (1.0 + p.noise_frac * rng.normal(0.0, 1.0));
    day.wind_kw[h] = p.wind_base_per_ev_kw * n *
                     (0.8 + 0.2 * std::cos(2.0 * kPi * (static_cast<double>(h) - 2.0) / 24.0)) *
                     (1.0 + p.noise_frac * rng.normal(0.0, 1.0));
    if (day.pv_kw[h] < 0.0) day.pv_kw[h] = 0.0;
    if (day.wind_kw[h] < 0.0) day.wind_kw[h] = 0.0;
    const bool low = (p.tariff_low_start_hour <= p.tariff_low_end_hour)
                         ? (h >= p.tariff_low_start_hour && h < p.tariff_low_end_hour)
                         : (h >= p.tariff_low_start_hour || h < p.tariff_low_end_hour);
    day.tariff[h] = low ? p.tariff_low : p.tariff_high;
  }
  return day;
}

// Strict profile ingestion: header 'slot,base_kw,pv_kw,wind_kw,tariff',
// exactly 24 rows with slots 0..23 in order.
inline GridDay load_profile_csv(const std::string& path, const GridDay& defaults) {
  CsvTable t = read_csv(path);
  const std::vector<std::string> want = {"slot", "base_kw", "pv_kw", "wind_kw", "tariff"};
  if (t.header != want) throw IoError("profile csv: bad header in " + path);
  if (t.rows.size() != 24) throw IoError("profile csv: expected 24 rows in " + path);
  GridDay day = defaults;
  for (int h = 0; h < 24; ++h) {
    const auto& row = t.rows[static_cast<std::size_t>(h)];
    if (parse_double(row[0]) != h) throw IoError("profile csv: slots must be 0..23 in order");
    day.base_kw[h] = parse_double(row[1]);
    day.pv_kw[h] = parse_double(row[2]);
    day.wind_kw[h] = parse_double(row[3]);
    day.tariff[h] = parse_double(row[4]);
  }
  return day;
}

}  // namespace v2g
