#pragma once

// Conversion between the file units (mD, bar, day, m3/day) and SI.

namespace nres::units {

inline constexpr double kMilliDarcy = 9.869233e-16;  // m^2
inline constexpr double kBar = 1.0e5;                // Pa
inline constexpr double kDay = 86400.0;              // s

constexpr double md_to_m2(double md) { return md * kMilliDarcy; }
constexpr double bar_to_pa(double bar) { return bar * kBar; }
constexpr double pa_to_bar(double pa) { return pa / kBar; }
constexpr double days_to_s(double days) { return days * kDay; }
constexpr double m3_per_day_to_si(double q) { return q / kDay; }
constexpr double si_to_m3_per_day(double q) { return q * kDay; }

}  // namespace nres::units
