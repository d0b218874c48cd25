#pragma once

#include <numbers>

namespace spdcsim {

/// Vacuum speed of light in the unit system used throughout: millimeters per femtosecond.
inline constexpr double c_mm_per_fs = 2.99792458e-4;

inline constexpr double pi = std::numbers::pi;

inline constexpr double deg_to_rad(double deg) noexcept { return deg * pi / 180.0; }
inline constexpr double rad_to_deg(double rad) noexcept { return rad * 180.0 / pi; }

} // namespace spdcsim
