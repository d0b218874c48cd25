#pragma once

#include <optional>
#include <string>

#include "spdcsim/errors.hpp"

namespace spdcsim {

/// @brief Single-oscillator Sellmeier coefficients for
/// n^2(lambda) = A + B / (lambda^2 - C) + E * lambda^2, lambda in micrometers.
/// E carries its own sign; the common "- D lambda^2" tail is stored as E = -D.
struct sellmeier_coefficients {
    double A = 0.0;
    double B = 0.0;
    double C = 0.0;
    double E = 0.0;
};

/// @brief Polarization branch inside a uniaxial medium.
enum class light_pol { ordinary, extraordinary };

/// @brief One optical medium: ordinary curve always present, extraordinary only
/// for uniaxial crystals, plus the fit validity window and a provenance note.
struct material {
    std::string name;
    sellmeier_coefficients ordinary;
    std::optional<sellmeier_coefficients> extraordinary; ///< empty for isotropic glasses
    double window_lo_um = 0.0;
    double window_hi_um = 0.0;
    std::string source;

    bool uniaxial() const noexcept { return extraordinary.has_value(); }
};

/// @brief Which lab plane the optic axis lies in when a crystal is mounted.
/// A photon polarized in the same plane as the axis sees the extraordinary index.
enum class axis_plane { horizontal, vertical };

/// @brief Mounting of a uniaxial crystal: axis tilt from the beam axis and the
/// lab plane that contains the optic axis.
struct crystal_orientation {
    double cut_angle_deg = 0.0; ///< angle between optic axis and the nominal beam axis
    axis_plane plane = axis_plane::vertical;
};

/// n^2 from the fit, no window check. Template so probe scalars work too.
template <typename T>
T sellmeier_n2(const sellmeier_coefficients& s, T lambda_um) {
    const T l2 = lambda_um * lambda_um;
    return T(s.A) + T(s.B) / (l2 - T(s.C)) + T(s.E) * l2;
}

/// d(n^2)/d(lambda) from the fit, analytic.
template <typename T>
T sellmeier_dn2_dlambda(const sellmeier_coefficients& s, T lambda_um) {
    const T l2 = lambda_um * lambda_um;
    const T den = l2 - T(s.C);
    return T(-2.0) * T(s.B) * lambda_um / (den * den) + T(2.0) * T(s.E) * lambda_um;
}

/// @brief Phase index of the requested branch at lambda (micrometers).
/// Throws config_error outside the material window or when asking for the
/// extraordinary branch of an isotropic medium.
double refractive_index(const material& m, light_pol pol, double lambda_um);

/// @brief Index seen by an extraordinary wave whose normal makes angle theta
/// with the optic axis: 1/n^2 = (cos theta / n_o)^2 + (sin theta / n_e)^2.
double effective_index(double n_o, double n_e, double theta_rad);

/// @brief Signed lateral Poynting walk-off of an extraordinary wave after
/// propagating length_mm along its wave normal at angle theta to the axis.
/// rho = (n_eff(theta)^2 / 2) (1/n_o^2 - 1/n_e^2) sin(2 theta); displacement = rho * L.
/// Negative for negative uniaxial media (beam bends toward the axis).
double walkoff_displacement(const material& m, double lambda_um, double theta_rad, double length_mm);

/// @brief Group index n_g = n - lambda dn/dlambda of a principal branch, analytic.
double group_index(const material& m, light_pol pol, double lambda_um);

/// @brief Group index of the extraordinary wave at fixed propagation angle theta:
/// n_g = n_eff - lambda d(n_eff)/dlambda with theta held constant, analytic.
double effective_group_index(const material& m, double theta_rad, double lambda_um);

/// @brief Two-photon coherence time (fs) set by a spectral filter:
/// tau_c = lambda^2 / (c * delta_lambda), both wavelengths in micrometers.
double coherence_time_fs(double lambda_um, double delta_lambda_um);

} // namespace spdcsim
