#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "spdcsim/dispersion.hpp"

namespace spdcsim {

/// @brief Pump laser description. bandwidth_rad_per_s = 0 means an ideal CW pump.
struct pump_config {
    double wavelength_nm = 405.0;
    double waist_um = 100.0;            ///< 1/e^2 intensity radius at the crystal
    double bandwidth_rad_per_s = 0.0;   ///< angular-frequency bandwidth, 0 for CW
    double polarization_deg = 45.0;     ///< linear polarization angle from horizontal
};

/// @brief One down-conversion crystal: medium, mounting, and length along the beam.
struct spdc_crystal {
    material medium;
    crystal_orientation orientation;
    double length_mm = 0.0;
};

/// @brief Which crystal of the crossed pair a photon pair was born in.
/// crystal_a converts the vertical pump component into an H-polarized pair,
/// crystal_b (axis rotated 90 deg) converts the horizontal component into a V pair.
enum class pair_origin { crystal_a, crystal_b };

/// @brief One sampled down-conversion event. Angles are internal wave-normal
/// angles in the birth crystal, signed, in the walk-off plane of that crystal.
struct pair_event {
    pair_origin origin = pair_origin::crystal_a;
    double birth_z_mm = 0.0;      ///< depth inside the birth crystal, 0 = entry face
    double transverse_x_um = 0.0; ///< birth offset from the pump axis
    double lambda_s_nm = 0.0;
    double lambda_i_nm = 0.0;
    double alpha_s_deg = 0.0;     ///< signal internal emission angle
    double alpha_i_deg = 0.0;     ///< idler internal emission angle (transverse balance)
};

/// @brief Joint spectral-angular emission density on a rectangular grid.
struct efficiency_map {
    std::vector<double> lambda_nm;  ///< row coordinates, signal wavelength
    std::vector<double> alpha_deg;  ///< column coordinates, internal signal emission angle
    Eigen::MatrixXd value;          ///< value(i, j) in [0, 1], 1 at exact phase matching
};

/// @brief Fractions of total map weight inside the detection band, computed for
/// both interpretations of the angular coordinate.
struct band_capture {
    double external_fraction = 0.0;
    double internal_fraction = 0.0;
};

/// @brief Sampling domain for Monte Carlo pair generation.
struct sample_domain {
    double lambda_lo_nm = 775.0;
    double lambda_hi_nm = 785.0;
    double alpha_ext_max_deg = 0.25; ///< signal external half-angle, symmetric about 0
};

/// Idler wavelength from energy conservation, 1/lp = 1/ls + 1/li.
double idler_wavelength_nm(double lambda_p_nm, double lambda_s_nm);

/// @brief Idler internal angle that balances the transverse wave-vector of the
/// signal: n_o(ls) sin(as)/ls + n_o(li) sin(ai)/li = 0 (collinear pump).
double idler_angle_rad(const material& m, double lambda_s_nm, double lambda_i_nm,
                       double alpha_s_rad);

/// @brief Longitudinal phase mismatch Delta k_z (rad/mm) for a type-I process:
/// extraordinary pump at the cut angle, ordinary daughters at internal angles
/// alpha_s, alpha_i from the pump axis.
double phase_mismatch(const pump_config& pump, const spdc_crystal& crystal,
                      double lambda_s_nm, double lambda_i_nm,
                      double alpha_s_rad, double alpha_i_rad);

/// @brief Conversion efficiency envelope sinc^2(dk L / 2), peak 1 at dk = 0.
double pm_efficiency(double dk_rad_per_mm, double length_mm);

/// @brief Cut angle (deg) that phase matches the collinear degenerate-pair process
/// lambda_p -> (lambda_s, lambda_i). Bracketed root of the collinear mismatch on
/// (0, 90) deg; throws physics_error when no sign change exists.
double phase_matching_angle(double lambda_p_nm, double lambda_s_nm, double lambda_i_nm,
                            const material& m);

/// @brief Joint emission density over a signal wavelength x internal emission
/// angle grid, idler slaved by energy and transverse balance. Values are the
/// raw pm_efficiency envelope, so a grid cell sitting exactly on the
/// phase-matching ridge reads 1.
efficiency_map emission_map(const pump_config& pump, const spdc_crystal& crystal,
                            const std::vector<double>& lambda_grid_nm,
                            const std::vector<double>& alpha_int_grid_deg);

/// @brief Of the map weight whose wavelength lies in a two-lobe spectral band,
/// the fraction that a collection cone captures. external_fraction refracts
/// each cell's internal angle to the lab frame before applying the cone cut
/// (the physical collection geometry); internal_fraction cuts the internal
/// coordinate directly (diagnostic companion figure).
band_capture band_capture_fraction(const efficiency_map& map, const material& m,
                                   double band_a_lo_nm, double band_a_hi_nm,
                                   double band_b_lo_nm, double band_b_hi_nm,
                                   double cone_half_angle_deg);

/// @brief Monte Carlo pair sampler. Draws signal wavelength and external angle by
/// rejection against pm_efficiency, birth depth uniform in the crystal, birth
/// offset Gaussian from the pump waist, origin crystal Bernoulli from the pump
/// polarization. Bit-for-bit reproducible for a given seed. envelope_override,
/// when positive, replaces the scanned rejection envelope (testing hook).
/// Throws physics_error when the domain has no efficiency or an event exceeds
/// the rejection iteration cap.
std::vector<pair_event> sample_pairs(std::size_t n, const pump_config& pump,
                                     const std::array<spdc_crystal, 2>& crystals,
                                     const sample_domain& domain, std::uint64_t seed,
                                     double envelope_override = 0.0);

} // namespace spdcsim
