#include "spdcsim/dispersion.hpp"

#include <cmath>

#include "spdcsim/constants.hpp"

namespace spdcsim {

namespace {

const sellmeier_coefficients& branch(const material& m, light_pol pol) {
    if (pol == light_pol::ordinary) return m.ordinary;
    if (!m.extraordinary)
        throw config_error("material '" + m.name + "' is isotropic, it has no extraordinary branch");
    return *m.extraordinary;
}

void check_window(const material& m, double lambda_um) {
    if (!(lambda_um >= m.window_lo_um && lambda_um <= m.window_hi_um))
        throw config_error("wavelength " + std::to_string(lambda_um) + " um outside validity window [" +
                           std::to_string(m.window_lo_um) + ", " + std::to_string(m.window_hi_um) +
                           "] um of material '" + m.name + "'");
}

double n_from_n2(const material& m, double n2) {
    if (!(n2 > 0.0))
        throw physics_error("nonpositive n^2 from the fit of material '" + m.name + "'");
    return std::sqrt(n2);
}

} // namespace

double refractive_index(const material& m, light_pol pol, double lambda_um) {
    check_window(m, lambda_um);
    return n_from_n2(m, sellmeier_n2(branch(m, pol), lambda_um));
}

double effective_index(double n_o, double n_e, double theta_rad) {
    const double co = std::cos(theta_rad) / n_o;
    const double se = std::sin(theta_rad) / n_e;
    return 1.0 / std::sqrt(co * co + se * se);
}

double walkoff_displacement(const material& m, double lambda_um, double theta_rad,
                            double length_mm) {
    const double n_o = refractive_index(m, light_pol::ordinary, lambda_um);
    const double n_e = refractive_index(m, light_pol::extraordinary, lambda_um);
    const double n_eff = effective_index(n_o, n_e, theta_rad);
    const double rho = 0.5 * n_eff * n_eff * (1.0 / (n_o * n_o) - 1.0 / (n_e * n_e)) *
                       std::sin(2.0 * theta_rad);
    // rho is the signed walk-off angle in radians; |rho| < 0.07 for the media here,
    // so the small-angle displacement rho * L is used throughout
    return rho * length_mm;
}

double group_index(const material& m, light_pol pol, double lambda_um) {
    check_window(m, lambda_um);
    const sellmeier_coefficients& s = branch(m, pol);
    const double n = n_from_n2(m, sellmeier_n2(s, lambda_um));
    const double dn_dl = sellmeier_dn2_dlambda(s, lambda_um) / (2.0 * n);
    return n - lambda_um * dn_dl;
}

double effective_group_index(const material& m, double theta_rad, double lambda_um) {
    check_window(m, lambda_um);
    if (!m.extraordinary)
        throw config_error("material '" + m.name + "' is isotropic, it has no extraordinary branch");
    const double n_o = n_from_n2(m, sellmeier_n2(m.ordinary, lambda_um));
    const double n_e = n_from_n2(m, sellmeier_n2(*m.extraordinary, lambda_um));
    const double n = effective_index(n_o, n_e, theta_rad);
    const double co = std::cos(theta_rad);
    const double se = std::sin(theta_rad);
    // d n_eff/d lambda at fixed theta, via 1/n_eff^2 = cos^2/n_o^2 + sin^2/n_e^2
    const double dno2 = sellmeier_dn2_dlambda(m.ordinary, lambda_um);
    const double dne2 = sellmeier_dn2_dlambda(*m.extraordinary, lambda_um);
    const double dn_dl = 0.5 * n * n * n *
                         (co * co * dno2 / (n_o * n_o * n_o * n_o) +
                          se * se * dne2 / (n_e * n_e * n_e * n_e));
    return n - lambda_um * dn_dl;
}

double coherence_time_fs(double lambda_um, double delta_lambda_um) {
    if (!(delta_lambda_um > 0.0))
        throw config_error("coherence time needs a positive filter bandwidth");
    const double c_um_per_fs = c_mm_per_fs * 1.0e3;
    return lambda_um * lambda_um / (c_um_per_fs * delta_lambda_um);
}

} // namespace spdcsim
