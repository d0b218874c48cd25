#include "spdcsim/spdc.hpp"

#include <algorithm>
#include <cmath>

#include "spdcsim/constants.hpp"
#include "spdcsim/errors.hpp"
#include "spdcsim/rng.hpp"

namespace spdcsim {

namespace {

constexpr std::size_t rejection_cap = 10000;

double collinear_mismatch(double theta_rad, double lambda_p_nm, double lambda_s_nm,
                          double lambda_i_nm, const material& m) {
    const double n_p = effective_index(
        refractive_index(m, light_pol::ordinary, lambda_p_nm * 1e-3),
        refractive_index(m, light_pol::extraordinary, lambda_p_nm * 1e-3), theta_rad);
    const double n_s = refractive_index(m, light_pol::ordinary, lambda_s_nm * 1e-3);
    const double n_i = refractive_index(m, light_pol::ordinary, lambda_i_nm * 1e-3);
    // rad/mm: wavelengths are in nm, 1 mm = 1e6 nm
    return 2.0 * pi * 1.0e6 *
           (n_p / lambda_p_nm - n_s / lambda_s_nm - n_i / lambda_i_nm);
}

} // namespace

double idler_wavelength_nm(double lambda_p_nm, double lambda_s_nm) {
    if (!(lambda_s_nm > lambda_p_nm))
        throw config_error("signal wavelength must exceed the pump wavelength");
    return 1.0 / (1.0 / lambda_p_nm - 1.0 / lambda_s_nm);
}

double idler_angle_rad(const material& m, double lambda_s_nm, double lambda_i_nm,
                       double alpha_s_rad) {
    const double n_s = refractive_index(m, light_pol::ordinary, lambda_s_nm * 1e-3);
    const double n_i = refractive_index(m, light_pol::ordinary, lambda_i_nm * 1e-3);
    const double s = -n_s * std::sin(alpha_s_rad) * lambda_i_nm / (n_i * lambda_s_nm);
    if (std::abs(s) > 1.0)
        throw physics_error("transverse balance pushes the idler beyond 90 deg");
    return std::asin(s);
}

double phase_mismatch(const pump_config& pump, const spdc_crystal& crystal,
                      double lambda_s_nm, double lambda_i_nm,
                      double alpha_s_rad, double alpha_i_rad) {
    const material& m = crystal.medium;
    const double theta = deg_to_rad(crystal.orientation.cut_angle_deg);
    const double n_p = effective_index(
        refractive_index(m, light_pol::ordinary, pump.wavelength_nm * 1e-3),
        refractive_index(m, light_pol::extraordinary, pump.wavelength_nm * 1e-3), theta);
    const double n_s = refractive_index(m, light_pol::ordinary, lambda_s_nm * 1e-3);
    const double n_i = refractive_index(m, light_pol::ordinary, lambda_i_nm * 1e-3);
    return 2.0 * pi * 1.0e6 *
           (n_p / pump.wavelength_nm - n_s * std::cos(alpha_s_rad) / lambda_s_nm -
            n_i * std::cos(alpha_i_rad) / lambda_i_nm);
}

double pm_efficiency(double dk_rad_per_mm, double length_mm) {
    const double x = 0.5 * dk_rad_per_mm * length_mm;
    if (x == 0.0) return 1.0;
    const double s = std::sin(x) / x;
    return s * s;
}

double phase_matching_angle(double lambda_p_nm, double lambda_s_nm, double lambda_i_nm,
                            const material& m) {
    if (!m.uniaxial())
        throw config_error("phase matching needs a uniaxial material, '" + m.name + "' is isotropic");
    auto f = [&](double theta_rad) {
        return collinear_mismatch(theta_rad, lambda_p_nm, lambda_s_nm, lambda_i_nm, m);
    };
    double lo = deg_to_rad(1.0e-9);
    double hi = deg_to_rad(90.0 - 1.0e-9);
    double flo = f(lo);
    double fhi = f(hi);
    if (flo * fhi > 0.0)
        throw physics_error("no phase-matching angle in (0, 90) deg for this wavelength triple");
    // bisection: monotone integrand, 200 halvings take the bracket below 1e-50 deg,
    // far inside the 1e-10 residual requirement
    for (int it = 0; it < 200 && (hi - lo) > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0) { lo = hi = mid; break; }
        if (flo * fm <= 0.0) {
            hi = mid;
            fhi = fm;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    return rad_to_deg(0.5 * (lo + hi));
}

efficiency_map emission_map(const pump_config& pump, const spdc_crystal& crystal,
                            const std::vector<double>& lambda_grid_nm,
                            const std::vector<double>& alpha_int_grid_deg) {
    if (lambda_grid_nm.empty() || alpha_int_grid_deg.empty())
        throw config_error("emission map needs nonempty grids");
    efficiency_map map;
    map.lambda_nm = lambda_grid_nm;
    map.alpha_deg = alpha_int_grid_deg;
    map.value.resize(static_cast<Eigen::Index>(lambda_grid_nm.size()),
                     static_cast<Eigen::Index>(alpha_int_grid_deg.size()));
    const material& m = crystal.medium;
    for (std::size_t i = 0; i < lambda_grid_nm.size(); ++i) {
        const double ls = lambda_grid_nm[i];
        const double li = idler_wavelength_nm(pump.wavelength_nm, ls);
        for (std::size_t j = 0; j < alpha_int_grid_deg.size(); ++j) {
            const double a_s = deg_to_rad(alpha_int_grid_deg[j]);
            const double a_i = idler_angle_rad(m, ls, li, a_s);
            const double dk = phase_mismatch(pump, crystal, ls, li, a_s, a_i);
            map.value(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                pm_efficiency(dk, crystal.length_mm);
        }
    }
    return map;
}

band_capture band_capture_fraction(const efficiency_map& map, const material& m,
                                   double band_a_lo_nm, double band_a_hi_nm,
                                   double band_b_lo_nm, double band_b_hi_nm,
                                   double cone_half_angle_deg) {
    double band_total = 0.0, in_ext = 0.0, in_int = 0.0;
    for (std::size_t i = 0; i < map.lambda_nm.size(); ++i) {
        const double ls = map.lambda_nm[i];
        const bool in_band = (ls >= band_a_lo_nm && ls <= band_a_hi_nm) ||
                             (ls >= band_b_lo_nm && ls <= band_b_hi_nm);
        if (!in_band) continue;
        const double n_s = refractive_index(m, light_pol::ordinary, ls * 1e-3);
        for (std::size_t j = 0; j < map.alpha_deg.size(); ++j) {
            const double v = map.value(static_cast<Eigen::Index>(i),
                                       static_cast<Eigen::Index>(j));
            band_total += v;
            const double a = std::abs(map.alpha_deg[j]);
            if (a <= cone_half_angle_deg) in_int += v;
            // the cell coordinate is an internal angle; its lab-frame direction
            // follows from exit refraction at the plane output face
            const double a_ext = rad_to_deg(
                std::asin(std::clamp(n_s * std::sin(deg_to_rad(a)), -1.0, 1.0)));
            if (a_ext <= cone_half_angle_deg) in_ext += v;
        }
    }
    if (band_total <= 0.0)
        throw physics_error("band capture undefined, the map carries no weight in the band");
    return band_capture{in_ext / band_total, in_int / band_total};
}

std::vector<pair_event> sample_pairs(std::size_t n, const pump_config& pump,
                                     const std::array<spdc_crystal, 2>& crystals,
                                     const sample_domain& domain, std::uint64_t seed,
                                     double envelope_override) {
    if (!(domain.lambda_hi_nm > domain.lambda_lo_nm) || !(domain.alpha_ext_max_deg >= 0.0))
        throw config_error("empty pair sampling domain");
    const spdc_crystal& gen = crystals[0];
    if (!(gen.length_mm > 0.0))
        throw config_error("pair sampling needs a positive crystal length");
    const material& m = gen.medium;

    // rejection envelope: densely scanned domain maximum with a safety margin
    double envelope = envelope_override;
    if (envelope <= 0.0) {
        const int nl = 201, na = 201;
        double peak = 0.0;
        for (int i = 0; i < nl; ++i) {
            const double ls = domain.lambda_lo_nm +
                              (domain.lambda_hi_nm - domain.lambda_lo_nm) * i / (nl - 1);
            const double li = idler_wavelength_nm(pump.wavelength_nm, ls);
            const double n_s = refractive_index(m, light_pol::ordinary, ls * 1e-3);
            for (int j = 0; j < na; ++j) {
                const double ae = domain.alpha_ext_max_deg * (2.0 * j / (na - 1) - 1.0);
                const double a_s = std::asin(std::sin(deg_to_rad(ae)) / n_s);
                const double a_i = idler_angle_rad(m, ls, li, a_s);
                peak = std::max(peak, pm_efficiency(phase_mismatch(pump, gen, ls, li, a_s, a_i),
                                                    gen.length_mm));
            }
        }
        if (peak <= 0.0)
            throw physics_error("pair sampling domain has no phase-matched emission");
        envelope = peak * 1.0001;
    }

    const double p_origin_a = std::pow(std::sin(deg_to_rad(pump.polarization_deg)), 2.0);
    const double sigma_x_mm = 0.5 * pump.waist_um * 1e-3;

    std::vector<pair_event> events(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
        splitmix64 g = event_stream(seed, idx);
        pair_event ev;
        bool accepted = false;
        for (std::size_t it = 0; it < rejection_cap; ++it) {
            const double ls = g.uniform(domain.lambda_lo_nm, domain.lambda_hi_nm);
            const double ae = g.uniform(-domain.alpha_ext_max_deg, domain.alpha_ext_max_deg);
            const double li = idler_wavelength_nm(pump.wavelength_nm, ls);
            const double n_s = refractive_index(m, light_pol::ordinary, ls * 1e-3);
            const double a_s = std::asin(std::sin(deg_to_rad(ae)) / n_s);
            const double a_i = idler_angle_rad(m, ls, li, a_s);
            const double eff = pm_efficiency(phase_mismatch(pump, gen, ls, li, a_s, a_i),
                                             gen.length_mm);
            if (g.uniform01() * envelope <= eff) {
                ev.lambda_s_nm = ls;
                ev.lambda_i_nm = li;
                ev.alpha_s_deg = rad_to_deg(a_s);
                ev.alpha_i_deg = rad_to_deg(a_i);
                accepted = true;
                break;
            }
        }
        if (!accepted)
            throw physics_error("pair sampling exceeded the rejection cap, the emission map "
                                "is degenerate on this domain");
        ev.origin = (g.uniform01() < p_origin_a) ? pair_origin::crystal_a : pair_origin::crystal_b;
        ev.birth_z_mm = g.uniform(0.0, gen.length_mm);
        ev.transverse_x_um = sigma_x_mm * 1e3 * g.gaussian();
        events[idx] = ev;
    }
    return events;
}

} // namespace spdcsim
