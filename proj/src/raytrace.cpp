#include "spdcsim/raytrace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spdcsim/constants.hpp"
#include "spdcsim/errors.hpp"

namespace spdcsim {

namespace {

constexpr double z_epsilon_mm = 1e-12;
constexpr double newton_tol_mm = 1e-10;
constexpr int newton_max_steps = 50;

/// A photon polarized in the plane that contains the optic axis couples to the
/// extraordinary branch; the orthogonal polarization stays ordinary.
bool is_extraordinary(photon_pol pol, axis_plane plane) {
    return (pol == photon_pol::horizontal && plane == axis_plane::horizontal) ||
           (pol == photon_pol::vertical && plane == axis_plane::vertical);
}

struct slab_solution {
    double alpha_rad = 0.0;  ///< wave-normal angle from the slab normal
    double theta_rad = 0.0;  ///< wave-normal angle from the optic axis (e branch)
    double n_phase = 1.0;
    double n_time = 1.0;
    bool extraordinary = false;
};

/// Resolve branch, internal angle, and indices for a ray whose air-side
/// transverse direction component is kx_per_k0. The extraordinary branch is a
/// self-consistent fixed point: the internal angle depends on the index, which
/// depends on the angle between the wave normal and the tilted optic axis.
slab_solution solve_slab(const crystal_slab& slab, double kx_per_k0, double lambda_nm,
                         photon_pol pol, timing_mode mode) {
    const material& m = *slab.medium;
    const double lam_um = lambda_nm * 1e-3;
    slab_solution out;
    out.extraordinary = m.uniaxial() && is_extraordinary(pol, slab.orientation.plane);

    if (!out.extraordinary) {
        const double n = refractive_index(m, light_pol::ordinary, lam_um);
        if (std::abs(kx_per_k0) >= n)
            throw physics_error("transverse wave vector exceeds the slab index");
        out.alpha_rad = std::asin(kx_per_k0 / n);
        out.n_phase = n;
        out.n_time = (mode == timing_mode::phase) ? n : group_index(m, light_pol::ordinary, lam_um);
        return out;
    }

    const double theta_cut = deg_to_rad(slab.orientation.cut_angle_deg);
    const double sgn = static_cast<double>(slab.walkoff_sign);
    const double n_o = refractive_index(m, light_pol::ordinary, lam_um);
    const double n_e = refractive_index(m, light_pol::extraordinary, lam_um);
    double alpha = std::asin(kx_per_k0 / effective_index(n_o, n_e, theta_cut));
    for (int it = 0; it < 60; ++it) {
        const double theta = theta_cut - sgn * alpha;
        const double next = std::asin(kx_per_k0 / effective_index(n_o, n_e, theta));
        const bool done = std::abs(next - alpha) < 2e-16;
        alpha = next;
        if (done) break;
    }
    out.alpha_rad = alpha;
    out.theta_rad = theta_cut - sgn * alpha;
    out.n_phase = effective_index(n_o, n_e, out.theta_rad);
    out.n_time = (mode == timing_mode::phase) ? out.n_phase
                                              : effective_group_index(m, out.theta_rad, lam_um);
    return out;
}

} // namespace

const crystal_slab* optical_system::slab_by_role(slab_role role) const noexcept {
    for (const auto& s : slabs)
        if (s.role == role) return &s;
    return nullptr;
}

double surface_sag(const lens_surface& s, double x) {
    double sag = 0.0;
    if (s.radius_mm != 0.0) {
        const double c = 1.0 / s.radius_mm;
        const double arg = 1.0 - (1.0 + s.conic) * c * c * x * x;
        if (arg <= 0.0) return std::numeric_limits<double>::quiet_NaN();
        sag = c * x * x / (1.0 + std::sqrt(arg));
    }
    double xp = x * x * x * x; // asphere series starts at x^4
    for (double a : s.asphere_coeffs) {
        sag += a * xp;
        xp *= x * x;
    }
    return sag;
}

double surface_sag_slope(const lens_surface& s, double x) {
    double slope = 0.0;
    if (s.radius_mm != 0.0) {
        const double c = 1.0 / s.radius_mm;
        const double arg = 1.0 - (1.0 + s.conic) * c * c * x * x;
        if (arg <= 0.0) return std::numeric_limits<double>::quiet_NaN();
        slope = c * x / std::sqrt(arg);
    }
    double xp = x * x * x; // d/dx of the x^4 leading term
    double pw = 4.0;
    for (double a : s.asphere_coeffs) {
        slope += pw * a * xp;
        xp *= x * x;
        pw += 2.0;
    }
    return slope;
}

std::optional<surface_hit> intersect(const ray& r, const lens_surface& s) {
    if (!(r.dir(0) > 1e-15)) return std::nullopt; // system traces forward in z only

    double t = 0.0;
    const bool is_plane = (s.radius_mm == 0.0) && s.asphere_coeffs.empty();
    const bool is_sphere = (s.radius_mm != 0.0) && (s.conic == 0.0) && s.asphere_coeffs.empty();

    if (is_plane) {
        t = (s.vertex_z_mm - r.pos(0)) / r.dir(0);
        if (t < -1e-9) return std::nullopt;
    } else if (is_sphere) {
        const Eigen::Vector2d center(s.vertex_z_mm + s.radius_mm, 0.0);
        const Eigen::Vector2d pc = r.pos - center;
        const double b = 2.0 * r.dir.dot(pc);
        const double cc = pc.squaredNorm() - s.radius_mm * s.radius_mm;
        const double disc = b * b - 4.0 * cc;
        if (disc < 0.0) return std::nullopt;
        const double sq = std::sqrt(disc);
        double best = std::numeric_limits<double>::infinity();
        for (double cand : {0.5 * (-b - sq), 0.5 * (-b + sq)}) {
            if (cand < -1e-9) continue;
            const double zh = r.pos(0) + cand * r.dir(0);
            // only the vertex-side hemisphere is lens surface
            if ((zh - center(0)) * (s.radius_mm > 0.0 ? 1.0 : -1.0) < 0.0)
                best = std::min(best, cand);
        }
        if (!std::isfinite(best)) return std::nullopt;
        t = best;
    } else {
        t = (s.vertex_z_mm - r.pos(0)) / r.dir(0); // start from the vertex plane
        bool converged = false;
        for (int it = 0; it < newton_max_steps; ++it) {
            const Eigen::Vector2d q = r.pos + t * r.dir;
            const double f = q(0) - s.vertex_z_mm - surface_sag(s, q(1));
            const double fp = r.dir(0) - surface_sag_slope(s, q(1)) * r.dir(1);
            if (!std::isfinite(f) || !std::isfinite(fp) || std::abs(fp) < 1e-300) break;
            t -= f / fp;
            if (std::abs(f) < newton_tol_mm) {
                converged = true;
                break;
            }
        }
        if (!converged || t < -1e-9) return std::nullopt;
    }

    const Eigen::Vector2d q = r.pos + t * r.dir;
    if (std::abs(q(1)) > s.aperture_mm) return std::nullopt;
    const double m = surface_sag_slope(s, q(1));
    if (!std::isfinite(m)) return std::nullopt;
    Eigen::Vector2d n(1.0, -m);
    n.normalize();
    if (n.dot(r.dir) > 0.0) n = -n;
    return surface_hit{q, n, t};
}

ray traverse_slab(ray r, const crystal_slab& slab, timing_mode mode) {
    if (r.status != ray_status::alive || slab.length_mm <= 0.0) return r;
    const double exit_z = slab.entry_z_mm + slab.length_mm;
    if (r.pos(0) >= exit_z - z_epsilon_mm) return r; // already behind this slab
    const double z0 = std::max(r.pos(0), slab.entry_z_mm);
    const double d = exit_z - z0;

    const double kx = r.dir(1); // conserved across the plane facets
    if (std::abs(kx) >= 1.0) {
        r.status = ray_status::dead_tir;
        return r;
    }
    const slab_solution sol = solve_slab(slab, kx, r.lambda_nm, r.pol, mode);

    const double cos_a = std::cos(sol.alpha_rad);
    double x = r.pos(1) + d * std::tan(sol.alpha_rad);
    if (sol.extraordinary) {
        x += slab.walkoff_sign *
             walkoff_displacement(*slab.medium, r.lambda_nm * 1e-3, sol.theta_rad, d);
    }
    r.t_fs += sol.n_time * (d / cos_a) / c_mm_per_fs;
    r.pos = Eigen::Vector2d(exit_z, x);
    // the exit facet is parallel to the entry facet, so the air-side direction
    // (already stored in r.dir) is restored unchanged
    return r;
}

ray trace(ray r, const optical_system& system, timing_mode mode,
          std::vector<trace_vertex>* polyline) {
    const auto push = [&] {
        if (polyline) polyline->push_back(trace_vertex{r.pos, r.t_fs});
    };
    push();

    for (const auto& slab : system.slabs) {
        if (r.status != ray_status::alive) break;
        if (slab.entry_z_mm + slab.length_mm <= r.pos(0) + z_epsilon_mm) continue;
        r = traverse_slab(r, slab, mode);
        if (slab.length_mm > 0.0) push();
    }

    const material* medium = nullptr; // air after the stack
    for (const auto& surf : system.surfaces) {
        if (r.status != ray_status::alive) break;
        const auto hit = intersect(r, surf);
        if (!hit) {
            r.status = ray_status::dead_miss;
            break;
        }
        const double lam_um = r.lambda_nm * 1e-3;
        const double n_here =
            medium ? refractive_index(*medium, light_pol::ordinary, lam_um) : 1.0;
        r.t_fs += n_here * hit->path_mm / c_mm_per_fs;
        r.pos = hit->point;
        push();
        const double n_next =
            surf.glass_after ? refractive_index(*surf.glass_after, light_pol::ordinary, lam_um)
                             : 1.0;
        const auto bent = refract<double>(r.dir, hit->normal, n_here / n_next);
        if (!bent) {
            r.status = ray_status::dead_tir;
            break;
        }
        r.dir = *bent;
        medium = surf.glass_after;
    }

    if (r.status == ray_status::alive) {
        if (!(r.dir(0) > 1e-15) || system.collection_z_mm < r.pos(0) - 1e-9) {
            r.status = ray_status::dead_miss;
        } else {
            const double path = (system.collection_z_mm - r.pos(0)) / r.dir(0);
            const double n_here =
                medium ? refractive_index(*medium, light_pol::ordinary, r.lambda_nm * 1e-3) : 1.0;
            r.t_fs += n_here * path / c_mm_per_fs;
            r.pos += path * r.dir;
            push();
        }
    }
    return r;
}

double pump_arrival_time(const optical_system& system, double lambda_p_nm,
                         pair_origin hypothesis, double birth_z_mm, timing_mode mode) {
    // crystal_a converts the vertical pump component, crystal_b the horizontal one
    const photon_pol pump_component =
        (hypothesis == pair_origin::crystal_a) ? photon_pol::vertical : photon_pol::horizontal;
    const double lam_um = lambda_p_nm * 1e-3;
    double t = 0.0;
    for (const auto& slab : system.slabs) {
        if (slab.length_mm <= 0.0 || slab.entry_z_mm >= birth_z_mm) continue;
        const double len = std::min(slab.entry_z_mm + slab.length_mm, birth_z_mm) - slab.entry_z_mm;
        if (len <= 0.0) continue;
        const material& m = *slab.medium;
        double n = 1.0;
        if (m.uniaxial() && is_extraordinary(pump_component, slab.orientation.plane)) {
            const double theta = deg_to_rad(slab.orientation.cut_angle_deg);
            n = (mode == timing_mode::phase)
                    ? effective_index(refractive_index(m, light_pol::ordinary, lam_um),
                                      refractive_index(m, light_pol::extraordinary, lam_um), theta)
                    : effective_group_index(m, theta, lam_um);
        } else {
            n = (mode == timing_mode::phase) ? refractive_index(m, light_pol::ordinary, lam_um)
                                             : group_index(m, light_pol::ordinary, lam_um);
        }
        t += n * len / c_mm_per_fs;
    }
    return t;
}

double chief_reference_time(const optical_system& system, double lambda_nm, timing_mode mode) {
    ray chief;
    chief.pos = Eigen::Vector2d(0.0, 0.0);
    chief.dir = Eigen::Vector2d(1.0, 0.0);
    chief.lambda_nm = lambda_nm;
    chief.pol = photon_pol::horizontal;
    chief = trace(chief, system, mode);
    if (chief.status != ray_status::alive)
        throw physics_error("the axial reference ray does not reach the collection plane");
    return chief.t_fs;
}

pair_trace_records trace_pair_event(const pair_event& event, const optical_system& system,
                                    const pump_config& pump, pair_origin hypothesis,
                                    timing_mode mode, double chief_t_fs) {
    const slab_role gen_role =
        (hypothesis == pair_origin::crystal_a) ? slab_role::spdc_a : slab_role::spdc_b;
    const crystal_slab* gen = system.slab_by_role(gen_role);
    if (!gen)
        throw config_error("optical system lacks the generation crystal for this hypothesis");
    if (event.birth_z_mm < 0.0 || event.birth_z_mm > gen->length_mm)
        throw config_error("event birth depth lies outside the generation crystal");

    const double birth_z = gen->entry_z_mm + event.birth_z_mm;
    const double x0_mm = event.transverse_x_um * 1e-3;
    const photon_pol pol =
        (hypothesis == pair_origin::crystal_a) ? photon_pol::horizontal : photon_pol::vertical;
    const double t0 = pump_arrival_time(system, pump.wavelength_nm, hypothesis, birth_z, mode);

    const material& m = *gen->medium;
    const auto launch = [&](double lambda_nm, double alpha_int_deg) {
        const double n_o = refractive_index(m, light_pol::ordinary, lambda_nm * 1e-3);
        const double kx = n_o * std::sin(deg_to_rad(alpha_int_deg));
        ray r;
        r.pos = Eigen::Vector2d(birth_z, x0_mm);
        r.lambda_nm = lambda_nm;
        r.pol = pol;
        r.t_fs = t0;
        if (std::abs(kx) < 1.0) {
            r.dir = Eigen::Vector2d(std::sqrt(1.0 - kx * kx), kx);
        } else {
            r.status = ray_status::dead_tir; // evanescent at the exit facet, never collected
        }
        return r;
    };

    const ray rs = trace(launch(event.lambda_s_nm, event.alpha_s_deg), system, mode);
    const ray ri = trace(launch(event.lambda_i_nm, event.alpha_i_deg), system, mode);

    pair_trace_records rec;
    rec.signal_alive = (rs.status == ray_status::alive);
    rec.idler_alive = (ri.status == ray_status::alive);
    rec.t_s_fs = rs.t_fs - chief_t_fs;
    rec.t_i_fs = ri.t_fs - chief_t_fs;
    rec.x_s_mm = rs.pos(1);
    rec.x_i_mm = ri.pos(1);
    return rec;
}

} // namespace spdcsim
