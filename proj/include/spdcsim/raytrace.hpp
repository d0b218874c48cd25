#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "spdcsim/spdc.hpp"

namespace spdcsim {

/// @brief Photon polarization in the lab frame (2D fold: H = walk-off plane of
/// the crystals whose optic axis is horizontal, V = the orthogonal plane).
enum class photon_pol { horizontal, vertical };

/// @brief Why a ray stopped, if it did.
enum class ray_status {
    alive,
    dead_tir,  ///< total internal reflection at a surface (no bounce modeled)
    dead_miss, ///< missed a surface or hit outside its clear aperture
};

/// @brief One meridional ray. pos = (z, x) in mm; dir is the unit propagation
/// direction expressed in the air between elements (dir(1) equals the
/// transverse wave-vector fraction kx/k0, which planar facets conserve).
struct ray {
    Eigen::Vector2d pos = Eigen::Vector2d::Zero();
    Eigen::Vector2d dir = Eigen::Vector2d::UnitX(); ///< (dz, dx), unit norm
    double lambda_nm = 0.0;
    photon_pol pol = photon_pol::horizontal;
    double t_fs = 0.0;
    ray_status status = ray_status::alive;
};

/// @brief Functional role of a slab in the source stack.
enum class slab_role {
    spdc_a,           ///< first generation crystal, optic axis plane vertical, emits H pairs
    spdc_b,           ///< second generation crystal, axis plane horizontal, emits V pairs
    overlap_a,        ///< first spatial-overlap crystal, axis plane horizontal, walk-off reversed
    overlap_b,        ///< second spatial-overlap crystal, axis plane vertical
    pre_compensator,  ///< birefringent delay line ahead of the stack (pump only)
    post_compensator, ///< birefringent delay line behind the stack (daughters)
};

/// @brief One plane-parallel birefringent slab, normal to the beam axis.
/// The medium pointer references an externally owned material table.
struct crystal_slab {
    const material* medium = nullptr;
    crystal_orientation orientation; ///< cut angle is 90 deg for the compensators
    int walkoff_sign = +1;           ///< -1 for a crystal mounted axis-flipped
    double entry_z_mm = 0.0;
    double length_mm = 0.0;
    slab_role role = slab_role::spdc_a;
};

/// @brief One refracting lens surface: sag z(x) = vertex + conic section + even
/// asphere polynomial. radius_mm = 0 encodes a plane. glass_after is the medium
/// behind the surface (nullptr = air), referencing an externally owned table.
struct lens_surface {
    double vertex_z_mm = 0.0;
    double radius_mm = 0.0;
    double conic = 0.0;
    std::vector<double> asphere_coeffs; ///< A4, A6, ... multiplying x^4, x^6, ...
    double aperture_mm = 0.0;           ///< clear semi-aperture
    const material* glass_after = nullptr;
};

/// @brief The full optical train: source stack slabs, an optional lens, and the
/// collection plane. Slabs and surfaces are ordered by increasing z.
struct optical_system {
    std::vector<crystal_slab> slabs;
    std::vector<lens_surface> surfaces;
    double collection_z_mm = 0.0;

    const crystal_slab* slab_by_role(slab_role role) const noexcept;
};

/// @brief Which index the time bookkeeping uses inside the birefringent stack:
/// phase index (carrier) or group index (envelope). Isotropic lens glass always
/// contributes phase optical path length; see README.
enum class timing_mode { phase, group };

/// Mirror direction a about unit normal n: a - 2 (a.n) n.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> reflect(const Eigen::Matrix<Scalar, 2, 1>& a,
                                    const Eigen::Matrix<Scalar, 2, 1>& n) {
    return a - Scalar(2) * a.dot(n) * n;
}

/// @brief Snell refraction of unit direction a across a surface with unit normal
/// n and index ratio u = n_incident / n_transmitted. The normal may point to
/// either side; it is oriented against the incoming ray internally. Returns the
/// unit transmitted direction, or nothing on total internal reflection
/// (u sin theta_i > 1; equality transmits exactly along the surface).
template <typename Scalar>
std::optional<Eigen::Matrix<Scalar, 2, 1>> refract(const Eigen::Matrix<Scalar, 2, 1>& a,
                                                   Eigen::Matrix<Scalar, 2, 1> n,
                                                   Scalar u) {
    if (a.dot(n) > Scalar(0)) n = -n;
    const Scalar cos_i = -a.dot(n);
    const Scalar disc = Scalar(1) - u * u * (Scalar(1) - cos_i * cos_i);
    if (disc < Scalar(0)) return std::nullopt;
    using std::sqrt;
    Eigen::Matrix<Scalar, 2, 1> t = u * a + (u * cos_i - sqrt(disc)) * n;
    return t.normalized();
}

/// Surface height z - vertex at transverse coordinate x (sag).
double surface_sag(const lens_surface& s, double x);

/// d(sag)/dx, analytic.
double surface_sag_slope(const lens_surface& s, double x);

/// @brief Ray-surface intersection result. normal is unit, oriented against the
/// incoming ray; path_mm is the geometric distance from the ray origin.
struct surface_hit {
    Eigen::Vector2d point;
    Eigen::Vector2d normal;
    double path_mm = 0.0;
};

/// @brief Intersect a ray with one surface: closed form for planes and pure
/// spheres, Newton iteration (tol 1e-10 mm, max 50 steps) otherwise. Returns
/// nothing when the ray misses the surface or the hit lies outside the clear
/// aperture.
std::optional<surface_hit> intersect(const ray& r, const lens_surface& s);

/// @brief Carry a ray through one plane-parallel slab: refract in, advance with
/// the branch resolved from polarization vs axis plane (extraordinary branch
/// solves the angle-dependent index self-consistently and adds the signed
/// walk-off displacement), accumulate time with the timing-mode index, refract
/// out. A ray already past the slab is returned unchanged; a ray born inside
/// traverses only the remaining length.
ray traverse_slab(ray r, const crystal_slab& slab, timing_mode mode);

/// @brief Trace vertex for polyline dumps.
struct trace_vertex {
    Eigen::Vector2d pos;
    double t_fs = 0.0;
};

/// @brief Carry a ray through the whole system: every slab it has not yet
/// passed, the lens surfaces, then the collection plane. Dead rays keep the
/// position and time of their last surface. When polyline is non-null the
/// launch point and every subsequent vertex are appended to it.
ray trace(ray r, const optical_system& system, timing_mode mode,
          std::vector<trace_vertex>* polyline = nullptr);

/// @brief Arrival time of the pump at a birth depth, on axis, for the pump
/// polarization component that feeds the given origin hypothesis (crystal_a
/// pairs come from the vertical pump component, crystal_b pairs from the
/// horizontal one). Time zero is the entry face of the first slab.
double pump_arrival_time(const optical_system& system, double lambda_p_nm,
                         pair_origin hypothesis, double birth_z_mm, timing_mode mode);

/// @brief Arrival time at the collection plane of an axial reference ray:
/// H-polarized, launched at z = 0 (entry of the first generation crystal) with
/// zero pump time. All pair records are reported relative to this ray, so the
/// common bulk delay cancels.
double chief_reference_time(const optical_system& system, double lambda_nm,
                            timing_mode mode);

/// @brief Collection-plane records of one traced pair under one origin hypothesis.
struct pair_trace_records {
    double t_s_fs = 0.0; ///< signal arrival minus chief reference
    double t_i_fs = 0.0; ///< idler arrival minus chief reference
    double x_s_mm = 0.0;
    double x_i_mm = 0.0;
    bool signal_alive = false;
    bool idler_alive = false;
};

/// @brief Trace both photons of an event under a stated origin hypothesis:
/// birth placed in that hypothesis' generation crystal at the event's depth and
/// offset, pump arrival added, both daughters carried to the collection plane.
pair_trace_records trace_pair_event(const pair_event& event, const optical_system& system,
                                    const pump_config& pump, pair_origin hypothesis,
                                    timing_mode mode, double chief_t_fs);

} // namespace spdcsim
