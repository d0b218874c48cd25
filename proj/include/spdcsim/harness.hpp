#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spdcsim/entanglement.hpp"

namespace spdcsim {

/// @brief Loaded material table. Entries are stable for the lifetime of the db,
/// so slab and surface pointers may reference them.
struct material_db {
    std::vector<material> entries;

    const material& get(const std::string& name) const; ///< throws config_error if absent
    bool has(const std::string& name) const noexcept;
};

material_db load_materials(const std::string& path);

/// @brief One surface of a lens prescription file, before mounting.
struct lens_surface_spec {
    double radius_mm = 0.0; ///< 0 encodes a plane
    double conic = 0.0;
    std::vector<double> asphere_coeffs;
    double thickness_mm = 0.0; ///< axial gap to the next surface (last one unused)
    std::string material;      ///< medium behind the surface, "air" or a db name
    double aperture_mm = 0.0;  ///< clear semi-aperture
};

/// @brief A lens prescription as shipped: ordered surfaces, source side first.
struct lens_prescription {
    std::string name;
    std::vector<lens_surface_spec> surfaces;
};

lens_prescription load_lens(const std::string& path);

/// @brief Sweep grid for the post-compensator length scan.
struct sweep_spec {
    double from_mm = 2.5;
    double to_mm = 3.7;
    double step_mm = 0.005;
    bool fidelity = false; ///< also run a Monte Carlo fidelity estimate per point
};

/// @brief Grid for the joint spectral-angular emission map.
struct map_spec {
    double lambda_lo_nm = 740.0;
    double lambda_hi_nm = 900.0;
    double lambda_step_nm = 0.5;
    double alpha_max_deg = 1.0;
    double alpha_step_deg = 0.005;
    double cone_deg = 0.36; ///< collection half-angle for the band-capture figure
};

/// @brief Full scenario description, loaded from JSON and overridable from the
/// command line. Fields marked auto are solved at build time.
struct scenario_config {
    pump_config pump;
    double signal_nm = 780.0;
    double filter_fwhm_nm = 10.0;

    std::string crystal_material = "BBO";
    std::string compensator_material = "YVO4";
    bool cut_auto = true;
    double cut_angle_deg = 0.0;
    double spdc_length_mm = 6.0;
    bool pre_auto = true;
    double pre_compensator_mm = 0.0;
    bool post_auto = true;
    double post_compensator_mm = 0.0;

    double collection_half_angle_deg = 0.25;
    double gap_mm = 325.0;
    bool focus_auto = true;
    double focus_mm = 0.0; ///< collection-plane distance from the lens front vertex (or stack exit when no lens)

    std::string lens_file = "none"; ///< resolved path, or "none"
    std::string materials_file;     ///< resolved path

    timing_mode timing = timing_mode::phase;
    std::uint64_t seed = 1;
    std::size_t rays = 100000;
    std::size_t resamples = 200;
    unsigned workers = 1;
    double histogram_bin_fs = 0.05;
    std::string out_dir = "out";

    sweep_spec sweep;
    map_spec map;
};

/// @brief Parse and validate a scenario JSON file. Relative paths inside the
/// file are resolved against the file's directory.
scenario_config load_scenario(const std::string& path);

/// @brief Optional command line overrides applied on top of the file.
struct cli_overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> rays;
    std::optional<std::string> out_dir;
    std::optional<timing_mode> timing;
    std::optional<std::size_t> resamples;
    std::optional<unsigned> workers;
};

void apply_overrides(scenario_config& cfg, const cli_overrides& cli);

/// @brief FNV-1a hash of the canonical serialization of everything that affects
/// results (out_dir and workers excluded, so reruns that only relocate output
/// or change parallelism hash identically).
std::uint64_t config_hash(const scenario_config& cfg);

/// @brief Everything derived from a scenario: solved geometry plus the system.
/// Owns the material db the system points into; not copyable.
struct simulation_setup {
    std::shared_ptr<const material_db> db;
    pump_config pump;
    spdc_crystal generation_crystal; ///< medium + solved cut + length (one of the pair)
    optical_system system;

    double lambda_i_nm = 0.0;     ///< idler partner of the configured signal
    double lambda_bar_nm = 0.0;   ///< mean daughter wavelength
    double cut_angle_deg = 0.0;   ///< solved or configured
    double pre_compensator_mm = 0.0;
    double post_compensator_mm = 0.0;
    double tau_c_fs = 0.0;        ///< filter coherence time at lambda_bar
    double tau_p_fs = 0.0;        ///< pump coherence time (inf for CW)
    double omega_mean_rad_per_fs = 0.0;
    double stack_exit_z_mm = 0.0;
    double lens_front_z_mm = 0.0; ///< equals stack exit + gap (unused when no lens)
    double chief_t_fs = 0.0;
    timing_mode timing = timing_mode::phase;
};

/// @brief Solve the auto fields (cut angle, compensator lengths, collection
/// plane) and assemble the optical system. Deterministic, no sampling.
simulation_setup build_setup(const scenario_config& cfg);

/// @brief Post-compensator length that cancels the band-averaged longitudinal
/// group delay of the generation crystals: D = (ng_eff - 1) L / (ng_e - 1) with
/// band-center-averaged indices.
double solve_post_compensator(const material& crystal, const material& comp,
                              double cut_angle_deg, double spdc_length_mm,
                              double lambda_s_nm, double lambda_i_nm);

/// @brief Pre-compensator length that zeros the band-averaged on-axis pairwise
/// mean delay tau_plus of the assembled stack (root solve on a wavelength grid
/// across the filter band).
double solve_pre_compensator(const scenario_config& cfg, const simulation_setup& partial);

/// @brief One row of a compensator sweep.
struct sweep_point {
    double thickness_mm = 0.0;
    double tau_minus_fs = 0.0; ///< on-axis nondegenerate signal-idler asymmetry
    double fidelity = 0.0;     ///< only filled when the sweep requests it
};

/// @brief Sweep result: grid, optimum, and the thickness band where the
/// asymmetry stays within the filter coherence time.
struct sweep_result {
    std::vector<sweep_point> points;
    double optimum_mm = 0.0;
    double band_lo_mm = 0.0;
    double band_hi_mm = 0.0;
};

// Command entry points. Each writes its artifacts under cfg.out_dir and
// returns 0 on success; failures surface as typed exceptions.
int cmd_pm_angle(const scenario_config& cfg);
int cmd_emission_map(const scenario_config& cfg);
int cmd_compensator_sweep(const scenario_config& cfg);
int cmd_fidelity(const scenario_config& cfg);
int cmd_trace_dump(const scenario_config& cfg);

/// @brief Shortest-round-trip decimal formatting (17 significant digits) used
/// for every number the tool writes, so outputs are byte-stable.
std::string fmt17(double v);

} // namespace spdcsim
