#include "spdcsim/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "spdcsim/constants.hpp"
#include "spdcsim/rng.hpp"

namespace spdcsim {

namespace {

using nlohmann::json;

json parse_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw io_error(std::string("cannot open ") + what + " '" + path + "'");
    try {
        json j;
        in >> j;
        return j;
    } catch (const std::exception& e) {
        throw config_error(std::string(what) + " '" + path + "' is not valid JSON: " + e.what());
    }
}

double require_number(const json& j, const char* key, const char* ctx) {
    if (!j.contains(key) || !j.at(key).is_number())
        throw config_error(std::string(ctx) + " needs a numeric field '" + key + "'");
    return j.at(key).get<double>();
}

std::string require_string(const json& j, const char* key, const char* ctx) {
    if (!j.contains(key) || !j.at(key).is_string())
        throw config_error(std::string(ctx) + " needs a string field '" + key + "'");
    return j.at(key).get<std::string>();
}

sellmeier_coefficients parse_sellmeier(const json& j, const char* ctx) {
    sellmeier_coefficients s;
    s.A = require_number(j, "A", ctx);
    s.B = require_number(j, "B", ctx);
    s.C = require_number(j, "C", ctx);
    s.E = require_number(j, "E", ctx);
    return s;
}

/// "auto" or a plain number.
void parse_auto_or_number(const json& v, bool& auto_flag, double& value, const char* what) {
    if (v.is_string()) {
        if (v.get<std::string>() == "auto") {
            auto_flag = true;
            value = 0.0;
            return;
        }
        throw config_error(std::string("field '") + what + "' must be a number or \"auto\"");
    }
    if (v.is_number()) {
        auto_flag = false;
        value = v.get<double>();
        return;
    }
    throw config_error(std::string("field '") + what + "' must be a number or \"auto\"");
}

std::string resolve_relative(const std::string& base_file, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute()) return p.lexically_normal().string();
    return (std::filesystem::path(base_file).parent_path() / p).lexically_normal().string();
}

void validate_scenario(const scenario_config& cfg) {
    if (!(cfg.pump.wavelength_nm > 0.0)) throw config_error("pump wavelength must be positive");
    if (!(cfg.pump.waist_um > 0.0)) throw config_error("pump waist must be positive");
    if (cfg.pump.bandwidth_rad_per_s < 0.0)
        throw config_error("pump bandwidth must be nonnegative");
    if (!(cfg.signal_nm > cfg.pump.wavelength_nm))
        throw config_error("signal wavelength must exceed the pump wavelength (energy conservation)");
    if (!(cfg.filter_fwhm_nm > 0.0)) throw config_error("filter bandwidth must be positive");
    if (cfg.spdc_length_mm < 0.0) throw config_error("crystal length must be nonnegative");
    if (!cfg.cut_auto && !(cfg.cut_angle_deg > 0.0 && cfg.cut_angle_deg < 90.0))
        throw config_error("cut angle must lie strictly between 0 and 90 degrees");
    if (!cfg.pre_auto && cfg.pre_compensator_mm < 0.0)
        throw config_error("pre-compensator length must be nonnegative");
    if (!cfg.post_auto && cfg.post_compensator_mm < 0.0)
        throw config_error("post-compensator length must be nonnegative");
    if (cfg.collection_half_angle_deg < 0.0)
        throw config_error("collection half-angle must be nonnegative");
    if (cfg.gap_mm < 0.0) throw config_error("gap must be nonnegative");
    if (cfg.rays < 1) throw config_error("rays must be at least 1");
    if (cfg.resamples < 100) throw config_error("bootstrap needs at least 100 resamples");
    if (cfg.workers < 1 || cfg.workers > 256)
        throw config_error("workers must lie in [1, 256]");
    if (!(cfg.histogram_bin_fs > 0.0)) throw config_error("histogram bin width must be positive");
    if (!(cfg.sweep.step_mm > 0.0) || cfg.sweep.to_mm < cfg.sweep.from_mm ||
        cfg.sweep.from_mm < 0.0)
        throw config_error("sweep grid must be nonnegative, ordered, with positive step");
    if (!(cfg.map.lambda_step_nm > 0.0) || !(cfg.map.alpha_step_deg > 0.0) ||
        cfg.map.lambda_hi_nm <= cfg.map.lambda_lo_nm || !(cfg.map.alpha_max_deg > 0.0) ||
        !(cfg.map.cone_deg > 0.0))
        throw config_error("map grid must be ordered with positive steps and cone");
}

// ---------------------------------------------------------------------------
// output helpers

std::string fmt_u64(std::uint64_t v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

std::string hash_hex(std::uint64_t h) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

void write_text_file(const std::string& dir, const std::string& name, const std::string& body) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory '" + dir + "': " + ec.message());
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out << body;
    if (!out) throw io_error("failed writing '" + path + "'");
}

std::string histogram_csv(const tau_histogram_result& h) {
    std::string s = "bin_left_fs,bin_right_fs,count\n";
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        const double left = static_cast<double>(h.first_bin + static_cast<long long>(k)) *
                            h.bin_width_fs;
        s += fmt17(left);
        s += ',';
        s += fmt17(left + h.bin_width_fs);
        s += ',';
        s += fmt_u64(h.counts[k]);
        s += '\n';
    }
    return s;
}

// ---------------------------------------------------------------------------
// parallel map over an index range with stable per-index output slots

template <typename Fn>
void run_indexed(std::size_t n, unsigned workers, Fn&& fn) {
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned w = std::min<unsigned>(workers, static_cast<unsigned>(n));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(w);
    for (unsigned t = 0; t < w; ++t) {
        const std::size_t lo = n * t / w;
        const std::size_t hi = n * (t + 1) / w;
        pool.emplace_back([&, t, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace

std::string fmt17(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v); // shortest round-trip form
    return std::string(buf, p);
}

// ---------------------------------------------------------------------------
// loading

const material& material_db::get(const std::string& name) const {
    for (const auto& m : entries)
        if (m.name == name) return m;
    throw config_error("material '" + name + "' not found in the materials file");
}

bool material_db::has(const std::string& name) const noexcept {
    for (const auto& m : entries)
        if (m.name == name) return true;
    return false;
}

material_db load_materials(const std::string& path) {
    const json j = parse_json_file(path, "materials file");
    if (!j.contains("entries") || !j.at("entries").is_array())
        throw config_error("materials file needs an 'entries' array");
    material_db db;
    for (const auto& e : j.at("entries")) {
        material m;
        m.name = require_string(e, "name", "material entry");
        if (db.has(m.name)) throw config_error("duplicate material '" + m.name + "'");
        if (!e.contains("ordinary"))
            throw config_error("material '" + m.name + "' needs an 'ordinary' branch");
        m.ordinary = parse_sellmeier(e.at("ordinary"), "ordinary branch");
        if (e.contains("extraordinary") && !e.at("extraordinary").is_null())
            m.extraordinary = parse_sellmeier(e.at("extraordinary"), "extraordinary branch");
        if (!e.contains("window_um") || !e.at("window_um").is_array() ||
            e.at("window_um").size() != 2)
            throw config_error("material '" + m.name + "' needs window_um = [lo, hi]");
        m.window_lo_um = e.at("window_um")[0].get<double>();
        m.window_hi_um = e.at("window_um")[1].get<double>();
        if (!(m.window_lo_um > 0.0 && m.window_hi_um > m.window_lo_um))
            throw config_error("material '" + m.name + "' has an invalid window");
        if (e.contains("source")) m.source = e.at("source").get<std::string>();
        db.entries.push_back(std::move(m));
    }
    if (db.entries.empty()) throw config_error("materials file has no entries");
    return db;
}

lens_prescription load_lens(const std::string& path) {
    const json j = parse_json_file(path, "lens file");
    lens_prescription lp;
    if (j.contains("name")) lp.name = j.at("name").get<std::string>();
    if (!j.contains("surfaces") || !j.at("surfaces").is_array() || j.at("surfaces").empty())
        throw config_error("lens file needs a nonempty 'surfaces' array");
    for (const auto& s : j.at("surfaces")) {
        lens_surface_spec spec;
        spec.radius_mm = require_number(s, "radius_mm", "lens surface");
        spec.conic = require_number(s, "conic", "lens surface");
        if (s.contains("asphere_coeffs")) {
            if (!s.at("asphere_coeffs").is_array())
                throw config_error("asphere_coeffs must be an array");
            for (const auto& a : s.at("asphere_coeffs"))
                spec.asphere_coeffs.push_back(a.get<double>());
        }
        spec.thickness_mm = require_number(s, "thickness_mm", "lens surface");
        spec.material = require_string(s, "material", "lens surface");
        spec.aperture_mm = require_number(s, "aperture_mm", "lens surface");
        if (!(spec.aperture_mm > 0.0))
            throw config_error("lens surface aperture must be positive");
        if (spec.thickness_mm < 0.0)
            throw config_error("lens surface thickness must be nonnegative");
        lp.surfaces.push_back(std::move(spec));
    }
    if (lp.surfaces.back().material != "air")
        throw config_error("the last lens surface must exit into air");
    return lp;
}

scenario_config load_scenario(const std::string& path) {
    const json j = parse_json_file(path, "scenario file");
    scenario_config cfg;
    try {
        const json& p = j.at("pump");
        cfg.pump.wavelength_nm = require_number(p, "wavelength_nm", "pump");
        cfg.pump.waist_um = require_number(p, "waist_um", "pump");
        cfg.pump.bandwidth_rad_per_s = require_number(p, "bandwidth_rad_per_s", "pump");
        cfg.pump.polarization_deg = require_number(p, "polarization_deg", "pump");

        cfg.signal_nm = require_number(j, "signal_nm", "scenario");
        cfg.filter_fwhm_nm = require_number(j, "filter_fwhm_nm", "scenario");
        cfg.materials_file = resolve_relative(path, require_string(j, "materials_file", "scenario"));

        const json& st = j.at("stack");
        cfg.crystal_material = require_string(st, "crystal_material", "stack");
        cfg.compensator_material = require_string(st, "compensator_material", "stack");
        parse_auto_or_number(st.at("cut_angle_deg"), cfg.cut_auto, cfg.cut_angle_deg,
                             "stack.cut_angle_deg");
        cfg.spdc_length_mm = require_number(st, "spdc_length_mm", "stack");
        parse_auto_or_number(st.at("pre_compensator_mm"), cfg.pre_auto, cfg.pre_compensator_mm,
                             "stack.pre_compensator_mm");
        parse_auto_or_number(st.at("post_compensator_mm"), cfg.post_auto,
                             cfg.post_compensator_mm, "stack.post_compensator_mm");

        const json& co = j.at("collection");
        cfg.collection_half_angle_deg = require_number(co, "half_angle_deg", "collection");
        cfg.gap_mm = require_number(co, "gap_mm", "collection");
        parse_auto_or_number(co.at("focus_mm"), cfg.focus_auto, cfg.focus_mm,
                             "collection.focus_mm");

        const std::string lens = require_string(j, "lens_file", "scenario");
        cfg.lens_file = (lens == "none") ? lens : resolve_relative(path, lens);

        const std::string timing = require_string(j, "timing", "scenario");
        if (timing == "phase")
            cfg.timing = timing_mode::phase;
        else if (timing == "group")
            cfg.timing = timing_mode::group;
        else
            throw config_error("timing must be \"phase\" or \"group\"");

        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.rays = j.at("rays").get<std::size_t>();
        cfg.resamples = j.at("resamples").get<std::size_t>();
        cfg.workers = j.at("workers").get<unsigned>();
        cfg.histogram_bin_fs = require_number(j, "histogram_bin_fs", "scenario");
        if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();

        const json& sw = j.at("sweep");
        cfg.sweep.from_mm = require_number(sw, "from_mm", "sweep");
        cfg.sweep.to_mm = require_number(sw, "to_mm", "sweep");
        cfg.sweep.step_mm = require_number(sw, "step_mm", "sweep");
        cfg.sweep.fidelity = sw.contains("fidelity") && sw.at("fidelity").get<bool>();

        const json& mp = j.at("map");
        cfg.map.lambda_lo_nm = require_number(mp, "lambda_lo_nm", "map");
        cfg.map.lambda_hi_nm = require_number(mp, "lambda_hi_nm", "map");
        cfg.map.lambda_step_nm = require_number(mp, "lambda_step_nm", "map");
        cfg.map.alpha_max_deg = require_number(mp, "alpha_max_deg", "map");
        cfg.map.alpha_step_deg = require_number(mp, "alpha_step_deg", "map");
        cfg.map.cone_deg = require_number(mp, "cone_deg", "map");
    } catch (const json::exception& e) {
        throw config_error(std::string("scenario file '") + path + "': " + e.what());
    }
    validate_scenario(cfg);
    return cfg;
}

void apply_overrides(scenario_config& cfg, const cli_overrides& cli) {
    if (cli.seed) cfg.seed = *cli.seed;
    if (cli.rays) cfg.rays = *cli.rays;
    if (cli.out_dir) cfg.out_dir = *cli.out_dir;
    if (cli.timing) cfg.timing = *cli.timing;
    if (cli.resamples) cfg.resamples = *cli.resamples;
    if (cli.workers) cfg.workers = *cli.workers;
    validate_scenario(cfg);
}

std::uint64_t config_hash(const scenario_config& cfg) {
    std::string s;
    const auto add = [&](const char* key, const std::string& v) {
        s += key;
        s += '=';
        s += v;
        s += '\n';
    };
    const auto addn = [&](const char* key, double v) { add(key, fmt17(v)); };
    const auto add_auto = [&](const char* key, bool is_auto, double v) {
        add(key, is_auto ? std::string("auto") : fmt17(v));
    };
    addn("pump.wavelength_nm", cfg.pump.wavelength_nm);
    addn("pump.waist_um", cfg.pump.waist_um);
    addn("pump.bandwidth_rad_per_s", cfg.pump.bandwidth_rad_per_s);
    addn("pump.polarization_deg", cfg.pump.polarization_deg);
    addn("signal_nm", cfg.signal_nm);
    addn("filter_fwhm_nm", cfg.filter_fwhm_nm);
    add("materials_file", cfg.materials_file);
    add("crystal_material", cfg.crystal_material);
    add("compensator_material", cfg.compensator_material);
    add_auto("cut_angle_deg", cfg.cut_auto, cfg.cut_angle_deg);
    addn("spdc_length_mm", cfg.spdc_length_mm);
    add_auto("pre_compensator_mm", cfg.pre_auto, cfg.pre_compensator_mm);
    add_auto("post_compensator_mm", cfg.post_auto, cfg.post_compensator_mm);
    addn("collection.half_angle_deg", cfg.collection_half_angle_deg);
    addn("collection.gap_mm", cfg.gap_mm);
    add_auto("collection.focus_mm", cfg.focus_auto, cfg.focus_mm);
    add("lens_file", cfg.lens_file);
    add("timing", cfg.timing == timing_mode::phase ? "phase" : "group");
    add("seed", fmt_u64(cfg.seed));
    add("rays", fmt_u64(cfg.rays));
    add("resamples", fmt_u64(cfg.resamples));
    addn("histogram_bin_fs", cfg.histogram_bin_fs);
    addn("sweep.from_mm", cfg.sweep.from_mm);
    addn("sweep.to_mm", cfg.sweep.to_mm);
    addn("sweep.step_mm", cfg.sweep.step_mm);
    add("sweep.fidelity", cfg.sweep.fidelity ? "1" : "0");
    addn("map.lambda_lo_nm", cfg.map.lambda_lo_nm);
    addn("map.lambda_hi_nm", cfg.map.lambda_hi_nm);
    addn("map.lambda_step_nm", cfg.map.lambda_step_nm);
    addn("map.alpha_max_deg", cfg.map.alpha_max_deg);
    addn("map.alpha_step_deg", cfg.map.alpha_step_deg);
    addn("map.cone_deg", cfg.map.cone_deg);

    std::uint64_t h = 0xcbf29ce484222325ull; // FNV-1a 64
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// system assembly

double solve_post_compensator(const material& crystal, const material& comp,
                              double cut_angle_deg, double spdc_length_mm,
                              double lambda_s_nm, double lambda_i_nm) {
    const double theta = deg_to_rad(cut_angle_deg);
    const double ng_eff =
        0.5 * (effective_group_index(crystal, theta, lambda_s_nm * 1e-3) +
               effective_group_index(crystal, theta, lambda_i_nm * 1e-3));
    const double ng_e = 0.5 * (group_index(comp, light_pol::extraordinary, lambda_s_nm * 1e-3) +
                               group_index(comp, light_pol::extraordinary, lambda_i_nm * 1e-3));
    if (!(ng_e > 1.0))
        throw physics_error("compensator group index does not exceed 1, cannot compensate");
    return (ng_eff - 1.0) * spdc_length_mm / (ng_e - 1.0);
}

namespace {

struct stack_params {
    const material* crystal = nullptr;
    const material* comp = nullptr;
    double cut_deg = 0.0;
    double length_mm = 0.0;
};

/// Crossed-crystal source stack. z = 0 at the entry of the first generation
/// crystal. The two generation crystals have orthogonal axis planes; the two
/// half-length overlap crystals re-center the walked-off beams, the first of
/// them mounted flipped so its walk-off is reversed.
std::vector<crystal_slab> build_stack(const stack_params& p, double d_pre, double d_post) {
    const double L = p.length_mm;
    std::vector<crystal_slab> slabs;
    slabs.push_back({p.comp, {90.0, axis_plane::vertical}, +1, -d_pre, d_pre,
                     slab_role::pre_compensator});
    slabs.push_back({p.crystal, {p.cut_deg, axis_plane::vertical}, +1, 0.0, L,
                     slab_role::spdc_a});
    slabs.push_back({p.crystal, {p.cut_deg, axis_plane::horizontal}, +1, L, L,
                     slab_role::spdc_b});
    slabs.push_back({p.crystal, {p.cut_deg, axis_plane::horizontal}, -1, 2.0 * L, 0.5 * L,
                     slab_role::overlap_a});
    slabs.push_back({p.crystal, {p.cut_deg, axis_plane::vertical}, +1, 2.5 * L, 0.5 * L,
                     slab_role::overlap_b});
    slabs.push_back({p.comp, {90.0, axis_plane::vertical}, +1, 3.0 * L, d_post,
                     slab_role::post_compensator});
    return slabs;
}

double stack_exit_z(const stack_params& p, double d_post) {
    return 3.0 * p.length_mm + d_post;
}

/// Band-mean on-axis pairwise mean delay of a stack-only system, the quantity
/// the pre-compensator zeroes.
double mean_on_axis_tau_plus(const stack_params& p, const pump_config& pump,
                             const spdc_crystal& gen, double d_pre, double d_post,
                             double lambda_lo_nm, double lambda_hi_nm, timing_mode mode) {
    optical_system sys;
    sys.slabs = build_stack(p, d_pre, d_post);
    sys.collection_z_mm = stack_exit_z(p, d_post);
    const int npts = 21;
    double acc = 0.0;
    for (int k = 0; k < npts; ++k) {
        const double ls = lambda_lo_nm + (lambda_hi_nm - lambda_lo_nm) * k / (npts - 1);
        pair_event ev;
        ev.birth_z_mm = 0.5 * p.length_mm;
        ev.lambda_s_nm = ls;
        ev.lambda_i_nm = idler_wavelength_nm(pump.wavelength_nm, ls);
        const auto timing = pair_timing(ev, sys, pump, gen, mode, 0.0);
        if (!timing) throw physics_error("on-axis reference pair died inside the bare stack");
        acc += 0.5 * (timing->dt_s_fs + timing->dt_i_fs);
    }
    return acc / npts;
}

/// Back focus of a mounted lens for a collimated input: paraxial ray height
/// 1e-6 mm, crossing of the output ray with the axis, measured from z = 0.
double paraxial_axis_crossing(const std::vector<lens_surface>& surfaces, double lambda_nm) {
    optical_system lens_only;
    lens_only.surfaces = surfaces;
    double z_after = surfaces.back().vertex_z_mm + 1.0;
    for (const auto& s : surfaces)
        z_after = std::max(z_after, s.vertex_z_mm + std::abs(surface_sag(s, s.aperture_mm)) + 1.0);
    lens_only.collection_z_mm = z_after;

    ray probe;
    probe.pos = Eigen::Vector2d(surfaces.front().vertex_z_mm - 5.0, 1e-6);
    probe.dir = Eigen::Vector2d(1.0, 0.0);
    probe.lambda_nm = lambda_nm;
    probe = trace(probe, lens_only, timing_mode::phase);
    if (probe.status != ray_status::alive || std::abs(probe.dir(1)) < 1e-300)
        throw physics_error("paraxial focus probe did not converge through the lens");
    return probe.pos(0) - probe.pos(1) * probe.dir(0) / probe.dir(1);
}

} // namespace

double solve_pre_compensator(const scenario_config& cfg, const simulation_setup& partial) {
    const stack_params p{&partial.db->get(cfg.crystal_material),
                         &partial.db->get(cfg.compensator_material), partial.cut_angle_deg,
                         cfg.spdc_length_mm};
    const double lo_nm = cfg.signal_nm - 0.5 * cfg.filter_fwhm_nm;
    const double hi_nm = cfg.signal_nm + 0.5 * cfg.filter_fwhm_nm;
    const auto objective = [&](double d_pre) {
        return mean_on_axis_tau_plus(p, partial.pump, partial.generation_crystal, d_pre,
                                     partial.post_compensator_mm, lo_nm, hi_nm, partial.timing);
    };
    double lo = 0.0, hi = 50.0;
    double flo = objective(lo), fhi = objective(hi);
    if (flo * fhi > 0.0)
        throw physics_error("pre-compensator solve found no root in [0, 50] mm");
    for (int it = 0; it < 200 && (hi - lo) > 1e-9; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = objective(mid);
        if (flo * fm <= 0.0) {
            hi = mid;
            fhi = fm;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    return 0.5 * (lo + hi);
}

simulation_setup build_setup(const scenario_config& cfg) {
    simulation_setup setup;
    setup.db = std::make_shared<const material_db>(load_materials(cfg.materials_file));
    setup.pump = cfg.pump;
    setup.timing = cfg.timing;

    const material& crystal = setup.db->get(cfg.crystal_material);
    const material& comp = setup.db->get(cfg.compensator_material);
    if (!crystal.uniaxial())
        throw config_error("crystal material '" + crystal.name + "' must be uniaxial");
    if (!comp.uniaxial())
        throw config_error("compensator material '" + comp.name + "' must be uniaxial");

    setup.lambda_i_nm = idler_wavelength_nm(cfg.pump.wavelength_nm, cfg.signal_nm);
    setup.lambda_bar_nm = 0.5 * (cfg.signal_nm + setup.lambda_i_nm);
    setup.tau_c_fs = coherence_time_fs(setup.lambda_bar_nm * 1e-3, cfg.filter_fwhm_nm * 1e-3);
    setup.tau_p_fs = (cfg.pump.bandwidth_rad_per_s > 0.0)
                         ? 1.0e15 / cfg.pump.bandwidth_rad_per_s
                         : std::numeric_limits<double>::infinity();
    const double c_nm_per_fs = c_mm_per_fs * 1.0e6;
    setup.omega_mean_rad_per_fs = 0.5 * (2.0 * pi * c_nm_per_fs / cfg.pump.wavelength_nm);

    setup.cut_angle_deg =
        cfg.cut_auto ? phase_matching_angle(cfg.pump.wavelength_nm, cfg.signal_nm,
                                            setup.lambda_i_nm, crystal)
                     : cfg.cut_angle_deg;

    setup.generation_crystal =
        spdc_crystal{crystal, {setup.cut_angle_deg, axis_plane::vertical}, cfg.spdc_length_mm};

    setup.post_compensator_mm =
        cfg.post_auto ? solve_post_compensator(crystal, comp, setup.cut_angle_deg,
                                               cfg.spdc_length_mm, cfg.signal_nm,
                                               setup.lambda_i_nm)
                      : cfg.post_compensator_mm;
    setup.pre_compensator_mm = cfg.pre_auto ? 0.0 : cfg.pre_compensator_mm;
    if (cfg.pre_auto && cfg.spdc_length_mm > 0.0)
        setup.pre_compensator_mm = solve_pre_compensator(cfg, setup);

    const stack_params p{&crystal, &comp, setup.cut_angle_deg, cfg.spdc_length_mm};
    setup.system.slabs = build_stack(p, setup.pre_compensator_mm, setup.post_compensator_mm);
    setup.stack_exit_z_mm = stack_exit_z(p, setup.post_compensator_mm);

    if (cfg.lens_file != "none") {
        const lens_prescription lp = load_lens(cfg.lens_file);
        setup.lens_front_z_mm = setup.stack_exit_z_mm + cfg.gap_mm;
        double z = setup.lens_front_z_mm;
        for (const auto& spec : lp.surfaces) {
            lens_surface s;
            s.vertex_z_mm = z;
            s.radius_mm = spec.radius_mm;
            s.conic = spec.conic;
            s.asphere_coeffs = spec.asphere_coeffs;
            s.aperture_mm = spec.aperture_mm;
            if (spec.material == "air") {
                s.glass_after = nullptr;
            } else {
                const material& g = setup.db->get(spec.material);
                if (g.uniaxial())
                    throw config_error("lens medium '" + g.name + "' must be isotropic");
                s.glass_after = &g;
            }
            setup.system.surfaces.push_back(std::move(s));
            z += spec.thickness_mm;
        }
        if (cfg.focus_auto) {
            setup.system.collection_z_mm =
                paraxial_axis_crossing(setup.system.surfaces, setup.lambda_bar_nm);
        } else {
            setup.system.collection_z_mm = setup.lens_front_z_mm + cfg.focus_mm;
        }
    } else {
        setup.lens_front_z_mm = setup.stack_exit_z_mm + cfg.gap_mm;
        setup.system.collection_z_mm =
            setup.stack_exit_z_mm + (cfg.focus_auto ? cfg.gap_mm : cfg.focus_mm);
    }
    if (setup.system.collection_z_mm < setup.stack_exit_z_mm)
        throw config_error("collection plane lies inside the crystal stack");

    setup.chief_t_fs =
        chief_reference_time(setup.system, setup.lambda_bar_nm, cfg.timing);
    return setup;
}

// ---------------------------------------------------------------------------
// commands

namespace {

struct fidelity_outcome {
    fidelity_estimate estimate;
    tau_histogram_result hist_plus;
    tau_histogram_result hist_minus;
};

fidelity_outcome run_fidelity(const scenario_config& cfg, const simulation_setup& setup) {
    const spdc_crystal gen_b{setup.generation_crystal.medium,
                             {setup.cut_angle_deg, axis_plane::horizontal},
                             cfg.spdc_length_mm};
    const sample_domain domain{cfg.signal_nm - 0.5 * cfg.filter_fwhm_nm,
                               cfg.signal_nm + 0.5 * cfg.filter_fwhm_nm,
                               cfg.collection_half_angle_deg};
    const std::vector<pair_event> events = sample_pairs(
        cfg.rays, setup.pump, {setup.generation_crystal, gen_b}, domain, cfg.seed);

    struct slot {
        double dts = 0.0, dti = 0.0;
        bool accepted = false;
    };
    std::vector<slot> slots(events.size());
    run_indexed(events.size(), cfg.workers, [&](std::size_t i) {
        const auto t = pair_timing(events[i], setup.system, setup.pump,
                                   setup.generation_crystal, cfg.timing, setup.chief_t_fs);
        if (t) slots[i] = slot{t->dt_s_fs, t->dt_i_fs, true};
    });

    // sequential, index-ordered reduction keeps results worker-count independent
    std::vector<event_overlap> overlaps;
    std::vector<double> tau_plus, tau_minus;
    overlaps.reserve(events.size());
    tau_plus.reserve(events.size());
    tau_minus.reserve(events.size());
    for (const slot& s : slots) {
        if (!s.accepted) continue;
        const std::complex<double> f = jtpa_overlap(s.dts, s.dti, setup.tau_p_fs,
                                                    setup.tau_c_fs,
                                                    setup.omega_mean_rad_per_fs);
        // the sampler already draws pairs in proportion to the conversion
        // efficiency, so accepted events enter the ensemble with unit weight;
        // weighting by the efficiency again would double-count it
        overlaps.push_back(event_overlap{f, 1.0});
        tau_plus.push_back(0.5 * (s.dts + s.dti));
        tau_minus.push_back(s.dts - s.dti);
    }
    if (overlaps.size() < 2)
        throw physics_error("fewer than 2 pairs reached the collection plane");

    fidelity_outcome out;
    out.estimate = bootstrap_fidelity(overlaps, events.size() - overlaps.size(),
                                      cfg.resamples, cfg.seed);
    out.hist_plus = tau_histogram(tau_plus, cfg.histogram_bin_fs);
    out.hist_minus = tau_histogram(tau_minus, cfg.histogram_bin_fs);
    return out;
}

std::vector<double> linear_grid(double lo, double hi, double step) {
    const int n = static_cast<int>(std::floor((hi - lo) / step + 0.5)) + 1;
    std::vector<double> g(static_cast<std::size_t>(std::max(n, 1)));
    for (int k = 0; k < n; ++k) g[static_cast<std::size_t>(k)] = lo + k * step;
    return g;
}

} // namespace

int cmd_pm_angle(const scenario_config& cfg) {
    const auto db = load_materials(cfg.materials_file);
    const material& crystal = db.get(cfg.crystal_material);
    const double li = idler_wavelength_nm(cfg.pump.wavelength_nm, cfg.signal_nm);
    const double cut =
        phase_matching_angle(cfg.pump.wavelength_nm, cfg.signal_nm, li, crystal);

    const spdc_crystal probe{crystal, {cut, axis_plane::vertical}, cfg.spdc_length_mm};
    const double residual =
        phase_mismatch(cfg.pump, probe, cfg.signal_nm, li, 0.0, 0.0);

    std::string body = "{\n";
    body += "  \"lambda_p_nm\": " + fmt17(cfg.pump.wavelength_nm) + ",\n";
    body += "  \"lambda_s_nm\": " + fmt17(cfg.signal_nm) + ",\n";
    body += "  \"lambda_i_nm\": " + fmt17(li) + ",\n";
    body += "  \"cut_angle_deg\": " + fmt17(cut) + ",\n";
    body += "  \"residual_rad_per_mm\": " + fmt17(residual) + ",\n";
    body += "  \"config_hash\": \"" + hash_hex(config_hash(cfg)) + "\"\n";
    body += "}\n";
    write_text_file(cfg.out_dir, "pm_angle.json", body);
    std::printf("pm-angle: cut = %.6f deg (residual %.3e rad/mm)\n", cut, residual);
    return 0;
}

int cmd_emission_map(const scenario_config& cfg) {
    if (!(cfg.spdc_length_mm > 0.0))
        throw config_error("emission map needs a positive crystal length");
    const auto db = load_materials(cfg.materials_file);
    const material& crystal = db.get(cfg.crystal_material);
    const double li = idler_wavelength_nm(cfg.pump.wavelength_nm, cfg.signal_nm);
    const double cut = cfg.cut_auto ? phase_matching_angle(cfg.pump.wavelength_nm,
                                                           cfg.signal_nm, li, crystal)
                                    : cfg.cut_angle_deg;
    const spdc_crystal gen{crystal, {cut, axis_plane::vertical}, cfg.spdc_length_mm};

    const std::vector<double> lam_grid =
        linear_grid(cfg.map.lambda_lo_nm, cfg.map.lambda_hi_nm, cfg.map.lambda_step_nm);
    const std::vector<double> a_grid =
        linear_grid(-cfg.map.alpha_max_deg, cfg.map.alpha_max_deg, cfg.map.alpha_step_deg);

    const efficiency_map map = emission_map(cfg.pump, gen, lam_grid, a_grid);

    std::string csv = "lambda_nm,alpha_deg,efficiency\n";
    csv.reserve(map.lambda_nm.size() * map.alpha_deg.size() * 24);
    for (std::size_t i = 0; i < map.lambda_nm.size(); ++i)
        for (std::size_t j = 0; j < map.alpha_deg.size(); ++j) {
            csv += fmt17(map.lambda_nm[i]);
            csv += ',';
            csv += fmt17(map.alpha_deg[j]);
            csv += ',';
            csv += fmt17(map.value(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            csv += '\n';
        }
    write_text_file(cfg.out_dir, "emission_map.csv", csv);

    const band_capture cap = band_capture_fraction(
        map, crystal, cfg.signal_nm - cfg.filter_fwhm_nm, cfg.signal_nm + cfg.filter_fwhm_nm,
        li - cfg.filter_fwhm_nm, li + cfg.filter_fwhm_nm, cfg.map.cone_deg);

    std::string body = "{\n";
    body += "  \"lambda_cells\": " + fmt_u64(map.lambda_nm.size()) + ",\n";
    body += "  \"alpha_cells\": " + fmt_u64(map.alpha_deg.size()) + ",\n";
    body += "  \"cone_deg\": " + fmt17(cfg.map.cone_deg) + ",\n";
    body += "  \"band_capture_external\": " + fmt17(cap.external_fraction) + ",\n";
    body += "  \"band_capture_internal\": " + fmt17(cap.internal_fraction) + ",\n";
    body += "  \"config_hash\": \"" + hash_hex(config_hash(cfg)) + "\"\n";
    body += "}\n";
    write_text_file(cfg.out_dir, "emission_map_summary.json", body);
    std::printf("emission-map: %zu x %zu cells, band capture %.4f external / %.4f internal at %.2f deg\n",
                map.lambda_nm.size(), map.alpha_deg.size(), cap.external_fraction,
                cap.internal_fraction, cfg.map.cone_deg);
    return 0;
}

int cmd_compensator_sweep(const scenario_config& cfg) {
    const auto db = load_materials(cfg.materials_file);
    const material& crystal = db.get(cfg.crystal_material);
    const material& comp = db.get(cfg.compensator_material);
    if (!crystal.uniaxial() || !comp.uniaxial())
        throw config_error("sweep needs uniaxial crystal and compensator materials");
    const double li = idler_wavelength_nm(cfg.pump.wavelength_nm, cfg.signal_nm);
    const double cut = cfg.cut_auto ? phase_matching_angle(cfg.pump.wavelength_nm,
                                                           cfg.signal_nm, li, crystal)
                                    : cfg.cut_angle_deg;
    const double theta = deg_to_rad(cut);

    // analytic delay-sum fast path: residual longitudinal group delay between the
    // e-path and o-path histories after a compensator of thickness D
    const double ng_eff = 0.5 * (effective_group_index(crystal, theta, cfg.signal_nm * 1e-3) +
                                 effective_group_index(crystal, theta, li * 1e-3));
    const double ng_e = 0.5 * (group_index(comp, light_pol::extraordinary, cfg.signal_nm * 1e-3) +
                               group_index(comp, light_pol::extraordinary, li * 1e-3));
    const double lambda_bar = 0.5 * (cfg.signal_nm + li);
    const double tau_c = coherence_time_fs(lambda_bar * 1e-3, cfg.filter_fwhm_nm * 1e-3);
    const auto tau_of = [&](double d_mm) {
        return ((ng_eff - 1.0) * cfg.spdc_length_mm - (ng_e - 1.0) * d_mm) / c_mm_per_fs;
    };

    sweep_result res;
    const std::vector<double> grid = linear_grid(cfg.sweep.from_mm, cfg.sweep.to_mm,
                                                 cfg.sweep.step_mm);
    double best = std::numeric_limits<double>::infinity();
    for (double d : grid) {
        sweep_point pt;
        pt.thickness_mm = d;
        pt.tau_minus_fs = tau_of(d);
        if (cfg.sweep.fidelity) {
            scenario_config point_cfg = cfg;
            point_cfg.post_auto = false;
            point_cfg.post_compensator_mm = d;
            const simulation_setup setup = build_setup(point_cfg);
            pt.fidelity = run_fidelity(point_cfg, setup).estimate.F;
        }
        if (std::abs(pt.tau_minus_fs) < best) {
            best = std::abs(pt.tau_minus_fs);
            res.optimum_mm = d;
        }
        res.points.push_back(pt);
    }

    // band edges where |tau| = tau_c, linear interpolation between grid neighbors
    res.band_lo_mm = grid.front();
    res.band_hi_mm = grid.back();
    for (std::size_t k = 0; k + 1 < res.points.size(); ++k) {
        const double a0 = std::abs(res.points[k].tau_minus_fs) - tau_c;
        const double a1 = std::abs(res.points[k + 1].tau_minus_fs) - tau_c;
        if (a0 > 0.0 && a1 <= 0.0)
            res.band_lo_mm = grid[k] + (grid[k + 1] - grid[k]) * a0 / (a0 - a1);
        if (a0 <= 0.0 && a1 > 0.0)
            res.band_hi_mm = grid[k] + (grid[k + 1] - grid[k]) * a0 / (a0 - a1);
    }

    std::string csv = cfg.sweep.fidelity ? "thickness_mm,tau_minus_fs,fidelity\n"
                                         : "thickness_mm,tau_minus_fs\n";
    for (const auto& pt : res.points) {
        csv += fmt17(pt.thickness_mm);
        csv += ',';
        csv += fmt17(pt.tau_minus_fs);
        if (cfg.sweep.fidelity) {
            csv += ',';
            csv += fmt17(pt.fidelity);
        }
        csv += '\n';
    }
    write_text_file(cfg.out_dir, "compensator_sweep.csv", csv);

    std::string body = "{\n";
    body += "  \"optimum_mm\": " + fmt17(res.optimum_mm) + ",\n";
    body += "  \"band_lo_mm\": " + fmt17(res.band_lo_mm) + ",\n";
    body += "  \"band_hi_mm\": " + fmt17(res.band_hi_mm) + ",\n";
    body += "  \"band_half_width_um\": " + fmt17(0.5 * (res.band_hi_mm - res.band_lo_mm) * 1e3) +
            ",\n";
    body += "  \"tau_c_fs\": " + fmt17(tau_c) + ",\n";
    body += "  \"config_hash\": \"" + hash_hex(config_hash(cfg)) + "\"\n";
    body += "}\n";
    write_text_file(cfg.out_dir, "compensator_sweep_summary.json", body);
    std::printf("compensator-sweep: optimum %.4f mm, band [%.4f, %.4f] mm vs tau_c %.1f fs\n",
                res.optimum_mm, res.band_lo_mm, res.band_hi_mm, tau_c);
    return 0;
}

int cmd_fidelity(const scenario_config& cfg) {
    if (!(cfg.spdc_length_mm > 0.0))
        throw config_error("fidelity needs a positive crystal length");
    const simulation_setup setup = build_setup(cfg);
    const fidelity_outcome out = run_fidelity(cfg, setup);
    const fidelity_estimate& est = out.estimate;

    std::string body = "{\n";
    body += "  \"F\": " + fmt17(est.F) + ",\n";
    body += "  \"sigma_F\": " + fmt17(est.sigma_F) + ",\n";
    body += "  \"mean_f_re\": " + fmt17(est.mean_f.real()) + ",\n";
    body += "  \"mean_f_im\": " + fmt17(est.mean_f.imag()) + ",\n";
    body += "  \"n_accepted\": " + fmt_u64(est.n_accepted) + ",\n";
    body += "  \"loss_fraction\": " + fmt17(est.loss_fraction) + ",\n";
    body += "  \"seed\": " + fmt_u64(cfg.seed) + ",\n";
    body += "  \"config_hash\": \"" + hash_hex(config_hash(cfg)) + "\"\n";
    body += "}\n";
    write_text_file(cfg.out_dir, "fidelity.json", body);
    write_text_file(cfg.out_dir, "tau_plus_hist.csv", histogram_csv(out.hist_plus));
    write_text_file(cfg.out_dir, "tau_minus_hist.csv", histogram_csv(out.hist_minus));

    if (est.loss_fraction > 0.5)
        std::fprintf(stderr,
                     "warning: %.1f%% of sampled pairs were lost before the collection plane; "
                     "the fidelity estimate conditions on the surviving subset\n",
                     100.0 * est.loss_fraction);
    std::printf("fidelity: F = %.6f +- %.6f (n = %zu, loss = %.4f, seed %llu)\n", est.F,
                est.sigma_F, est.n_accepted, est.loss_fraction,
                static_cast<unsigned long long>(cfg.seed));
    return 0;
}

int cmd_trace_dump(const scenario_config& cfg) {
    if (cfg.rays > 10000)
        throw config_error("trace dump is limited to 10000 rays");
    if (!(cfg.spdc_length_mm > 0.0))
        throw config_error("trace dump needs a positive crystal length");
    const simulation_setup setup = build_setup(cfg);
    const spdc_crystal gen_b{setup.generation_crystal.medium,
                             {setup.cut_angle_deg, axis_plane::horizontal},
                             cfg.spdc_length_mm};
    const sample_domain domain{cfg.signal_nm - 0.5 * cfg.filter_fwhm_nm,
                               cfg.signal_nm + 0.5 * cfg.filter_fwhm_nm,
                               cfg.collection_half_angle_deg};
    const std::vector<pair_event> events = sample_pairs(
        cfg.rays, setup.pump, {setup.generation_crystal, gen_b}, domain, cfg.seed);

    std::string csv = "ray_id,lambda_nm,pol,z_mm,x_mm,t_fs\n";
    std::size_t alive = 0, dead_tir = 0, dead_miss = 0;

    const auto dump_ray = [&](std::size_t id, ray r) {
        std::vector<trace_vertex> poly;
        r = trace(r, setup.system, cfg.timing, &poly);
        const char* pol = (r.pol == photon_pol::horizontal) ? "H" : "V";
        for (const auto& v : poly) {
            csv += fmt_u64(id);
            csv += ',';
            csv += fmt17(r.lambda_nm);
            csv += ',';
            csv += pol;
            csv += ',';
            csv += fmt17(v.pos(0));
            csv += ',';
            csv += fmt17(v.pos(1));
            csv += ',';
            csv += fmt17(v.t_fs);
            csv += '\n';
        }
        return r.status;
    };

    // ray 0: the axial reference ray at the mean daughter wavelength
    ray chief;
    chief.pos = Eigen::Vector2d(0.0, 0.0);
    chief.dir = Eigen::Vector2d(1.0, 0.0);
    chief.lambda_nm = setup.lambda_bar_nm;
    chief.pol = photon_pol::horizontal;
    dump_ray(0, chief);

    for (std::size_t i = 0; i < events.size(); ++i) {
        const pair_event& ev = events[i];
        const pair_origin hyp = ev.origin;
        const crystal_slab* gen = setup.system.slab_by_role(
            hyp == pair_origin::crystal_a ? slab_role::spdc_a : slab_role::spdc_b);
        const double n_o = refractive_index(*gen->medium, light_pol::ordinary,
                                            ev.lambda_s_nm * 1e-3);
        const double kx = n_o * std::sin(deg_to_rad(ev.alpha_s_deg));
        ray r;
        r.pos = Eigen::Vector2d(gen->entry_z_mm + ev.birth_z_mm, ev.transverse_x_um * 1e-3);
        if (std::abs(kx) < 1.0)
            r.dir = Eigen::Vector2d(std::sqrt(1.0 - kx * kx), kx);
        else
            r.status = ray_status::dead_tir;
        r.lambda_nm = ev.lambda_s_nm;
        r.pol = (hyp == pair_origin::crystal_a) ? photon_pol::horizontal : photon_pol::vertical;
        r.t_fs = pump_arrival_time(setup.system, cfg.pump.wavelength_nm, hyp,
                                   gen->entry_z_mm + ev.birth_z_mm, cfg.timing);
        switch (dump_ray(i + 1, r)) {
            case ray_status::alive: ++alive; break;
            case ray_status::dead_tir: ++dead_tir; break;
            case ray_status::dead_miss: ++dead_miss; break;
        }
    }
    write_text_file(cfg.out_dir, "trace_dump.csv", csv);

    std::string body = "{\n";
    body += "  \"rays\": " + fmt_u64(events.size()) + ",\n";
    body += "  \"alive\": " + fmt_u64(alive) + ",\n";
    body += "  \"dead_tir\": " + fmt_u64(dead_tir) + ",\n";
    body += "  \"dead_miss\": " + fmt_u64(dead_miss) + ",\n";
    body += "  \"config_hash\": \"" + hash_hex(config_hash(cfg)) + "\"\n";
    body += "}\n";
    write_text_file(cfg.out_dir, "trace_dump_summary.json", body);
    std::printf("trace-dump: %zu rays (%zu alive, %zu TIR, %zu missed)\n", events.size(),
                alive, dead_tir, dead_miss);
    return 0;
}

} // namespace spdcsim
