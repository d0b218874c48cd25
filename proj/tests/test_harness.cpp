#include "doctest.h"

#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "spdcsim/constants.hpp"
#include "spdcsim/harness.hpp"

using namespace spdcsim;
namespace fs = std::filesystem;

// Reference values frozen from an independent numerical model.

namespace {

const std::string source_dir = SPDCSIM_SOURCE_DIR;
const std::string default_scenario = source_dir + "/data/scenario_default.json";

std::string temp_out(const std::string& leaf) {
    const fs::path dir = fs::temp_directory_path() / "spdcsim_unit" / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file: ", path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string write_temp(const std::string& leaf, const std::string& body) {
    const fs::path dir = fs::temp_directory_path() / "spdcsim_unit";
    fs::create_directories(dir);
    const fs::path p = dir / leaf;
    std::ofstream(p, std::ios::binary) << body;
    return p.string();
}

scenario_config default_cfg() { return load_scenario(default_scenario); }

/// Collinear on-axis event at the given internal signal angle (radians).
pair_event make_event(const simulation_setup& setup, double lambda_s_nm,
                      double alpha_int_rad, double birth_z_mm) {
    pair_event ev;
    ev.birth_z_mm = birth_z_mm;
    ev.lambda_s_nm = lambda_s_nm;
    ev.lambda_i_nm = idler_wavelength_nm(setup.pump.wavelength_nm, lambda_s_nm);
    ev.alpha_s_deg = rad_to_deg(alpha_int_rad);
    ev.alpha_i_deg = rad_to_deg(idler_angle_rad(setup.generation_crystal.medium, lambda_s_nm,
                                                ev.lambda_i_nm, alpha_int_rad));
    return ev;
}

struct pair_delays {
    double tau_plus_fs = 0.0;
    double tau_minus_half_fs = 0.0;
};

pair_delays delays_of(const scenario_config& cfg, const simulation_setup& setup,
                      const pair_event& ev) {
    const auto res = pair_timing(ev, setup.system, setup.pump, setup.generation_crystal,
                                 cfg.timing, setup.chief_t_fs);
    REQUIRE(res.has_value());
    return {0.5 * (res->dt_s_fs + res->dt_i_fs), 0.5 * (res->dt_s_fs - res->dt_i_fs)};
}

} // namespace

TEST_CASE("materials table loads and matches the frozen dispersion pins") {
    const auto db = load_materials(source_dir + "/data/materials.json");
    for (const char* name : {"BBO", "YVO4", "N-BK7", "N-LAK22", "N-SF6"})
        CHECK(db.has(name));
    CHECK_FALSE(db.has("unobtainium"));
    CHECK_THROWS_AS((void)db.get("unobtainium"), config_error);

    const material& bbo = db.get("BBO");
    CHECK(bbo.uniaxial());
    CHECK(refractive_index(bbo, light_pol::ordinary, 0.780) ==
          doctest::Approx(1.6611691860).epsilon(1e-9));
    CHECK(refractive_index(bbo, light_pol::ordinary, 0.405) ==
          doctest::Approx(1.6918868960).epsilon(1e-9));

    const material& yvo4 = db.get("YVO4");
    CHECK(yvo4.uniaxial());
    CHECK(group_index(yvo4, light_pol::extraordinary, 0.405) ==
          doctest::Approx(2.9297907854).epsilon(1e-9));

    CHECK_FALSE(db.get("N-BK7").uniaxial());
    CHECK(refractive_index(db.get("N-BK7"), light_pol::ordinary, 0.780) ==
          doctest::Approx(1.5111833937).epsilon(1e-9));
    CHECK(refractive_index(db.get("N-LAK22"), light_pol::ordinary, 0.780) ==
          doctest::Approx(1.6432516921).epsilon(1e-9));
    CHECK(refractive_index(db.get("N-SF6"), light_pol::ordinary, 0.780) ==
          doctest::Approx(1.7855888749).epsilon(1e-9));

    CHECK_THROWS_AS((void)load_materials(source_dir + "/data/nonexistent.json"), io_error);
    CHECK_THROWS_AS((void)load_materials(write_temp("broken.json", "{ not json")),
                    config_error);
}

TEST_CASE("lens prescriptions load and validate") {
    const auto asphere = load_lens(source_dir + "/data/lens_asphere.json");
    REQUIRE(asphere.surfaces.size() == 2);
    CHECK(asphere.surfaces[0].radius_mm == doctest::Approx(3.829122));
    CHECK(asphere.surfaces[0].conic == doctest::Approx(-0.6));
    CHECK(asphere.surfaces[0].asphere_coeffs.size() == 4);
    CHECK(asphere.surfaces[0].thickness_mm == doctest::Approx(3.2));
    CHECK(asphere.surfaces[0].material == "N-BK7");
    CHECK(asphere.surfaces[0].aperture_mm == doctest::Approx(2.25));
    CHECK(asphere.surfaces[1].radius_mm == doctest::Approx(0.0));
    CHECK(asphere.surfaces[1].material == "air");

    const auto doublet = load_lens(source_dir + "/data/lens_doublet.json");
    REQUIRE(doublet.surfaces.size() == 3);
    CHECK(doublet.surfaces.back().material == "air");

    const char* trapped = R"({"name":"bad","surfaces":[
        {"radius_mm":10.0,"thickness_mm":2.0,"material":"N-BK7","aperture_mm":3.0}]})";
    CHECK_THROWS_AS((void)load_lens(write_temp("lens_trapped.json", trapped)), config_error);

    const char* negative = R"({"name":"bad","surfaces":[
        {"radius_mm":10.0,"thickness_mm":-2.0,"material":"N-BK7","aperture_mm":3.0},
        {"radius_mm":0.0,"thickness_mm":0.0,"material":"air","aperture_mm":3.0}]})";
    CHECK_THROWS_AS((void)load_lens(write_temp("lens_negative.json", negative)), config_error);

    const char* pinhole = R"({"name":"bad","surfaces":[
        {"radius_mm":10.0,"thickness_mm":2.0,"material":"N-BK7","aperture_mm":0.0},
        {"radius_mm":0.0,"thickness_mm":0.0,"material":"air","aperture_mm":3.0}]})";
    CHECK_THROWS_AS((void)load_lens(write_temp("lens_pinhole.json", pinhole)), config_error);
}

TEST_CASE("scenario loads, validates, and applies command line overrides") {
    scenario_config cfg = default_cfg();
    CHECK(cfg.pump.wavelength_nm == doctest::Approx(405.0));
    CHECK(cfg.pump.polarization_deg == doctest::Approx(45.0));
    CHECK(cfg.pump.bandwidth_rad_per_s == doctest::Approx(0.0));
    CHECK(cfg.signal_nm == doctest::Approx(780.0));
    CHECK(cfg.filter_fwhm_nm == doctest::Approx(10.0));
    CHECK(cfg.cut_auto);
    CHECK(cfg.pre_auto);
    CHECK(cfg.post_auto);
    CHECK(cfg.focus_auto);
    CHECK(cfg.spdc_length_mm == doctest::Approx(6.0));
    CHECK(cfg.collection_half_angle_deg == doctest::Approx(0.25));
    CHECK(cfg.gap_mm == doctest::Approx(325.0));
    CHECK(cfg.lens_file.find("lens_asphere.json") != std::string::npos);
    CHECK(fs::path(cfg.lens_file).is_absolute());
    CHECK(fs::path(cfg.materials_file).is_absolute());
    CHECK(cfg.timing == timing_mode::phase);
    CHECK(cfg.rays == 100000);
    CHECK(cfg.seed == 20260816);
    CHECK(cfg.resamples == 200);
    CHECK(cfg.workers == 1);
    CHECK(cfg.histogram_bin_fs == doctest::Approx(0.05));
    CHECK(cfg.sweep.from_mm == doctest::Approx(2.5));
    CHECK(cfg.sweep.to_mm == doctest::Approx(3.7));
    CHECK(cfg.sweep.step_mm == doctest::Approx(0.005));
    CHECK_FALSE(cfg.sweep.fidelity);
    CHECK(cfg.map.cone_deg == doctest::Approx(0.36));

    cli_overrides cli;
    cli.seed = 7;
    cli.rays = 1234;
    cli.out_dir = "elsewhere";
    cli.timing = timing_mode::group;
    cli.resamples = 150;
    cli.workers = 3;
    apply_overrides(cfg, cli);
    CHECK(cfg.seed == 7);
    CHECK(cfg.rays == 1234);
    CHECK(cfg.out_dir == "elsewhere");
    CHECK(cfg.timing == timing_mode::group);
    CHECK(cfg.resamples == 150);
    CHECK(cfg.workers == 3);

    cli_overrides bad;
    bad.rays = 0;
    CHECK_THROWS_AS(apply_overrides(cfg, bad), config_error);
    cli_overrides crowd;
    crowd.workers = 500;
    CHECK_THROWS_AS(apply_overrides(cfg, crowd), config_error);

    CHECK_THROWS_AS((void)load_scenario(source_dir + "/data/nonexistent.json"), io_error);
    CHECK_THROWS_AS((void)load_scenario(write_temp("broken2.json", "[1, 2")), config_error);
    CHECK_THROWS_AS((void)load_scenario(write_temp("nopump.json", "{\"signal_nm\": 780.0}")),
                    config_error);
}

TEST_CASE("config hash tracks physics inputs and ignores execution details") {
    const scenario_config base = default_cfg();
    const std::uint64_t h0 = config_hash(base);

    scenario_config moved = base;
    moved.out_dir = "somewhere/else";
    moved.workers = 8;
    CHECK(config_hash(moved) == h0);

    scenario_config reseeded = base;
    reseeded.seed += 1;
    CHECK(config_hash(reseeded) != h0);

    scenario_config retimed = base;
    retimed.timing = timing_mode::group;
    CHECK(config_hash(retimed) != h0);

    scenario_config retuned = base;
    retuned.signal_nm = 781.0;
    CHECK(config_hash(retuned) != h0);

    scenario_config fewer = base;
    fewer.rays = 5000;
    CHECK(config_hash(fewer) != h0);
}

TEST_CASE("number formatting round-trips and is byte-stable") {
    for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-8, 1e-300, 3.0, -0.0,
                     219.500332, 2.99792458e-4}) {
        const std::string s = fmt17(v);
        const double back = std::strtod(s.c_str(), nullptr);
        CHECK(back == v);
        CHECK(std::signbit(back) == std::signbit(v));
    }
    CHECK(fmt17(3.0) == "3");
    CHECK(fmt17(0.1) == "0.1");
    CHECK(fmt17(std::numeric_limits<double>::quiet_NaN()) == "nan");
    CHECK(fmt17(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(fmt17(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("post compensator solve matches the two-point band average") {
    const auto db = load_materials(source_dir + "/data/materials.json");
    const double d = solve_post_compensator(db.get("BBO"), db.get("YVO4"), 28.7964768577, 6.0,
                                            780.0, 842.4);
    CHECK(d == doctest::Approx(3.0667746436).epsilon(1e-9));
}

TEST_CASE("default setup solves the design geometry") {
    const scenario_config cfg = default_cfg();
    const simulation_setup setup = build_setup(cfg);

    CHECK(setup.cut_angle_deg == doctest::Approx(28.7964768577).epsilon(1e-9));
    CHECK(setup.lambda_i_nm == doctest::Approx(842.4).epsilon(1e-12));
    CHECK(setup.lambda_bar_nm == doctest::Approx(811.2).epsilon(1e-12));
    CHECK(setup.post_compensator_mm == doctest::Approx(3.0667746436).epsilon(1e-7));
    CHECK(std::abs(setup.pre_compensator_mm - 3.85362023) < 2e-5);
    CHECK(setup.tau_c_fs == doctest::Approx(219.500332).epsilon(1e-7));
    CHECK(std::isinf(setup.tau_p_fs));
    CHECK(setup.omega_mean_rad_per_fs == doctest::Approx(2.32549576).epsilon(1e-7));
    CHECK(setup.timing == timing_mode::phase);

    // slab train: pre, two generation crystals, two overlap crystals, post
    REQUIRE(setup.system.slabs.size() == 6);
    const crystal_slab* gen_a = setup.system.slab_by_role(slab_role::spdc_a);
    const crystal_slab* gen_b = setup.system.slab_by_role(slab_role::spdc_b);
    REQUIRE(gen_a != nullptr);
    REQUIRE(gen_b != nullptr);
    CHECK(gen_a->entry_z_mm == doctest::Approx(0.0));
    CHECK(gen_a->length_mm == doctest::Approx(6.0));
    CHECK(gen_b->entry_z_mm == doctest::Approx(6.0));
    CHECK(setup.system.slab_by_role(slab_role::overlap_a)->length_mm == doctest::Approx(3.0));
    CHECK(setup.system.slab_by_role(slab_role::overlap_b)->length_mm == doctest::Approx(3.0));
    CHECK(setup.stack_exit_z_mm ==
          doctest::Approx(18.0 + setup.post_compensator_mm).epsilon(1e-12));
    CHECK(setup.lens_front_z_mm == doctest::Approx(setup.stack_exit_z_mm + 325.0));

    // solved collection plane sits at the frozen paraxial back focus
    CHECK(std::abs(setup.system.collection_z_mm - setup.lens_front_z_mm - 8.58146675) < 1e-4);
    CHECK(setup.chief_t_fs > 0.0);

    scenario_config grp = cfg;
    grp.timing = timing_mode::group;
    CHECK(std::abs(build_setup(grp).pre_compensator_mm - 3.41454031) < 2e-5);

    scenario_config dbl = cfg;
    dbl.lens_file = source_dir + "/data/lens_doublet.json";
    const simulation_setup dsetup = build_setup(dbl);
    CHECK(std::abs(dsetup.system.collection_z_mm - dsetup.lens_front_z_mm - 20.77404128) < 1e-4);

    scenario_config manual = cfg;
    manual.focus_auto = false;
    manual.focus_mm = 7.0;
    const simulation_setup msetup = build_setup(manual);
    CHECK(msetup.system.collection_z_mm ==
          doctest::Approx(msetup.lens_front_z_mm + 7.0).epsilon(1e-12));

    scenario_config bare = cfg;
    bare.lens_file = "none";
    const simulation_setup bsetup = build_setup(bare);
    CHECK(bsetup.system.surfaces.empty());
    CHECK(bsetup.system.collection_z_mm ==
          doctest::Approx(bsetup.stack_exit_z_mm + 325.0).epsilon(1e-12));
}

TEST_CASE("assembled stack reproduces the frozen pair delays") {
    scenario_config cfg = default_cfg();
    cfg.lens_file = "none";

    SUBCASE("carrier-phase timing") {
        cfg.timing = timing_mode::phase;
        const simulation_setup setup = build_setup(cfg);

        const auto center = delays_of(cfg, setup, make_event(setup, 780.0, 0.0, 3.0));
        CHECK(std::abs(center.tau_plus_fs - 0.002858) < 2e-5);

        const auto up = delays_of(cfg, setup, make_event(setup, 780.0, +0.006, 3.0));
        const auto dn = delays_of(cfg, setup, make_event(setup, 780.0, -0.006, 3.0));
        CHECK(std::abs(up.tau_plus_fs - 0.697290) < 2e-5);
        CHECK(std::abs(dn.tau_plus_fs - 0.697290) < 2e-5);
        CHECK(std::abs(up.tau_plus_fs - dn.tau_plus_fs) < 5e-6);

        // birth depth drops out of both delay combinations
        std::vector<pair_delays> zscan;
        for (double zb : {0.5, 3.0, 5.5})
            zscan.push_back(delays_of(cfg, setup, make_event(setup, 780.0, 0.003, zb)));
        for (const auto& d : zscan) {
            CHECK(std::abs(d.tau_plus_fs - 0.176463252) < 1e-5);
            CHECK(std::abs(d.tau_minus_half_fs - 6.517912066) < 1e-5);
        }
        CHECK(std::abs(zscan[0].tau_plus_fs - zscan[2].tau_plus_fs) < 1e-9);
        CHECK(std::abs(zscan[0].tau_minus_half_fs - zscan[2].tau_minus_half_fs) < 1e-9);

        const auto lo = delays_of(cfg, setup, make_event(setup, 775.0, 0.0, 3.0));
        const auto hi = delays_of(cfg, setup, make_event(setup, 785.0, 0.0, 3.0));
        CHECK(std::abs(lo.tau_plus_fs - (-0.088053)) < 2e-5);
        CHECK(std::abs(lo.tau_minus_half_fs - 7.674127) < 2e-5);
        CHECK(std::abs(hi.tau_plus_fs - 0.078179) < 2e-5);
        CHECK(std::abs(hi.tau_minus_half_fs - 5.405084) < 2e-5);

        // transverse hypothesis separations at the collection plane; the shared
        // compensator contributes a small extra walk-off relative to the frozen
        // slab-only reference, so these carry a wider tolerance than the delays
        const pair_event side = make_event(setup, 780.0, 0.006, 3.0);
        const auto rec_a = trace_pair_event(side, setup.system, setup.pump,
                                            pair_origin::crystal_a, cfg.timing, setup.chief_t_fs);
        const auto rec_b = trace_pair_event(side, setup.system, setup.pump,
                                            pair_origin::crystal_b, cfg.timing, setup.chief_t_fs);
        REQUIRE(rec_a.signal_alive);
        REQUIRE(rec_b.signal_alive);
        const double dxs_um = (rec_a.x_s_mm - rec_b.x_s_mm) * 1e3;
        const double dxi_um = (rec_a.x_i_mm - rec_b.x_i_mm) * 1e3;
        CHECK(std::abs(dxs_um - 40.8280) < 6.0);
        CHECK(std::abs(dxi_um - (-44.1278)) < 6.0);
        CHECK(std::abs(dxs_um + dxi_um - (-3.2998)) < 0.8);
    }

    SUBCASE("group-envelope timing") {
        cfg.timing = timing_mode::group;
        const simulation_setup setup = build_setup(cfg);

        const auto center = delays_of(cfg, setup, make_event(setup, 780.0, 0.0, 3.0));
        CHECK(std::abs(center.tau_plus_fs - (-0.002130)) < 2e-5);

        const auto up = delays_of(cfg, setup, make_event(setup, 780.0, +0.006, 3.0));
        CHECK(std::abs(up.tau_plus_fs - 0.706322) < 2e-5);

        std::vector<pair_delays> zscan;
        for (double zb : {0.5, 3.0, 5.5})
            zscan.push_back(delays_of(cfg, setup, make_event(setup, 780.0, 0.003, zb)));
        for (const auto& d : zscan) {
            CHECK(std::abs(d.tau_plus_fs - 0.174981070) < 1e-5);
            CHECK(std::abs(d.tau_minus_half_fs - 0.602793460) < 1e-5);
        }
        CHECK(std::abs(zscan[0].tau_plus_fs - zscan[2].tau_plus_fs) < 1e-9);

        const auto lo = delays_of(cfg, setup, make_event(setup, 775.0, 0.0, 3.0));
        const auto hi = delays_of(cfg, setup, make_event(setup, 785.0, 0.0, 3.0));
        CHECK(std::abs(lo.tau_plus_fs - 0.065613) < 2e-5);
        CHECK(std::abs(lo.tau_minus_half_fs - 0.714052) < 2e-5);
        CHECK(std::abs(hi.tau_plus_fs - (-0.058261)) < 2e-5);
        CHECK(std::abs(hi.tau_minus_half_fs - 0.515876) < 2e-5);
    }
}

TEST_CASE("collinear band-average fidelity floor matches the frozen reference") {
    scenario_config cfg = default_cfg();
    cfg.lens_file = "none";

    const auto floor_of = [&](timing_mode mode, double band_nm) {
        cfg.timing = mode;
        const simulation_setup setup = build_setup(cfg);
        std::complex<double> sum = 0.0;
        const int n = 41;
        for (int k = 0; k < n; ++k) {
            const double lam = 780.0 - 0.5 * band_nm + band_nm * k / (n - 1);
            const auto res = pair_timing(make_event(setup, lam, 0.0, 3.0), setup.system,
                                         setup.pump, setup.generation_crystal, cfg.timing,
                                         setup.chief_t_fs);
            REQUIRE(res.has_value());
            sum += jtpa_overlap(res->dt_s_fs, res->dt_i_fs, setup.tau_p_fs, setup.tau_c_fs,
                                setup.omega_mean_rad_per_fs);
        }
        return 0.5 * (1.0 + (sum / double(n)).real());
    };

    CHECK(std::abs(floor_of(timing_mode::phase, 10.0) - 0.986790) < 2e-5);
    CHECK(std::abs(floor_of(timing_mode::phase, 1.0) - 0.999605) < 2e-5);
    CHECK(std::abs(floor_of(timing_mode::group, 10.0) - 0.992758) < 2e-5);
    CHECK(std::abs(floor_of(timing_mode::group, 1.0) - 0.999902) < 2e-5);
}

TEST_CASE("pairwise-balanced post compensator zero lands at the frozen thickness") {
    scenario_config cfg = default_cfg();
    cfg.lens_file = "none";
    cfg.timing = timing_mode::group;
    cfg.pre_auto = false;
    cfg.pre_compensator_mm = 0.0;
    cfg.post_auto = false;

    const auto tau_minus_at = [&](double d_post) {
        cfg.post_compensator_mm = d_post;
        const simulation_setup setup = build_setup(cfg);
        const auto res = pair_timing(make_event(setup, 780.0, 0.0, 3.0), setup.system,
                                     setup.pump, setup.generation_crystal, cfg.timing,
                                     setup.chief_t_fs);
        REQUIRE(res.has_value());
        return res->dt_s_fs - res->dt_i_fs;
    };

    double lo = 2.0, hi = 4.5;
    double flo = tau_minus_at(lo);
    REQUIRE(flo > 0.0);
    REQUIRE(tau_minus_at(hi) < 0.0);
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = tau_minus_at(mid);
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    CHECK(std::abs(0.5 * (lo + hi) - 3.12088725) < 1e-6);
}

TEST_CASE("compensator sweep artifacts carry the frozen optimum and bandwidth") {
    scenario_config cfg = default_cfg();
    cfg.lens_file = "none";
    cfg.out_dir = temp_out("sweep");
    REQUIRE(cmd_compensator_sweep(cfg) == 0);

    const auto summary = nlohmann::json::parse(slurp(cfg.out_dir + "/compensator_sweep_summary.json"));
    CHECK(std::abs(summary.at("optimum_mm").get<double>() - 3.065) < 1e-9);
    CHECK(std::abs(summary.at("band_half_width_um").get<double>() - 51.470388) < 0.5);
    CHECK(std::abs(summary.at("tau_c_fs").get<double>() - 219.500332) < 1e-3);
    const double lo = summary.at("band_lo_mm").get<double>();
    const double hi = summary.at("band_hi_mm").get<double>();
    CHECK(std::abs(0.5 * (hi - lo) * 1e3 - summary.at("band_half_width_um").get<double>()) <
          1e-6);
    CHECK(lo < 3.065);
    CHECK(hi > 3.065);

    std::istringstream csv(slurp(cfg.out_dir + "/compensator_sweep.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "thickness_mm,tau_minus_fs");
    std::vector<double> thickness, tau;
    while (std::getline(csv, line)) {
        const auto comma = line.find(',');
        REQUIRE(comma != std::string::npos);
        thickness.push_back(std::strtod(line.substr(0, comma).c_str(), nullptr));
        tau.push_back(std::strtod(line.substr(comma + 1).c_str(), nullptr));
    }
    REQUIRE(thickness.size() == 241);
    CHECK(thickness.front() == doctest::Approx(2.5));
    CHECK(thickness.back() == doctest::Approx(3.7));
    // the delay falls linearly with thickness at the frozen rate (fs per um)
    const double slope = (tau[1] - tau[0]) / ((thickness[1] - thickness[0]) * 1e3);
    CHECK(std::abs(slope - (-4.264594)) < 2e-4);
}

TEST_CASE("fidelity command reruns bit-identically across runs and worker counts") {
    scenario_config cfg = default_cfg();
    cfg.lens_file = "none";
    cfg.rays = 400;
    cfg.resamples = 120;
    cfg.seed = 99;
    cfg.workers = 1;

    cfg.out_dir = temp_out("fid_a");
    REQUIRE(cmd_fidelity(cfg) == 0);
    const std::string json_a = slurp(cfg.out_dir + "/fidelity.json");
    const std::string plus_a = slurp(cfg.out_dir + "/tau_plus_hist.csv");
    const std::string minus_a = slurp(cfg.out_dir + "/tau_minus_hist.csv");

    cfg.out_dir = temp_out("fid_b");
    REQUIRE(cmd_fidelity(cfg) == 0);
    CHECK(slurp(cfg.out_dir + "/fidelity.json") == json_a);
    CHECK(slurp(cfg.out_dir + "/tau_plus_hist.csv") == plus_a);
    CHECK(slurp(cfg.out_dir + "/tau_minus_hist.csv") == minus_a);

    cfg.workers = 7;
    cfg.out_dir = temp_out("fid_c");
    REQUIRE(cmd_fidelity(cfg) == 0);
    CHECK(slurp(cfg.out_dir + "/fidelity.json") == json_a);
    CHECK(slurp(cfg.out_dir + "/tau_plus_hist.csv") == plus_a);
    CHECK(slurp(cfg.out_dir + "/tau_minus_hist.csv") == minus_a);

    const auto j = nlohmann::json::parse(json_a);
    CHECK(j.size() == 8);
    for (const char* key : {"F", "sigma_F", "mean_f_re", "mean_f_im", "n_accepted",
                            "loss_fraction", "seed", "config_hash"})
        CHECK_MESSAGE(j.contains(key), "missing key: ", key);
    CHECK(j.at("n_accepted").get<std::size_t>() == 400);
    CHECK(j.at("loss_fraction").get<double>() == doctest::Approx(0.0));
    CHECK(j.at("seed").get<std::uint64_t>() == 99);
    CHECK(j.at("F").get<double>() > 0.5);
    CHECK(j.at("F").get<double>() <= 1.0 + 1e-9);
    CHECK(j.at("sigma_F").get<double>() >= 0.0);

    // a different seed must actually change the sampled ensemble
    cfg.seed = 100;
    cfg.out_dir = temp_out("fid_d");
    REQUIRE(cmd_fidelity(cfg) == 0);
    CHECK(slurp(cfg.out_dir + "/fidelity.json") != json_a);
}

TEST_CASE("pm-angle, emission-map, and trace-dump commands write their artifacts") {
    scenario_config cfg = default_cfg();

    cfg.out_dir = temp_out("pm");
    REQUIRE(cmd_pm_angle(cfg) == 0);
    const auto pm = nlohmann::json::parse(slurp(cfg.out_dir + "/pm_angle.json"));
    CHECK(pm.at("cut_angle_deg").get<double>() == doctest::Approx(28.7964768577).epsilon(1e-9));
    CHECK(std::abs(pm.at("residual_rad_per_mm").get<double>()) < 1e-9);
    CHECK(pm.at("lambda_i_nm").get<double>() == doctest::Approx(842.4));
    CHECK(pm.at("config_hash").get<std::string>().rfind("0x", 0) == 0);

    cfg.out_dir = temp_out("map");
    REQUIRE(cmd_emission_map(cfg) == 0);
    const auto map = nlohmann::json::parse(slurp(cfg.out_dir + "/emission_map_summary.json"));
    CHECK(map.at("lambda_cells").get<std::size_t>() == 321);
    CHECK(map.at("alpha_cells").get<std::size_t>() == 401);
    CHECK(map.at("cone_deg").get<double>() == doctest::Approx(0.36));
    CHECK(map.at("band_capture_external").get<double>() ==
          doctest::Approx(0.574142920).epsilon(1e-6));
    CHECK(map.at("band_capture_internal").get<double>() ==
          doctest::Approx(0.866766475).epsilon(1e-6));
    const std::string map_csv = slurp(cfg.out_dir + "/emission_map.csv");
    CHECK(map_csv.rfind("lambda_nm,alpha_deg,efficiency\n", 0) == 0);

    cfg.out_dir = temp_out("dump");
    cfg.rays = 50;
    REQUIRE(cmd_trace_dump(cfg) == 0);
    const auto dump = nlohmann::json::parse(slurp(cfg.out_dir + "/trace_dump_summary.json"));
    CHECK(dump.at("rays").get<std::size_t>() == 50);
    const std::size_t accounted = dump.at("alive").get<std::size_t>() +
                                  dump.at("dead_tir").get<std::size_t>() +
                                  dump.at("dead_miss").get<std::size_t>();
    CHECK(accounted == 50);
    CHECK(dump.at("alive").get<std::size_t>() >= 1);
    const std::string dump_csv = slurp(cfg.out_dir + "/trace_dump.csv");
    CHECK(dump_csv.rfind("ray_id,lambda_nm,pol,z_mm,x_mm,t_fs\n", 0) == 0);

    cfg.rays = 10001;
    CHECK_THROWS_AS((void)cmd_trace_dump(cfg), config_error);
}
