#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "spdcsim/errors.hpp"
#include "spdcsim/harness.hpp"

namespace {

struct cli_state {
    std::string config = "data/scenario_default.json";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> rays;
    std::optional<std::string> out_dir;
    std::optional<std::string> timing;
    std::optional<std::size_t> resamples;
    std::optional<unsigned> workers;
};

void add_common_flags(CLI::App* cmd, cli_state& st) {
    cmd->add_option("--config", st.config, "scenario JSON file")
        ->capture_default_str();
    cmd->add_option("--seed", st.seed, "override the random seed");
    cmd->add_option("--rays", st.rays, "override the sampled pair count");
    cmd->add_option("--out", st.out_dir, "override the output directory");
    cmd->add_option("--timing", st.timing, "stack timing convention")
        ->check(CLI::IsMember({"phase", "group"}));
    cmd->add_option("--resamples", st.resamples, "override the bootstrap resample count");
    cmd->add_option("--workers", st.workers, "worker threads for the Monte Carlo loop");
}

spdcsim::scenario_config load_with_overrides(const cli_state& st) {
    spdcsim::scenario_config cfg = spdcsim::load_scenario(st.config);
    spdcsim::cli_overrides cli;
    cli.seed = st.seed;
    cli.rays = st.rays;
    cli.out_dir = st.out_dir;
    if (st.timing)
        cli.timing = (*st.timing == "group") ? spdcsim::timing_mode::group
                                             : spdcsim::timing_mode::phase;
    cli.resamples = st.resamples;
    cli.workers = st.workers;
    spdcsim::apply_overrides(cfg, cli);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"crossed-crystal photon-pair source simulator"};
    app.require_subcommand(1);
    cli_state st;

    int (*selected)(const spdcsim::scenario_config&) = nullptr;
    const auto bind = [&](const char* name, const char* help,
                          int (*fn)(const spdcsim::scenario_config&)) {
        CLI::App* cmd = app.add_subcommand(name, help);
        add_common_flags(cmd, st);
        cmd->callback([&selected, fn] { selected = fn; });
    };
    bind("pm-angle", "solve the collinear phase-matching cut angle", spdcsim::cmd_pm_angle);
    bind("emission-map", "tabulate the joint spectral-angular emission efficiency",
         spdcsim::cmd_emission_map);
    bind("compensator-sweep", "scan post-compensator thickness against the filter coherence time",
         spdcsim::cmd_compensator_sweep);
    bind("fidelity", "Monte Carlo estimate of the collected-state fidelity",
         spdcsim::cmd_fidelity);
    bind("trace-dump", "write ray polylines through the full system", spdcsim::cmd_trace_dump);

    CLI11_PARSE(app, argc, argv);

    try {
        const spdcsim::scenario_config cfg = load_with_overrides(st);
        return selected(cfg);
    } catch (const spdcsim::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const spdcsim::physics_error& e) {
        std::fprintf(stderr, "physics error: %s\n", e.what());
        return 3;
    } catch (const spdcsim::io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
