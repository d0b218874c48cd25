#include "spdcsim/entanglement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spdcsim/constants.hpp"
#include "spdcsim/errors.hpp"
#include "spdcsim/rng.hpp"

namespace spdcsim {

std::optional<pair_timing_result> pair_timing(const pair_event& event,
                                              const optical_system& system,
                                              const pump_config& pump,
                                              const spdc_crystal& generation_crystal,
                                              timing_mode mode, double chief_t_fs) {
    const pair_trace_records a =
        trace_pair_event(event, system, pump, pair_origin::crystal_a, mode, chief_t_fs);
    const pair_trace_records b =
        trace_pair_event(event, system, pump, pair_origin::crystal_b, mode, chief_t_fs);
    if (!a.signal_alive || !a.idler_alive || !b.signal_alive || !b.idler_alive)
        return std::nullopt;

    pair_timing_result out;
    out.dt_s_fs = a.t_s_fs - b.t_s_fs;
    out.dt_i_fs = a.t_i_fs - b.t_i_fs;
    const double dk = phase_mismatch(pump, generation_crystal, event.lambda_s_nm,
                                     event.lambda_i_nm, deg_to_rad(event.alpha_s_deg),
                                     deg_to_rad(event.alpha_i_deg));
    out.weight = pm_efficiency(dk, generation_crystal.length_mm);
    return out;
}

std::complex<double> jtpa_overlap(double dt_s_fs, double dt_i_fs, double tau_p_fs,
                                  double tau_c_fs, double omega_mean_rad_per_fs) {
    if (!(tau_c_fs > 0.0))
        throw config_error("jtpa overlap needs a positive filter coherence time");
    if (!(tau_p_fs > 0.0))
        throw config_error("jtpa overlap needs a positive pump coherence time");
    const double sum = dt_s_fs + dt_i_fs;
    const double diff = dt_s_fs - dt_i_fs;
    double env = std::exp(-diff * diff / (8.0 * tau_c_fs * tau_c_fs));
    if (std::isfinite(tau_p_fs))
        env *= std::exp(-sum * sum / (8.0 * tau_p_fs * tau_p_fs));
    return std::polar(env, -omega_mean_rad_per_fs * sum);
}

Eigen::Matrix4cd density_matrix(std::complex<double> fbar) {
    const double mag = std::abs(fbar);
    if (mag > 1.0 + 2e-9)
        throw physics_error("which-path overlap magnitude exceeds 1 beyond numerical slack");
    if (mag > 1.0) fbar /= mag; // clip roundoff overshoot onto the physical boundary
    Eigen::Matrix4cd rho = Eigen::Matrix4cd::Zero();
    rho(0, 0) = 0.5;            // |HH><HH|
    rho(3, 3) = 0.5;            // |VV><VV|
    rho(0, 3) = 0.5 * fbar;     // |HH><VV|
    rho(3, 0) = 0.5 * std::conj(fbar);
    return rho;
}

double fidelity(const Eigen::Matrix4cd& rho) {
    Eigen::Vector4cd phi;
    phi << 1.0, 0.0, 0.0, 1.0;
    phi /= std::sqrt(2.0);
    return (phi.adjoint() * rho * phi)(0, 0).real();
}

fidelity_estimate bootstrap_fidelity(const std::vector<event_overlap>& overlaps,
                                     std::size_t lost_events, std::size_t resamples,
                                     std::uint64_t seed) {
    const std::size_t n = overlaps.size();
    if (n < 2) throw config_error("bootstrap needs at least 2 accepted events");
    if (resamples < 100) throw config_error("bootstrap needs at least 100 resamples");

    const auto weighted_mean = [](const std::vector<event_overlap>& ev) {
        std::complex<double> acc(0.0, 0.0);
        double wsum = 0.0;
        for (const auto& e : ev) {
            acc += e.weight * e.f;
            wsum += e.weight;
        }
        if (!(wsum > 0.0)) throw physics_error("all event weights vanish");
        return acc / wsum;
    };

    fidelity_estimate est;
    est.mean_f = weighted_mean(overlaps);
    est.F = fidelity(density_matrix(est.mean_f));
    est.n_accepted = n;
    est.loss_fraction = static_cast<double>(lost_events) / static_cast<double>(lost_events + n);

    // domain-separated stream family so bootstrap draws never reuse sampler streams
    const std::uint64_t boot_seed = seed ^ 0x8e9c31f0a5b3c97dull;
    std::vector<double> fs;
    fs.reserve(resamples);
    for (std::size_t r = 0; r < resamples; ++r) {
        splitmix64 g = event_stream(boot_seed, r);
        std::complex<double> acc(0.0, 0.0);
        double wsum = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const event_overlap& e = overlaps[g.next() % n];
            acc += e.weight * e.f;
            wsum += e.weight;
        }
        // a resample that drew only weightless events carries no information
        if (!(wsum > 0.0)) continue;
        fs.push_back(fidelity(density_matrix(acc / wsum)));
    }
    if (fs.size() < 2) throw physics_error("bootstrap resamples carry no statistical weight");
    double mean = 0.0;
    for (double v : fs) mean += v;
    mean /= static_cast<double>(fs.size());
    double var = 0.0;
    for (double v : fs) var += (v - mean) * (v - mean);
    var /= static_cast<double>(fs.size() - 1);
    est.sigma_F = std::sqrt(var);
    return est;
}

tau_histogram_result tau_histogram(const std::vector<double>& samples_fs,
                                   double bin_width_fs) {
    if (!(bin_width_fs > 0.0))
        throw config_error("histogram bin width must be positive");
    tau_histogram_result out;
    out.bin_width_fs = bin_width_fs;
    if (samples_fs.empty()) return out;

    long long kmin = std::numeric_limits<long long>::max();
    long long kmax = std::numeric_limits<long long>::min();
    std::vector<long long> bins(samples_fs.size());
    for (std::size_t i = 0; i < samples_fs.size(); ++i) {
        const long long k =
            static_cast<long long>(std::floor(samples_fs[i] / bin_width_fs));
        bins[i] = k;
        kmin = std::min(kmin, k);
        kmax = std::max(kmax, k);
    }
    out.first_bin = kmin;
    out.counts.assign(static_cast<std::size_t>(kmax - kmin + 1), 0);
    for (long long k : bins) ++out.counts[static_cast<std::size_t>(k - kmin)];
    return out;
}

} // namespace spdcsim
