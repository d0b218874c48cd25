#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "spdcsim/raytrace.hpp"

namespace spdcsim {

/// @brief Hypothesis timing differences of one pair: Delta t = t(H birth) - t(V birth)
/// per photon, plus the phase-matching weight of the event.
struct pair_timing_result {
    double dt_s_fs = 0.0;
    double dt_i_fs = 0.0;
    double weight = 0.0;
};

/// @brief Trace one event under both origin hypotheses with common randomness
/// (same wavelengths, angles, birth depth and offset) and difference the
/// arrival times per photon. Returns nothing when any of the four traced rays
/// dies. The weight is the pm_efficiency of the event's kinematics.
std::optional<pair_timing_result> pair_timing(const pair_event& event,
                                              const optical_system& system,
                                              const pump_config& pump,
                                              const spdc_crystal& generation_crystal,
                                              timing_mode mode, double chief_t_fs);

/// @brief Which-path overlap of one pair: carrier phase at the mean optical
/// frequency times pump-coherence and filter-coherence Gaussian envelopes,
/// f = exp(-i w (dts+dti)) exp(-(dts+dti)^2/(8 tau_p^2)) exp(-(dts-dti)^2/(8 tau_c^2)).
/// tau_p may be infinite (CW pump); |f| <= 1 with equality iff both delays vanish.
std::complex<double> jtpa_overlap(double dt_s_fs, double dt_i_fs, double tau_p_fs,
                                  double tau_c_fs, double omega_mean_rad_per_fs);

/// @brief Two-qubit state of the source in the {HH, HV, VH, VV} basis for a
/// balanced pump: rho = 1/2 (|HH><HH| + |VV><VV| + fbar |HH><VV| + conj(fbar) |VV><HH|).
/// |fbar| may exceed 1 by at most 2e-9 (numerical slack, clipped); larger values throw.
Eigen::Matrix4cd density_matrix(std::complex<double> fbar);

/// @brief Overlap with the target Bell state (|HH> + |VV>)/sqrt(2):
/// F = <phi| rho |phi> = (1 + Re fbar) / 2 for the state above.
double fidelity(const Eigen::Matrix4cd& rho);

/// @brief One accepted event's contribution to the ensemble average.
struct event_overlap {
    std::complex<double> f;
    double weight = 0.0;
};

/// @brief Fidelity point estimate with bootstrap uncertainty.
struct fidelity_estimate {
    double F = 0.0;
    double sigma_F = 0.0;
    std::complex<double> mean_f; ///< weighted mean overlap behind F
    std::size_t n_accepted = 0;
    double loss_fraction = 0.0;
};

/// @brief Weighted-mean fidelity and its bootstrap standard error: resamples
/// whole events with replacement, recomputes the weighted mean overlap per
/// resample, and reports the spread of the resampled fidelities. Deterministic
/// for a given seed. Requires at least 2 events and at least 100 resamples.
fidelity_estimate bootstrap_fidelity(const std::vector<event_overlap>& overlaps,
                                     std::size_t lost_events, std::size_t resamples,
                                     std::uint64_t seed);

/// @brief Fixed-width histogram with edges aligned to zero: bin k covers
/// [k w, (k+1) w). first_bin is the index k of counts[0].
struct tau_histogram_result {
    double bin_width_fs = 0.0;
    long long first_bin = 0;
    std::vector<std::size_t> counts;
};

/// @brief Histogram of timing samples (unweighted counts; total equals the
/// number of samples). Empty input yields an empty histogram.
tau_histogram_result tau_histogram(const std::vector<double>& samples_fs,
                                   double bin_width_fs);

} // namespace spdcsim
