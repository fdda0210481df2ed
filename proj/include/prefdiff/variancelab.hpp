#pragma once

#include <cstdint>
#include <vector>

#include "prefdiff/denoiser.hpp"
#include "prefdiff/schedule.hpp"
#include "prefdiff/toyworld.hpp"

namespace prefdiff {

// Timestep policy for variance estimation. The comparison conditions on a
// fixed t by default; mixing timesteps adds schedule-induced spread common to
// both curation schemes.
struct TPolicy {
    enum class Kind { fixed, uniform };
    Kind kind = Kind::fixed;
    int t_star = 500;

    static TPolicy fixed(int t) { return {Kind::fixed, t}; }
    static TPolicy uniform() { return {Kind::uniform, 0}; }
};

struct VarianceReport {
    double var_pooled = 0.0;          // variance over all (example, draw) pairs
    double var_within_example = 0.0;  // mean over examples of per-example variance
    double stderr_pooled = 0.0;       // moment-based standard error of var_pooled
    std::size_t n_examples = 0;
    std::size_t n_draws = 0;          // draws per example
    std::uint64_t seed = 0;
    double grad_norm_proxy = 0.0;     // central-difference ||grad_u s|| at the baseline
};

// Score difference Delta_s with s(u) = -||eps_hat(u) - eps||^2, on one shared
// (t, eps). For a triplet the two branches differ in the condition; for a
// pair they differ in the latent. Antisymmetric under branch swap.
double score_difference(const DenoiserParams& theta, const CpoTriplet& triplet, int t,
                        const std::vector<double>& eps, const NoiseSchedule& sched);
double score_difference(const DenoiserParams& theta, const DpoPair& pair, int t,
                        const std::vector<double>& eps, const NoiseSchedule& sched);

VarianceReport empirical_variance(const DenoiserParams& theta,
                                  const std::vector<CpoTriplet>& dataset, TPolicy policy,
                                  std::size_t n_draws, std::uint64_t seed,
                                  const NoiseSchedule& sched, int workers = 1);
VarianceReport empirical_variance(const DenoiserParams& theta,
                                  const std::vector<DpoPair>& dataset, TPolicy policy,
                                  std::size_t n_draws, std::uint64_t seed,
                                  const NoiseSchedule& sched, int workers = 1);

// Synthetic generator for one deviation factor: i.i.d. Gaussian per
// coordinate. An enabled factor must have positive spread.
struct FactorSpec {
    bool enabled = true;
    double stddev = 0.02;
};

// Synthetic input decomposition u = u_bar + delta_ctrl + delta_nuis around a
// fixed baseline. Control deviations perturb the condition vector, nuisance
// deviations perturb the latent input; eps is held fixed so that only input
// deviations contribute variance. Requires a continuous-condition model.
struct ControlledFactors {
    std::vector<double> base_x;  // baseline latent input
    Condition base_c;            // baseline condition (continuous)
    std::vector<double> eps;     // fixed anchor noise
    int t = 500;
    FactorSpec ctrl;
    FactorSpec nuis;
};

struct Decomposition {
    double v_ctrl = 0.0;
    double v_nuis = 0.0;
    double v_cross = 0.0;  // (var_joint - v_ctrl - v_nuis) / 2
    double var_joint = 0.0;
    double se_ctrl = 0.0;
    double se_nuis = 0.0;
    double se_joint = 0.0;
    double se_cross = 0.0;
};

Decomposition decomposition_estimate(const DenoiserParams& theta,
                                     const ControlledFactors& factors, std::size_t n,
                                     std::uint64_t seed);

}  // namespace prefdiff
