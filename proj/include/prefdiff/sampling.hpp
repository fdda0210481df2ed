#pragma once

#include <functional>
#include <vector>

#include "prefdiff/denoiser.hpp"
#include "prefdiff/rng.hpp"
#include "prefdiff/schedule.hpp"

namespace prefdiff {

struct SamplerConfig {
    double guidance = 2.0;
    PosteriorForm posterior_form = PosteriorForm::standard;
};

// Full T-step ancestral chain from pure noise, conditioned on `c` with
// classifier-free guidance. Consumes `rng` for the initial latent and the
// per-step noise; step noise at t = 1 is skipped (the posterior mean is
// returned there).
std::vector<double> ancestral_sample(const DenoiserParams& p, const NoiseSchedule& sched,
                                     const Condition& c, const SamplerConfig& cfg,
                                     Rng& rng);

// Runs body(i) for i in [0, n). With more than one worker the index range is
// split across threads; bodies must write only to their own slot so results
// are independent of the worker count. Exceptions are rethrown on the caller.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

// Worker count resolution: explicit hint > PREFDIFF_THREADS > 1.
int resolve_workers(int hint);

}  // namespace prefdiff
