#pragma once

#include <utility>
#include <vector>

#include "prefdiff/tensor.hpp"

namespace prefdiff {

// Posterior mean prefactor. `standard` uses 1/sqrt(1-beta_t), which inverts
// the forward marginal; `paper_printed` uses 1/(1-beta_t). The latter exists
// so the two can be compared explicitly; downstream code defaults to
// `standard` everywhere.
enum class PosteriorForm { standard, paper_printed };

// Diffusion constants for a T-step forward process. Timesteps are 1-based;
// alpha_bar_at(0) is defined as 1 for the posterior formulas. Immutable after
// construction and freely shareable across threads.
struct NoiseSchedule {
    int steps = 0;                       // T
    std::vector<double> beta;            // beta[t-1] = beta_t
    std::vector<double> alpha_bar;       // cumulative prod of (1 - beta_s)
    std::vector<double> posterior_var;   // (1 - abar_{t-1}) / (1 - abar_t) * beta_t
    double omega = 0.5;

    double beta_at(int t) const;
    double alpha_bar_at(int t) const;    // t in [0, T]
    double posterior_var_at(int t) const;
    double lambda_at(int t) const;       // abar_t / (1 - abar_t)
    void check_t(int t) const;           // throws unless 1 <= t <= T
};

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end);

// Scalar coefficients shared by the tensor and plain-vector samplers.
// x_{t-1} = mean_scale * (x_t - eps_scale * eps_hat) + noise_scale * noise,
// with noise_scale forced to 0 at t = 1.
struct PosteriorCoeffs {
    double mean_scale;
    double eps_scale;
    double noise_scale;
};
PosteriorCoeffs posterior_coeffs(const NoiseSchedule& sched, int t,
                                 PosteriorForm form = PosteriorForm::standard);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor q_sample(const NoiseSchedule& sched, const Tensor& x0, int t, const Tensor& eps);
std::vector<double> q_sample_values(const NoiseSchedule& sched,
                                    const std::vector<double>& x0, int t,
                                    const std::vector<double>& eps);

// One ancestral step; `noise` must be shaped like x_t and is ignored at t = 1.
Tensor posterior_step(const NoiseSchedule& sched, const Tensor& x_t, int t,
                      const Tensor& eps_hat, const Tensor& noise,
                      PosteriorForm form = PosteriorForm::standard);

// (lambda_t, omega)
std::pair<double, double> snr_weight(const NoiseSchedule& sched, int t);

}  // namespace prefdiff
