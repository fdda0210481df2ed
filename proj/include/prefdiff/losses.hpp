#pragma once

#include <cstdint>

#include "prefdiff/denoiser.hpp"
#include "prefdiff/schedule.hpp"
#include "prefdiff/tensor.hpp"
#include "prefdiff/toyworld.hpp"

namespace prefdiff {

// Preference-loss scalars. The contrast weight alpha = beta * T * omega is
// always recomputed from its factors; the conventional way to configure it is
// through from_alpha, which back-derives beta.
struct PreferenceConfig {
    double beta_kl = 5.0;
    int T = 1000;
    double omega = 0.5;
    double margin = 0.01;
    double reg_lambda = 0.05;

    double alpha() const { return beta_kl * static_cast<double>(T) * omega; }
    void validate() const;

    static PreferenceConfig from_alpha(double alpha, int T, double omega = 0.5,
                                       double margin = 0.01, double reg_lambda = 0.05);
};

// d_theta/d_ref: difference of squared prediction errors under the winning
// and losing conditions, on one shared (x_t, eps, t). d_ref is built through
// the frozen reference, so it carries no gradient.
struct ContrastTerms {
    Tensor d_theta;
    Tensor d_ref;
};

ContrastTerms contrast_terms(const DenoiserParams& theta, const DenoiserParams& ref,
                             const Tensor& x_t, const Condition& c_w, const Condition& c_l,
                             const Tensor& eps, int t);

// || eps - eps_theta(x_t, c, t) ||^2 with x_t = q_sample(x0, t, eps)
Tensor pretrain_loss(const DenoiserParams& theta, const Tensor& x0, const Condition& c,
                     int t, const Tensor& eps, const NoiseSchedule& sched);

Tensor dpo_loss(const DenoiserParams& theta, const DenoiserParams& ref, const DpoPair& pair,
                int t, const Tensor& eps, const NoiseSchedule& sched,
                const PreferenceConfig& cfg);

// -log sigmoid(-alpha * (d_theta - d_ref))
Tensor cpo_logsigmoid_loss(const DenoiserParams& theta, const DenoiserParams& ref,
                           const CpoTriplet& triplet, int t, const Tensor& eps,
                           const NoiseSchedule& sched, const PreferenceConfig& cfg);

// lambda_cpo * max(d_theta + m, 0) with lambda_cpo = sg(alpha * (d_theta - d_ref));
// gradient flows only through the hinge factor.
Tensor cpo_final_loss(const DenoiserParams& theta, const DenoiserParams& ref,
                      const CpoTriplet& triplet, int t, const Tensor& eps,
                      const NoiseSchedule& sched, const PreferenceConfig& cfg);

// The hinge loss with an externally fixed detached scale. This is the function
// the stop-gradient form actually differentiates, which makes it the right
// target for the finite-difference harness.
Tensor cpo_final_loss_with_scale(const DenoiserParams& theta, const CpoTriplet& triplet,
                                 int t, const Tensor& eps, const NoiseSchedule& sched,
                                 const PreferenceConfig& cfg, double detached_scale);

// cpo_final_loss + reg_lambda * pretrain_loss on (x0, c_w), with the
// regularizer drawing its own independently resampled (t', eps').
Tensor total_loss(const DenoiserParams& theta, const DenoiserParams& ref,
                  const CpoTriplet& triplet, int t, const Tensor& eps, int t_prime,
                  const Tensor& eps_prime, const NoiseSchedule& sched,
                  const PreferenceConfig& cfg);

Tensor total_loss_with_scale(const DenoiserParams& theta, const CpoTriplet& triplet,
                             int t, const Tensor& eps, int t_prime, const Tensor& eps_prime,
                             const NoiseSchedule& sched, const PreferenceConfig& cfg,
                             double detached_scale);

// Compares the autodiff gradient of the log-sigmoid loss against
// alpha * sigmoid(alpha * (d_theta - d_ref)) * grad(d_theta); returns the max
// relative error over all parameter entries.
double gradient_identity_check(const DenoiserParams& theta, const DenoiserParams& ref,
                               const CpoTriplet& triplet, int t, const Tensor& eps,
                               const NoiseSchedule& sched, const PreferenceConfig& cfg);

struct JensenReport {
    double lhs;     // -log sigmoid(E[inner])
    double rhs;     // E[-log sigmoid(inner)]
    double margin;  // rhs - lhs; non-negative by convexity of -log sigmoid
    double stderr;  // Monte Carlo standard error of rhs
};

// Monte Carlo check over (t, eps) draws that the expectation can be moved
// inside -log sigmoid only at the cost of a lower bound.
JensenReport jensen_bound_check(const DenoiserParams& theta, const DenoiserParams& ref,
                                const CpoTriplet& triplet, std::size_t trials,
                                const NoiseSchedule& sched, const PreferenceConfig& cfg,
                                std::uint64_t seed);

// Stable scalar helpers shared with the Monte Carlo paths.
double sigmoid_value(double z);
double log_sigmoid_value(double z);

}  // namespace prefdiff
