#include "prefdiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace prefdiff {

void NoiseSchedule::check_t(int t) const {
    if (t < 1 || t > steps) {
        throw std::out_of_range("schedule: t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(steps) + "]");
    }
}

double NoiseSchedule::beta_at(int t) const {
    check_t(t);
    return beta[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t == 0) return 1.0;
    check_t(t);
    return alpha_bar[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::posterior_var_at(int t) const {
    check_t(t);
    return posterior_var[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::lambda_at(int t) const {
    const double ab = alpha_bar_at(t);
    return ab / (1.0 - ab);
}

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps <= 0) throw std::invalid_argument("linear_schedule: steps must be positive");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw std::invalid_argument(
            "linear_schedule: need 0 < beta_start <= beta_end < 1, got [" +
            std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(steps);
    s.alpha_bar.resize(steps);
    s.posterior_var.resize(steps);
    double abar = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        const double abar_prev = abar;
        abar *= 1.0 - b;
        s.beta[i] = b;
        s.alpha_bar[i] = abar;
        s.posterior_var[i] = (1.0 - abar_prev) / (1.0 - abar) * b;
    }
    return s;
}

PosteriorCoeffs posterior_coeffs(const NoiseSchedule& sched, int t, PosteriorForm form) {
    sched.check_t(t);
    const double b = sched.beta_at(t);
    const double mean_scale = form == PosteriorForm::standard
                                  ? 1.0 / std::sqrt(1.0 - b)
                                  : 1.0 / (1.0 - b);
    const double eps_scale = b / std::sqrt(1.0 - sched.alpha_bar_at(t));
    const double noise_scale = t == 1 ? 0.0 : std::sqrt(sched.posterior_var_at(t));
    return {mean_scale, eps_scale, noise_scale};
}

Tensor q_sample(const NoiseSchedule& sched, const Tensor& x0, int t, const Tensor& eps) {
    sched.check_t(t);
    if (x0.shape() != eps.shape()) {
        throw std::invalid_argument("q_sample: x0 shape " + shape_str(x0.shape()) +
                                    " vs eps shape " + shape_str(eps.shape()));
    }
    const double ab = sched.alpha_bar_at(t);
    return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

std::vector<double> q_sample_values(const NoiseSchedule& sched,
                                    const std::vector<double>& x0, int t,
                                    const std::vector<double>& eps) {
    sched.check_t(t);
    if (x0.size() != eps.size()) {
        throw std::invalid_argument("q_sample: x0 and eps sizes differ");
    }
    const double ab = sched.alpha_bar_at(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

Tensor posterior_step(const NoiseSchedule& sched, const Tensor& x_t, int t,
                      const Tensor& eps_hat, const Tensor& noise, PosteriorForm form) {
    if (x_t.shape() != eps_hat.shape() || x_t.shape() != noise.shape()) {
        throw std::invalid_argument("posterior_step: shape mismatch among x_t " +
                                    shape_str(x_t.shape()) + ", eps_hat " +
                                    shape_str(eps_hat.shape()) + ", noise " +
                                    shape_str(noise.shape()));
    }
    const auto c = posterior_coeffs(sched, t, form);
    Tensor mean = scale(sub(x_t, scale(eps_hat, c.eps_scale)), c.mean_scale);
    if (c.noise_scale == 0.0) return mean;
    return add(mean, scale(noise, c.noise_scale));
}

std::pair<double, double> snr_weight(const NoiseSchedule& sched, int t) {
    return {sched.lambda_at(t), sched.omega};
}

}  // namespace prefdiff
