#include "prefdiff/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace prefdiff {

double sigmoid_value(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double log_sigmoid_value(double z) {
    return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

void PreferenceConfig::validate() const {
    if (T < 1) throw std::invalid_argument("preference config: T must be >= 1");
    if (!(omega > 0.0)) throw std::invalid_argument("preference config: omega must be > 0");
    if (margin < 0.0) throw std::invalid_argument("preference config: margin must be >= 0");
    if (reg_lambda < 0.0) {
        throw std::invalid_argument("preference config: reg_lambda must be >= 0");
    }
}

PreferenceConfig PreferenceConfig::from_alpha(double alpha, int T, double omega,
                                              double margin, double reg_lambda) {
    PreferenceConfig cfg;
    cfg.T = T;
    cfg.omega = omega;
    cfg.margin = margin;
    cfg.reg_lambda = reg_lambda;
    cfg.beta_kl = alpha / (static_cast<double>(T) * omega);
    cfg.validate();
    return cfg;
}

namespace {

Tensor prediction_error(const DenoiserParams& p, const Tensor& x_t, const Condition& c,
                        const Tensor& eps, int t) {
    return squared_norm(eps, predict_eps(p, x_t, t, c));
}

void check_finite_scalar(const char* what, double v) {
    if (!std::isfinite(v)) {
        throw std::runtime_error(std::string(what) + ": non-finite value");
    }
}

}  // namespace

ContrastTerms contrast_terms(const DenoiserParams& theta, const DenoiserParams& ref,
                             const Tensor& x_t, const Condition& c_w, const Condition& c_l,
                             const Tensor& eps, int t) {
    if (c_w.kind != c_l.kind) {
        throw std::invalid_argument("contrast_terms: condition kinds differ between c_w and c_l");
    }
    ContrastTerms out;
    out.d_theta = sub(prediction_error(theta, x_t, c_w, eps, t),
                      prediction_error(theta, x_t, c_l, eps, t));
    out.d_ref = sub(prediction_error(ref, x_t, c_w, eps, t),
                    prediction_error(ref, x_t, c_l, eps, t));
    check_finite_scalar("contrast_terms: d_theta", out.d_theta.item());
    check_finite_scalar("contrast_terms: d_ref", out.d_ref.item());
    return out;
}

Tensor pretrain_loss(const DenoiserParams& theta, const Tensor& x0, const Condition& c,
                     int t, const Tensor& eps, const NoiseSchedule& sched) {
    Tensor x_t = q_sample(sched, x0, t, eps);
    return prediction_error(theta, x_t, c, eps, t);
}

Tensor dpo_loss(const DenoiserParams& theta, const DenoiserParams& ref, const DpoPair& pair,
                int t, const Tensor& eps, const NoiseSchedule& sched,
                const PreferenceConfig& cfg) {
    cfg.validate();
    Tensor x0_w = Tensor::from({pair.x0_w.size()}, pair.x0_w);
    Tensor x0_l = Tensor::from({pair.x0_l.size()}, pair.x0_l);
    // Shared (t, eps) across the winning and losing latents.
    Tensor x_t_w = q_sample(sched, x0_w, t, eps);
    Tensor x_t_l = q_sample(sched, x0_l, t, eps);

    Tensor gap_w = sub(prediction_error(theta, x_t_w, pair.c, eps, t),
                       prediction_error(ref, x_t_w, pair.c, eps, t));
    Tensor gap_l = sub(prediction_error(theta, x_t_l, pair.c, eps, t),
                       prediction_error(ref, x_t_l, pair.c, eps, t));
    Tensor inner = sub(gap_w, gap_l);
    return scale(log_sigmoid(scale(inner, -cfg.alpha())), -1.0);
}

namespace {

ContrastTerms triplet_contrast(const DenoiserParams& theta, const DenoiserParams& ref,
                               const CpoTriplet& triplet, int t, const Tensor& eps,
                               const NoiseSchedule& sched) {
    Tensor x0 = Tensor::from({triplet.x0.size()}, triplet.x0);
    Tensor x_t = q_sample(sched, x0, t, eps);
    return contrast_terms(theta, ref, x_t, triplet.c_w, triplet.c_l, eps, t);
}

}  // namespace

Tensor cpo_logsigmoid_loss(const DenoiserParams& theta, const DenoiserParams& ref,
                           const CpoTriplet& triplet, int t, const Tensor& eps,
                           const NoiseSchedule& sched, const PreferenceConfig& cfg) {
    cfg.validate();
    ContrastTerms ct = triplet_contrast(theta, ref, triplet, t, eps, sched);
    Tensor inner = sub(ct.d_theta, ct.d_ref);
    return scale(log_sigmoid(scale(inner, -cfg.alpha())), -1.0);
}

Tensor cpo_final_loss(const DenoiserParams& theta, const DenoiserParams& ref,
                      const CpoTriplet& triplet, int t, const Tensor& eps,
                      const NoiseSchedule& sched, const PreferenceConfig& cfg) {
    cfg.validate();
    ContrastTerms ct = triplet_contrast(theta, ref, triplet, t, eps, sched);
    Tensor lambda_cpo = stop_gradient(scale(sub(ct.d_theta, ct.d_ref), cfg.alpha()));
    Tensor hinge = relu(add(ct.d_theta, Tensor::scalar(cfg.margin)));
    return mul(lambda_cpo, hinge);
}

Tensor cpo_final_loss_with_scale(const DenoiserParams& theta, const CpoTriplet& triplet,
                                 int t, const Tensor& eps, const NoiseSchedule& sched,
                                 const PreferenceConfig& cfg, double detached_scale) {
    cfg.validate();
    Tensor x0 = Tensor::from({triplet.x0.size()}, triplet.x0);
    Tensor x_t = q_sample(sched, x0, t, eps);
    Tensor d_theta = sub(prediction_error(theta, x_t, triplet.c_w, eps, t),
                         prediction_error(theta, x_t, triplet.c_l, eps, t));
    Tensor hinge = relu(add(d_theta, Tensor::scalar(cfg.margin)));
    return scale(hinge, detached_scale);
}

Tensor total_loss(const DenoiserParams& theta, const DenoiserParams& ref,
                  const CpoTriplet& triplet, int t, const Tensor& eps, int t_prime,
                  const Tensor& eps_prime, const NoiseSchedule& sched,
                  const PreferenceConfig& cfg) {
    Tensor cpo = cpo_final_loss(theta, ref, triplet, t, eps, sched, cfg);
    Tensor x0 = Tensor::from({triplet.x0.size()}, triplet.x0);
    // The regularizer conditions on the stored winning condition.
    Tensor reg = pretrain_loss(theta, x0, triplet.c_w, t_prime, eps_prime, sched);
    return add(cpo, scale(reg, cfg.reg_lambda));
}

Tensor total_loss_with_scale(const DenoiserParams& theta, const CpoTriplet& triplet,
                             int t, const Tensor& eps, int t_prime, const Tensor& eps_prime,
                             const NoiseSchedule& sched, const PreferenceConfig& cfg,
                             double detached_scale) {
    Tensor cpo = cpo_final_loss_with_scale(theta, triplet, t, eps, sched, cfg, detached_scale);
    Tensor x0 = Tensor::from({triplet.x0.size()}, triplet.x0);
    Tensor reg = pretrain_loss(theta, x0, triplet.c_w, t_prime, eps_prime, sched);
    return add(cpo, scale(reg, cfg.reg_lambda));
}

double gradient_identity_check(const DenoiserParams& theta, const DenoiserParams& ref,
                               const CpoTriplet& triplet, int t, const Tensor& eps,
                               const NoiseSchedule& sched, const PreferenceConfig& cfg) {
    const auto params = theta.all_params();
    const std::span<const Tensor> pspan(params.data(), params.size());

    Tensor loss = cpo_logsigmoid_loss(theta, ref, triplet, t, eps, sched, cfg);
    const auto autodiff = backward(loss, pspan);

    ContrastTerms ct = triplet_contrast(theta, ref, triplet, t, eps, sched);
    const auto d_grads = backward(ct.d_theta, pspan);
    const double alpha = cfg.alpha();
    const double factor =
        alpha * sigmoid_value(alpha * (ct.d_theta.item() - ct.d_ref.item()));

    double max_rel = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& ga = autodiff[p].value();
        const auto& gd = d_grads[p].value();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double predicted = factor * gd[i];
            const double rel = std::abs(ga[i] - predicted) / (std::abs(predicted) + 1e-12);
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

JensenReport jensen_bound_check(const DenoiserParams& theta, const DenoiserParams& ref,
                                const CpoTriplet& triplet, std::size_t trials,
                                const NoiseSchedule& sched, const PreferenceConfig& cfg,
                                std::uint64_t seed) {
    if (trials < 1000) {
        throw std::invalid_argument("jensen_bound_check: need at least 10^3 trials");
    }
    cfg.validate();
    const double alpha = cfg.alpha();
    Rng root(seed);

    auto err_values = [&](const DenoiserParams& p, const std::vector<double>& x_t,
                          const Condition& c, const std::vector<double>& eps, int t) {
        const auto pred = predict_eps_values(p, x_t, t, c);
        double acc = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = eps[i] - pred[i];
            acc += d * d;
        }
        return acc;
    };

    double inner_sum = 0.0;
    double nls_sum = 0.0;
    double nls_sq_sum = 0.0;
    for (std::size_t k = 0; k < trials; ++k) {
        Rng rng = root.derive("jensen/draw/" + std::to_string(k));
        const int t = rng.uniform_int(1, sched.steps);
        std::vector<double> eps(triplet.x0.size());
        for (auto& e : eps) e = rng.normal();
        const auto x_t = q_sample_values(sched, triplet.x0, t, eps);

        const double d_theta = err_values(theta, x_t, triplet.c_w, eps, t) -
                               err_values(theta, x_t, triplet.c_l, eps, t);
        const double d_ref = err_values(ref, x_t, triplet.c_w, eps, t) -
                             err_values(ref, x_t, triplet.c_l, eps, t);
        const double inner = -alpha * (d_theta - d_ref);
        const double nls = -log_sigmoid_value(inner);
        inner_sum += inner;
        nls_sum += nls;
        nls_sq_sum += nls * nls;
    }
    const double n = static_cast<double>(trials);
    JensenReport rep;
    rep.lhs = -log_sigmoid_value(inner_sum / n);
    rep.rhs = nls_sum / n;
    rep.margin = rep.rhs - rep.lhs;
    const double var = std::max(0.0, nls_sq_sum / n - (nls_sum / n) * (nls_sum / n));
    rep.stderr = std::sqrt(var / n);
    return rep;
}

}  // namespace prefdiff
