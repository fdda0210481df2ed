#include "prefdiff/variancelab.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "prefdiff/sampling.hpp"

namespace prefdiff {

namespace {

double score_values(const DenoiserParams& p, const std::vector<double>& x_t,
                    const Condition& c, const std::vector<double>& eps, int t) {
    const auto pred = predict_eps_values(p, x_t, t, c);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - eps[i];
        acc += d * d;
    }
    return -acc;
}

struct Moments {
    double variance = 0.0;
    double stderr = 0.0;  // of the variance estimate, from the fourth moment
};

Moments sample_variance(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    if (xs.size() < 2) return {};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double x : xs) {
        const double d = x - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    Moments out;
    out.variance = m2 / (n - 1.0);
    m2 /= n;
    m4 /= n;
    out.stderr = std::sqrt(std::max(0.0, m4 - m2 * m2) / n);
    return out;
}

}  // namespace

double score_difference(const DenoiserParams& theta, const CpoTriplet& triplet, int t,
                        const std::vector<double>& eps, const NoiseSchedule& sched) {
    const auto x_t = q_sample_values(sched, triplet.x0, t, eps);
    return score_values(theta, x_t, triplet.c_w, eps, t) -
           score_values(theta, x_t, triplet.c_l, eps, t);
}

double score_difference(const DenoiserParams& theta, const DpoPair& pair, int t,
                        const std::vector<double>& eps, const NoiseSchedule& sched) {
    const auto x_t_w = q_sample_values(sched, pair.x0_w, t, eps);
    const auto x_t_l = q_sample_values(sched, pair.x0_l, t, eps);
    return score_values(theta, x_t_w, pair.c, eps, t) -
           score_values(theta, x_t_l, pair.c, eps, t);
}

namespace {

// Shared implementation over either record type.
template <typename Record>
VarianceReport variance_impl(const DenoiserParams& theta,
                             const std::vector<Record>& dataset, TPolicy policy,
                             std::size_t n_draws, std::uint64_t seed,
                             const NoiseSchedule& sched, int workers) {
    if (dataset.empty()) throw std::invalid_argument("empirical_variance: empty dataset");
    if (n_draws < 1000) {
        throw std::invalid_argument(
            "empirical_variance: need at least 1000 draws per example");
    }
    if (policy.kind == TPolicy::Kind::fixed) sched.check_t(policy.t_star);

    Rng root(seed);
    const auto dim = static_cast<std::size_t>(theta.arch.data_dim);
    std::vector<std::vector<double>> per_example(dataset.size());

    parallel_for(dataset.size(), workers, [&](std::size_t e) {
        auto& draws = per_example[e];
        draws.resize(n_draws);
        for (std::size_t d = 0; d < n_draws; ++d) {
            Rng rng = root.derive("variance/item/" + std::to_string(e) + "/draw/" +
                                  std::to_string(d));
            const int t = policy.kind == TPolicy::Kind::fixed
                              ? policy.t_star
                              : rng.uniform_int(1, sched.steps);
            std::vector<double> eps(dim);
            for (auto& x : eps) x = rng.normal();
            draws[d] = score_difference(theta, dataset[e], t, eps, sched);
        }
    });

    std::vector<double> pooled;
    pooled.reserve(dataset.size() * n_draws);
    double within_sum = 0.0;
    for (const auto& draws : per_example) {
        pooled.insert(pooled.end(), draws.begin(), draws.end());
        within_sum += sample_variance(draws).variance;
    }
    const auto pooled_moments = sample_variance(pooled);

    VarianceReport rep;
    rep.var_pooled = pooled_moments.variance;
    rep.stderr_pooled = pooled_moments.stderr;
    rep.var_within_example = within_sum / static_cast<double>(dataset.size());
    rep.n_examples = dataset.size();
    rep.n_draws = n_draws;
    rep.seed = seed;

    // First-order diagnostic: central-difference ||grad_u s|| at a few
    // baselines (latent coordinates; condition coordinates too when the
    // condition is continuous).
    const int t_base = policy.kind == TPolicy::Kind::fixed
                           ? policy.t_star
                           : std::max(1, sched.steps / 2);
    const std::size_t n_base = std::min<std::size_t>(8, dataset.size());
    double norm_sum = 0.0;
    for (std::size_t e = 0; e < n_base; ++e) {
        Rng rng = root.derive("variance/gradproxy/" + std::to_string(e));
        std::vector<double> eps(dim);
        for (auto& x : eps) x = rng.normal();
        const Record& rec = dataset[e];
        std::vector<double> x_t;
        Condition c;
        if constexpr (std::is_same_v<Record, CpoTriplet>) {
            x_t = q_sample_values(sched, rec.x0, t_base, eps);
            c = rec.c_w;
        } else {
            x_t = q_sample_values(sched, rec.x0_w, t_base, eps);
            c = rec.c;
        }
        const double h = 1e-4;
        double sq = 0.0;
        for (std::size_t j = 0; j < x_t.size(); ++j) {
            const double orig = x_t[j];
            x_t[j] = orig + h;
            const double sp = score_values(theta, x_t, c, eps, t_base);
            x_t[j] = orig - h;
            const double sm = score_values(theta, x_t, c, eps, t_base);
            x_t[j] = orig;
            const double g = (sp - sm) / (2.0 * h);
            sq += g * g;
        }
        if (c.kind == ConditionKind::continuous_vector) {
            Condition cc = c;
            for (std::size_t j = 0; j < cc.vec.size(); ++j) {
                const double orig = cc.vec[j];
                cc.vec[j] = orig + h;
                const double sp = score_values(theta, x_t, cc, eps, t_base);
                cc.vec[j] = orig - h;
                const double sm = score_values(theta, x_t, cc, eps, t_base);
                cc.vec[j] = orig;
                const double g = (sp - sm) / (2.0 * h);
                sq += g * g;
            }
        }
        norm_sum += std::sqrt(sq);
    }
    rep.grad_norm_proxy = norm_sum / static_cast<double>(n_base);
    return rep;
}

}  // namespace

VarianceReport empirical_variance(const DenoiserParams& theta,
                                  const std::vector<CpoTriplet>& dataset, TPolicy policy,
                                  std::size_t n_draws, std::uint64_t seed,
                                  const NoiseSchedule& sched, int workers) {
    return variance_impl(theta, dataset, policy, n_draws, seed, sched, workers);
}

VarianceReport empirical_variance(const DenoiserParams& theta,
                                  const std::vector<DpoPair>& dataset, TPolicy policy,
                                  std::size_t n_draws, std::uint64_t seed,
                                  const NoiseSchedule& sched, int workers) {
    return variance_impl(theta, dataset, policy, n_draws, seed, sched, workers);
}

Decomposition decomposition_estimate(const DenoiserParams& theta,
                                     const ControlledFactors& factors, std::size_t n,
                                     std::uint64_t seed) {
    if (theta.arch.cond_kind != ConditionKind::continuous_vector) {
        throw std::invalid_argument(
            "decomposition_estimate: requires a continuous-condition model");
    }
    if (factors.base_c.kind != ConditionKind::continuous_vector) {
        throw std::invalid_argument("decomposition_estimate: baseline condition must be continuous");
    }
    if (factors.eps.size() != factors.base_x.size()) {
        throw std::invalid_argument("decomposition_estimate: eps must be shaped like base_x");
    }
    if (n < 100) throw std::invalid_argument("decomposition_estimate: need n >= 100");
    auto check_factor = [](const FactorSpec& f, const char* name) {
        if (f.enabled && !(f.stddev > 0.0)) {
            throw std::invalid_argument(std::string("decomposition_estimate: ") + name +
                                        " factor is degenerate (zero variance)");
        }
    };
    check_factor(factors.ctrl, "ctrl");
    check_factor(factors.nuis, "nuis");
    if (!factors.ctrl.enabled && !factors.nuis.enabled) {
        throw std::invalid_argument(
            "decomposition_estimate: both factors disabled, nothing varies");
    }

    Rng root(seed);
    auto run = [&](bool use_ctrl, bool use_nuis, const std::string& tag) {
        std::vector<double> deltas(n);
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng = root.derive("decomp/" + tag + "/" + std::to_string(i));
            auto perturb = [&](const std::vector<double>& base, bool active, double sd) {
                std::vector<double> plus = base, minus = base;
                if (active) {
                    for (std::size_t j = 0; j < base.size(); ++j) {
                        plus[j] += sd * rng.normal();
                        minus[j] += sd * rng.normal();
                    }
                }
                return std::make_pair(plus, minus);
            };
            const bool ctrl_on = use_ctrl && factors.ctrl.enabled;
            const bool nuis_on = use_nuis && factors.nuis.enabled;
            auto [c_plus, c_minus] =
                perturb(factors.base_c.vec, ctrl_on, factors.ctrl.stddev);
            auto [x_plus, x_minus] = perturb(factors.base_x, nuis_on, factors.nuis.stddev);
            const double s_plus = score_values(theta, x_plus, Condition::continuous(c_plus),
                                               factors.eps, factors.t);
            const double s_minus = score_values(theta, x_minus,
                                                Condition::continuous(c_minus),
                                                factors.eps, factors.t);
            deltas[i] = s_plus - s_minus;
        }
        return sample_variance(deltas);
    };

    const auto ctrl = run(true, false, "ctrl");
    const auto nuis = run(false, true, "nuis");
    const auto joint = run(true, true, "joint");

    Decomposition out;
    out.v_ctrl = ctrl.variance;
    out.v_nuis = nuis.variance;
    out.var_joint = joint.variance;
    out.v_cross = 0.5 * (joint.variance - ctrl.variance - nuis.variance);
    out.se_ctrl = ctrl.stderr;
    out.se_nuis = nuis.stderr;
    out.se_joint = joint.stderr;
    out.se_cross = 0.5 * std::sqrt(ctrl.stderr * ctrl.stderr + nuis.stderr * nuis.stderr +
                                   joint.stderr * joint.stderr);
    return out;
}

}  // namespace prefdiff
