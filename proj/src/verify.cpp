#include "prefdiff/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "prefdiff/losses.hpp"
#include "prefdiff/toyworld.hpp"

namespace prefdiff {

namespace {

DenoiserArch small_arch(const ToyTask& task) {
    DenoiserArch a = task.default_arch();
    a.hidden_width = 24;
    a.hidden_depth = 2;
    return a;
}

struct Instance {
    CpoTriplet triplet;
    int t = 0;
    Tensor eps;
};

// A random triplet plus (t, eps). When `fd_guard` is set, instances are
// re-rolled until the contrast sits away from the hinge kink: a central
// difference is not a valid derivative estimate across the kink.
Instance make_instance(const ToyTask& task, const DenoiserParams& theta,
                       const DenoiserParams& ref, const NoiseSchedule& sched,
                       const PreferenceConfig& cfg, Rng& rng, bool fd_guard) {
    const auto dim = static_cast<std::size_t>(task.data_dim());
    for (int attempt = 0; attempt < 256; ++attempt) {
        Instance inst;
        const auto data = sample_dataset(task, 1, rng.next_u64());
        inst.triplet.x0 = data[0].x0;
        inst.triplet.c_w = data[0].c;
        int other = rng.uniform_int(0, task.bins - 1);
        if (other == inst.triplet.c_w.bin) other = (other + 1) % task.bins;
        inst.triplet.c_l = Condition::discrete(other);
        inst.t = rng.uniform_int(1, sched.steps);
        std::vector<double> ev(dim);
        for (auto& e : ev) e = rng.normal();
        inst.eps = Tensor::from({dim}, ev);
        if (!fd_guard) return inst;

        Tensor x0 = Tensor::from({dim}, inst.triplet.x0);
        Tensor x_t = q_sample(sched, x0, inst.t, inst.eps);
        const auto ct = contrast_terms(theta, ref, x_t, inst.triplet.c_w, inst.triplet.c_l,
                                       inst.eps, inst.t);
        if (std::abs(ct.d_theta.item() + cfg.margin) > 1e-2) return inst;
    }
    throw std::runtime_error("verify: could not build a well-conditioned instance");
}

struct PairInstance {
    DpoPair pair;
    int t = 0;
    Tensor eps;
};

// Reference as a small multiplicative perturbation of theta, mirroring how
// the loss is actually used: ref starts as a clone and the two separate
// slowly during fine-tuning.
DenoiserParams perturbed_reference(const DenoiserParams& theta, Rng& rng, double rel) {
    DenoiserParams ref = clone_as_reference(theta);
    for (auto& tensor : ref.all_params()) {
        for (auto& w : tensor.mutable_value()) w *= 1.0 + rel * rng.normal();
    }
    return ref;
}

// Pairs whose latents nearly coincide make the whole pairwise gradient
// vanish (no preference signal), which leaves every coordinate below the
// finite-difference noise floor; require a minimum separation.
PairInstance make_pair_instance(const ToyTask& task, const NoiseSchedule& sched, Rng& rng) {
    const auto dim = static_cast<std::size_t>(task.data_dim());
    for (int attempt = 0; attempt < 256; ++attempt) {
        PairInstance inst;
        const auto data = sample_dataset(task, 2, rng.next_u64());
        inst.pair.x0_w = data[0].x0;
        inst.pair.x0_l = data[1].x0;
        inst.pair.c = data[0].c;
        inst.pair.score_w = 1.0;
        inst.pair.score_l = 0.0;
        inst.t = rng.uniform_int(1, sched.steps);
        std::vector<double> ev(dim);
        for (auto& e : ev) e = rng.normal();
        inst.eps = Tensor::from({dim}, ev);
        double sep = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = inst.pair.x0_w[i] - inst.pair.x0_l[i];
            sep += d * d;
        }
        if (sep > 0.25) return inst;
    }
    throw std::runtime_error("verify: could not build a separated pair instance");
}

// A central difference at step h can only resolve gradient entries above its
// noise floor. Instances where some parameter entry has a live but
// incidentally tiny gradient (normal curvature, near-zero slope) are
// rejected; exact structural zeros are fine because their two-sided
// evaluations are bit-identical.
bool fd_well_conditioned(const std::function<Tensor()>& fn, std::vector<Tensor>& params,
                         double rel_floor = 3e-6) {
    Tensor out = fn();
    const auto grads = backward(out, {params.data(), params.size()});
    double gmax = 0.0;
    for (const auto& g : grads) {
        for (double v : g.value()) gmax = std::max(gmax, std::abs(v));
    }
    if (gmax == 0.0) return true;
    const double floor = rel_floor * gmax;
    for (const auto& g : grads) {
        for (double v : g.value()) {
            if (v != 0.0 && std::abs(v) < floor) return false;
        }
    }
    return true;
}

}  // namespace

std::vector<VerifyResult> run_verify_suite(std::uint64_t seed) {
    std::vector<VerifyResult> results;
    const ToyTask task = ToyTask::discrete(8);
    const NoiseSchedule sched = linear_schedule(1000, 1e-4, 0.02);
    const PreferenceConfig cfg = PreferenceConfig::from_alpha(2500.0, sched.steps);
    const DenoiserArch arch = small_arch(task);
    Rng root(seed);

    // Gradient identity of the log-sigmoid loss, 50 random instances.
    {
        double worst = 0.0;
        for (int k = 0; k < 50; ++k) {
            Rng rng = root.derive("identity/" + std::to_string(k));
            DenoiserParams theta = init_params(arch, rng.next_u64());
            DenoiserParams ref = clone_as_reference(init_params(arch, rng.next_u64()));
            Instance inst = make_instance(task, theta, ref, sched, cfg, rng, false);
            const double err = gradient_identity_check(theta, ref, inst.triplet, inst.t,
                                                       inst.eps, sched, cfg);
            worst = std::max(worst, err);
        }
        results.push_back({"gradient_identity_max_rel_err", worst, "< 1e-6", worst < 1e-6});
    }

    // Jensen bound over 10^4 draws, 5 random reference perturbations.
    {
        double min_slack = 1e300;
        bool pass = true;
        for (int k = 0; k < 5; ++k) {
            Rng rng = root.derive("jensen/" + std::to_string(k));
            DenoiserParams theta = init_params(arch, rng.next_u64());
            DenoiserParams ref = clone_as_reference(init_params(arch, rng.next_u64()));
            Instance inst = make_instance(task, theta, ref, sched, cfg, rng, false);
            const auto rep = jensen_bound_check(theta, ref, inst.triplet, 10000, sched, cfg,
                                                rng.next_u64());
            const double slack = rep.margin + 3.0 * rep.stderr;
            min_slack = std::min(min_slack, slack);
            pass = pass && slack >= 0.0;
        }
        results.push_back(
            {"jensen_min_margin_plus_3se", min_slack, ">= 0", pass});
    }

    // Order statistics, n = 20, 10^5 trials, two distributions.
    {
        const double expect = 19.0 / 21.0;
        const double pu = order_stat_probability(20, 100000, OrderStatDistribution::uniform,
                                                 derive_seed(seed, "orderstat/uniform"));
        const double pn = order_stat_probability(20, 100000, OrderStatDistribution::normal,
                                                 derive_seed(seed, "orderstat/normal"));
        results.push_back({"order_stat_uniform_abs_dev", std::abs(pu - expect), "< 0.01",
                           std::abs(pu - expect) < 0.01});
        results.push_back({"order_stat_normal_abs_dev", std::abs(pn - expect), "< 0.01",
                           std::abs(pn - expect) < 0.01});
    }

    // Storage accounting against the exact fractions and rounded displays.
    {
        const double cpo = storage_compute_report(CurationPipeline::cpo, false);
        const double dpo = storage_compute_report(CurationPipeline::dpo, false);
        const double dpo_orig = storage_compute_report(CurationPipeline::dpo, true);
        const bool pass = std::abs(cpo - 5.0 / 3.0) < 1e-12 &&
                          std::abs(dpo - 8.0 / 3.0) < 1e-12 &&
                          std::abs(dpo_orig - 11.0 / 3.0) < 1e-12 &&
                          storage_display(cpo) == "1.66" && storage_display(dpo) == "2.66" &&
                          storage_display(dpo_orig) == "3.66";
        results.push_back({"storage_units_cpo", cpo, "= 5/3 (1.66)", pass});
        results.push_back({"storage_units_dpo", dpo, "= 8/3 (2.66)", pass});
        results.push_back({"storage_units_dpo_with_original", dpo_orig, "= 11/3 (3.66)", pass});
    }

    // Finite-difference conformance for every loss, 10 instances each. Step
    // sizes are per loss: the preference losses carry the alpha = 2500 factor,
    // so their values are large and the central difference needs a coarser
    // step to stay above rounding noise.
    {
        auto run_fd = [&](const char* name, double step, double rel_floor, auto&& make_fn) {
            double worst = 0.0;
            for (int k = 0; k < 10; ++k) {
                double err = 0.0;
                for (int attempt = 0;; ++attempt) {
                    if (attempt >= 64) {
                        throw std::runtime_error("verify: no well-conditioned instance");
                    }
                    Rng rng = root.derive(std::string("fd/") + name + "/" +
                                          std::to_string(k) + "/" + std::to_string(attempt));
                    DenoiserParams theta = init_params(arch, rng.next_u64());
                    DenoiserParams ref =
                        clone_as_reference(init_params(arch, rng.next_u64()));
                    auto fn = make_fn(theta, ref, rng);
                    auto params = theta.all_params();
                    if (!fd_well_conditioned(fn, params, rel_floor)) continue;
                    err = finite_diff_check(fn, {params.data(), params.size()}, step);
                    break;
                }
                worst = std::max(worst, err);
            }
            results.push_back({std::string("fd_") + name + "_max_rel_err", worst, "< 1e-4",
                               worst < 1e-4});
        };

        run_fd("pretrain", 5e-5, 3e-6, [&](DenoiserParams& theta, DenoiserParams& ref, Rng& rng) {
            Instance inst = make_instance(task, theta, ref, sched, cfg, rng, false);
            Tensor x0 = Tensor::from({inst.triplet.x0.size()}, inst.triplet.x0);
            Condition c = inst.triplet.c_w;
            int t = inst.t;
            Tensor eps = inst.eps;
            return std::function<Tensor()>([&theta, &sched, x0, c, t, eps]() {
                return pretrain_loss(theta, x0, c, t, eps, sched);
            });
        });

        // The pairwise loss multiplies a four-way cancellation by alpha, so at
        // alpha = 2500 its recomputed value carries noise ~ alpha*eps_mach that
        // no step size can beat while the sigmoid transition is this sharp.
        // The differentiation path is alpha-independent; conformance is checked
        // at a moderate alpha, and the alpha = 2500 gradient is covered
        // analytically by the identity check above.
        const PreferenceConfig cfg_fd_dpo = PreferenceConfig::from_alpha(50.0, sched.steps);
        run_fd("dpo", 5e-4, 1e-4, [&](DenoiserParams& theta, DenoiserParams& ref, Rng& rng) {
            ref = perturbed_reference(theta, rng, 0.02);
            PairInstance inst = make_pair_instance(task, sched, rng);
            DpoPair pair = inst.pair;
            int t = inst.t;
            Tensor eps = inst.eps;
            return std::function<Tensor()>(
                [&theta, &ref, &sched, &cfg_fd_dpo, pair, t, eps]() {
                    return dpo_loss(theta, ref, pair, t, eps, sched, cfg_fd_dpo);
                });
        });

        run_fd("cpo_final", 5e-5, 3e-6, [&](DenoiserParams& theta, DenoiserParams& ref, Rng& rng) {
            Instance inst = make_instance(task, theta, ref, sched, cfg, rng, true);
            // Freeze the stop-gradient factor at its base value; that frozen
            // function is the one the autodiff gradient belongs to.
            ContrastTerms ct = contrast_terms(
                theta, ref,
                q_sample(sched, Tensor::from({inst.triplet.x0.size()}, inst.triplet.x0),
                         inst.t, inst.eps),
                inst.triplet.c_w, inst.triplet.c_l, inst.eps, inst.t);
            const double detached = cfg.alpha() * (ct.d_theta.item() - ct.d_ref.item());
            CpoTriplet triplet = inst.triplet;
            int t = inst.t;
            Tensor eps = inst.eps;
            return std::function<Tensor()>([&theta, &sched, &cfg, triplet, t, eps, detached]() {
                return cpo_final_loss_with_scale(theta, triplet, t, eps, sched, cfg, detached);
            });
        });

        run_fd("total", 5e-5, 3e-6, [&](DenoiserParams& theta, DenoiserParams& ref, Rng& rng) {
            Instance inst = make_instance(task, theta, ref, sched, cfg, rng, true);
            const int t_prime = rng.uniform_int(1, sched.steps);
            std::vector<double> ev(2);
            for (auto& e : ev) e = rng.normal();
            Tensor eps_prime = Tensor::from({2}, ev);
            ContrastTerms ct = contrast_terms(
                theta, ref,
                q_sample(sched, Tensor::from({inst.triplet.x0.size()}, inst.triplet.x0),
                         inst.t, inst.eps),
                inst.triplet.c_w, inst.triplet.c_l, inst.eps, inst.t);
            const double detached = cfg.alpha() * (ct.d_theta.item() - ct.d_ref.item());
            CpoTriplet triplet = inst.triplet;
            int t = inst.t;
            Tensor eps = inst.eps;
            return std::function<Tensor()>(
                [&theta, &sched, &cfg, triplet, t, eps, t_prime, eps_prime, detached]() {
                    return total_loss_with_scale(theta, triplet, t, eps, t_prime, eps_prime,
                                                 sched, cfg, detached);
                });
        });
    }

    return results;
}

}  // namespace prefdiff
