#include "prefdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace prefdiff {

// ---- optimizer --------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("optimizer: learning rate must be > 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) {
        throw std::invalid_argument("optimizer: gradient count mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t p = 0; p < params_.size(); ++p) {
        auto& w = params_[p].mutable_value();
        const auto& g = grads[p].value();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                               cfg_.weight_decay * w[i]);
        }
    }
}

// ---- metrics log ------------------------------------------------------------

MetricsLog::MetricsLog(const std::string& path) : path_(path) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("metrics: cannot open " + path_);
}

void MetricsLog::append(const std::string& run_id, long step, const std::string& metric,
                        double value, std::uint64_t seed) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("metrics: cannot open " + path_);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out << run_id << "," << step << "," << metric << "," << buf << "," << seed << "\n";
}

// ---- training loops ---------------------------------------------------------

namespace {

void maybe_checkpoint(const TrainHooks& hooks, int step, const DenoiserParams& params) {
    if (hooks.every > 0 && hooks.on_checkpoint && step % hooks.every == 0) {
        hooks.on_checkpoint(step, params);
    }
}

void maybe_log(const TrainHooks& hooks, int step, const char* metric, double value,
               std::uint64_t seed) {
    if (hooks.log) hooks.log->append(hooks.run_id, step, metric, value, seed);
}

Tensor batch_mean(std::vector<Tensor>& losses) {
    Tensor acc = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) acc = add(acc, losses[i]);
    return scale(acc, 1.0 / static_cast<double>(losses.size()));
}

std::vector<double> draw_eps(Rng& rng, std::size_t dim) {
    std::vector<double> eps(dim);
    for (auto& e : eps) e = rng.normal();
    return eps;
}

}  // namespace

DenoiserParams train_base(const ToyTask& task, const NoiseSchedule& sched,
                          const DenoiserArch& arch, const TrainConfig& config,
                          const TrainHooks& hooks) {
    if (config.batch_size < 1) throw std::invalid_argument("train_base: batch_size must be >= 1");
    Rng root(config.seed);
    const auto dataset =
        sample_dataset(task, config.dataset_size, derive_seed(config.seed, "base/data"));
    DenoiserParams params = init_params(arch, derive_seed(config.seed, "base/init"));
    AdamW opt(params.all_params(), config.opt);
    const auto dim = static_cast<std::size_t>(arch.data_dim);

    for (int step = 1; step <= config.steps; ++step) {
        Rng rng = root.derive("base/step/" + std::to_string(step));
        std::vector<Tensor> losses;
        losses.reserve(static_cast<std::size_t>(config.batch_size));
        for (int b = 0; b < config.batch_size; ++b) {
            const auto& ex = dataset[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(dataset.size()) - 1))];
            const int t = rng.uniform_int(1, sched.steps);
            Tensor eps = Tensor::from({dim}, draw_eps(rng, dim));
            const bool drop = rng.uniform() < config.cond_dropout;
            Tensor x_t = q_sample(sched, Tensor::from({dim}, ex.x0), t, eps);
            losses.push_back(squared_norm(eps, predict_eps(params, x_t, t, ex.c, drop)));
        }
        Tensor loss = batch_mean(losses);
        if (!std::isfinite(loss.item())) {
            throw std::runtime_error("train_base: loss diverged at step " +
                                     std::to_string(step));
        }
        const auto plist = params.all_params();
        opt.step(backward(loss, {plist.data(), plist.size()}));
        if (step == 1 || step == config.steps || step % 50 == 0) {
            maybe_log(hooks, step, "train_loss", loss.item(), config.seed);
        }
        maybe_checkpoint(hooks, step, params);
    }
    return params;
}

DenoiserParams finetune(FinetuneMethod method, const DenoiserParams& base,
                        const CuratedData& data, const NoiseSchedule& sched,
                        const TrainConfig& config, const TrainHooks& hooks) {
    if (config.batch_size < 1) throw std::invalid_argument("finetune: batch_size must be >= 1");
    const bool is_cpo = method == FinetuneMethod::cpo;
    if (is_cpo && !std::holds_alternative<std::vector<CpoTriplet>>(data)) {
        throw std::invalid_argument("finetune: cpo method needs a triplet dataset");
    }
    if (!is_cpo && !std::holds_alternative<std::vector<DpoPair>>(data)) {
        throw std::invalid_argument("finetune: dpo method needs a pair dataset");
    }
    const std::size_t n_data = is_cpo ? std::get<std::vector<CpoTriplet>>(data).size()
                                      : std::get<std::vector<DpoPair>>(data).size();
    if (n_data == 0) throw std::invalid_argument("finetune: empty curated dataset");

    DenoiserParams theta = clone_trainable(base);
    const DenoiserParams ref = clone_as_reference(base);
    AdamW opt(theta.all_params(), config.opt);
    Rng root(config.seed);
    const auto dim = static_cast<std::size_t>(base.arch.data_dim);

    for (int step = 1; step <= config.steps; ++step) {
        Rng rng = root.derive("finetune/step/" + std::to_string(step));
        std::vector<Tensor> losses;
        losses.reserve(static_cast<std::size_t>(config.batch_size));
        for (int b = 0; b < config.batch_size; ++b) {
            const auto idx = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(n_data) - 1));
            const int t = rng.uniform_int(1, sched.steps);
            Tensor eps = Tensor::from({dim}, draw_eps(rng, dim));
            if (is_cpo) {
                const auto& triplet = std::get<std::vector<CpoTriplet>>(data)[idx];
                const int t_prime = rng.uniform_int(1, sched.steps);
                Tensor eps_prime = Tensor::from({dim}, draw_eps(rng, dim));
                losses.push_back(total_loss(theta, ref, triplet, t, eps, t_prime,
                                            eps_prime, sched, config.pref));
            } else {
                const auto& pair = std::get<std::vector<DpoPair>>(data)[idx];
                losses.push_back(dpo_loss(theta, ref, pair, t, eps, sched, config.pref));
            }
        }
        Tensor loss = batch_mean(losses);
        if (!std::isfinite(loss.item())) {
            throw std::runtime_error("finetune: loss diverged at step " +
                                     std::to_string(step));
        }
        const auto plist = theta.all_params();
        opt.step(backward(loss, {plist.data(), plist.size()}));
        if (step == 1 || step == config.steps || step % 50 == 0) {
            maybe_log(hooks, step, is_cpo ? "cpo_loss" : "dpo_loss", loss.item(),
                      config.seed);
        }
        maybe_checkpoint(hooks, step, theta);
    }
    return theta;
}

// ---- evaluation -------------------------------------------------------------

namespace {

Condition draw_condition(const ToyTask& task, Rng& rng) {
    if (task.cond_kind == ConditionKind::discrete_bin) {
        return Condition::discrete(rng.uniform_int(0, task.bins - 1));
    }
    const double phi = rng.uniform() * 6.283185307179586476925287;
    return detect_condition(task, {task.radius * std::cos(phi),
                                   task.radius * std::sin(phi)});
}

std::uint64_t hash_conditions(const std::vector<Condition>& cs) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t bits) {
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& c : cs) {
        mix(c.kind == ConditionKind::discrete_bin ? 0u : 1u);
        mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(c.bin)));
        for (double v : c.vec) mix(std::bit_cast<std::uint64_t>(v));
    }
    return h;
}

EvalReport evaluate_with_conditions(const DenoiserParams& params, const ToyTask& task,
                                    const NoiseSchedule& sched,
                                    const std::vector<Condition>& conditions,
                                    double guidance_w, std::uint64_t seed, int workers) {
    Rng root(seed);
    SamplerConfig sampler;
    sampler.guidance = guidance_w;

    const std::size_t n = conditions.size();
    std::vector<std::vector<double>> samples(n);
    std::vector<char> finite(n, 0);
    parallel_for(n, workers, [&](std::size_t i) {
        Rng rng = root.derive("eval/gen/" + std::to_string(i));
        samples[i] = ancestral_sample(params, sched, conditions[i], sampler, rng);
        bool ok = true;
        for (double v : samples[i]) ok = ok && std::isfinite(v);
        finite[i] = ok ? 1 : 0;
    });

    std::size_t n_finite = 0, matched = 0;
    std::vector<std::vector<double>> generated;
    generated.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!finite[i]) continue;
        ++n_finite;
        if (detect_condition(task, samples[i]) == conditions[i]) ++matched;
        generated.push_back(samples[i]);
    }

    const auto real = sample_dataset(task, n, derive_seed(seed, "eval/real"));
    std::size_t oracle_matched = 0;
    std::vector<std::vector<double>> real_x;
    real_x.reserve(n);
    for (const auto& ex : real) {
        if (detect_condition(task, ex.x0) == ex.c) ++oracle_matched;
        real_x.push_back(ex.x0);
    }

    EvalReport rep;
    rep.n_samples = n;
    rep.n_nonfinite = n - n_finite;
    rep.seed = seed;
    rep.guidance = guidance_w;
    rep.conditions_hash = hash_conditions(conditions);
    rep.controllability =
        n_finite == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(n_finite);
    rep.oracle_controllability =
        static_cast<double>(oracle_matched) / static_cast<double>(real.size());
    rep.error_rate = rep.oracle_controllability - rep.controllability;
    if (!generated.empty()) {
        const double h = median_heuristic_bandwidth(real_x);
        rep.mmd = mmd_squared(generated, real_x, h);
    }
    return rep;
}

}  // namespace

EvalReport evaluate(const DenoiserParams& params, const ToyTask& task,
                    const NoiseSchedule& sched, std::size_t n_samples, double guidance_w,
                    std::uint64_t seed, int workers) {
    if (n_samples < 100) throw std::invalid_argument("evaluate: need at least 100 samples");
    Rng root(seed);
    std::vector<Condition> conditions(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        Rng rng = root.derive("eval/cond/" + std::to_string(i));
        conditions[i] = draw_condition(task, rng);
    }
    return evaluate_with_conditions(params, task, sched, conditions, guidance_w, seed,
                                    workers);
}

std::vector<EvalReport> cfg_sweep(const DenoiserParams& params, const ToyTask& task,
                                  const NoiseSchedule& sched,
                                  const std::vector<double>& scales,
                                  std::size_t n_samples, std::uint64_t seed, int workers) {
    if (scales.empty()) throw std::invalid_argument("cfg_sweep: no scales given");
    if (n_samples < 100) throw std::invalid_argument("cfg_sweep: need at least 100 samples");
    Rng root(seed);
    std::vector<Condition> conditions(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        Rng rng = root.derive("eval/cond/" + std::to_string(i));
        conditions[i] = draw_condition(task, rng);
    }
    std::vector<EvalReport> reports;
    reports.reserve(scales.size());
    for (double w : scales) {
        reports.push_back(
            evaluate_with_conditions(params, task, sched, conditions, w, seed, workers));
    }
    return reports;
}

void log_eval_report(MetricsLog& log, const std::string& run_id, long step,
                     const EvalReport& rep) {
    log.append(run_id, step, "controllability", rep.controllability, rep.seed);
    log.append(run_id, step, "oracle_controllability", rep.oracle_controllability, rep.seed);
    log.append(run_id, step, "error_rate", rep.error_rate, rep.seed);
    log.append(run_id, step, "mmd", rep.mmd, rep.seed);
    log.append(run_id, step, "guidance", rep.guidance, rep.seed);
    log.append(run_id, step, "nonfinite_samples", static_cast<double>(rep.n_nonfinite),
               rep.seed);
}

// ---- MMD --------------------------------------------------------------------

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace

double median_heuristic_bandwidth(const std::vector<std::vector<double>>& set) {
    if (set.size() < 2) throw std::invalid_argument("median heuristic: need >= 2 points");
    std::vector<double> dists;
    dists.reserve(set.size() * (set.size() - 1) / 2);
    for (std::size_t i = 0; i < set.size(); ++i) {
        for (std::size_t j = i + 1; j < set.size(); ++j) {
            dists.push_back(std::sqrt(sq_dist(set[i], set[j])));
        }
    }
    const std::size_t mid = dists.size() / 2;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid),
                     dists.end());
    const double h = dists[mid];
    return h > 0.0 ? h : 1.0;
}

double mmd_squared(const std::vector<std::vector<double>>& a,
                   const std::vector<std::vector<double>>& b, double bandwidth) {
    if (a.size() < 2 || b.size() < 2) {
        throw std::invalid_argument("mmd: both sets need >= 2 points");
    }
    const double inv = -1.0 / (2.0 * bandwidth * bandwidth);
    auto kernel_mean_offdiag = [&](const std::vector<std::vector<double>>& s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            for (std::size_t j = i + 1; j < s.size(); ++j) {
                acc += std::exp(inv * sq_dist(s[i], s[j]));
            }
        }
        const double m = static_cast<double>(s.size());
        return 2.0 * acc / (m * (m - 1.0));
    };
    double cross = 0.0;
    for (const auto& x : a) {
        for (const auto& y : b) cross += std::exp(inv * sq_dist(x, y));
    }
    cross /= static_cast<double>(a.size()) * static_cast<double>(b.size());
    return kernel_mean_offdiag(a) + kernel_mean_offdiag(b) - 2.0 * cross;
}

}  // namespace prefdiff
