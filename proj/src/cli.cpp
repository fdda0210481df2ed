#include "prefdiff/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "prefdiff/config.hpp"
#include "prefdiff/variancelab.hpp"
#include "prefdiff/verify.hpp"

namespace prefdiff {

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> task;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "configuration file (key=value lines)");
    cmd->add_option("--seed", flags.seed, "global seed override");
    cmd->add_option("--out", flags.out, "output directory override");
    cmd->add_option("--task", flags.task, "task override: discrete or continuous")
        ->check(CLI::IsMember({"discrete", "continuous"}));
    cmd->add_flag("--deterministic", flags.deterministic,
                  "single-worker fully reproducible mode");
}

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg = flags.config_path.empty() ? RunConfig{} : load_config(flags.config_path);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out) cfg.out_dir = *flags.out;
    if (flags.task) cfg.task_kind = *flags.task;
    if (flags.deterministic) cfg.deterministic = true;
    cfg.validate();
    return cfg;
}

// Every subcommand persists its resolved configuration next to its outputs
// before doing any work.
std::string prepare_out(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    save_config((fs::path(cfg.out_dir) / "run_config.txt").string(), cfg);
    return cfg.out_dir;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
}

CuratedData load_curated(FinetuneMethod method, const std::string& path) {
    if (method == FinetuneMethod::cpo) return load_cpo_dataset(path);
    return load_dpo_dataset(path);
}

void print_eval(const EvalReport& rep, const char* label) {
    std::printf(
        "%s guidance=%g controllability=%.4f oracle=%.4f error_rate=%.4f mmd=%.6g "
        "nonfinite=%zu\n",
        label, rep.guidance, rep.controllability, rep.oracle_controllability,
        rep.error_rate, rep.mmd, rep.n_nonfinite);
}

int cmd_train_base(const RunConfig& cfg) {
    prepare_out(cfg);
    MetricsLog log(out_path(cfg, "metrics.log"));
    TrainHooks hooks;
    hooks.log = &log;
    hooks.run_id = "train-base";
    hooks.every = cfg.train_checkpoint_every;
    hooks.on_checkpoint = [&](int step, const DenoiserParams& p) {
        save_checkpoint(out_path(cfg, "base_step_" + std::to_string(step) + ".ckpt"), p);
    };
    const auto sched = cfg.schedule();
    const auto params = train_base(cfg.task(), sched, cfg.arch(), cfg.train_config(), hooks);
    const std::string ckpt = out_path(cfg, "base.ckpt");
    save_checkpoint(ckpt, params);
    std::printf("trained base model: %s (steps=%d)\n", ckpt.c_str(), cfg.train_steps);
    return 0;
}

int cmd_curate(const RunConfig& cfg, const std::string& method,
               const std::string& checkpoint) {
    prepare_out(cfg);
    MetricsLog log(out_path(cfg, "metrics.log"));
    const auto params = load_checkpoint(checkpoint);
    const auto task = cfg.task();
    const auto sched = cfg.schedule();
    const auto source = sample_dataset(task, static_cast<std::size_t>(cfg.curate_source_size),
                                       derive_seed(cfg.seed, "curate/source"));
    SamplerConfig sampler{cfg.curate_guidance, cfg.posterior_form()};
    const int workers = cfg.resolved_workers();

    if (method == "cpo") {
        const auto result = curate_cpo(task, params, sched, source, sampler,
                                       derive_seed(cfg.seed, "curate/cpo"), workers);
        const std::string path = out_path(cfg, "cpo_triplets.txt");
        save_cpo_dataset(path, result.triplets);
        std::printf(
            "curated method=cpo kept=%zu generation_calls=%zu filtered_equal=%zu "
            "skipped_nonfinite=%zu file=%s\n",
            result.triplets.size(), result.generation_calls, result.filtered_equal,
            result.skipped_nonfinite, path.c_str());
        log.append("curate-cpo", 0, "generation_calls",
                   static_cast<double>(result.generation_calls), cfg.seed);
        log.append("curate-cpo", 0, "kept", static_cast<double>(result.triplets.size()),
                   cfg.seed);
    } else {
        const auto result = curate_dpo(task, params, sched, source,
                                       cfg.curate_samples_per_example,
                                       cfg.curate_quality_delta, sampler,
                                       derive_seed(cfg.seed, "curate/dpo"), workers);
        const std::string path = out_path(cfg, "dpo_pairs.txt");
        save_dpo_dataset(path, result.pairs);
        std::printf(
            "curated method=dpo kept=%zu generation_calls=%zu filtered_quality=%zu "
            "skipped_tied=%zu skipped_nonfinite=%zu file=%s\n",
            result.pairs.size(), result.generation_calls, result.filtered_quality,
            result.skipped_tied, result.skipped_nonfinite, path.c_str());
        log.append("curate-dpo", 0, "generation_calls",
                   static_cast<double>(result.generation_calls), cfg.seed);
        log.append("curate-dpo", 0, "kept", static_cast<double>(result.pairs.size()),
                   cfg.seed);
    }
    return 0;
}

int cmd_finetune(const RunConfig& cfg, const std::string& method,
                 const std::string& checkpoint, const std::string& data_path) {
    prepare_out(cfg);
    MetricsLog log(out_path(cfg, "metrics.log"));
    const auto base = load_checkpoint(checkpoint);
    const auto sched = cfg.schedule();
    const FinetuneMethod fm = method == "cpo" ? FinetuneMethod::cpo : FinetuneMethod::dpo;
    const auto data = load_curated(fm, data_path);

    TrainHooks hooks;
    hooks.log = &log;
    hooks.run_id = "finetune-" + method;
    hooks.every = cfg.finetune_checkpoint_every;
    hooks.on_checkpoint = [&](int step, const DenoiserParams& p) {
        save_checkpoint(out_path(cfg, method + "_step_" + std::to_string(step) + ".ckpt"), p);
    };
    const auto tuned = finetune(fm, base, data, sched, cfg.finetune_config(), hooks);
    const std::string ckpt = out_path(cfg, method + ".ckpt");
    save_checkpoint(ckpt, tuned);
    std::printf("finetuned method=%s: %s (steps=%d)\n", method.c_str(), ckpt.c_str(),
                cfg.finetune_steps);
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
             const std::string& scales_arg, const std::string& baseline) {
    prepare_out(cfg);
    MetricsLog log(out_path(cfg, "metrics.log"));
    const auto params = load_checkpoint(checkpoint);
    const auto task = cfg.task();
    const auto sched = cfg.schedule();
    const int workers = cfg.resolved_workers();
    const auto n = static_cast<std::size_t>(cfg.eval_samples);

    if (!scales_arg.empty()) {
        std::vector<double> scales;
        std::stringstream ss(scales_arg);
        std::string part;
        while (std::getline(ss, part, ',')) scales.push_back(std::stod(part));
        const auto reports = cfg_sweep(params, task, sched, scales, n, cfg.seed, workers);
        for (std::size_t i = 0; i < reports.size(); ++i) {
            print_eval(reports[i], "eval");
            log_eval_report(log, "cfg-sweep", static_cast<long>(i), reports[i]);
        }
        return 0;
    }

    const auto rep = evaluate(params, task, sched, n, cfg.eval_guidance, cfg.seed, workers);
    print_eval(rep, "eval");
    log_eval_report(log, "eval", 0, rep);

    if (!baseline.empty()) {
        const auto base = load_checkpoint(baseline);
        const auto base_rep =
            evaluate(base, task, sched, n, cfg.eval_guidance, cfg.seed, workers);
        print_eval(base_rep, "eval-baseline");
        log_eval_report(log, "eval-baseline", 0, base_rep);
        const double rel = base_rep.error_rate != 0.0
                               ? 1.0 - rep.error_rate / base_rep.error_rate
                               : 0.0;
        std::printf("error_rate absolute=%.4f (baseline %.4f), relative_reduction=%.4f\n",
                    rep.error_rate, base_rep.error_rate, rel);
        log.append("eval", 0, "relative_error_reduction", rel, cfg.seed);
    }
    return 0;
}

int cmd_variance(const RunConfig& cfg, const std::string& checkpoint) {
    prepare_out(cfg);
    MetricsLog log(out_path(cfg, "metrics.log"));
    const auto base = load_checkpoint(checkpoint);
    const auto task = cfg.task();
    const auto sched = cfg.schedule();
    SamplerConfig sampler{cfg.curate_guidance, cfg.posterior_form()};
    const int workers = cfg.resolved_workers();

    bool all_ordered = true;
    for (int s = 0; s < cfg.variance_seeds; ++s) {
        const std::uint64_t seed_s = derive_seed(cfg.seed, "variance/seed/" + std::to_string(s));
        const auto source =
            sample_dataset(task, static_cast<std::size_t>(cfg.variance_source_size),
                           derive_seed(seed_s, "source"));
        const auto cpo = curate_cpo(task, base, sched, source, sampler,
                                    derive_seed(seed_s, "curate/cpo"), workers);
        const auto dpo = curate_dpo(task, base, sched, source, cfg.curate_samples_per_example,
                                    cfg.curate_quality_delta, sampler,
                                    derive_seed(seed_s, "curate/dpo"), workers);
        for (int t_star : cfg.variance_t_fixed) {
            const auto rep_cpo = empirical_variance(
                base, cpo.triplets, TPolicy::fixed(t_star),
                static_cast<std::size_t>(cfg.variance_draws),
                derive_seed(seed_s, "var/cpo"), sched, workers);
            const auto rep_dpo = empirical_variance(
                base, dpo.pairs, TPolicy::fixed(t_star),
                static_cast<std::size_t>(cfg.variance_draws),
                derive_seed(seed_s, "var/dpo"), sched, workers);
            const bool ordered = rep_cpo.var_pooled < rep_dpo.var_pooled;
            all_ordered = all_ordered && ordered;
            std::printf(
                "variance seed=%d t=%d var_cpo=%.6g (se %.2g) var_dpo=%.6g (se %.2g) "
                "ordered=%s\n",
                s, t_star, rep_cpo.var_pooled, rep_cpo.stderr_pooled, rep_dpo.var_pooled,
                rep_dpo.stderr_pooled, ordered ? "yes" : "no");
            const std::string run = "variance-seed" + std::to_string(s);
            log.append(run, t_star, "var_cpo_pooled", rep_cpo.var_pooled, seed_s);
            log.append(run, t_star, "var_cpo_within", rep_cpo.var_within_example, seed_s);
            log.append(run, t_star, "var_cpo_stderr", rep_cpo.stderr_pooled, seed_s);
            log.append(run, t_star, "var_dpo_pooled", rep_dpo.var_pooled, seed_s);
            log.append(run, t_star, "var_dpo_within", rep_dpo.var_within_example, seed_s);
            log.append(run, t_star, "var_dpo_stderr", rep_dpo.stderr_pooled, seed_s);
            log.append(run, t_star, "grad_norm_proxy", rep_cpo.grad_norm_proxy, seed_s);
        }
    }

    if (task.cond_kind == ConditionKind::continuous_vector) {
        // Synthetic factor decomposition is only meaningful with a
        // continuous condition input.
        const auto source = sample_dataset(task, 1, derive_seed(cfg.seed, "variance/decomp"));
        Rng rng(derive_seed(cfg.seed, "variance/decomp/eps"));
        ControlledFactors factors;
        factors.base_c = source[0].c;
        factors.t = std::min(500, sched.steps);
        factors.eps.resize(source[0].x0.size());
        for (auto& e : factors.eps) e = rng.normal();
        factors.base_x = q_sample_values(sched, source[0].x0, factors.t, factors.eps);
        const auto dec = decomposition_estimate(base, factors, 4000,
                                                derive_seed(cfg.seed, "variance/decomp/run"));
        std::printf("decomposition v_ctrl=%.6g v_nuis=%.6g v_cross=%.6g joint=%.6g\n",
                    dec.v_ctrl, dec.v_nuis, dec.v_cross, dec.var_joint);
        log.append("variance-decomp", 0, "v_ctrl", dec.v_ctrl, cfg.seed);
        log.append("variance-decomp", 0, "v_nuis", dec.v_nuis, cfg.seed);
        log.append("variance-decomp", 0, "v_cross", dec.v_cross, cfg.seed);
    }

    std::printf("variance ordering var_cpo < var_dpo: %s\n", all_ordered ? "yes" : "no");
    return 0;
}

int cmd_verify(const RunConfig& cfg) {
    prepare_out(cfg);
    const auto results = run_verify_suite(cfg.seed);
    bool all = true;
    for (const auto& r : results) {
        std::printf("%-34s value=%-14.6g tolerance=%-14s %s\n", r.name.c_str(), r.value,
                    r.tolerance.c_str(), r.pass ? "PASS" : "FAIL");
        all = all && r.pass;
    }
    if (!all) {
        std::fprintf(stderr, "error: verification suite failed\n");
        return 1;
    }
    return 0;
}

int cmd_report(const RunConfig& cfg) {
    const std::string log_path = out_path(cfg, "metrics.log");
    std::ifstream in(log_path);
    if (!in) throw std::runtime_error("report: cannot open " + log_path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }

    // Deterministic order: run_id, then numeric step, then the raw line.
    auto key = [](const std::string& l) {
        std::stringstream ss(l);
        std::string run_id, step;
        std::getline(ss, run_id, ',');
        std::getline(ss, step, ',');
        return std::tuple<std::string, long, std::string>(run_id, std::atol(step.c_str()), l);
    };
    std::sort(lines.begin(), lines.end(),
              [&key](const std::string& a, const std::string& b) { return key(a) < key(b); });

    const std::string csv_path = out_path(cfg, "report.csv");
    std::ofstream out(csv_path, std::ios::trunc);
    out << "run_id,step,metric,value,seed\n";
    for (const auto& l : lines) out << l << "\n";
    std::printf("report: %zu records -> %s\n", lines.size(), csv_path.c_str());
    return 0;
}

}  // namespace

int cmd_dispatch(int argc, const char* const* argv) {
    CLI::App app{"preference-optimization laboratory for toy conditional diffusion models"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string method, checkpoint, data_path, scales, baseline;

    auto* train_cmd = app.add_subcommand("train-base", "pretrain the conditional denoiser");
    add_common(train_cmd, flags);

    auto* curate_cmd = app.add_subcommand("curate", "build a preference dataset");
    add_common(curate_cmd, flags);
    curate_cmd->add_option("--method", method, "curation method")
        ->required()
        ->check(CLI::IsMember({"cpo", "dpo"}));
    curate_cmd->add_option("--checkpoint", checkpoint, "generator checkpoint")->required();

    auto* finetune_cmd = app.add_subcommand("finetune", "preference fine-tuning");
    add_common(finetune_cmd, flags);
    finetune_cmd->add_option("--method", method, "fine-tuning method")
        ->required()
        ->check(CLI::IsMember({"cpo", "dpo"}));
    finetune_cmd->add_option("--checkpoint", checkpoint, "base checkpoint")->required();
    finetune_cmd->add_option("--data", data_path, "curated dataset file")->required();

    auto* eval_cmd = app.add_subcommand("eval", "controllability and quality evaluation");
    add_common(eval_cmd, flags);
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--cfg-scales", scales, "comma-separated guidance scales to sweep");
    eval_cmd->add_option("--baseline", baseline,
                         "baseline checkpoint for relative error reduction");

    auto* variance_cmd =
        app.add_subcommand("variance", "matched CPO-vs-DPO contrast variance comparison");
    add_common(variance_cmd, flags);
    variance_cmd->add_option("--checkpoint", checkpoint, "base checkpoint")->required();

    auto* verify_cmd = app.add_subcommand("verify", "run the verification suite");
    add_common(verify_cmd, flags);

    auto* report_cmd = app.add_subcommand("report", "aggregate metrics logs to CSV");
    add_common(report_cmd, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const RunConfig cfg = resolve_config(flags);
        if (app.got_subcommand(train_cmd)) return cmd_train_base(cfg);
        if (app.got_subcommand(curate_cmd)) return cmd_curate(cfg, method, checkpoint);
        if (app.got_subcommand(finetune_cmd))
            return cmd_finetune(cfg, method, checkpoint, data_path);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(cfg, checkpoint, scales, baseline);
        if (app.got_subcommand(variance_cmd)) return cmd_variance(cfg, checkpoint);
        if (app.got_subcommand(verify_cmd)) return cmd_verify(cfg);
        if (app.got_subcommand(report_cmd)) return cmd_report(cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace prefdiff
