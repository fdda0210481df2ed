#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefdiff/losses.hpp"
#include "prefdiff/schedule.hpp"
#include "prefdiff/toyworld.hpp"
#include "prefdiff/trainer.hpp"

namespace prefdiff {

// Resolved run configuration. Serialized as flat `section.key=value` lines;
// the writer emits every key in sorted order with canonical number formatting
// (shortest round-trip), so load/write is idempotent byte-for-byte.
struct RunConfig {
    // run
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    bool deterministic = false;
    int workers = 0;  // 0: PREFDIFF_THREADS or 1

    // task
    std::string task_kind = "discrete";  // discrete | continuous
    int task_bins = 8;
    double task_radius = 1.0;
    double task_radial_noise = 0.1;
    double task_grid_step = 0.05;
    double task_center_noise = 0.005;

    // schedule
    int schedule_steps = 1000;
    double schedule_beta_start = 1e-4;
    double schedule_beta_end = 0.02;
    std::string schedule_posterior_form = "standard";  // standard | paper

    // arch
    int arch_hidden_width = 128;
    int arch_hidden_depth = 3;
    int arch_t_embed_dim = 16;
    int arch_cond_embed_dim = 8;

    // loss
    double loss_alpha = 2500.0;
    double loss_omega = 0.5;
    double loss_margin = 0.01;
    double loss_reg_lambda = 0.05;

    // train (base pretraining)
    int train_steps = 1500;
    int train_batch = 64;
    double train_lr = 1e-3;
    double train_weight_decay = 0.01;
    double train_cond_dropout = 0.1;
    int train_dataset_size = 4096;
    int train_checkpoint_every = 0;

    // finetune
    int finetune_steps = 2500;
    int finetune_batch = 32;
    double finetune_lr = 1e-5;
    double finetune_weight_decay = 0.01;
    int finetune_checkpoint_every = 0;

    // curate
    int curate_samples_per_example = 20;
    double curate_quality_delta = 0.05;
    double curate_guidance = 2.0;
    int curate_source_size = 256;

    // eval
    int eval_samples = 512;
    double eval_guidance = 2.0;

    // variance
    int variance_draws = 1000;
    std::vector<int> variance_t_fixed = {100, 500, 900};
    int variance_seeds = 5;
    int variance_source_size = 64;

    // ---- materialized domain objects ----
    ToyTask task() const;
    NoiseSchedule schedule() const;
    DenoiserArch arch() const;
    PosteriorForm posterior_form() const;
    PreferenceConfig pref() const;
    TrainConfig train_config() const;
    TrainConfig finetune_config() const;
    int resolved_workers() const;  // deterministic mode forces 1
    void validate() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string config_to_text(const RunConfig& cfg);
void save_config(const std::string& path, const RunConfig& cfg);

}  // namespace prefdiff
