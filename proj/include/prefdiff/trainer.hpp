#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "prefdiff/denoiser.hpp"
#include "prefdiff/losses.hpp"
#include "prefdiff/sampling.hpp"
#include "prefdiff/schedule.hpp"
#include "prefdiff/toyworld.hpp"

namespace prefdiff {

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Adam with decoupled weight decay. Holds first/second moment state per
// parameter; step() applies one update from the given gradients.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, OptimizerConfig cfg);
    void step(const std::vector<Tensor>& grads);
    int steps_taken() const { return t_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    OptimizerConfig cfg_;
    int t_ = 0;
};

// Append-only metrics log: one line per record,
// "run_id,step,metric,value,seed" with 17-significant-digit values.
class MetricsLog {
public:
    explicit MetricsLog(const std::string& path);
    void append(const std::string& run_id, long step, const std::string& metric,
                double value, std::uint64_t seed);
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

struct TrainConfig {
    OptimizerConfig opt;
    int steps = 1500;
    int batch_size = 64;
    std::size_t dataset_size = 4096;
    double cond_dropout = 0.1;  // base training only
    std::uint64_t seed = 1;
    PreferenceConfig pref;
    SamplerConfig sampler;
    int workers = 1;
};

struct TrainHooks {
    int every = 0;  // 0 disables
    std::function<void(int step, const DenoiserParams&)> on_checkpoint;
    MetricsLog* log = nullptr;
    std::string run_id;
};

// Pretrains the conditional denoiser on task data with condition dropout.
// Deterministic given (config, seed); throws if the loss goes non-finite,
// naming the step.
DenoiserParams train_base(const ToyTask& task, const NoiseSchedule& sched,
                          const DenoiserArch& arch, const TrainConfig& config,
                          const TrainHooks& hooks = {});

enum class FinetuneMethod { dpo, cpo };

using CuratedData = std::variant<std::vector<CpoTriplet>, std::vector<DpoPair>>;

// Fine-tunes a trainable copy of `base` against a frozen reference clone.
// The CPO path optimizes the total loss (hinge + pretraining regularizer with
// independently resampled noise/timestep); the DPO path optimizes the
// pairwise log-sigmoid loss. The dataset variant must match the method.
DenoiserParams finetune(FinetuneMethod method, const DenoiserParams& base,
                        const CuratedData& data, const NoiseSchedule& sched,
                        const TrainConfig& config, const TrainHooks& hooks = {});

struct EvalReport {
    double controllability = 0.0;
    double oracle_controllability = 0.0;
    double error_rate = 0.0;  // oracle_controllability - controllability
    double mmd = 0.0;         // unbiased squared-MMD estimate against fresh real data
    double guidance = 0.0;
    std::size_t n_samples = 0;
    std::size_t n_nonfinite = 0;
    std::uint64_t seed = 0;
    std::uint64_t conditions_hash = 0;
};

// Draws conditions uniformly, samples the full ancestral chain per condition,
// and scores detection agreement plus distribution quality. Non-finite
// samples are counted and excluded from both scores.
EvalReport evaluate(const DenoiserParams& params, const ToyTask& task,
                    const NoiseSchedule& sched, std::size_t n_samples, double guidance_w,
                    std::uint64_t seed, int workers = 1);

// One evaluate per scale with identical condition draws across scales
// (paired design; see conditions_hash).
std::vector<EvalReport> cfg_sweep(const DenoiserParams& params, const ToyTask& task,
                                  const NoiseSchedule& sched,
                                  const std::vector<double>& scales,
                                  std::size_t n_samples, std::uint64_t seed,
                                  int workers = 1);

void log_eval_report(MetricsLog& log, const std::string& run_id, long step,
                     const EvalReport& rep);

// Gaussian-kernel two-sample statistics. The bandwidth convention is
// k(x, y) = exp(-||x - y||^2 / (2 h^2)) with h from the median heuristic.
double median_heuristic_bandwidth(const std::vector<std::vector<double>>& set);
double mmd_squared(const std::vector<std::vector<double>>& a,
                   const std::vector<std::vector<double>>& b, double bandwidth);

}  // namespace prefdiff
