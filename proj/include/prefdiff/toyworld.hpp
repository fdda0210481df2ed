#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefdiff/denoiser.hpp"
#include "prefdiff/sampling.hpp"
#include "prefdiff/schedule.hpp"

namespace prefdiff {

// 2-D annulus task. Data points live near a circle of the given radius; the
// control signal is either the angular sector index (discrete, K bins) or the
// point's own grid-quantized location (continuous). The detector is analytic,
// so its accuracy on real data is effectively the oracle ceiling.
struct ToyTask {
    ConditionKind cond_kind = ConditionKind::discrete_bin;
    int bins = 8;
    double radius = 1.0;
    double radial_noise = 0.1;
    double grid_step = 0.05;      // continuous detector quantization
    double center_noise = 0.005;  // continuous conditional spread

    int data_dim() const { return 2; }
    static ToyTask discrete(int k = 8);
    static ToyTask continuous();
    DenoiserArch default_arch() const;
};

struct Example {
    std::vector<double> x0;
    Condition c;
};

struct CpoTriplet {
    std::vector<double> x0;
    Condition c_w;  // ground truth, copied bit-exactly from the source example
    Condition c_l;  // detected from one generated sample; always != c_w
};

struct DpoPair {
    std::vector<double> x0_w;
    std::vector<double> x0_l;
    Condition c;
    double score_w = 0.0;
    double score_l = 0.0;
    double quality_w = 0.0;
    double quality_l = 0.0;
};

std::vector<Example> sample_dataset(const ToyTask& task, std::size_t n, std::uint64_t seed);

// Discrete: angular sector floor(K * angle / 2pi) with atan2 normalized to
// [0, 2pi); the zero vector maps to sector 0 (atan2(0,0) == 0). Continuous:
// per-component rounding to the grid step.
Condition detect_condition(const ToyTask& task, const std::vector<double>& x);

// 1.0 on an exact match, otherwise negative detector distance (circular bin
// distance for the discrete task, Euclidean error for the continuous one).
double controllability_score(const ToyTask& task, const std::vector<double>& x,
                             const Condition& c);

// Negative distance to the annulus manifold; the toy stand-in for an image
// quality score.
double quality_proxy(const ToyTask& task, const std::vector<double>& x);

struct CpoCuration {
    std::vector<CpoTriplet> triplets;
    std::size_t generation_calls = 0;
    std::size_t skipped_nonfinite = 0;
    std::size_t filtered_equal = 0;  // c_l == c_w, dropped (zero-contrast)
};

struct DpoCuration {
    std::vector<DpoPair> pairs;
    std::size_t generation_calls = 0;
    std::size_t skipped_nonfinite = 0;
    std::size_t skipped_tied = 0;       // all candidate scores equal
    std::size_t filtered_quality = 0;   // quality_w < quality_l + delta
};

// One generated sample per source example; losing condition comes from the
// detector on that sample.
CpoCuration curate_cpo(const ToyTask& task, const DenoiserParams& generator,
                       const NoiseSchedule& sched, const std::vector<Example>& dataset,
                       const SamplerConfig& sampler, std::uint64_t seed, int workers = 1);

// n_samples generated per source example; winner/loser by controllability
// score, kept only when the winner passes the quality filter.
DpoCuration curate_dpo(const ToyTask& task, const DenoiserParams& generator,
                       const NoiseSchedule& sched, const std::vector<Example>& dataset,
                       int n_samples, double quality_delta, const SamplerConfig& sampler,
                       std::uint64_t seed, int workers = 1);

enum class OrderStatDistribution { uniform, normal };

// Monte Carlo estimate of P(min(s_1..s_n) < s' < max(s_1..s_n)) for i.i.d.
// continuous draws; converges to (n-1)/(n+1) regardless of the distribution.
double order_stat_probability(int n, std::size_t trials, OrderStatDistribution dist,
                              std::uint64_t seed);

enum class CurationPipeline { cpo, dpo };

// Storage accounting in equivalent RGB-image units: one image = 1, one
// single-channel condition map = 1/3. A CPO triplet stores one image and two
// conditions; a DPO pair stores two images and two conditions, plus the
// original image when requested.
double storage_compute_report(CurationPipeline pipeline, bool include_original);

// Two-decimal truncation used for display (5/3 prints as 1.66, not 1.67).
std::string storage_display(double units);

// Line-delimited dataset files; every line carries the schema version and is
// written with 17 significant digits so values round-trip exactly.
void save_cpo_dataset(const std::string& path, const std::vector<CpoTriplet>& triplets);
std::vector<CpoTriplet> load_cpo_dataset(const std::string& path);
void save_dpo_dataset(const std::string& path, const std::vector<DpoPair>& pairs);
std::vector<DpoPair> load_dpo_dataset(const std::string& path);

}  // namespace prefdiff
