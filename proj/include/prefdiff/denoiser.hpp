#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefdiff/rng.hpp"
#include "prefdiff/tensor.hpp"

namespace prefdiff {

enum class ConditionKind { discrete_bin, continuous_vector };

// A control signal: either a bin index in [0, K) or a real vector. The null
// condition used for classifier-free guidance is not representable here; it
// is requested through the `use_null` flag of predict_eps.
struct Condition {
    ConditionKind kind = ConditionKind::discrete_bin;
    int bin = -1;
    std::vector<double> vec;

    static Condition discrete(int b) { return {ConditionKind::discrete_bin, b, {}}; }
    static Condition continuous(std::vector<double> v) {
        return {ConditionKind::continuous_vector, -1, std::move(v)};
    }
    bool operator==(const Condition& o) const {
        return kind == o.kind && bin == o.bin && vec == o.vec;
    }
};

struct DenoiserArch {
    int data_dim = 2;
    ConditionKind cond_kind = ConditionKind::discrete_bin;
    int cond_bins = 8;        // K; the embedding table reserves row K for null
    int cond_dim = 2;         // continuous condition input width
    int cond_embed_dim = 8;
    int t_embed_dim = 16;     // sinusoidal, fixed (not learned)
    int hidden_width = 128;
    int hidden_depth = 3;

    int input_dim() const { return data_dim + t_embed_dim + cond_embed_dim; }
    bool operator==(const DenoiserArch&) const = default;
};

// Weights of the conditional noise predictor. A frozen copy (clone_as_reference)
// has plain value tensors, so graphs built through it carry no gradient.
// Parameters are immutable during evaluation; snapshots may be read from
// multiple threads, while optimizer steps own them exclusively.
struct DenoiserParams {
    DenoiserArch arch;
    std::uint64_t seed = 0;
    bool frozen = false;

    std::vector<Tensor> layer_w;  // hidden_depth + 1 entries
    std::vector<Tensor> layer_b;
    Tensor cond_table;            // discrete: [K+1, embed]; continuous: [1, embed] (null row)
    Tensor cond_proj_w;           // continuous only: [embed, cond_dim]
    Tensor cond_proj_b;           // continuous only: [embed]

    // Canonical parameter order; also the checkpoint weight layout.
    std::vector<Tensor> all_params() const;
    std::size_t weight_count() const;
};

DenoiserParams init_params(const DenoiserArch& arch, std::uint64_t seed);
DenoiserParams clone_as_reference(const DenoiserParams& p);
DenoiserParams clone_trainable(const DenoiserParams& p);

std::vector<double> timestep_features(int t, int dim);

// Differentiable forward pass; builds a graph through the parameters when
// they are trainable.
Tensor predict_eps(const DenoiserParams& p, const Tensor& x_t, int t,
                   const Condition& c, bool use_null = false);

// Plain forward pass over raw values; identical arithmetic to predict_eps.
// This is the hot path for sampling, curation and evaluation.
std::vector<double> predict_eps_values(const DenoiserParams& p,
                                       const std::vector<double>& x_t, int t,
                                       const Condition& c, bool use_null = false);

// eps_null + w * (eps_c - eps_null)
Tensor guided_eps(const DenoiserParams& p, const Tensor& x_t, int t,
                  const Condition& c, double w);
std::vector<double> guided_eps_values(const DenoiserParams& p,
                                      const std::vector<double>& x_t, int t,
                                      const Condition& c, double w);

void save_checkpoint(const std::string& path, const DenoiserParams& p);
DenoiserParams load_checkpoint(const std::string& path);

std::uint64_t weight_hash(const DenoiserParams& p);

}  // namespace prefdiff
