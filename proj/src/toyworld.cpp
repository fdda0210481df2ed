#include "prefdiff/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace prefdiff {

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

ToyTask ToyTask::discrete(int k) {
    ToyTask t;
    t.cond_kind = ConditionKind::discrete_bin;
    t.bins = k;
    return t;
}

ToyTask ToyTask::continuous() {
    ToyTask t;
    t.cond_kind = ConditionKind::continuous_vector;
    return t;
}

DenoiserArch ToyTask::default_arch() const {
    DenoiserArch a;
    a.data_dim = data_dim();
    a.cond_kind = cond_kind;
    a.cond_bins = bins;
    a.cond_dim = data_dim();
    return a;
}

std::vector<Example> sample_dataset(const ToyTask& task, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("sample_dataset: n must be positive");
    Rng root(seed);
    std::vector<Example> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = root.derive("dataset/item/" + std::to_string(i));
        Example& e = out[i];
        if (task.cond_kind == ConditionKind::discrete_bin) {
            const int bin = rng.uniform_int(0, task.bins - 1);
            const double phi = (bin + rng.uniform()) * kTwoPi / task.bins;
            const double r = task.radius + task.radial_noise * rng.normal();
            e.x0 = {r * std::cos(phi), r * std::sin(phi)};
            e.c = Condition::discrete(bin);
        } else {
            const double phi = rng.uniform() * kTwoPi;
            const std::vector<double> p = {task.radius * std::cos(phi),
                                           task.radius * std::sin(phi)};
            e.c = detect_condition(task, p);  // grid-quantized anchor
            e.x0 = {e.c.vec[0] + task.center_noise * rng.normal(),
                    e.c.vec[1] + task.center_noise * rng.normal()};
        }
    }
    return out;
}

Condition detect_condition(const ToyTask& task, const std::vector<double>& x) {
    if (x.size() != static_cast<std::size_t>(task.data_dim())) {
        throw std::invalid_argument("detect_condition: expected " +
                                    std::to_string(task.data_dim()) + " components, got " +
                                    std::to_string(x.size()));
    }
    if (!all_finite(x)) throw std::invalid_argument("detect_condition: non-finite input");

    if (task.cond_kind == ConditionKind::discrete_bin) {
        double a = std::atan2(x[1], x[0]);
        if (a < 0.0) a += kTwoPi;
        int bin = static_cast<int>(std::floor(task.bins * a / kTwoPi));
        if (bin >= task.bins) bin = task.bins - 1;  // a == 2*pi after rounding
        if (bin < 0) bin = 0;
        return Condition::discrete(bin);
    }
    std::vector<double> q(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        q[i] = std::round(x[i] / task.grid_step) * task.grid_step;
    }
    return Condition::continuous(std::move(q));
}

double controllability_score(const ToyTask& task, const std::vector<double>& x,
                             const Condition& c) {
    const Condition detected = detect_condition(task, x);
    if (detected == c) return 1.0;
    if (task.cond_kind == ConditionKind::discrete_bin) {
        const int d = std::abs(detected.bin - c.bin);
        return -static_cast<double>(std::min(d, task.bins - d));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - c.vec[i];
        acc += d * d;
    }
    return -std::sqrt(acc);
}

double quality_proxy(const ToyTask& task, const std::vector<double>& x) {
    double norm = 0.0;
    for (double v : x) norm += v * v;
    return -std::abs(std::sqrt(norm) - task.radius);
}

CpoCuration curate_cpo(const ToyTask& task, const DenoiserParams& generator,
                       const NoiseSchedule& sched, const std::vector<Example>& dataset,
                       const SamplerConfig& sampler, std::uint64_t seed, int workers) {
    if (dataset.empty()) throw std::invalid_argument("curate_cpo: empty dataset");
    Rng root(seed);

    struct Slot {
        CpoTriplet triplet;
        enum { kept, equal, nonfinite } status = equal;
    };
    std::vector<Slot> slots(dataset.size());

    parallel_for(dataset.size(), workers, [&](std::size_t i) {
        Rng rng = root.derive("curate/cpo/item/" + std::to_string(i));
        const Example& src = dataset[i];
        const auto sample = ancestral_sample(generator, sched, src.c, sampler, rng);
        Slot& s = slots[i];
        if (!all_finite(sample)) {
            s.status = Slot::nonfinite;
            return;
        }
        const Condition c_l = detect_condition(task, sample);
        if (c_l == src.c) {
            s.status = Slot::equal;
            return;
        }
        s.triplet = CpoTriplet{src.x0, src.c, c_l};
        s.status = Slot::kept;
    });

    CpoCuration out;
    out.generation_calls = dataset.size();
    for (auto& s : slots) {
        switch (s.status) {
            case Slot::kept: out.triplets.push_back(std::move(s.triplet)); break;
            case Slot::equal: out.filtered_equal++; break;
            case Slot::nonfinite: out.skipped_nonfinite++; break;
        }
    }
    return out;
}

DpoCuration curate_dpo(const ToyTask& task, const DenoiserParams& generator,
                       const NoiseSchedule& sched, const std::vector<Example>& dataset,
                       int n_samples, double quality_delta, const SamplerConfig& sampler,
                       std::uint64_t seed, int workers) {
    if (dataset.empty()) throw std::invalid_argument("curate_dpo: empty dataset");
    if (n_samples < 2) throw std::invalid_argument("curate_dpo: n_samples must be >= 2");
    if (quality_delta < 0.0) throw std::invalid_argument("curate_dpo: delta must be >= 0");
    Rng root(seed);

    struct Slot {
        DpoPair pair;
        enum { kept, tied, filtered, nonfinite } status = tied;
    };
    std::vector<Slot> slots(dataset.size());

    parallel_for(dataset.size(), workers, [&](std::size_t i) {
        Rng rng = root.derive("curate/dpo/item/" + std::to_string(i));
        const Example& src = dataset[i];
        std::vector<std::vector<double>> samples;
        samples.reserve(static_cast<std::size_t>(n_samples));
        bool finite = true;
        for (int k = 0; k < n_samples; ++k) {
            samples.push_back(ancestral_sample(generator, sched, src.c, sampler, rng));
            finite = finite && all_finite(samples.back());
        }
        Slot& s = slots[i];
        if (!finite) {
            s.status = Slot::nonfinite;
            return;
        }
        std::size_t best = 0, worst = 0;
        std::vector<double> scores(samples.size());
        for (std::size_t k = 0; k < samples.size(); ++k) {
            scores[k] = controllability_score(task, samples[k], src.c);
            if (scores[k] > scores[best]) best = k;
            if (scores[k] < scores[worst]) worst = k;
        }
        if (scores[best] == scores[worst]) {
            s.status = Slot::tied;
            return;
        }
        DpoPair pair;
        pair.x0_w = samples[best];
        pair.x0_l = samples[worst];
        pair.c = src.c;
        pair.score_w = scores[best];
        pair.score_l = scores[worst];
        pair.quality_w = quality_proxy(task, pair.x0_w);
        pair.quality_l = quality_proxy(task, pair.x0_l);
        if (pair.quality_w < pair.quality_l + quality_delta) {
            s.status = Slot::filtered;
            return;
        }
        s.pair = std::move(pair);
        s.status = Slot::kept;
    });

    DpoCuration out;
    out.generation_calls = dataset.size() * static_cast<std::size_t>(n_samples);
    for (auto& s : slots) {
        switch (s.status) {
            case Slot::kept: out.pairs.push_back(std::move(s.pair)); break;
            case Slot::tied: out.skipped_tied++; break;
            case Slot::filtered: out.filtered_quality++; break;
            case Slot::nonfinite: out.skipped_nonfinite++; break;
        }
    }
    return out;
}

double order_stat_probability(int n, std::size_t trials, OrderStatDistribution dist,
                              std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("order_stat_probability: n must be >= 2");
    if (trials < 10000) {
        throw std::invalid_argument("order_stat_probability: need at least 10^4 trials");
    }
    Rng rng(seed);
    auto draw = [&]() {
        return dist == OrderStatDistribution::uniform ? rng.uniform() : rng.normal();
    };
    std::size_t hits = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        double lo = draw(), hi = lo;
        for (int k = 1; k < n; ++k) {
            const double s = draw();
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
        const double fresh = draw();
        if (lo < fresh && fresh < hi) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(trials);
}

double storage_compute_report(CurationPipeline pipeline, bool include_original) {
    constexpr double kImage = 1.0;
    constexpr double kCondition = 1.0 / 3.0;
    if (pipeline == CurationPipeline::cpo) {
        return kImage + 2.0 * kCondition;  // (x0, c_w, c_l)
    }
    double units = 2.0 * kImage + 2.0 * kCondition;  // (x0_w, x0_l) with conditions
    if (include_original) units += kImage;
    return units;
}

std::string storage_display(double units) {
    const double truncated = std::floor(units * 100.0) / 100.0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", truncated);
    return buf;
}

// ---- dataset files ----------------------------------------------------------

namespace {

constexpr int kSchemaVersion = 1;

void write_values(std::ostream& os, const std::vector<double>& v) {
    char buf[64];
    for (double x : v) {
        std::snprintf(buf, sizeof(buf), " %.17g", x);
        os << buf;
    }
}

void write_condition(std::ostream& os, const Condition& c) {
    if (c.kind == ConditionKind::discrete_bin) {
        os << " discrete " << c.bin;
    } else {
        os << " continuous " << c.vec.size();
        write_values(os, c.vec);
    }
}

std::vector<double> read_values(std::istringstream& is, std::size_t n, const char* what) {
    std::vector<double> v(n);
    for (auto& x : v) {
        if (!(is >> x)) throw std::runtime_error(std::string("dataset: truncated ") + what);
    }
    return v;
}

Condition read_condition(std::istringstream& is) {
    std::string kind;
    if (!(is >> kind)) throw std::runtime_error("dataset: missing condition kind");
    if (kind == "discrete") {
        int bin;
        if (!(is >> bin)) throw std::runtime_error("dataset: missing condition index");
        return Condition::discrete(bin);
    }
    if (kind == "continuous") {
        std::size_t n;
        if (!(is >> n)) throw std::runtime_error("dataset: missing condition length");
        return Condition::continuous(read_values(is, n, "condition"));
    }
    throw std::runtime_error("dataset: unknown condition kind '" + kind + "'");
}

std::istringstream open_record(const std::string& line, const char* tag) {
    std::istringstream is(line);
    int version;
    std::string record_tag;
    if (!(is >> version >> record_tag)) throw std::runtime_error("dataset: malformed line");
    if (version != kSchemaVersion) {
        throw std::runtime_error("dataset: schema version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kSchemaVersion) + ")");
    }
    if (record_tag != tag) {
        throw std::runtime_error("dataset: record type '" + record_tag + "', expected '" +
                                 std::string(tag) + "'");
    }
    return is;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("dataset: cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace

void save_cpo_dataset(const std::string& path, const std::vector<CpoTriplet>& triplets) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("dataset: cannot open " + path + " for writing");
    for (const auto& t : triplets) {
        out << kSchemaVersion << " cpo " << t.x0.size();
        write_values(out, t.x0);
        write_condition(out, t.c_w);
        write_condition(out, t.c_l);
        out << "\n";
    }
}

std::vector<CpoTriplet> load_cpo_dataset(const std::string& path) {
    std::vector<CpoTriplet> out;
    for (const auto& line : read_lines(path)) {
        auto is = open_record(line, "cpo");
        std::size_t d;
        if (!(is >> d)) throw std::runtime_error("dataset: missing dimension");
        CpoTriplet t;
        t.x0 = read_values(is, d, "x0");
        t.c_w = read_condition(is);
        t.c_l = read_condition(is);
        out.push_back(std::move(t));
    }
    return out;
}

void save_dpo_dataset(const std::string& path, const std::vector<DpoPair>& pairs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("dataset: cannot open " + path + " for writing");
    for (const auto& p : pairs) {
        out << kSchemaVersion << " dpo " << p.x0_w.size();
        write_values(out, p.x0_w);
        write_values(out, p.x0_l);
        write_condition(out, p.c);
        write_values(out, {p.score_w, p.score_l, p.quality_w, p.quality_l});
        out << "\n";
    }
}

std::vector<DpoPair> load_dpo_dataset(const std::string& path) {
    std::vector<DpoPair> out;
    for (const auto& line : read_lines(path)) {
        auto is = open_record(line, "dpo");
        std::size_t d;
        if (!(is >> d)) throw std::runtime_error("dataset: missing dimension");
        DpoPair p;
        p.x0_w = read_values(is, d, "x0_w");
        p.x0_l = read_values(is, d, "x0_l");
        p.c = read_condition(is);
        const auto s = read_values(is, 4, "scores");
        p.score_w = s[0];
        p.score_l = s[1];
        p.quality_w = s[2];
        p.quality_l = s[3];
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace prefdiff
