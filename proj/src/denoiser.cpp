#include "prefdiff/denoiser.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace prefdiff {

namespace {

constexpr char kMagic[8] = {'P', 'F', 'D', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::vector<double> uniform_fan_in(Rng& rng, std::size_t n, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return v;
}

void validate_arch(const DenoiserArch& a) {
    if (a.data_dim <= 0 || a.hidden_width <= 0 || a.hidden_depth <= 0 ||
        a.cond_embed_dim <= 0 || a.t_embed_dim <= 0 || a.t_embed_dim % 2 != 0) {
        throw std::invalid_argument("denoiser: invalid architecture dimensions");
    }
    if (a.cond_kind == ConditionKind::discrete_bin && a.cond_bins <= 0) {
        throw std::invalid_argument("denoiser: discrete condition needs cond_bins > 0");
    }
    if (a.cond_kind == ConditionKind::continuous_vector && a.cond_dim <= 0) {
        throw std::invalid_argument("denoiser: continuous condition needs cond_dim > 0");
    }
}

void validate_condition(const DenoiserArch& arch, const Condition& c, bool use_null) {
    if (use_null) return;
    if (c.kind != arch.cond_kind) {
        throw std::invalid_argument("denoiser: condition kind does not match the model");
    }
    if (c.kind == ConditionKind::discrete_bin) {
        if (c.bin < 0 || c.bin >= arch.cond_bins) {
            throw std::out_of_range("denoiser: condition index " + std::to_string(c.bin) +
                                    " outside [0, " + std::to_string(arch.cond_bins) + ")");
        }
    } else {
        if (static_cast<int>(c.vec.size()) != arch.cond_dim) {
            throw std::invalid_argument("denoiser: condition vector has length " +
                                        std::to_string(c.vec.size()) + ", expected " +
                                        std::to_string(arch.cond_dim));
        }
    }
}

}  // namespace

std::vector<Tensor> DenoiserParams::all_params() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < layer_w.size(); ++i) {
        out.push_back(layer_w[i]);
        out.push_back(layer_b[i]);
    }
    out.push_back(cond_table);
    if (arch.cond_kind == ConditionKind::continuous_vector) {
        out.push_back(cond_proj_w);
        out.push_back(cond_proj_b);
    }
    return out;
}

std::size_t DenoiserParams::weight_count() const {
    std::size_t n = 0;
    for (const auto& t : all_params()) n += t.numel();
    return n;
}

DenoiserParams init_params(const DenoiserArch& arch, std::uint64_t seed) {
    validate_arch(arch);
    DenoiserParams p;
    p.arch = arch;
    p.seed = seed;
    Rng root(seed);

    const auto w = static_cast<std::size_t>(arch.hidden_width);
    const auto layers = static_cast<std::size_t>(arch.hidden_depth);
    std::size_t in = static_cast<std::size_t>(arch.input_dim());
    for (std::size_t i = 0; i <= layers; ++i) {
        const std::size_t out = i == layers ? static_cast<std::size_t>(arch.data_dim) : w;
        Rng rw = root.derive("init/w" + std::to_string(i));
        p.layer_w.push_back(Tensor::param({out, in}, uniform_fan_in(rw, out * in, in)));
        p.layer_b.push_back(Tensor::param({out}, std::vector<double>(out, 0.0)));
        in = out;
    }

    // Condition inputs enter through zero-initialized embeddings, so the
    // condition pathway starts silent and grows only where training needs it
    // (the same idea as zero-initialized condition injection in conditional
    // diffusion architectures).
    const auto embed = static_cast<std::size_t>(arch.cond_embed_dim);
    const std::size_t rows = arch.cond_kind == ConditionKind::discrete_bin
                                 ? static_cast<std::size_t>(arch.cond_bins) + 1
                                 : 1;
    p.cond_table = Tensor::param({rows, embed}, std::vector<double>(rows * embed, 0.0));
    if (arch.cond_kind == ConditionKind::continuous_vector) {
        const auto cd = static_cast<std::size_t>(arch.cond_dim);
        p.cond_proj_w = Tensor::param({embed, cd}, std::vector<double>(embed * cd, 0.0));
        p.cond_proj_b = Tensor::param({embed}, std::vector<double>(embed, 0.0));
    }
    return p;
}

namespace {

DenoiserParams deep_copy(const DenoiserParams& p, bool trainable) {
    DenoiserParams out;
    out.arch = p.arch;
    out.seed = p.seed;
    out.frozen = !trainable;
    auto copy = [trainable](const Tensor& t) {
        return trainable ? Tensor::param(t.shape(), t.value())
                         : Tensor::from(t.shape(), t.value());
    };
    for (const auto& t : p.layer_w) out.layer_w.push_back(copy(t));
    for (const auto& t : p.layer_b) out.layer_b.push_back(copy(t));
    out.cond_table = copy(p.cond_table);
    if (p.arch.cond_kind == ConditionKind::continuous_vector) {
        out.cond_proj_w = copy(p.cond_proj_w);
        out.cond_proj_b = copy(p.cond_proj_b);
    }
    return out;
}

}  // namespace

DenoiserParams clone_as_reference(const DenoiserParams& p) { return deep_copy(p, false); }
DenoiserParams clone_trainable(const DenoiserParams& p) { return deep_copy(p, true); }

std::vector<double> timestep_features(int t, int dim) {
    // Sinusoidal basis with geometric frequencies spanning ~[1/10000, 1].
    const int half = dim / 2;
    std::vector<double> f(static_cast<std::size_t>(dim));
    for (int k = 0; k < half; ++k) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(k) / std::max(1, half - 1));
        f[2 * k] = std::sin(t * freq);
        f[2 * k + 1] = std::cos(t * freq);
    }
    return f;
}

Tensor predict_eps(const DenoiserParams& p, const Tensor& x_t, int t,
                   const Condition& c, bool use_null) {
    if (static_cast<int>(x_t.numel()) != p.arch.data_dim || x_t.shape().size() != 1) {
        throw std::invalid_argument("predict_eps: x_t shape " + shape_str(x_t.shape()) +
                                    " does not match data_dim " +
                                    std::to_string(p.arch.data_dim));
    }
    if (t < 1) throw std::out_of_range("predict_eps: t must be >= 1");
    validate_condition(p.arch, c, use_null);

    Tensor emb;
    if (p.arch.cond_kind == ConditionKind::discrete_bin) {
        const std::size_t idx = use_null ? static_cast<std::size_t>(p.arch.cond_bins)
                                         : static_cast<std::size_t>(c.bin);
        emb = row(p.cond_table, idx);
    } else if (use_null) {
        emb = row(p.cond_table, 0);
    } else {
        emb = add(matmul(p.cond_proj_w, Tensor::from({c.vec.size()}, c.vec)), p.cond_proj_b);
    }

    Tensor tf = Tensor::from({static_cast<std::size_t>(p.arch.t_embed_dim)},
                             timestep_features(t, p.arch.t_embed_dim));
    std::vector<Tensor> parts = {x_t, tf, emb};
    Tensor h = concat(parts);
    for (std::size_t i = 0; i + 1 < p.layer_w.size(); ++i) {
        h = silu(add(matmul(p.layer_w[i], h), p.layer_b[i]));
    }
    return add(matmul(p.layer_w.back(), h), p.layer_b.back());
}

std::vector<double> predict_eps_values(const DenoiserParams& p,
                                       const std::vector<double>& x_t, int t,
                                       const Condition& c, bool use_null) {
    if (static_cast<int>(x_t.size()) != p.arch.data_dim) {
        throw std::invalid_argument("predict_eps: x_t has length " +
                                    std::to_string(x_t.size()) + ", expected " +
                                    std::to_string(p.arch.data_dim));
    }
    if (t < 1) throw std::out_of_range("predict_eps: t must be >= 1");
    validate_condition(p.arch, c, use_null);

    const auto embed = static_cast<std::size_t>(p.arch.cond_embed_dim);
    std::vector<double> emb(embed);
    if (p.arch.cond_kind == ConditionKind::discrete_bin) {
        const std::size_t idx = use_null ? static_cast<std::size_t>(p.arch.cond_bins)
                                         : static_cast<std::size_t>(c.bin);
        const auto& tab = p.cond_table.value();
        std::memcpy(emb.data(), tab.data() + idx * embed, embed * sizeof(double));
    } else if (use_null) {
        const auto& tab = p.cond_table.value();
        std::memcpy(emb.data(), tab.data(), embed * sizeof(double));
    } else {
        const auto& w = p.cond_proj_w.value();
        const auto& b = p.cond_proj_b.value();
        const auto cd = static_cast<std::size_t>(p.arch.cond_dim);
        for (std::size_t i = 0; i < embed; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cd; ++j) acc += w[i * cd + j] * c.vec[j];
            emb[i] = acc + b[i];
        }
    }

    std::vector<double> h;
    h.reserve(static_cast<std::size_t>(p.arch.input_dim()));
    h.insert(h.end(), x_t.begin(), x_t.end());
    const auto tf = timestep_features(t, p.arch.t_embed_dim);
    h.insert(h.end(), tf.begin(), tf.end());
    h.insert(h.end(), emb.begin(), emb.end());

    std::vector<double> next;
    for (std::size_t li = 0; li < p.layer_w.size(); ++li) {
        const auto& w = p.layer_w[li].value();
        const auto& b = p.layer_b[li].value();
        const std::size_t out = p.layer_w[li].shape()[0];
        const std::size_t in = p.layer_w[li].shape()[1];
        next.assign(out, 0.0);
        for (std::size_t i = 0; i < out; ++i) {
            double acc = 0.0;
            const double* wrow = w.data() + i * in;
            for (std::size_t j = 0; j < in; ++j) acc += wrow[j] * h[j];
            acc += b[i];
            if (li + 1 < p.layer_w.size()) {
                const double s = acc >= 0.0 ? 1.0 / (1.0 + std::exp(-acc))
                                            : std::exp(acc) / (1.0 + std::exp(acc));
                acc = acc * s;
            }
            next[i] = acc;
        }
        h.swap(next);
    }
    return h;
}

Tensor guided_eps(const DenoiserParams& p, const Tensor& x_t, int t,
                  const Condition& c, double w) {
    if (w < 0.0) throw std::invalid_argument("guided_eps: scale must be >= 0");
    Tensor uncond = predict_eps(p, x_t, t, c, /*use_null=*/true);
    Tensor cond = predict_eps(p, x_t, t, c, /*use_null=*/false);
    return add(uncond, scale(sub(cond, uncond), w));
}

std::vector<double> guided_eps_values(const DenoiserParams& p,
                                      const std::vector<double>& x_t, int t,
                                      const Condition& c, double w) {
    if (w < 0.0) throw std::invalid_argument("guided_eps: scale must be >= 0");
    auto uncond = predict_eps_values(p, x_t, t, c, /*use_null=*/true);
    auto cond = predict_eps_values(p, x_t, t, c, /*use_null=*/false);
    for (std::size_t i = 0; i < uncond.size(); ++i) {
        uncond[i] = uncond[i] + w * (cond[i] - uncond[i]);
    }
    return uncond;
}

// ---- checkpoint I/O --------------------------------------------------------
//
// Layout (little-endian):
//   bytes 0..7   magic "PFDFCKPT"
//   u32          format version (1)
//   u32          condition kind (0 discrete, 1 continuous)
//   i32 x 7      data_dim, cond_bins, cond_dim, cond_embed_dim,
//                t_embed_dim, hidden_width, hidden_depth
//   u64          init seed
//   u64          weight count
//   f64 x count  weights in all_params() order, each tensor row-major

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& buf, double d) { put_u64(buf, std::bit_cast<std::uint64_t>(d)); }

struct Reader {
    explicit Reader(std::string data) : buf(std::move(data)) {}
    std::string buf;
    std::size_t pos = 0;

    void need(std::size_t n) {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace

void save_checkpoint(const std::string& path, const DenoiserParams& p) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u32(buf, kVersion);
    put_u32(buf, p.arch.cond_kind == ConditionKind::discrete_bin ? 0u : 1u);
    for (int v : {p.arch.data_dim, p.arch.cond_bins, p.arch.cond_dim,
                  p.arch.cond_embed_dim, p.arch.t_embed_dim, p.arch.hidden_width,
                  p.arch.hidden_depth}) {
        put_u32(buf, static_cast<std::uint32_t>(v));
    }
    put_u64(buf, p.seed);
    put_u64(buf, p.weight_count());
    for (const auto& t : p.all_params()) {
        for (double d : t.value()) put_f64(buf, d);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

DenoiserParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(data));

    r.need(sizeof(kMagic));
    if (std::memcmp(r.buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    r.pos = sizeof(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: format version " + std::to_string(version) +
                                 " is not supported (expected " + std::to_string(kVersion) +
                                 "); no migration path");
    }
    DenoiserArch arch;
    arch.cond_kind = r.u32() == 0 ? ConditionKind::discrete_bin
                                  : ConditionKind::continuous_vector;
    arch.data_dim = static_cast<int>(r.u32());
    arch.cond_bins = static_cast<int>(r.u32());
    arch.cond_dim = static_cast<int>(r.u32());
    arch.cond_embed_dim = static_cast<int>(r.u32());
    arch.t_embed_dim = static_cast<int>(r.u32());
    arch.hidden_width = static_cast<int>(r.u32());
    arch.hidden_depth = static_cast<int>(r.u32());
    const std::uint64_t seed = r.u64();
    const std::uint64_t count = r.u64();

    DenoiserParams p = init_params(arch, seed);
    if (count != p.weight_count()) {
        throw std::runtime_error("checkpoint: weight count mismatch in " + path);
    }
    for (auto& t : p.all_params()) {
        auto& v = t.mutable_value();
        for (auto& d : v) d = r.f64();
    }
    return p;
}

std::uint64_t weight_hash(const DenoiserParams& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : p.all_params()) {
        for (double d : t.value()) {
            const auto bits = std::bit_cast<std::uint64_t>(d);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

}  // namespace prefdiff
