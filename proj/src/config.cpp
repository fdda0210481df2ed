#include "prefdiff/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace prefdiff {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("config: key '" + key + "' has invalid number '" + s + "'");
    }
    return v;
}

long long parse_int(const std::string& key, const std::string& s) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("config: key '" + key + "' has invalid integer '" + s + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw std::runtime_error("config: key '" + key + "' has invalid boolean '" + s +
                             "' (expected true or false)");
}

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::vector<Field> field_table() {
    std::vector<Field> f;
    auto d = [&f](const char* key, double RunConfig::* member) {
        f.push_back({key,
                     [key, member](RunConfig& c, const std::string& s) {
                         c.*member = parse_double(key, s);
                     },
                     [member](const RunConfig& c) { return format_double(c.*member); }});
    };
    auto i = [&f](const char* key, int RunConfig::* member) {
        f.push_back({key,
                     [key, member](RunConfig& c, const std::string& s) {
                         c.*member = static_cast<int>(parse_int(key, s));
                     },
                     [member](const RunConfig& c) { return std::to_string(c.*member); }});
    };
    auto s = [&f](const char* key, std::string RunConfig::* member) {
        f.push_back({key,
                     [member](RunConfig& c, const std::string& v) { c.*member = v; },
                     [member](const RunConfig& c) { return c.*member; }});
    };

    f.push_back({"config.version",
                 [](RunConfig&, const std::string& v) {
                     if (v != "1") {
                         throw std::runtime_error(
                             "config: schema version " + v +
                             " is not supported (expected 1); migrate the file");
                     }
                 },
                 [](const RunConfig&) { return std::string("1"); }});

    f.push_back({"run.seed",
                 [](RunConfig& c, const std::string& v) {
                     c.seed = static_cast<std::uint64_t>(parse_int("run.seed", v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    s("run.out", &RunConfig::out_dir);
    f.push_back({"run.deterministic",
                 [](RunConfig& c, const std::string& v) {
                     c.deterministic = parse_bool("run.deterministic", v);
                 },
                 [](const RunConfig& c) {
                     return std::string(c.deterministic ? "true" : "false");
                 }});
    i("run.workers", &RunConfig::workers);

    s("task.kind", &RunConfig::task_kind);
    i("task.bins", &RunConfig::task_bins);
    d("task.radius", &RunConfig::task_radius);
    d("task.radial_noise", &RunConfig::task_radial_noise);
    d("task.grid_step", &RunConfig::task_grid_step);
    d("task.center_noise", &RunConfig::task_center_noise);

    i("schedule.steps", &RunConfig::schedule_steps);
    d("schedule.beta_start", &RunConfig::schedule_beta_start);
    d("schedule.beta_end", &RunConfig::schedule_beta_end);
    s("schedule.posterior_form", &RunConfig::schedule_posterior_form);

    i("arch.hidden_width", &RunConfig::arch_hidden_width);
    i("arch.hidden_depth", &RunConfig::arch_hidden_depth);
    i("arch.t_embed_dim", &RunConfig::arch_t_embed_dim);
    i("arch.cond_embed_dim", &RunConfig::arch_cond_embed_dim);

    d("loss.alpha", &RunConfig::loss_alpha);
    d("loss.omega", &RunConfig::loss_omega);
    d("loss.margin", &RunConfig::loss_margin);
    d("loss.reg_lambda", &RunConfig::loss_reg_lambda);

    i("train.steps", &RunConfig::train_steps);
    i("train.batch", &RunConfig::train_batch);
    d("train.lr", &RunConfig::train_lr);
    d("train.weight_decay", &RunConfig::train_weight_decay);
    d("train.cond_dropout", &RunConfig::train_cond_dropout);
    i("train.dataset_size", &RunConfig::train_dataset_size);
    i("train.checkpoint_every", &RunConfig::train_checkpoint_every);

    i("finetune.steps", &RunConfig::finetune_steps);
    i("finetune.batch", &RunConfig::finetune_batch);
    d("finetune.lr", &RunConfig::finetune_lr);
    d("finetune.weight_decay", &RunConfig::finetune_weight_decay);
    i("finetune.checkpoint_every", &RunConfig::finetune_checkpoint_every);

    i("curate.samples_per_example", &RunConfig::curate_samples_per_example);
    d("curate.quality_delta", &RunConfig::curate_quality_delta);
    d("curate.guidance", &RunConfig::curate_guidance);
    i("curate.source_size", &RunConfig::curate_source_size);

    i("eval.samples", &RunConfig::eval_samples);
    d("eval.guidance", &RunConfig::eval_guidance);

    i("variance.draws", &RunConfig::variance_draws);
    f.push_back({"variance.t_fixed",
                 [](RunConfig& c, const std::string& v) {
                     std::vector<int> ts;
                     std::stringstream ss(v);
                     std::string part;
                     while (std::getline(ss, part, ',')) {
                         ts.push_back(static_cast<int>(parse_int("variance.t_fixed", part)));
                     }
                     if (ts.empty()) {
                         throw std::runtime_error("config: variance.t_fixed is empty");
                     }
                     c.variance_t_fixed = std::move(ts);
                 },
                 [](const RunConfig& c) {
                     std::string out;
                     for (std::size_t k = 0; k < c.variance_t_fixed.size(); ++k) {
                         if (k) out += ",";
                         out += std::to_string(c.variance_t_fixed[k]);
                     }
                     return out;
                 }});
    i("variance.seeds", &RunConfig::variance_seeds);
    i("variance.source_size", &RunConfig::variance_source_size);

    std::sort(f.begin(), f.end(),
              [](const Field& a, const Field& b) { return std::string(a.key) < b.key; });
    return f;
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = field_table();
    return table;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     " has no '='");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const auto& table = fields();
        auto it = std::find_if(table.begin(), table.end(),
                               [&key](const Field& f) { return key == f.key; });
        if (it == table.end()) {
            throw std::runtime_error("config: unknown key '" + key + "'");
        }
        it->set(cfg, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_to_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key;
        out += "=";
        out += f.get(cfg);
        out += "\n";
    }
    return out;
}

void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("config: cannot open " + path + " for writing");
    out << config_to_text(cfg);
}

// ---- materialization ---------------------------------------------------------

void RunConfig::validate() const {
    if (task_kind != "discrete" && task_kind != "continuous") {
        throw std::runtime_error("config: task.kind must be discrete or continuous, got '" +
                                 task_kind + "'");
    }
    if (schedule_posterior_form != "standard" && schedule_posterior_form != "paper") {
        throw std::runtime_error(
            "config: schedule.posterior_form must be standard or paper, got '" +
            schedule_posterior_form + "'");
    }
    if (task_bins < 1) throw std::runtime_error("config: task.bins must be >= 1");
    if (schedule_steps < 1) throw std::runtime_error("config: schedule.steps must be >= 1");
}

ToyTask RunConfig::task() const {
    ToyTask t = task_kind == "discrete" ? ToyTask::discrete(task_bins)
                                        : ToyTask::continuous();
    t.radius = task_radius;
    t.radial_noise = task_radial_noise;
    t.grid_step = task_grid_step;
    t.center_noise = task_center_noise;
    if (task_kind == "continuous") t.bins = task_bins;
    return t;
}

NoiseSchedule RunConfig::schedule() const {
    return linear_schedule(schedule_steps, schedule_beta_start, schedule_beta_end);
}

PosteriorForm RunConfig::posterior_form() const {
    return schedule_posterior_form == "paper" ? PosteriorForm::paper_printed
                                              : PosteriorForm::standard;
}

DenoiserArch RunConfig::arch() const {
    DenoiserArch a = task().default_arch();
    a.hidden_width = arch_hidden_width;
    a.hidden_depth = arch_hidden_depth;
    a.t_embed_dim = arch_t_embed_dim;
    a.cond_embed_dim = arch_cond_embed_dim;
    return a;
}

PreferenceConfig RunConfig::pref() const {
    return PreferenceConfig::from_alpha(loss_alpha, schedule_steps, loss_omega, loss_margin,
                                        loss_reg_lambda);
}

int RunConfig::resolved_workers() const {
    return deterministic ? 1 : resolve_workers(workers);
}

TrainConfig RunConfig::train_config() const {
    TrainConfig c;
    c.opt.lr = train_lr;
    c.opt.weight_decay = train_weight_decay;
    c.steps = train_steps;
    c.batch_size = train_batch;
    c.dataset_size = static_cast<std::size_t>(train_dataset_size);
    c.cond_dropout = train_cond_dropout;
    c.seed = seed;
    c.pref = pref();
    c.sampler.guidance = curate_guidance;
    c.sampler.posterior_form = posterior_form();
    c.workers = resolved_workers();
    return c;
}

TrainConfig RunConfig::finetune_config() const {
    TrainConfig c = train_config();
    c.opt.lr = finetune_lr;
    c.opt.weight_decay = finetune_weight_decay;
    c.steps = finetune_steps;
    c.batch_size = finetune_batch;
    c.cond_dropout = 0.0;
    return c;
}

}  // namespace prefdiff
