#include "prefdiff/sampling.hpp"

#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace prefdiff {

std::vector<double> ancestral_sample(const DenoiserParams& p, const NoiseSchedule& sched,
                                     const Condition& c, const SamplerConfig& cfg,
                                     Rng& rng) {
    const auto dim = static_cast<std::size_t>(p.arch.data_dim);
    std::vector<double> x(dim);
    for (auto& v : x) v = rng.normal();

    for (int t = sched.steps; t >= 1; --t) {
        const auto eps_hat = guided_eps_values(p, x, t, c, cfg.guidance);
        const auto coef = posterior_coeffs(sched, t, cfg.posterior_form);
        for (std::size_t i = 0; i < dim; ++i) {
            double v = coef.mean_scale * (x[i] - coef.eps_scale * eps_hat[i]);
            if (coef.noise_scale != 0.0) v += coef.noise_scale * rng.normal();
            x[i] = v;
        }
    }
    return x;
}

int resolve_workers(int hint) {
    if (hint > 0) return hint;
    if (const char* env = std::getenv("PREFDIFF_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body) {
    if (n == 0) return;
    workers = resolve_workers(workers);
    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const auto nthreads = static_cast<std::size_t>(workers) < n
                              ? static_cast<std::size_t>(workers)
                              : n;
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (std::size_t w = 0; w < nthreads; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = w; i < n; i += nthreads) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace prefdiff
