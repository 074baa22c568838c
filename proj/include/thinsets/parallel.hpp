#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <random>
#include <thread>
#include <vector>

namespace thinsets {

/// Worker count used when the caller passes 0.
[[nodiscard]] inline std::size_t default_workers() noexcept {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Half-open slice [begin, end) of `total` items owned by worker `w` out of `workers`.
struct Slice {
    std::size_t begin;
    std::size_t end;
};

[[nodiscard]] inline Slice worker_slice(std::size_t total, std::size_t workers, std::size_t w) noexcept {
    return {total * w / workers, total * (w + 1) / workers};
}

/// Runs fn(w) for w in [0, workers) on separate threads and rethrows the first
/// exception in worker order. Results must be written to per-worker slots.
template <class Fn>
void run_workers(std::size_t workers, Fn&& fn) {
    if (workers <= 1) {
        fn(std::size_t{0});
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                fn(w);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Independent stream for worker `w` derived from the run seed; `stream` separates
/// sub-experiments (e.g. one per n) that share a seed.
[[nodiscard]] inline std::mt19937_64 worker_engine(std::uint64_t seed, std::size_t w, std::uint64_t stream = 0) {
    const auto w64 = static_cast<std::uint64_t>(w);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(w64), static_cast<std::uint32_t>(w64 >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

/// Uniform double in [0, 1) from the top 53 bits, identical on every standard library.
[[nodiscard]] inline double uniform01(std::mt19937_64& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Inverse-CDF draw from cumulative weights (last entry 1).
[[nodiscard]] inline std::size_t draw_index(const std::vector<double>& cdf, std::mt19937_64& eng) {
    const double u = uniform01(eng);
    std::size_t lo = 0, hi = cdf.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (u < cdf[mid]) hi = mid;
        else lo = mid + 1;
    }
    return lo;
}

[[nodiscard]] inline std::vector<double> cumulative(const std::vector<double>& w) {
    std::vector<double> cdf(w.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) cdf[i] = acc += w[i];
    // Zero-weight tail entries must never be selected.
    std::size_t last = w.size();
    while (last > 0 && w[last - 1] == 0.0) --last;
    for (std::size_t i = last == 0 ? 0 : last - 1; i < w.size(); ++i) cdf[i] = 1.0;
    return cdf;
}

}  // namespace thinsets
