#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "secvit/attention.hpp"
#include "secvit/flops.hpp"
#include "secvit/random.hpp"

namespace secvit {

inline std::uint64_t now_ns() {
    return std::uint64_t(std::chrono::duration_cast<std::chrono::nanoseconds>(
                             std::chrono::steady_clock::now().time_since_epoch())
                             .count());
}

struct BenchRow {
    std::string strategy;  // "full" or "cluster"
    std::size_t L = 0, d = 0, heads = 0, M = 0;
    std::uint64_t core_macs = 0;  // counted score+value multiply-adds, one forward
    std::uint64_t wall_ns_mean = 0, wall_ns_p50 = 0, wall_ns_p95 = 0;
    double speedup = 1.0;  // full wall mean / strategy wall mean
};

struct BenchReport {
    std::size_t L = 0, d = 0, heads = 0;
    int iters = 0;
    int threads = 1;
    std::string dtype;
    std::vector<BenchRow> rows;

    static const char* csv_header() {
        return "strategy,L,d,heads,M,core_macs,wall_ns_mean,wall_ns_p50,wall_ns_p95,speedup";
    }
    void write_csv(std::ostream& os) const {
        os << csv_header() << '\n';
        for (const BenchRow& r : rows)
            os << r.strategy << ',' << r.L << ',' << r.d << ',' << r.heads << ',' << r.M << ','
               << r.core_macs << ',' << r.wall_ns_mean << ',' << r.wall_ns_p50 << ','
               << r.wall_ns_p95 << ',' << r.speedup << '\n';
    }
};

namespace detail {

struct WallStats {
    std::uint64_t mean = 0, p50 = 0, p95 = 0;
};

template <typename F>
WallStats time_iters(F&& fn, int iters, int warmup = 2) {
    for (int i = 0; i < warmup; ++i) fn();
    std::vector<std::uint64_t> samples;
    samples.reserve(std::size_t(iters));
    for (int i = 0; i < iters; ++i) {
        std::uint64_t t0 = now_ns();
        fn();
        samples.push_back(now_ns() - t0);
    }
    std::sort(samples.begin(), samples.end());
    WallStats s;
    std::uint64_t sum = 0;
    for (auto v : samples) sum += v;
    s.mean = sum / samples.size();
    s.p50 = samples[samples.size() / 2];
    s.p95 = samples[std::min(samples.size() - 1, samples.size() * 95 / 100)];
    return s;
}

}  // namespace detail

// Identical inputs for every strategy; FLOPs counted on one untimed forward,
// wall time over `iters` warm iterations.
template <typename T>
BenchReport run_attention_bench(std::size_t L, std::size_t d, std::size_t heads,
                                const std::vector<std::size_t>& cluster_counts, int iters,
                                std::uint64_t seed) {
    if (iters < 1) throw std::invalid_argument("bench: need at least one iteration");
    BenchReport report;
    report.L = L;
    report.d = d;
    report.heads = heads;
    report.iters = iters;
    report.threads = threads();
    report.dtype = sizeof(T) == 4 ? "f32" : "f64";

    Rng rng(seed);
    Tensor<T> x = rng.tensor_uniform<T>({L, d}, -1, 1);
    Rng prng(seed ^ 0x5ec5ec5ecull);
    AttentionParams<T> params = init_attention<T>(prng, d, heads);

    auto count_core = [&](auto&& fn) {
        flops::Counter counter;
        flops::set_counter(&counter);
        fn();
        flops::set_counter(nullptr);
        return counter.core();
    };

    BenchRow full;
    full.strategy = "full";
    full.L = L;
    full.d = d;
    full.heads = heads;
    full.M = 1;
    full.core_macs = count_core([&] { full_attention_forward(x, params); });
    auto fw = detail::time_iters([&] { full_attention_forward(x, params); }, iters);
    full.wall_ns_mean = fw.mean;
    full.wall_ns_p50 = fw.p50;
    full.wall_ns_p95 = fw.p95;
    full.speedup = 1.0;
    report.rows.push_back(full);

    for (std::size_t M : cluster_counts) {
        BenchRow row;
        row.strategy = "cluster";
        row.L = L;
        row.d = d;
        row.heads = heads;
        row.M = M;
        row.core_macs = count_core([&] { cluster_attention_forward(x, params, M); });
        auto w = detail::time_iters([&] { cluster_attention_forward(x, params, M); }, iters);
        row.wall_ns_mean = w.mean;
        row.wall_ns_p50 = w.p50;
        row.wall_ns_p95 = w.p95;
        row.speedup = double(full.wall_ns_mean) / double(std::max<std::uint64_t>(w.mean, 1));
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace secvit
