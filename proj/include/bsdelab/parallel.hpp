#pragma once

#include <cstdint>
#include <vector>

#include <omp.h>

namespace bsdelab {

// Deterministic parallelism: work is cut into fixed-size blocks whose count
// depends only on the problem size, never on the thread count. Reductions
// combine per-block partials sequentially, so results are bit-stable.
namespace par {

constexpr std::int64_t kBlock = 8192;

inline int block_count(std::int64_t n) {
    return static_cast<int>((n + kBlock - 1) / kBlock);
}

// fn(blockIndex, begin, end) must write only to state owned by its block.
template <typename Fn>
void for_blocks(std::int64_t n, Fn&& fn) {
    const int nb = block_count(n);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < nb; ++b) {
        const std::int64_t lo = static_cast<std::int64_t>(b) * kBlock;
        const std::int64_t hi = lo + kBlock < n ? lo + kBlock : n;
        fn(b, lo, hi);
    }
}

// Sum of fn(i) over i in [0, n): per-block partials added in block order.
template <typename Fn>
double sum(std::int64_t n, Fn&& fn) {
    const int nb = block_count(n);
    std::vector<double> partial(static_cast<std::size_t>(nb), 0.0);
    for_blocks(n, [&](int b, std::int64_t lo, std::int64_t hi) {
        double s = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) s += fn(i);
        partial[static_cast<std::size_t>(b)] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

// Max of fn(i) over i in [0, n); n >= 1.
template <typename Fn>
double max(std::int64_t n, Fn&& fn) {
    const int nb = block_count(n);
    std::vector<double> partial(static_cast<std::size_t>(nb));
    for_blocks(n, [&](int b, std::int64_t lo, std::int64_t hi) {
        double m = fn(lo);
        for (std::int64_t i = lo + 1; i < hi; ++i) {
            const double v = fn(i);
            if (v > m) m = v;
        }
        partial[static_cast<std::size_t>(b)] = m;
    });
    double total = partial[0];
    for (double p : partial)
        if (p > total) total = p;
    return total;
}

inline void set_threads(int n) {
    if (n > 0) omp_set_num_threads(n);
}

}  // namespace par
}  // namespace bsdelab
