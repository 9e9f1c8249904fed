#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace lsq {

// Fixed chunk size for deterministic reductions. Partials are combined in
// chunk order, so results are bit-identical for any thread count.
inline constexpr int64_t kReduceChunk = 8192;

template <class ChunkFn>
double chunked_sum(int64_t n, ChunkFn && fn) {
    if (n <= 0) {
        return 0.0;
    }
    const int64_t nchunks = (n + kReduceChunk - 1) / kReduceChunk;
    std::vector<double> partial(static_cast<size_t>(nchunks), 0.0);
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < nchunks; ++c) {
        const int64_t lo = c * kReduceChunk;
        const int64_t hi = std::min(n, lo + kReduceChunk);
        partial[static_cast<size_t>(c)] = fn(lo, hi);
    }
    double acc = 0.0;
    for (double p : partial) {
        acc += p;
    }
    return acc;
}

} // namespace lsq
