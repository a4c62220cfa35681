#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <vector>

#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>

namespace phenolca::parallel {

// Patients are split into chunks of a fixed size that does not depend on the
// thread count, and partial results are combined in chunk order. Results are
// therefore bit-identical for any degree of parallelism.
inline constexpr std::size_t kChunkSize = 512;

inline std::size_t chunk_count(std::size_t n) { return (n + kChunkSize - 1) / kChunkSize; }

template <class Fn>
void for_each_chunk(std::size_t n, Fn&& fn)
{
    const std::size_t chunks = chunk_count(n);
    if (chunks <= 1) {
        if (n > 0) fn(std::size_t{0}, n, std::size_t{0});
        return;
    }
    tbb::parallel_for(tbb::blocked_range<std::size_t>(0, chunks, 1),
                      [&](const tbb::blocked_range<std::size_t>& r) {
                          for (std::size_t c = r.begin(); c != r.end(); ++c) {
                              const std::size_t begin = c * kChunkSize;
                              const std::size_t end = std::min(n, begin + kChunkSize);
                              fn(begin, end, c);
                          }
                      });
}

/// Sum of chunk_fn(begin, end) over all chunks, reduced in chunk order.
template <class Fn>
double ordered_sum(std::size_t n, Fn&& chunk_fn)
{
    std::vector<double> partial(chunk_count(n), 0.0);
    for_each_chunk(n, [&](std::size_t begin, std::size_t end, std::size_t c) {
        partial[c] = chunk_fn(begin, end);
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

/// Caps the worker threads used by every parallel section while alive.
/// A limit of zero leaves the scheduler default (all available cores).
class ThreadLimit
{
public:
    explicit ThreadLimit(std::size_t max_threads)
    {
        if (max_threads > 0)
            control_ = std::make_unique<tbb::global_control>(
                tbb::global_control::max_allowed_parallelism, max_threads);
    }

private:
    std::unique_ptr<tbb::global_control> control_;
};

} // namespace phenolca::parallel
