#ifndef WSED_PARALLEL_HPP
#define WSED_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace wsed {

/// Process-wide worker count used by parallel_for. 0 selects the hardware
/// concurrency. Training configs route their `threads` setting here.
void set_max_threads(int n);
int max_threads();

/// Splits [0, n) into contiguous ranges and runs `body(begin, end)` on each,
/// using up to max_threads() workers. Results are bit-identical for any
/// worker count as long as each item writes only its own state; reductions
/// must be performed by the caller in index order afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

} // namespace wsed

#endif
