// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace smoothfat {

/// Worker count: SMOOTHFAT_THREADS if set (>= 1), otherwise the hardware concurrency.
std::size_t thread_budget();

/// Runs task(i) for i in [0, count) on up to `threads` workers. Tasks must write to
/// disjoint outputs; callers reduce results in index order afterwards.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task);

}  // namespace smoothfat
