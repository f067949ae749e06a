// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace hippro {

/// Worker budget from HIPPRO_THREADS. Unset falls back to the hardware
/// count capped at 8; 0 or 1 means sequential.
std::size_t thread_budget();

/// Runs fn(i) for i in [0, n). Work items must be independent; callers get
/// determinism by writing into index-addressed slots and reducing in index
/// order afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace hippro
