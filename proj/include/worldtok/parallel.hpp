// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "error.hpp"

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace worldtok {

/// Calls fn(i) for i in [0, count) on `threads` workers pulling indices from
/// a shared counter. The first exception thrown by any worker is rethrown.
template <typename Fn>
void
parallel_for(std::size_t count, int threads, Fn &&fn) {
    require(threads >= 1, ErrorKind::InvalidArgument, "threads must be >= 1");
    if (threads == 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = count;
            }
        }
    };
    std::vector<std::thread> pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace worldtok
