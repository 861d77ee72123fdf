#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <type_traits>
#include <vector>

namespace hvcu {

/// Runs fn(0..count-1) on up to `workers` threads and returns the results in
/// index order. With workers <= 1 the calls run sequentially in index order,
/// which is what order-sensitive backends need. The lowest-index exception is
/// rethrown after all workers finish.
template <typename Fn>
auto indexed_map(std::size_t count, int workers, Fn&& fn)
    -> std::vector<std::invoke_result_t<Fn&, std::size_t>> {
    using Result = std::invoke_result_t<Fn&, std::size_t>;
    std::vector<Result> out;
    out.reserve(count);
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) out.push_back(fn(i));
        return out;
    }

    std::vector<std::optional<Result>> slots(count);
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                slots[i].emplace(fn(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
    std::vector<std::jthread> pool;
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(work);
    pool.clear();

    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

}  // namespace hvcu
