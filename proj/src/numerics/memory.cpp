#include "angiodit/numerics/memory.hpp"

namespace angiodit {

std::atomic<std::size_t> MemoryStats::current_{0};
std::atomic<std::size_t> MemoryStats::peak_{0};

void MemoryStats::on_alloc(std::size_t bytes) noexcept {
    const std::size_t now = current_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t seen = peak_.load(std::memory_order_relaxed);
    while (now > seen && !peak_.compare_exchange_weak(seen, now, std::memory_order_relaxed)) {
    }
}

void MemoryStats::on_free(std::size_t bytes) noexcept {
    current_.fetch_sub(bytes, std::memory_order_relaxed);
}

std::size_t MemoryStats::current() noexcept { return current_.load(std::memory_order_relaxed); }
std::size_t MemoryStats::peak() noexcept { return peak_.load(std::memory_order_relaxed); }

void MemoryStats::reset_peak() noexcept {
    peak_.store(current_.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

}  // namespace angiodit
