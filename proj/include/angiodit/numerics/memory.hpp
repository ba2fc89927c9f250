#pragma once

#include <atomic>
#include <cstddef>
#include <new>

namespace angiodit {

// Process-wide byte counters for tensor storage. Used to compare peak
// activation memory of alternative inference paths.
class MemoryStats {
public:
    static void on_alloc(std::size_t bytes) noexcept;
    static void on_free(std::size_t bytes) noexcept;

    static std::size_t current() noexcept;
    static std::size_t peak() noexcept;
    // Sets the peak watermark to the current live byte count.
    static void reset_peak() noexcept;

private:
    static std::atomic<std::size_t> current_;
    static std::atomic<std::size_t> peak_;
};

inline constexpr std::size_t kStorageAlignment = 64;

// Counting allocator with cache-line aligned blocks.
template <typename T>
struct TrackingAllocator {
    using value_type = T;

    TrackingAllocator() noexcept = default;
    template <typename U>
    TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        T* p = static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kStorageAlignment}));
        MemoryStats::on_alloc(n * sizeof(T));
        return p;
    }

    void deallocate(T* p, std::size_t n) noexcept {
        MemoryStats::on_free(n * sizeof(T));
        ::operator delete(p, std::align_val_t{kStorageAlignment});
    }

    template <typename U>
    bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

}  // namespace angiodit
