#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <new>

namespace glsweep {

// Process-wide accounting of every buffer allocated through TrackedAllocator.
// Matrices and engine workspaces use it, so peak() bounds the numeric working set.
class MemoryTracker {
 public:
  static void add(std::size_t bytes) noexcept {
    const std::size_t now = current_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t seen = peak_.load(std::memory_order_relaxed);
    while (now > seen && !peak_.compare_exchange_weak(seen, now, std::memory_order_relaxed)) {
    }
  }
  static void remove(std::size_t bytes) noexcept {
    current_.fetch_sub(bytes, std::memory_order_relaxed);
  }
  static std::size_t current() noexcept { return current_.load(std::memory_order_relaxed); }
  static std::size_t peak() noexcept { return peak_.load(std::memory_order_relaxed); }
  static void reset_peak() noexcept { peak_.store(current(), std::memory_order_relaxed); }

 private:
  static inline std::atomic<std::size_t> current_{0};
  static inline std::atomic<std::size_t> peak_{0};
};

template <class T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t count) {
    T* p = std::allocator<T>{}.allocate(count);
    MemoryTracker::add(count * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t count) noexcept {
    MemoryTracker::remove(count * sizeof(T));
    std::allocator<T>{}.deallocate(p, count);
  }

  template <class U>
  bool operator==(const TrackedAllocator<U>&) const noexcept { return true; }
};

}  // namespace glsweep
