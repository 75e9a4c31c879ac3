#ifndef SGOIF_HVP_COUNTER_HPP
#define SGOIF_HVP_COUNTER_HPP

#include <atomic>
#include <cstdint>

namespace sgoif {

/// Global curvature-vector-product counter. One unit per model HVP
/// evaluation regardless of batch size, so counts are hardware independent
/// and comparable across backends. Relaxed atomics: the total is an
/// order-independent integer sum, hence deterministic under threading.
class HvpCounter {
 public:
  static void increment() { count_.fetch_add(1, std::memory_order_relaxed); }
  static std::int64_t value() { return count_.load(std::memory_order_relaxed); }
  static void reset() { count_.store(0, std::memory_order_relaxed); }

 private:
  static inline std::atomic<std::int64_t> count_{0};
};

}  // namespace sgoif

#endif
