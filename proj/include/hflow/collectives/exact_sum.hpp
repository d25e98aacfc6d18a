#pragma once

#include <cstddef>
#include <vector>

#include "hflow/collectives/communicator.hpp"

namespace hflow::collectives {

/// Order-independent sums of doubles.
///
/// Each added value is rounded to a multiple of 2^-60 and held as three
/// integer-valued double limbs of at most 37 bits each (units 2^16, 2^-22,
/// 2^-60). Limb sums of up to 32768 contributions per slot stay below 2^52,
/// so they are exact in any order, and a ring allreduce over the limbs gives
/// the same bits no matter how the contributions were split across ranks.
class ExactSum {
 public:
  /// Largest magnitude add() accepts.
  static constexpr double kMaxMagnitude = 0x1p53;
  static constexpr std::size_t kMaxContributions = 32768;

  explicit ExactSum(std::size_t slots) : limbs_(3 * slots, 0.0) {}

  std::size_t size() const { return limbs_.size() / 3; }

  /// A non-finite x, or |x| >= kMaxMagnitude, makes the slot NaN. The NaN
  /// survives allreduce, so every rank sees the same poisoned result.
  void add(std::size_t slot, double x);

  /// Sums the limbs across ranks; one allreduce call. No-op without comm.
  void allreduce(Communicator* comm);

  double value(std::size_t slot) const;

 private:
  std::vector<double> limbs_;
};

}  // namespace hflow::collectives
