#include "hflow/collectives/exact_sum.hpp"

#include <cmath>

namespace hflow::collectives {

void ExactSum::add(std::size_t slot, double x) {
  double* l = &limbs_[3 * slot];
  if (!(std::abs(x) < kMaxMagnitude)) {
    l[0] = std::nan("");
    return;
  }
  // Each residual is exact: it is a multiple of ulp(x) no larger than x.
  const double hi = std::nearbyint(x * 0x1p-16);
  const double r1 = x - hi * 0x1p16;
  const double mid = std::nearbyint(r1 * 0x1p22);
  const double r2 = r1 - mid * 0x1p-22;
  l[0] += hi;
  l[1] += mid;
  l[2] += std::nearbyint(r2 * 0x1p60);
}

void ExactSum::allreduce(Communicator* comm) {
  if (comm != nullptr) comm->allreduce(std::span<double>(limbs_), ReduceOp::sum);
}

double ExactSum::value(std::size_t slot) const {
  const double* l = &limbs_[3 * slot];
  return (l[0] * 0x1p16 + l[1] * 0x1p-22) + l[2] * 0x1p-60;
}

}  // namespace hflow::collectives
