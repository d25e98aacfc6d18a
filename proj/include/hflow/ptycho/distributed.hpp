#pragma once

#include "hflow/engine/context.hpp"
#include "hflow/ptycho/scan.hpp"

namespace hflow::ptycho {

/// Collective task: elements are frames of one partition, config holds the
/// solver parameters and initial state. Rank 0 returns probe, object and the
/// epsilon history as three elements; other ranks return nothing.
inline constexpr const char* kReconstructTask = "ptycho.reconstruct";

engine::Bytes encode_frame(const Real& intensity, Position at);
std::pair<Real, Position> decode_frame(const engine::Bytes& bytes);
engine::Bytes encode_field(const Field& f);
Field decode_field(const engine::Bytes& bytes);

/// Contiguous blocks of frames, one gang-scheduled rank per partition.
Reconstruction reconstruct_distributed(engine::Context& ctx, const Scan& scan, const State& init,
                                       const SolverParams& params, int partitions);

void register_ptycho_tasks();

}  // namespace hflow::ptycho
