#pragma once

namespace hflow {

/// Registers every named task the CLI and tests rely on. Driver and worker
/// processes must both call it before running jobs. Safe to call twice.
void register_builtin_tasks();

}  // namespace hflow
