#pragma once

#include <span>
#include <string>
#include <vector>

#include "morphkit/gradcore/graph.hpp"

namespace morphkit {

struct FdCheckOptions {
  // Coordinates checked per tensor; larger tensors are subsampled with a
  // fixed stride.
  std::size_t max_coords_per_tensor = 24;
  // A coordinate is skipped when moving it by +-kink_margin*eps changes the
  // branch taken by any relu/clamp/acos element.
  double kink_margin = 10.0;
  // Test hook: perturb the analytic gradient before comparing.
  bool corrupt_analytic = false;
};

struct FdCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst_input;
};

// Compares reverse-mode gradients against central differences. The error of
// one coordinate is |analytic - numeric| / max(1, |analytic|).
FdCheckReport finite_difference_check(const Graph& graph, const Bindings& bindings,
                                      std::span<const std::string> wrt, double eps,
                                      const FdCheckOptions& options = {});

// Checks several scalar nodes of one graph at once: every probe evaluates
// all outputs in a single forward pass. One report per output.
std::vector<FdCheckReport> finite_difference_check(const Graph& graph, const Bindings& bindings,
                                                   std::span<const Var> outputs,
                                                   std::span<const std::string> wrt, double eps,
                                                   const FdCheckOptions& options = {});

}  // namespace morphkit
