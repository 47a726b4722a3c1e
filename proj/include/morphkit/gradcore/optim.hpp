#pragma once

#include "morphkit/gradcore/graph.hpp"
#include "morphkit/gradcore/param_store.hpp"

namespace morphkit {

// p <- p - lr * g for every parameter. Every parameter must have a gradient.
ParamStore sgd_update(ParamStore params, const Gradients& grads, double lr);

// Same, restricted to the listed parameters; others are left untouched.
void sgd_update_subset(ParamStore& params, const Gradients& grads, double lr,
                       std::span<const std::string> names);

// Step decay: initial * decay^floor(epoch / every), never below floor.
struct LrSchedule {
  double initial = 0.1;
  double decay = 0.9;
  int every = 5;
  double floor = 1e-6;

  double at(int epoch) const;
};

}  // namespace morphkit
