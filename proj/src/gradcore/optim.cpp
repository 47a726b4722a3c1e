#include "morphkit/gradcore/optim.hpp"

#include <algorithm>
#include <cmath>

namespace morphkit {

namespace {

void apply(Tensor& p, const Tensor& g, double lr, const std::string& name) {
  if (p.shape() != g.shape()) {
    throw ShapeError("gradient shape " + shape_to_string(g.shape()) + " does not match parameter '" +
                     name + "' " + shape_to_string(p.shape()));
  }
  for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= lr * g[i];
}

}  // namespace

ParamStore sgd_update(ParamStore params, const Gradients& grads, double lr) {
  for (const auto& name : params.names()) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("missing gradient for parameter '" + name + "'");
    apply(params.at(name), it->second, lr, name);
  }
  return params;
}

void sgd_update_subset(ParamStore& params, const Gradients& grads, double lr,
                       std::span<const std::string> names) {
  for (const auto& name : names) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("missing gradient for parameter '" + name + "'");
    apply(params.at(name), it->second, lr, name);
  }
}

double LrSchedule::at(int epoch) const {
  if (initial <= floor) return initial;
  const int steps = every > 0 ? std::max(epoch, 0) / every : 0;
  return std::max(initial * std::pow(decay, steps), floor);
}

}  // namespace morphkit
