#include "morphkit/gradcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace morphkit {

std::vector<FdCheckReport> finite_difference_check(const Graph& graph, const Bindings& bindings,
                                                   std::span<const Var> outputs,
                                                   std::span<const std::string> wrt, double eps,
                                                   const FdCheckOptions& options) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  if (outputs.empty()) throw std::invalid_argument("finite difference check needs an output");
  std::vector<Gradients> analytic;
  for (Var out : outputs) {
    Graph g = graph;
    g.set_output(out);
    analytic.push_back(g.gradient(bindings, wrt));
  }

  // Each probe changes one input, so only its downstream nodes are redone.
  Graph::Cache cache(graph, bindings, outputs);
  const auto& base_branches = cache.base_branches();

  Bindings probe = bindings;
  std::vector<FdCheckReport> reports(outputs.size());
  std::vector<std::uint8_t> branches;

  auto values_at = [&](const std::string& name, std::size_t idx, double x) {
    probe[name][idx] = x;
    const auto t = cache.evaluate_traced(name, probe.at(name), branches);
    std::vector<double> v;
    for (const auto& e : t) v.push_back(e.item());
    return v;
  };

  for (const auto& name : wrt) {
    const std::size_t n = analytic.front().at(name).numel();
    if (n == 0) continue;
    const std::size_t count = std::min(n, options.max_coords_per_tensor);
    const std::size_t stride = n / count;
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t idx = c * stride + (stride / 2);
      const double x0 = bindings.at(name)[idx];

      bool near_kink = false;
      for (double dir : {1.0, -1.0}) {
        values_at(name, idx, x0 + dir * options.kink_margin * eps);
        if (branches != base_branches) near_kink = true;
      }
      if (near_kink) {
        probe[name][idx] = x0;
        for (auto& r : reports) ++r.skipped;
        continue;
      }

      const auto fp = values_at(name, idx, x0 + eps);
      const auto fm = values_at(name, idx, x0 - eps);
      probe[name][idx] = x0;
      for (std::size_t o = 0; o < outputs.size(); ++o) {
        const double numeric = (fp[o] - fm[o]) / (2.0 * eps);
        double a = analytic[o].at(name)[idx];
        if (options.corrupt_analytic) a += 1e-2 * (1.0 + std::abs(a));
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        FdCheckReport& r = reports[o];
        ++r.checked;
        if (r.checked == 1 || err > r.max_rel_error) {
          r.max_rel_error = err;
          r.worst_input = name + "[" + std::to_string(idx) + "]";
        }
      }
    }
  }
  return reports;
}

FdCheckReport finite_difference_check(const Graph& graph, const Bindings& bindings,
                                      std::span<const std::string> wrt, double eps,
                                      const FdCheckOptions& options) {
  const Var out = graph.output();
  return finite_difference_check(graph, bindings, std::span<const Var>(&out, 1), wrt, eps, options).front();
}

}  // namespace morphkit
