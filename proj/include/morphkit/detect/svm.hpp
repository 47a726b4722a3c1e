#pragma once

#include <span>
#include <vector>

#include "morphkit/features/descriptors.hpp"

namespace morphkit {

struct SvmParams {
  double C = 10.0;
  // RBF width; 0 selects 1 / feature dimension.
  double gamma = 0.0;
  // Stop once the maximal KKT violating pair gap drops below tol.
  double tol = 1e-3;
  std::size_t max_iterations = 1000000;
};

// f(x) = sum_i coef_i k(sv_i, x) + bias with k(u, v) = exp(-gamma |u - v|^2),
// coef_i = alpha_i y_i.
struct SvmModel {
  std::vector<std::vector<double>> support_vectors;
  std::vector<double> coef;
  double bias = 0.0;
  double gamma = 0.0;
  double C = 0.0;
};

struct SvmTrainResult {
  SvmModel model;
  // One multiplier per training point, in input order.
  std::vector<double> alpha;
  // Dual objective sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij.
  double dual_objective = 0.0;
  std::size_t iterations = 0;
};

double rbf_kernel(std::span<const double> u, std::span<const double> v, double gamma);

// Soft-margin C-SVM solved by SMO with second-order working set selection.
// Labels are +1 / -1 and both must occur.
SvmTrainResult svm_train(std::span<const FeatureVector> features, std::span<const int> labels,
                         const SvmParams& params = {});

double svm_score(const SvmModel& model, std::span<const double> x);

// Largest KKT violation of a trained model on its training set:
// alpha = 0 needs y f >= 1, alpha = C needs y f <= 1, otherwise y f = 1.
double svm_kkt_violation(const SvmTrainResult& result, std::span<const FeatureVector> features,
                         std::span<const int> labels);

// questioned - trusted when the trusted image is known, else |a - b|.
FeatureVector baseline_pair_feature(const FeatureVector& trusted, const FeatureVector& questioned,
                                    bool trusted_known);

}  // namespace morphkit
