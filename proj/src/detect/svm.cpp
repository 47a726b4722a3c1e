#include "morphkit/detect/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace morphkit {

double rbf_kernel(std::span<const double> u, std::span<const double> v, double gamma) {
  if (u.size() != v.size()) throw std::invalid_argument("rbf_kernel: dimension mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) d += (u[i] - v[i]) * (u[i] - v[i]);
  return std::exp(-gamma * d);
}

SvmTrainResult svm_train(std::span<const FeatureVector> features, std::span<const int> labels,
                         const SvmParams& params) {
  const std::size_t n = features.size();
  if (n == 0 || labels.size() != n) throw std::invalid_argument("svm_train: features and labels must match");
  if (!(params.C > 0.0) || params.gamma < 0.0 || !(params.tol > 0.0)) {
    throw std::invalid_argument("svm_train: need C > 0, gamma >= 0, tol > 0");
  }
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y == 1) {
      pos = true;
    } else if (y == -1) {
      neg = true;
    } else {
      throw std::invalid_argument("svm_train: labels must be +1 or -1");
    }
  }
  if (!pos || !neg) throw std::invalid_argument("svm_train: both labels must be present");
  const std::size_t dim = features[0].dim();
  for (const auto& f : features) {
    if (f.dim() != dim) throw std::invalid_argument("svm_train: feature dimensions differ");
  }
  const double gamma = params.gamma > 0.0 ? params.gamma : 1.0 / static_cast<double>(std::max<std::size_t>(dim, 1));
  const double C = params.C;

  std::vector<double> K(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    K[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      K[i * n + j] = K[j * n + i] = rbf_kernel(features[i].values, features[j].values, gamma);
    }
  }
  std::vector<double> y(n), alpha(n, 0.0), G(n, -1.0);
  for (std::size_t i = 0; i < n; ++i) y[i] = labels[i];
  auto Q = [&](std::size_t i, std::size_t j) { return y[i] * y[j] * K[i * n + j]; };
  auto in_up = [&](std::size_t t) { return (y[t] > 0 && alpha[t] < C) || (y[t] < 0 && alpha[t] > 0); };
  auto in_low = [&](std::size_t t) { return (y[t] > 0 && alpha[t] > 0) || (y[t] < 0 && alpha[t] < C); };
  constexpr double kTau = 1e-12;

  std::size_t iter = 0;
  for (; iter < params.max_iterations; ++iter) {
    // i: maximal violator in I_up; j: second-order choice in I_low.
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(t) && -y[t] * G[t] > gmax) {
        gmax = -y[t] * G[t];
        i = t;
      }
    }
    double gmin = std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    std::size_t j = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      gmin = std::min(gmin, -y[t] * G[t]);
      if (i == n) continue;
      const double b = gmax + y[t] * G[t];
      if (b > 0.0) {
        double a = K[i * n + i] + K[t * n + t] - 2.0 * K[i * n + t];
        if (a <= 0.0) a = kTau;
        if (-(b * b) / a < best) {
          best = -(b * b) / a;
          j = t;
        }
      }
    }
    if (i == n || j == n || gmax - gmin < params.tol) break;

    // Analytic two-variable update (libsvm style), then clip to the box.
    const double old_ai = alpha[i], old_aj = alpha[j];
    if (y[i] != y[j]) {
      double quad = K[i * n + i] + K[j * n + j] - 2.0 * K[i * n + j];
      if (quad <= 0.0) quad = kTau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0 && alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = diff;
      } else if (diff <= 0 && alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0 && alpha[i] > C) {
        alpha[i] = C;
        alpha[j] = C - diff;
      } else if (diff <= 0 && alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      double quad = K[i * n + i] + K[j * n + j] - 2.0 * K[i * n + j];
      if (quad <= 0.0) quad = kTau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C && alpha[i] > C) {
        alpha[i] = C;
        alpha[j] = sum - C;
      } else if (sum <= C && alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > C && alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = sum - C;
      } else if (sum <= C && alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }
    const double dai = alpha[i] - old_ai, daj = alpha[j] - old_aj;
    for (std::size_t t = 0; t < n; ++t) G[t] += Q(t, i) * dai + Q(t, j) * daj;
  }

  // rho from free multipliers, else the midpoint of the feasible interval.
  double sum_free = 0.0, ub = std::numeric_limits<double>::infinity(), lb = -ub;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * G[t];
    if (alpha[t] >= C) {
      if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0) {
      if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      sum_free += yg;
      ++n_free;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);

  SvmTrainResult r;
  r.iterations = iter;
  r.alpha = alpha;
  r.model.bias = -rho;
  r.model.gamma = gamma;
  r.model.C = C;
  double lin = 0.0, quad = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    lin += alpha[t];
    // G_t + 1 = (Q alpha)_t
    quad += alpha[t] * (G[t] + 1.0);
    if (alpha[t] > 0.0) {
      r.model.support_vectors.push_back(features[t].values);
      r.model.coef.push_back(alpha[t] * y[t]);
    }
  }
  r.dual_objective = lin - 0.5 * quad;
  return r;
}

double svm_score(const SvmModel& model, std::span<const double> x) {
  double f = model.bias;
  for (std::size_t i = 0; i < model.support_vectors.size(); ++i) {
    if (model.support_vectors[i].size() != x.size()) throw std::invalid_argument("svm_score: dimension mismatch");
    f += model.coef[i] * rbf_kernel(model.support_vectors[i], x, model.gamma);
  }
  return f;
}

double svm_kkt_violation(const SvmTrainResult& result, std::span<const FeatureVector> features,
                         std::span<const int> labels) {
  double worst = 0.0;
  const double C = result.model.C;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double yf = labels[i] * svm_score(result.model, features[i].values);
    const double a = result.alpha[i];
    double v;
    if (a <= 0.0) {
      v = std::max(0.0, 1.0 - yf);
    } else if (a >= C) {
      v = std::max(0.0, yf - 1.0);
    } else {
      v = std::abs(yf - 1.0);
    }
    worst = std::max(worst, v);
  }
  double balance = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) balance += result.alpha[i] * labels[i];
  return std::max(worst, std::abs(balance));
}

FeatureVector baseline_pair_feature(const FeatureVector& trusted, const FeatureVector& questioned,
                                    bool trusted_known) {
  if (trusted.dim() != questioned.dim()) throw std::invalid_argument("baseline_pair_feature: dimension mismatch");
  FeatureVector f{trusted.descriptor + (trusted_known ? "_diff" : "_absdiff"), std::vector<double>(trusted.dim())};
  for (std::size_t i = 0; i < f.dim(); ++i) {
    const double d = questioned.values[i] - trusted.values[i];
    f.values[i] = trusted_known ? d : std::abs(d);
  }
  return f;
}

}  // namespace morphkit
