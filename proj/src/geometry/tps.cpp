#include "morphkit/geometry/tps.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace morphkit {

double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

Point TpsTransform::apply(Point p) const {
  double x = affine[0][0] + affine[0][1] * p.x + affine[0][2] * p.y;
  double y = affine[1][0] + affine[1][1] * p.x + affine[1][2] * p.y;
  for (std::size_t k = 0; k < kernel_weights.size(); ++k) {
    const Point d = p - control_points.points[k];
    const double u = tps_kernel(d.x * d.x + d.y * d.y);
    x += kernel_weights[k].x * u;
    y += kernel_weights[k].y * u;
  }
  return {x, y};
}

TpsTransform tps_fit(const LandmarkSet& source, const LandmarkSet& target, double lambda) {
  const std::size_t k = source.size();
  if (k != target.size()) throw std::invalid_argument("tps_fit: landmark count mismatch");
  if (k < 3) throw std::invalid_argument("tps_fit: need at least 3 control points");
  if (lambda < 0.0) throw std::invalid_argument("tps_fit: lambda must be non-negative");

  // Solve in centered, unit-RMS coordinates for conditioning, then map the
  // solution back to pixel coordinates. Lambda acts on the normalized system.
  const Point c = source.centroid();
  double spread = 0.0;
  for (const auto& p : source.points) {
    const Point d = p - c;
    spread += d.x * d.x + d.y * d.y;
  }
  spread = std::sqrt(spread / static_cast<double>(k));
  if (spread == 0.0) throw std::runtime_error("tps_fit: all control points coincide");
  const double s = spread;

  const auto n = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n + 3, n + 3);
  std::vector<Point> q(k);
  for (std::size_t i = 0; i < k; ++i) q[i] = (1.0 / s) * (source.points[i] - c);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const Point d = q[i] - q[j];
      L(i, j) = tps_kernel(d.x * d.x + d.y * d.y);
    }
    L(i, i) += lambda;
    L(i, n) = 1.0;
    L(i, n + 1) = q[i].x;
    L(i, n + 2) = q[i].y;
    L(n, i) = 1.0;
    L(n + 1, i) = q[i].x;
    L(n + 2, i) = q[i].y;
  }
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    rhs(i, 0) = target.points[i].x;
    rhs(i, 1) = target.points[i].y;
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible()) {
    throw std::runtime_error("tps_fit: singular system (collinear or duplicate control points)");
  }
  Eigen::MatrixXd sol = lu.solve(rhs);
  // One step of iterative refinement.
  sol += lu.solve(rhs - L * sol);

  TpsTransform t;
  t.control_points = source;
  t.lambda = lambda;
  t.kernel_weights.resize(k);
  const double inv_s2 = 1.0 / (s * s);
  const double log_s2 = std::log(s * s);
  std::array<double, 2> offset{0.0, 0.0};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Point wq{sol(i, 0), sol(i, 1)};
    t.kernel_weights[i] = inv_s2 * wq;
    // U(r/s) = U(r)/s^2 - log(s^2) r^2 / s^2; with the side conditions the
    // r^2 terms collapse to a constant.
    const Point pk = source.points[i];
    const double r2 = pk.x * pk.x + pk.y * pk.y;
    offset[0] -= wq.x * log_s2 * inv_s2 * r2;
    offset[1] -= wq.y * log_s2 * inv_s2 * r2;
  }
  for (int axis = 0; axis < 2; ++axis) {
    const double a0 = sol(n, axis), ax = sol(n + 1, axis), ay = sol(n + 2, axis);
    t.affine[axis][1] = ax / s;
    t.affine[axis][2] = ay / s;
    t.affine[axis][0] = a0 - (ax * c.x + ay * c.y) / s + offset[axis];
  }
  return t;
}

double sample_bilinear(const FaceImage& image, std::size_t channel, double x, double y) {
  auto snap = [](double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
  };
  const double maxx = static_cast<double>(image.width() - 1);
  const double maxy = static_cast<double>(image.height() - 1);
  x = std::clamp(snap(x), 0.0, maxx);
  y = std::clamp(snap(y), 0.0, maxy);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, image.width() - 1);
  const std::size_t y1 = std::min(y0 + 1, image.height() - 1);
  const double wx = x - static_cast<double>(x0);
  const double wy = y - static_cast<double>(y0);
  if (wx == 0.0 && wy == 0.0) return image.at(channel, y0, x0);
  const double top = (1 - wx) * image.at(channel, y0, x0) + wx * image.at(channel, y0, x1);
  const double bot = (1 - wx) * image.at(channel, y1, x0) + wx * image.at(channel, y1, x1);
  return (1 - wy) * top + wy * bot;
}

FaceImage warp_image(const FaceImage& image, const LandmarkSet& source, const LandmarkSet& target,
                     const LandmarkSet& delta, double lambda) {
  const LandmarkSet moved = delta.size() == 0 ? target : target + delta;
  const TpsTransform inv = tps_fit(moved, source, lambda);
  FaceImage out(image.width(), image.height());
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      const Point src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      for (std::size_t c = 0; c < FaceImage::kChannels; ++c) {
        out.at(c, y, x) = sample_bilinear(image, c, src.x, src.y);
      }
    }
  }
  return out;
}

FaceImage warp_image(const FaceImage& image, const LandmarkSet& source, const LandmarkSet& target,
                     double lambda) {
  return warp_image(image, source, target, LandmarkSet{}, lambda);
}

SimilarityTransform SimilarityTransform::inverse() const {
  const double d = a * a + b * b;
  if (d == 0.0) throw std::domain_error("similarity transform is not invertible");
  SimilarityTransform inv;
  inv.a = a / d;
  inv.b = -b / d;
  inv.tx = -(inv.a * tx - inv.b * ty);
  inv.ty = -(inv.b * tx + inv.a * ty);
  return inv;
}

SimilarityTransform fit_similarity(std::span<const Point> src, std::span<const Point> dst) {
  if (src.size() != dst.size() || src.size() < 2) {
    throw std::invalid_argument("fit_similarity needs at least two corresponding points");
  }
  Point cs{}, cd{};
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs = cs + src[i];
    cd = cd + dst[i];
  }
  const double inv_n = 1.0 / static_cast<double>(src.size());
  cs = inv_n * cs;
  cd = inv_n * cd;
  // Minimizes sum |z * p_i - q_i|^2 over complex z on centered points.
  double num_re = 0.0, num_im = 0.0, den = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Point p = src[i] - cs;
    const Point q = dst[i] - cd;
    num_re += p.x * q.x + p.y * q.y;
    num_im += p.x * q.y - p.y * q.x;
    den += p.x * p.x + p.y * p.y;
  }
  if (den < 1e-12) throw std::runtime_error("degenerate landmark configuration for alignment");
  SimilarityTransform t;
  t.a = num_re / den;
  t.b = num_im / den;
  t.tx = cd.x - (t.a * cs.x - t.b * cs.y);
  t.ty = cd.y - (t.b * cs.x + t.a * cs.y);
  return t;
}

AlignAnchors AlignAnchors::ibug68() {
  AlignAnchors a;
  std::vector<std::size_t> left, right, mouth;
  for (std::size_t i = 36; i < 42; ++i) left.push_back(i);
  for (std::size_t i = 42; i < 48; ++i) right.push_back(i);
  for (std::size_t i = 48; i < 68; ++i) mouth.push_back(i);
  a.groups = {left, right, mouth};
  return a;
}

namespace {

std::vector<Point> anchor_points(const LandmarkSet& l, const AlignAnchors& anchors) {
  if (anchors.groups.empty()) return l.points;
  std::vector<Point> out;
  for (const auto& group : anchors.groups) {
    if (group.empty()) throw std::invalid_argument("empty alignment anchor group");
    Point c{};
    for (std::size_t idx : group) {
      if (idx >= l.size()) throw std::invalid_argument("alignment anchor index out of range");
      c = c + l.points[idx];
    }
    out.push_back((1.0 / static_cast<double>(group.size())) * c);
  }
  return out;
}

}  // namespace

AlignedFace align_face(const FaceImage& image, const LandmarkSet& landmarks,
                       const LandmarkSet& template_lms, const AlignAnchors& anchors) {
  if (landmarks.size() != template_lms.size()) {
    throw std::invalid_argument("align_face: template has a different landmark count");
  }
  const auto src = anchor_points(landmarks, anchors);
  const auto dst = anchor_points(template_lms, anchors);
  AlignedFace out;
  out.transform = fit_similarity(src, dst);
  const SimilarityTransform inv = out.transform.inverse();
  out.image = FaceImage(image.width(), image.height());
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      const Point p = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      for (std::size_t c = 0; c < FaceImage::kChannels; ++c) {
        out.image.at(c, y, x) = sample_bilinear(image, c, p.x, p.y);
      }
    }
  }
  out.landmarks = landmarks;
  for (auto& p : out.landmarks.points) p = out.transform.apply(p);
  return out;
}

}  // namespace morphkit
