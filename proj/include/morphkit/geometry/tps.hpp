#pragma once

#include <array>
#include <vector>

#include "morphkit/geometry/landmarks.hpp"
#include "morphkit/imaging/face_image.hpp"

namespace morphkit {

// Thin-plate spline R^2 -> R^2 with kernel U(r) = r^2 log r^2.
//   f(p) = affine * [1, x, y]^T + sum_k w_k U(|p - c_k|)
struct TpsTransform {
  LandmarkSet control_points;
  // Row 0 maps to x, row 1 to y; columns are (constant, x, y).
  std::array<std::array<double, 3>, 2> affine{};
  // One (wx, wy) pair per control point.
  std::vector<Point> kernel_weights;
  double lambda = 0.0;

  Point apply(Point p) const;
};

double tps_kernel(double r2);

// Solves the TPS interpolation system mapping source onto target. lambda
// regularizes the kernel block. Throws on singular systems (collinear or
// duplicated control points).
TpsTransform tps_fit(const LandmarkSet& source, const LandmarkSet& target, double lambda = 0.0);

inline Point tps_apply(const TpsTransform& t, Point p) { return t.apply(p); }

// Bilinear sample with edge clamping. Coordinates within 1e-9 of an integer
// snap to it so integer-grid lookups are exact.
double sample_bilinear(const FaceImage& image, std::size_t channel, double x, double y);

// Inverse-mapped TPS warp: output pixel p takes the input value at T(p),
// where T maps (target + delta) onto source. The output carries the input's
// appearance at the target geometry.
FaceImage warp_image(const FaceImage& image, const LandmarkSet& source, const LandmarkSet& target,
                     const LandmarkSet& delta, double lambda = 0.0);
FaceImage warp_image(const FaceImage& image, const LandmarkSet& source, const LandmarkSet& target,
                     double lambda = 0.0);

// p' = scale * R(theta) * p + t, stored as the complex multiplier (a, b)
// with a = s cos(theta), b = s sin(theta).
struct SimilarityTransform {
  double a = 1.0;
  double b = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  Point apply(Point p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }
  SimilarityTransform inverse() const;
};

// Least-squares similarity mapping src points onto dst points.
SimilarityTransform fit_similarity(std::span<const Point> src, std::span<const Point> dst);

// Index groups whose centroids anchor alignment (eyes and mouth in the
// 68-point convention). An empty list means "use every landmark".
struct AlignAnchors {
  std::vector<std::vector<std::size_t>> groups;

  static AlignAnchors ibug68();
};

struct AlignedFace {
  FaceImage image;
  LandmarkSet landmarks;
  SimilarityTransform transform;
};

// Maps the anchor centroids of `landmarks` onto those of `template_lms` with
// a similarity transform, resampling the image bilinearly.
AlignedFace align_face(const FaceImage& image, const LandmarkSet& landmarks,
                       const LandmarkSet& template_lms, const AlignAnchors& anchors);

}  // namespace morphkit
