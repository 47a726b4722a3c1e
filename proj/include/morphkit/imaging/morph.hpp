#pragma once

#include "morphkit/geometry/landmarks.hpp"
#include "morphkit/imaging/face_image.hpp"

namespace morphkit {

// (1 - alpha) * a + alpha * b, clamped to [-1, 1].
FaceImage alpha_blend(const FaceImage& a, const FaceImage& b, double alpha);

struct MorphOptions {
  double alpha_warp = 0.5;
  double alpha_blend = 0.5;
  // When false only image a is warped to the averaged landmarks; b is blended
  // in its own geometry.
  bool warp_both = true;
  // Blend only inside the convex hull of the morph landmarks and keep image
  // a (unwarped) elsewhere.
  bool splice = false;
  double lambda = 0.0;
};

struct MorphRecord {
  FaceImage image;
  LandmarkSet landmarks;
  int subject_a = -1;
  int subject_b = -1;
  double alpha_warp = 0.5;
  double alpha_blend = 0.5;
};

MorphRecord generate_morph(const FaceImage& img_a, const LandmarkSet& lms_a, const FaceImage& img_b,
                           const LandmarkSet& lms_b, const MorphOptions& options = {});

// 1 inside the convex hull of the landmarks (boundary included), else 0;
// row-major [height * width].
std::vector<double> convex_hull_mask(const LandmarkSet& landmarks, std::size_t width,
                                     std::size_t height);

}  // namespace morphkit
