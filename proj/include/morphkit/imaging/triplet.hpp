#pragma once

#include <span>

#include "morphkit/geometry/landmarks.hpp"
#include "morphkit/imaging/face_image.hpp"

namespace morphkit {

// Stage-1 training sample: the intermediate image carries the appearance of
// x and the geometry of x' (plus a small landmark perturbation).
struct Triplet {
  FaceImage appearance;
  FaceImage landmark_image;
  FaceImage intermediate;
  int y = -1;
  int y_prime = -1;
  LandmarkSet l;
  LandmarkSet l_prime;
  LandmarkSet delta;
  std::size_t neighbor_index = 0;
};

struct TripletOptions {
  double variance = 3.0;
  MiningNorm norm = MiningNorm::L2;
  double lambda = 0.0;
};

// Picks x' as the nearest-landmark pool entry of another class, draws delta
// and warps x onto l' + delta. pool_images[i] belongs to pool[i].
Triplet build_triplet(const FaceImage& x, const LandmarkSet& l, int y,
                      std::span<const LabeledLandmarks> pool, std::span<const FaceImage> pool_images,
                      Rng& rng, const TripletOptions& options = {});

}  // namespace morphkit
