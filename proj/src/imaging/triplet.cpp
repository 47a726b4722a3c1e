#include "morphkit/imaging/triplet.hpp"

#include <stdexcept>

#include "morphkit/geometry/tps.hpp"

namespace morphkit {

Triplet build_triplet(const FaceImage& x, const LandmarkSet& l, int y,
                      std::span<const LabeledLandmarks> pool, std::span<const FaceImage> pool_images,
                      Rng& rng, const TripletOptions& options) {
  if (pool.size() != pool_images.size()) throw std::invalid_argument("build_triplet: pool size mismatch");
  const std::size_t j = nearest_neighbor(l, pool, y, options.norm);
  Triplet t;
  t.appearance = x;
  t.landmark_image = pool_images[j];
  t.y = y;
  t.y_prime = pool[j].label;
  t.l = l;
  t.l_prime = pool[j].landmarks;
  t.neighbor_index = j;
  t.delta = sample_perturbation(rng, options.variance, l.size());
  t.intermediate = warp_image(x, l, t.l_prime, t.delta, options.lambda);
  return t;
}

}  // namespace morphkit
