#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "morphkit/common/random.hpp"

namespace morphkit {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }
  friend bool operator==(Point, Point) = default;
};

// Ordered facial keypoints in pixel coordinates; index i always names the
// same facial point. Also used for per-point offsets.
struct LandmarkSet {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  Point centroid() const;
  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

LandmarkSet operator+(const LandmarkSet& a, const LandmarkSet& b);
LandmarkSet operator-(const LandmarkSet& a, const LandmarkSet& b);
// (1 - t) * a + t * b
LandmarkSet lerp(const LandmarkSet& a, const LandmarkSet& b, double t);

// One "x y" line per landmark, written with round-trip precision.
LandmarkSet read_landmarks(const std::filesystem::path& path, std::size_t expected_k = 0);
void write_landmarks(const std::filesystem::path& path, const LandmarkSet& landmarks);

// 2K i.i.d. N(0, variance) offsets. The default variance of 3 follows the
// training setup; variance (not sigma) is the parameter.
LandmarkSet sample_perturbation(Rng& rng, double variance, std::size_t k);

enum class MiningNorm { L2, Linf };

struct LabeledLandmarks {
  LandmarkSet landmarks;
  int label = 0;
};

// Index of the pool entry closest to the query under the chosen norm of the
// flattened coordinate difference, skipping entries of exclude_label. Ties go
// to the lowest index. Throws if no entry is eligible.
std::size_t nearest_neighbor(const LandmarkSet& query, std::span<const LabeledLandmarks> pool,
                             int exclude_label, MiningNorm norm = MiningNorm::L2);

// ||l - l'|| / ||l - mean(l)||: landmark displacement normalized by the
// spread of l around its centroid.
double phi_g(const LandmarkSet& l, const LandmarkSet& l_prime);

}  // namespace morphkit
