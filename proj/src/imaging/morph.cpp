#include "morphkit/imaging/morph.hpp"

#include <algorithm>
#include <stdexcept>

#include "morphkit/geometry/tps.hpp"

namespace morphkit {

FaceImage alpha_blend(const FaceImage& a, const FaceImage& b, double alpha) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw std::invalid_argument("alpha_blend: image dimensions differ");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha_blend: alpha outside [0, 1]");
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;
  FaceImage out = a;
  auto& v = out.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (1.0 - alpha) * v[i] + alpha * bv[i];
  out.clamp();
  return out;
}

namespace {

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Andrew's monotone chain; counter-clockwise in a y-up frame.
std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](Point a, Point b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Point& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace

std::vector<double> convex_hull_mask(const LandmarkSet& landmarks, std::size_t width, std::size_t height) {
  const std::vector<Point> hull = convex_hull(landmarks.points);
  std::vector<double> mask(width * height, 0.0);
  if (hull.size() < 3) return mask;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const Point p{static_cast<double>(x), static_cast<double>(y)};
      bool inside = true;
      for (std::size_t i = 0; i < hull.size() && inside; ++i) {
        inside = cross(hull[i], hull[(i + 1) % hull.size()], p) >= 0;
      }
      if (inside) mask[y * width + x] = 1.0;
    }
  }
  return mask;
}

MorphRecord generate_morph(const FaceImage& img_a, const LandmarkSet& lms_a, const FaceImage& img_b,
                           const LandmarkSet& lms_b, const MorphOptions& options) {
  if (lms_a.size() != lms_b.size()) throw std::invalid_argument("generate_morph: landmark counts differ");
  if (img_a.width() != img_b.width() || img_a.height() != img_b.height()) {
    throw std::invalid_argument("generate_morph: image sizes differ");
  }
  const double aw = options.alpha_warp;
  if (!(aw >= 0.0 && aw <= 1.0)) throw std::invalid_argument("generate_morph: alpha_warp outside [0, 1]");

  MorphRecord rec;
  rec.alpha_warp = aw;
  rec.alpha_blend = options.alpha_blend;
  rec.landmarks = lerp(lms_a, lms_b, aw);
  const FaceImage wa = warp_image(img_a, lms_a, rec.landmarks, options.lambda);
  const FaceImage wb = options.warp_both ? warp_image(img_b, lms_b, rec.landmarks, options.lambda) : img_b;
  rec.image = alpha_blend(wa, wb, options.alpha_blend);

  if (options.splice) {
    const auto mask = convex_hull_mask(rec.landmarks, img_a.width(), img_a.height());
    const std::size_t plane = img_a.width() * img_a.height();
    auto& v = rec.image.values();
    const auto& base = img_a.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (mask[i % plane] == 0.0) v[i] = base[i];
    }
  }
  return rec;
}

}  // namespace morphkit
