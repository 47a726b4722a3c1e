#include "morphkit/geometry/landmarks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace morphkit {

namespace {

void require_same_k(const LandmarkSet& a, const LandmarkSet& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("landmark count mismatch: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

Point LandmarkSet::centroid() const {
  if (points.empty()) throw std::invalid_argument("centroid of an empty landmark set");
  Point c;
  for (const auto& p : points) c = c + p;
  return (1.0 / static_cast<double>(points.size())) * c;
}

LandmarkSet operator+(const LandmarkSet& a, const LandmarkSet& b) {
  require_same_k(a, b);
  LandmarkSet out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out.points[i] = a.points[i] + b.points[i];
  return out;
}

LandmarkSet operator-(const LandmarkSet& a, const LandmarkSet& b) {
  require_same_k(a, b);
  LandmarkSet out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out.points[i] = a.points[i] - b.points[i];
  return out;
}

LandmarkSet lerp(const LandmarkSet& a, const LandmarkSet& b, double t) {
  require_same_k(a, b);
  LandmarkSet out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.points[i] = {(1.0 - t) * a.points[i].x + t * b.points[i].x,
                     (1.0 - t) * a.points[i].y + t * b.points[i].y};
  }
  return out;
}

LandmarkSet read_landmarks(const std::filesystem::path& path, std::size_t expected_k) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open landmark file '" + path.string() + "'");
  LandmarkSet out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Point p;
    if (!(ls >> p.x >> p.y) || !std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw std::runtime_error("malformed landmark line in '" + path.string() + "': " + line);
    }
    out.points.push_back(p);
  }
  if (expected_k != 0 && out.size() != expected_k) {
    throw std::runtime_error("'" + path.string() + "' has " + std::to_string(out.size()) +
                             " landmarks, expected " + std::to_string(expected_k));
  }
  return out;
}

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& landmarks) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (const auto& p : landmarks.points) os << format_double(p.x) << ' ' << format_double(p.y) << '\n';
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

LandmarkSet sample_perturbation(Rng& rng, double variance, std::size_t k) {
  if (variance < 0.0) throw std::invalid_argument("perturbation variance must be non-negative");
  LandmarkSet out;
  out.points.resize(k);
  if (variance == 0.0) return out;
  std::normal_distribution<double> dist(0.0, std::sqrt(variance));
  for (auto& p : out.points) {
    p.x = dist(rng);
    p.y = dist(rng);
  }
  return out;
}

std::size_t nearest_neighbor(const LandmarkSet& query, std::span<const LabeledLandmarks> pool,
                             int exclude_label, MiningNorm norm) {
  std::size_t best = pool.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].label == exclude_label) continue;
    require_same_k(query, pool[i].landmarks);
    double d = 0.0;
    for (std::size_t k = 0; k < query.size(); ++k) {
      const Point diff = query.points[k] - pool[i].landmarks.points[k];
      if (norm == MiningNorm::L2) {
        d += diff.x * diff.x + diff.y * diff.y;
      } else {
        d = std::max({d, std::abs(diff.x), std::abs(diff.y)});
      }
    }
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (best == pool.size()) throw std::runtime_error("no pool entry outside the excluded class");
  return best;
}

double phi_g(const LandmarkSet& l, const LandmarkSet& l_prime) {
  require_same_k(l, l_prime);
  const Point c = l.centroid();
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < l.size(); ++k) {
    const Point d = l.points[k] - l_prime.points[k];
    const Point s = l.points[k] - c;
    num += d.x * d.x + d.y * d.y;
    den += s.x * s.x + s.y * s.y;
  }
  if (den == 0.0) throw std::domain_error("phi_g: all landmarks coincide");
  return std::sqrt(num) / std::sqrt(den);
}

}  // namespace morphkit
