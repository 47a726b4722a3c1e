#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "morphkit/features/descriptors.hpp"

using namespace morphkit;

namespace {

// Values on a 1/1024 grid so that adding a dyadic offset is exact.
FaceImage grid_image(Rng& rng, std::size_t w, std::size_t h, double lo = -0.5, double hi = 0.5) {
  std::uniform_int_distribution<int> d(static_cast<int>(lo * 1024), static_cast<int>(hi * 1024));
  FaceImage img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = d(rng) / 1024.0;
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = v;
    }
  return img;
}

double total(const FeatureVector& f) { return std::accumulate(f.values.begin(), f.values.end(), 0.0); }

FilterBank random_bank(Rng& rng, std::size_t n) {
  std::normal_distribution<double> d(0, 1);
  FilterBank bank;
  bank.n_filters = n;
  bank.coefficients.resize(n * 9);
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0;
    for (std::size_t k = 0; k < 9; ++k) m += bank.coefficients[i * 9 + k] = d(rng);
    for (std::size_t k = 0; k < 9; ++k) bank.coefficients[i * 9 + k] -= m / 9;
  }
  return bank;
}

}  // namespace

TEST_CASE("lbp: constant image, single bright pixel, brute-force recount") {
  const FeatureVector flat = lbp_histogram(FaceImage(7, 5, 0.3));
  CHECK(flat.dim() == 256);
  CHECK(flat.values[255] == 1.0);
  CHECK(total(flat) == 1.0);

  // bright pixel on a dark field: its neighbors compare equal or greater everywhere
  FaceImage spot(5, 5, -1.0);
  for (std::size_t c = 0; c < 3; ++c) spot.at(c, 2, 2) = 1.0;
  const auto codes = lbp_codes(spot);
  for (std::size_t i = 0; i < 9; ++i) CHECK(codes[i] == (i == 4 ? 0 : 255));

  // dark pixel on a bright field: each neighbor has exactly one zero bit, the
  // one pointing at the dark pixel
  FaceImage pit(5, 5, 1.0);
  for (std::size_t c = 0; c < 3; ++c) pit.at(c, 2, 2) = -1.0;
  const auto pc = lbp_codes(pit);
  const int toward[9] = {4, 5, 6, 3, -1, 7, 2, 1, 0};
  for (std::size_t i = 0; i < 9; ++i) {
    if (i == 4) {
      CHECK(pc[i] == 255);
      continue;
    }
    CHECK(std::popcount(static_cast<unsigned>(pc[i])) == 7);
    CHECK(pc[i] == (255 & ~(1 << toward[i])));
  }

  Rng rng(21);
  const FaceImage img = grid_image(rng, 16, 16);
  std::vector<double> hist(256, 0.0);
  const auto g = img.grayscale();
  for (int y = 1; y < 15; ++y)
    for (int x = 1; x < 15; ++x) {
      const double c = g[y * 16 + x];
      const double nb[8] = {g[(y - 1) * 16 + x - 1], g[(y - 1) * 16 + x], g[(y - 1) * 16 + x + 1],
                            g[y * 16 + x + 1],       g[(y + 1) * 16 + x + 1], g[(y + 1) * 16 + x],
                            g[(y + 1) * 16 + x - 1], g[y * 16 + x - 1]};
      int code = 0;
      for (int b = 0; b < 8; ++b) code += (nb[b] >= c) ? (1 << b) : 0;
      hist[code] += 1.0 / 196.0;
    }
  const FeatureVector f = lbp_histogram(img);
  for (int i = 0; i < 256; ++i) CHECK(f.values[i] == doctest::Approx(hist[i]).epsilon(1e-12));
  CHECK_THROWS(lbp_histogram(FaceImage(2, 5)));
}

TEST_CASE("bsif: constant image, gradient filter on a ramp, naive recount") {
  Rng rng(22);
  const FilterBank bank = random_bank(rng, 8);
  const FeatureVector flat = bsif_code(FaceImage(9, 9, 0.4), bank);
  CHECK(flat.dim() == 256);
  CHECK(flat.values[0] == 1.0);

  FilterBank grad;
  grad.n_filters = 1;
  grad.coefficients = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  FaceImage ramp(10, 6);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 10; ++x) ramp.at(c, y, x) = -0.9 + 0.2 * static_cast<double>(x);
  const FeatureVector r = bsif_code(ramp, grad);
  CHECK(r.dim() == 2);
  CHECK(r.values[1] == 1.0);
  CHECK(total(r) == 1.0);

  // naive oracle: zero-padded-free correlation on edge-replicated windows
  const FaceImage img = grid_image(rng, 12, 10);
  const auto g = img.grayscale();
  auto at = [&](int y, int x) { return g[std::clamp(y, 0, 9) * 12 + std::clamp(x, 0, 11)]; };
  std::vector<double> hist(256, 0.0);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x) {
      int code = 0;
      for (int b = 0; b < 8; ++b) {
        double s = 0;
        for (int k = 0; k < 9; ++k) s += bank.coefficients[b * 9 + k] * at(y + k / 3 - 1, x + k % 3 - 1);
        if (s > 1e-12) code |= 1 << b;
      }
      hist[code] += 1.0 / 120.0;
    }
  const FeatureVector f = bsif_code(img, bank);
  for (int i = 0; i < 256; ++i) CHECK(f.values[i] == doctest::Approx(hist[i]).epsilon(1e-12));

  FilterBank empty;
  empty.n_filters = 0;
  CHECK_THROWS(bsif_code(img, empty));
}

TEST_CASE("histogram descriptors are normalized and offset invariant") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const FaceImage img = grid_image(rng, 20, 17);
    FaceImage shifted = img;
    for (auto& v : shifted.values()) v += 0.25;
    const FilterBank bank = random_bank(rng, 1 + trial % 8);
    const FeatureVector a = lbp_histogram(img), b = bsif_code(img, bank);
    CHECK(std::abs(total(a) - 1.0) <= 1e-9);
    CHECK(std::abs(total(b) - 1.0) <= 1e-9);
    for (double v : b.values) CHECK(v >= 0.0);
    CHECK(a.values == lbp_histogram(shifted).values);
    CHECK(b.values == bsif_code(shifted, bank).values);
  }
  const FeatureVector one = bsif_code(grid_image(rng, 8, 8), random_bank(rng, 1));
  CHECK(one.dim() == 2);
  CHECK(std::abs(total(one) - 1.0) <= 1e-9);
}

TEST_CASE("train_filterbank recovers independent binary sources") {
  Rng rng(24);
  // two zero-mean 3x3 patterns mixed by independent +-1 sources
  const std::vector<double> a1 = {1, 0, -1, 2, 0, -2, 1, 0, -1};
  const std::vector<double> a2 = {1, 1, 1, 0.5, -3, 0.5, -0.2, -0.6, -0.2};
  std::bernoulli_distribution coin(0.5);
  std::vector<std::vector<double>> patches;
  std::vector<std::array<double, 2>> sources;
  for (int i = 0; i < 2000; ++i) {
    const double s1 = coin(rng) ? 1 : -1, s2 = coin(rng) ? 1 : -1;
    std::vector<double> p(9);
    for (int k = 0; k < 9; ++k) p[k] = 0.7 * s1 * a1[k] + 0.4 * s2 * a2[k];
    patches.push_back(p);
    sources.push_back({s1, s2});
  }
  const FilterBank bank = train_filterbank(patches, 3, 2, 5);
  CHECK(bank.source == FilterSource::Trained);
  auto corr = [&](std::size_t f, std::size_t s) {
    std::vector<double> r(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i)
      for (std::size_t k = 0; k < 9; ++k) r[i] += bank.filter(f)[k] * patches[i][k];
    double mr = 0, ms = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      mr += r[i] / r.size();
      ms += sources[i][s] / r.size();
    }
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      sxy += (r[i] - mr) * (sources[i][s] - ms);
      sxx += (r[i] - mr) * (r[i] - mr);
      syy += (sources[i][s] - ms) * (sources[i][s] - ms);
    }
    return std::abs(sxy / std::sqrt(sxx * syy));
  };
  const double direct = std::min(corr(0, 0), corr(1, 1));
  const double swapped = std::min(corr(0, 1), corr(1, 0));
  CHECK(std::max(direct, swapped) >= 0.95);

  const FilterBank again = train_filterbank(patches, 3, 2, 5);
  CHECK(again.coefficients == bank.coefficients);
  for (std::size_t f = 0; f < 2; ++f) {
    double m = 0;
    for (double v : bank.filter(f)) m += v;
    CHECK(std::abs(m) <= 1e-9);
  }

  CHECK_THROWS(train_filterbank(patches, 3, 3, 5));  // rank 2 data
  CHECK_THROWS(train_filterbank(std::vector<std::vector<double>>(50, std::vector<double>(9)), 3, 1, 1));
}

TEST_CASE("filter bank trained on image patches: zero mean, independent, file round trip") {
  Rng rng(25);
  std::vector<FaceImage> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(grid_image(rng, 24, 24));
  const auto patches = sample_patches(imgs, 3, 2000, rng);
  const FilterBank bank = train_filterbank(patches, 3, 8, 9);
  Eigen::MatrixXd F(8, 9);
  for (std::size_t f = 0; f < 8; ++f) {
    double m = 0;
    for (std::size_t k = 0; k < 9; ++k) m += F(f, k) = bank.filter(f)[k];
    CHECK(std::abs(m) <= 1e-9);
  }
  CHECK(Eigen::FullPivLU<Eigen::MatrixXd>(F).rank() == 8);

  const auto path = std::filesystem::temp_directory_path() / "morphkit_test_bank.txt";
  write_filterbank(path, bank);
  const FilterBank back = read_filterbank(path);
  CHECK(back.source == FilterSource::File);
  CHECK(back.n_filters == 8);
  CHECK(back.coefficients == bank.coefficients);
  std::filesystem::remove(path);
}

TEST_CASE("landmark_displacement_feature") {
  Rng rng(26);
  std::uniform_real_distribution<double> d(0, 100);
  LandmarkSet a;
  for (int i = 0; i < 68; ++i) a.points.push_back({d(rng), d(rng)});
  const FeatureVector z = landmark_displacement_feature(a, a);
  CHECK(z.dim() == 68);
  for (double v : z.values) CHECK(v == 0.0);
  LandmarkSet b = a;
  for (auto& p : b.points) p = p + Point{3, 4};
  const FeatureVector five = landmark_displacement_feature(a, b);
  for (double v : five.values) CHECK(v == doctest::Approx(5.0).epsilon(1e-12));
  LandmarkSet c;
  for (int i = 0; i < 68; ++i) c.points.push_back({d(rng), d(rng)});
  const FeatureVector r = landmark_displacement_feature(a, c);
  for (int i = 0; i < 68; ++i) {
    const double dx = a.points[i].x - c.points[i].x, dy = a.points[i].y - c.points[i].y;
    CHECK(r.values[i] == doctest::Approx(std::sqrt(dx * dx + dy * dy)).epsilon(1e-12));
  }
  CHECK_THROWS(landmark_displacement_feature(a, LandmarkSet{{{0, 0}}}));
}

TEST_CASE("extract_all keeps input order") {
  Rng rng(27);
  std::vector<FaceImage> imgs;
  for (int i = 0; i < 6; ++i) imgs.push_back(grid_image(rng, 8, 8));
  const auto feats = extract_all(imgs, [](const FaceImage& im) { return lbp_histogram(im); });
  for (std::size_t i = 0; i < imgs.size(); ++i) CHECK(feats[i].values == lbp_histogram(imgs[i]).values);
}
