#include "morphkit/features/descriptors.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "morphkit/common/parallel.hpp"

namespace morphkit {

namespace {

// Clockwise from the top-left: (dy, dx) for bits 0..7.
constexpr int kLbpOffsets[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}};

FeatureVector normalized_histogram(std::string name, const std::vector<std::size_t>& counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  FeatureVector f{std::move(name), std::vector<double>(counts.size(), 0.0)};
  if (total == 0) return f;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    f.values[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return f;
}

}  // namespace

std::vector<std::uint8_t> lbp_codes(const FaceImage& image) {
  const std::size_t w = image.width(), h = image.height();
  if (w < 3 || h < 3) throw std::invalid_argument("lbp needs an image of at least 3x3");
  const std::vector<double> g = image.grayscale();
  std::vector<std::uint8_t> codes((w - 2) * (h - 2));
  for (std::size_t y = 1; y + 1 < h; ++y) {
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double c = g[y * w + x];
      unsigned code = 0;
      for (unsigned b = 0; b < 8; ++b) {
        const std::size_t yy = y + kLbpOffsets[b][0], xx = x + kLbpOffsets[b][1];
        if (g[yy * w + xx] >= c) code |= 1u << b;
      }
      codes[(y - 1) * (w - 2) + (x - 1)] = static_cast<std::uint8_t>(code);
    }
  }
  return codes;
}

FeatureVector lbp_histogram(const FaceImage& image) {
  std::vector<std::size_t> counts(256, 0);
  for (auto c : lbp_codes(image)) ++counts[c];
  return normalized_histogram("lbp", counts);
}

FilterBank read_filterbank(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open filter bank '" + path.string() + "'");
  std::string tag;
  FilterBank bank;
  if (!(is >> tag >> bank.n_filters >> bank.size) || tag != "BSIF") {
    throw std::runtime_error("'" + path.string() + "' is not a BSIF filter bank");
  }
  if (bank.n_filters == 0 || bank.n_filters > 16 || bank.size == 0 || bank.size % 2 == 0) {
    throw std::runtime_error("filter bank needs 1..16 filters of odd size");
  }
  bank.coefficients.resize(bank.n_filters * bank.size * bank.size);
  for (auto& v : bank.coefficients) {
    if (!(is >> v)) throw std::runtime_error("filter bank '" + path.string() + "' is truncated");
  }
  bank.source = FilterSource::File;
  return bank;
}

void write_filterbank(const std::filesystem::path& path, const FilterBank& bank) {
  if (bank.coefficients.size() != bank.n_filters * bank.size * bank.size) {
    throw std::invalid_argument("filter bank coefficient count does not match its shape");
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << "BSIF " << bank.n_filters << ' ' << bank.size << '\n';
  os.precision(17);
  const std::size_t per = bank.size * bank.size;
  for (std::size_t i = 0; i < bank.coefficients.size(); ++i) {
    os << bank.coefficients[i] << ((i + 1) % bank.size == 0 ? '\n' : ' ');
    if ((i + 1) % per == 0 && i + 1 < bank.coefficients.size()) os << '\n';
  }
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<double> bsif_responses(const std::vector<double>& gray, std::size_t width, std::size_t height,
                                   std::span<const double> filter, std::size_t size) {
  if (gray.size() != width * height) throw std::invalid_argument("bsif: image buffer size mismatch");
  if (filter.size() != size * size || size % 2 == 0) throw std::invalid_argument("bsif: bad filter shape");
  const int r = static_cast<int>(size / 2);
  const int w = static_cast<int>(width), h = static_cast<int>(height);
  std::vector<double> out(gray.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double c = gray[static_cast<std::size_t>(y * w + x)];
      double s = 0.0;
      std::size_t k = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -r; dx <= r; ++dx, ++k) {
          const int xx = std::clamp(x + dx, 0, w - 1);
          s += filter[k] * (gray[static_cast<std::size_t>(yy * w + xx)] - c);
        }
      }
      out[static_cast<std::size_t>(y * w + x)] = s;
    }
  }
  return out;
}

FeatureVector bsif_code(const FaceImage& image, const FilterBank& bank) {
  if (bank.n_filters == 0) throw std::invalid_argument("bsif: empty filter bank");
  if (bank.n_filters > 16) throw std::invalid_argument("bsif: at most 16 filters");
  if (bank.coefficients.size() != bank.n_filters * bank.size * bank.size) {
    throw std::invalid_argument("bsif: coefficient count does not match the bank shape");
  }
  const std::vector<double> g = image.grayscale();
  std::vector<unsigned> codes(g.size(), 0);
  for (std::size_t b = 0; b < bank.n_filters; ++b) {
    const auto resp = bsif_responses(g, image.width(), image.height(), bank.filter(b), bank.size);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (resp[i] > 0.0) codes[i] |= 1u << b;
    }
  }
  std::vector<std::size_t> counts(std::size_t{1} << bank.n_filters, 0);
  for (auto c : codes) ++counts[c];
  return normalized_histogram("bsif", counts);
}

FilterBank train_filterbank(const std::vector<std::vector<double>>& patches, std::size_t size,
                            std::size_t n_filters, std::uint64_t seed, const IcaOptions& options) {
  const std::size_t d = size * size;
  if (n_filters == 0 || n_filters > 16) throw std::invalid_argument("train_filterbank: 1..16 filters");
  if (patches.size() < 100 * n_filters) {
    throw std::invalid_argument("train_filterbank: need at least 100 patches per filter");
  }
  const auto N = static_cast<Eigen::Index>(patches.size());
  const auto D = static_cast<Eigen::Index>(d);
  const auto n = static_cast<Eigen::Index>(n_filters);

  // Per-patch DC removal, then centering across the set.
  Eigen::MatrixXd X(D, N);
  for (Eigen::Index j = 0; j < N; ++j) {
    const auto& p = patches[static_cast<std::size_t>(j)];
    if (p.size() != d) throw std::invalid_argument("train_filterbank: patch has the wrong size");
    double mean = 0;
    for (double v : p) mean += v;
    mean /= static_cast<double>(d);
    for (Eigen::Index i = 0; i < D; ++i) X(i, j) = p[static_cast<std::size_t>(i)] - mean;
  }
  X.colwise() -= X.rowwise().mean();

  const Eigen::MatrixXd C = X * X.transpose() / static_cast<double>(N);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
  const Eigen::VectorXd evals = eig.eigenvalues().reverse();
  const Eigen::MatrixXd evecs = eig.eigenvectors().rowwise().reverse();
  if (n > D || evals(n - 1) <= 1e-10 * std::max(evals(0), 1e-300)) {
    throw std::runtime_error("train_filterbank: patch covariance has rank below n_filters");
  }
  Eigen::MatrixXd V(n, D);
  for (Eigen::Index i = 0; i < n; ++i) V.row(i) = evecs.col(i).transpose() / std::sqrt(evals(i));
  const Eigen::MatrixXd Z = V * X;

  auto decorrelate = [](const Eigen::MatrixXd& W) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W * W.transpose());
    const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    return Eigen::MatrixXd(es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * W);
  };

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd W(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) W(i, j) = normal(rng);
  W = decorrelate(W);

  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    const Eigen::MatrixXd Y = W * Z;
    const Eigen::MatrixXd G = Y.array().cube().matrix();
    const Eigen::VectorXd gprime = 3.0 * Y.array().square().rowwise().mean().matrix();
    Eigen::MatrixXd Wn = G * Z.transpose() / static_cast<double>(N) - gprime.asDiagonal() * W;
    Wn = decorrelate(Wn);
    const double change = (1.0 - (Wn * W.transpose()).diagonal().array().abs()).abs().maxCoeff();
    W = Wn;
    if (change < options.tolerance) break;
  }

  const Eigen::MatrixXd F = W * V;
  FilterBank bank;
  bank.n_filters = n_filters;
  bank.size = size;
  bank.source = FilterSource::Trained;
  bank.coefficients.resize(n_filters * d);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd f = F.row(i).transpose();
    f.array() -= f.mean();
    // Fix the sign so the largest-magnitude coefficient is positive.
    Eigen::Index arg = 0;
    f.cwiseAbs().maxCoeff(&arg);
    if (f(arg) < 0) f = -f;
    for (Eigen::Index k = 0; k < D; ++k) bank.coefficients[static_cast<std::size_t>(i * D + k)] = f(k);
  }
  return bank;
}

std::vector<std::vector<double>> sample_patches(std::span<const FaceImage> images, std::size_t size,
                                                std::size_t count, Rng& rng) {
  if (images.empty()) throw std::invalid_argument("sample_patches: no images");
  std::vector<std::vector<double>> grays;
  grays.reserve(images.size());
  for (const auto& img : images) {
    if (img.width() < size || img.height() < size) throw std::invalid_argument("sample_patches: image too small");
    grays.push_back(img.grayscale());
  }
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  std::vector<std::vector<double>> out(count, std::vector<double>(size * size));
  for (auto& patch : out) {
    const std::size_t i = pick(rng);
    const std::size_t w = images[i].width();
    std::uniform_int_distribution<std::size_t> px(0, w - size), py(0, images[i].height() - size);
    const std::size_t x0 = px(rng), y0 = py(rng);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) patch[y * size + x] = grays[i][(y0 + y) * w + x0 + x];
  }
  return out;
}

FeatureVector landmark_displacement_feature(const LandmarkSet& l_i, const LandmarkSet& l_j) {
  if (l_i.size() != l_j.size()) throw std::invalid_argument("landmark sets have different sizes");
  FeatureVector f{"landmark_distance", std::vector<double>(l_i.size())};
  for (std::size_t k = 0; k < l_i.size(); ++k) {
    const Point d = l_i.points[k] - l_j.points[k];
    f.values[k] = std::hypot(d.x, d.y);
  }
  return f;
}

std::vector<FeatureVector> extract_all(std::span<const FaceImage> images,
                                       const std::function<FeatureVector(const FaceImage&)>& fn) {
  std::vector<FeatureVector> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) { out[i] = fn(images[i]); });
  return out;
}

}  // namespace morphkit
