#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "morphkit/geometry/landmarks.hpp"
#include "morphkit/imaging/face_image.hpp"

namespace morphkit {

struct FeatureVector {
  std::string descriptor;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

// Normalized 256-bin histogram of 3x3 LBP codes over interior pixels of the
// grayscale image. Bit b is set iff neighbor b >= center; neighbors run
// clockwise from the top-left.
FeatureVector lbp_histogram(const FaceImage& image);

// Per-pixel LBP codes, row-major over the (width-2) x (height-2) interior.
std::vector<std::uint8_t> lbp_codes(const FaceImage& image);

enum class FilterSource { File, Trained };

struct FilterBank {
  std::size_t n_filters = 8;
  std::size_t size = 3;
  // n_filters * size * size, filter-major then row-major.
  std::vector<double> coefficients;
  FilterSource source = FilterSource::Trained;

  std::span<const double> filter(std::size_t i) const {
    return std::span<const double>(coefficients).subspan(i * size * size, size * size);
  }
};

// Text format: "BSIF n size" header, then n*size*size reals.
FilterBank read_filterbank(const std::filesystem::path& path);
void write_filterbank(const std::filesystem::path& path, const FilterBank& bank);

// Filter responses with edge-replicated borders. Each response is taken on the
// window relative to its center pixel, sum_k f_k (p_k - p_center), which
// equals plain correlation for zero-mean filters and is exactly zero on flat
// regions.
std::vector<double> bsif_responses(const std::vector<double>& gray, std::size_t width, std::size_t height,
                                   std::span<const double> filter, std::size_t size);

// Normalized 2^n histogram of BSIF codes; bit b set iff response b > 0.
FeatureVector bsif_code(const FaceImage& image, const FilterBank& bank);

struct IcaOptions {
  std::size_t max_iterations = 500;
  double tolerance = 1e-6;
};

// FastICA with cubic nonlinearity and symmetric decorrelation on
// DC-removed, PCA-whitened patches. Each patch has size*size values.
FilterBank train_filterbank(const std::vector<std::vector<double>>& patches, std::size_t size,
                            std::size_t n_filters, std::uint64_t seed, const IcaOptions& options = {});

// Random size x size grayscale patches drawn uniformly from the images.
std::vector<std::vector<double>> sample_patches(std::span<const FaceImage> images, std::size_t size,
                                                std::size_t count, Rng& rng);

// Per-landmark Euclidean distances |l_i[k] - l_j[k]|.
FeatureVector landmark_displacement_feature(const LandmarkSet& l_i, const LandmarkSet& l_j);

// Applies fn to every image in parallel; output order follows the input.
std::vector<FeatureVector> extract_all(std::span<const FaceImage> images,
                                       const std::function<FeatureVector(const FaceImage&)>& fn);

}  // namespace morphkit
