#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "morphkit/gradcore/tensor.hpp"

namespace morphkit {

// Planar 3-channel image with values in [-1, 1]; (c, y, x) indexing.
class FaceImage {
 public:
  static constexpr std::size_t kChannels = 3;

  FaceImage() = default;
  FaceImage(std::size_t width, std::size_t height, double fill = 0.0);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * height_ + y) * width_ + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height_ + y) * width_ + x];
  }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  // Clamps every value into [-1, 1].
  void clamp();
  // Unweighted mean over channels, row-major [height * width].
  std::vector<double> grayscale() const;
  // Network input tensor [3, height, width].
  Tensor to_tensor() const;

  friend bool operator==(const FaceImage&, const FaceImage&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> data_;
};

// Interleaved 8-bit RGB raster as stored in PPM files.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

RawImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RawImage& image);

// Bilinear resize to size x size (pixel-center aligned), then v/127.5 - 1.
FaceImage normalize_image(const RawImage& raw, std::size_t size = 112);
// Inverse of the value mapping, rounded to nearest and clamped to [0, 255].
RawImage quantize(const FaceImage& image);

FaceImage load_face(const std::filesystem::path& path, std::size_t size);
void save_face(const std::filesystem::path& path, const FaceImage& image);

}  // namespace morphkit
