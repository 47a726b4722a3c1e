#include "morphkit/imaging/face_image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace morphkit {

FaceImage::FaceImage(std::size_t width, std::size_t height, double fill)
    : width_(width), height_(height), data_(kChannels * width * height, fill) {}

void FaceImage::clamp() {
  for (auto& v : data_) v = std::clamp(v, -1.0, 1.0);
}

std::vector<double> FaceImage::grayscale() const {
  const std::size_t n = width_ * height_;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = (data_[i] + data_[n + i] + data_[2 * n + i]) / 3.0;
  return g;
}

Tensor FaceImage::to_tensor() const { return Tensor(Shape{kChannels, height_, width_}, data_); }

namespace {

// Skips whitespace and '#' comments between PPM header tokens.
std::size_t read_header_int(std::istream& is) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  long v = -1;
  if (!(is >> v) || v < 0) throw std::runtime_error("malformed PPM header");
  return static_cast<std::size_t>(v);
}

}  // namespace

RawImage read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image '" + path.string() + "'");
  char magic[2] = {};
  if (!is.read(magic, 2) || magic[0] != 'P' || magic[1] != '6') {
    throw std::runtime_error("'" + path.string() + "' is not a binary PPM (P6)");
  }
  RawImage img;
  img.width = read_header_int(is);
  img.height = read_header_int(is);
  const std::size_t maxval = read_header_int(is);
  if (maxval != 255) throw std::runtime_error("only 8-bit PPM is supported");
  is.get();  // single whitespace before raster
  img.rgb.resize(img.width * img.height * 3);
  if (!is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()))) {
    throw std::runtime_error("truncated PPM raster in '" + path.string() + "'");
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const RawImage& image) {
  if (image.rgb.size() != image.width * image.height * 3) throw std::invalid_argument("bad raster size");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

FaceImage normalize_image(const RawImage& raw, std::size_t size) {
  if (raw.width == 0 || raw.height == 0 || size == 0) {
    throw std::invalid_argument("cannot normalize a zero-dimension image");
  }
  FaceImage out(size, size);
  const double sx = static_cast<double>(raw.width) / static_cast<double>(size);
  const double sy = static_cast<double>(raw.height) / static_cast<double>(size);
  auto px = [&](std::size_t c, std::size_t y, std::size_t x) {
    return static_cast<double>(raw.rgb[(y * raw.width + x) * 3 + c]);
  };
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(raw.height - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(fy));
    const std::size_t y1 = std::min(y0 + 1, raw.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(raw.width - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(fx));
      const std::size_t x1 = std::min(x0 + 1, raw.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - wx) * px(c, y0, x0) + wx * px(c, y0, x1);
        const double bot = (1 - wx) * px(c, y1, x0) + wx * px(c, y1, x1);
        const double v = (1 - wy) * top + wy * bot;
        out.at(c, y, x) = v / 127.5 - 1.0;
      }
    }
  }
  out.clamp();
  return out;
}

RawImage quantize(const FaceImage& image) {
  RawImage raw;
  raw.width = image.width();
  raw.height = image.height();
  raw.rgb.resize(raw.width * raw.height * 3);
  for (std::size_t y = 0; y < raw.height; ++y) {
    for (std::size_t x = 0; x < raw.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::round((image.at(c, y, x) + 1.0) * 127.5);
        raw.rgb[(y * raw.width + x) * 3 + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return raw;
}

FaceImage load_face(const std::filesystem::path& path, std::size_t size) {
  return normalize_image(read_ppm(path), size);
}

void save_face(const std::filesystem::path& path, const FaceImage& image) {
  write_ppm(path, quantize(image));
}

}  // namespace morphkit
