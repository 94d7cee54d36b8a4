#pragma once

// Minimal multi-channel image plus binary PGM/PPM (P5/P6, 8-bit) I/O.

#include <raycal/core.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace raycal {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;  // row-major, channels interleaved

  Image() = default;
  Image(int w, int h, int c = 1, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
    if (w <= 0 || h <= 0 || c <= 0) throw ParameterError("image dimensions must be positive");
  }

  double& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
};

/// Peak signal-to-noise ratio in dB over the centered crop keeping
/// `crop_fraction` of each dimension. Identical crops give +infinity.
inline double psnr(const Image& a, const Image& b, double crop_fraction = 1.0, double peak = 255.0) {
  if (!a.same_shape(b)) throw ParameterError("psnr: image shapes differ");
  const int mx = static_cast<int>(std::round(a.width * (1.0 - crop_fraction) / 2.0));
  const int my = static_cast<int>(std::round(a.height * (1.0 - crop_fraction) / 2.0));
  double sse = 0.0;
  std::size_t count = 0;
  for (int y = my; y < a.height - my; ++y)
    for (int x = mx; x < a.width - mx; ++x)
      for (int c = 0; c < a.channels; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        sse += d * d;
        ++count;
      }
  if (count == 0) throw ParameterError("psnr: empty crop");
  const double mse = sse / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  int value = 0;
  if (!(in >> value)) throw LoadError(path + ": malformed PNM header");
  return value;
}

}  // namespace detail

inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image '" + path + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw LoadError(path + ": only binary P5/P6 images are supported");
  const int w = detail::read_pnm_int(in, path);
  const int h = detail::read_pnm_int(in, path);
  const int maxval = detail::read_pnm_int(in, path);
  if (w <= 0 || h <= 0) throw LoadError(path + ": non-positive image size");
  if (maxval <= 0 || maxval > 255) throw LoadError(path + ": only 8-bit images are supported");
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw LoadError(path + ": truncated raster");
  Image img(w, h, channels);
  std::transform(raw.begin(), raw.end(), img.data.begin(), [](unsigned char v) { return static_cast<double>(v); });
  return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ParameterError("write_pnm: need 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image '" + path + "'");
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.data.size());
  std::transform(img.data.begin(), img.data.end(), raw.begin(), [](double v) {
    return static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
  });
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

/// Grayscale checkerboard with softened edges (Gaussian-smoothed step of
/// width `edge_sigma` pixels). Pixel (x, y) is evaluated at its center.
inline Image checkerboard(int width, int height, double square, double edge_sigma = 1.5, double low = 32.0,
                          double high = 224.0) {
  Image img(width, height, 1);
  auto soft = [&](double coord) {
    // +1 / -1 square wave smoothed by erf around each transition
    const double phase = coord / square;
    const double k = std::floor(phase);
    const double frac = (phase - k) * square;
    const double sign = (static_cast<long>(k) % 2 == 0) ? 1.0 : -1.0;
    const double s = edge_sigma * std::sqrt(2.0);
    const double to_next = square - frac;
    return sign * (std::erf(frac / s) + std::erf(to_next / s) - 1.0);
  };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = soft(x + 0.5) * soft(y + 0.5);
      img.at(x, y) = low + (high - low) * 0.5 * (1.0 + v);
    }
  return img;
}

}  // namespace raycal
