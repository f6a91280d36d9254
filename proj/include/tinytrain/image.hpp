#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tinytrain/error.hpp"

namespace tinytrain {

// Grayscale raster, row-major, values in [0, 1].
struct ImageBuffer {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
};

// Bilinear resize to side x side with independent axis scaling (aspect ratio
// is not preserved). Sample points sit at pixel centers, so resizing to the
// current size reproduces the input exactly.
inline ImageBuffer resize_bilinear(const ImageBuffer& img, std::size_t side) {
  if (side == 0) throw ValidationError("resize: side must be positive");
  ImageBuffer out;
  out.height = side;
  out.width = side;
  out.pixels.resize(side * side);
  double sy_scale = static_cast<double>(img.height) / static_cast<double>(side);
  double sx_scale = static_cast<double>(img.width) / static_cast<double>(side);
  for (std::size_t i = 0; i < side; ++i) {
    double sy = (static_cast<double>(i) + 0.5) * sy_scale - 0.5;
    if (sy < 0.0) sy = 0.0;
    double max_y = static_cast<double>(img.height - 1);
    if (sy > max_y) sy = max_y;
    std::size_t y0 = static_cast<std::size_t>(sy);
    std::size_t y1 = y0 + 1 < img.height ? y0 + 1 : img.height - 1;
    double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < side; ++j) {
      double sx = (static_cast<double>(j) + 0.5) * sx_scale - 0.5;
      if (sx < 0.0) sx = 0.0;
      double max_x = static_cast<double>(img.width - 1);
      if (sx > max_x) sx = max_x;
      std::size_t x0 = static_cast<std::size_t>(sx);
      std::size_t x1 = x0 + 1 < img.width ? x0 + 1 : img.width - 1;
      double fx = sx - static_cast<double>(x0);
      double top = (1.0 - fx) * img.at(y0, x0) + fx * img.at(y0, x1);
      double bot = (1.0 - fx) * img.at(y1, x0) + fx * img.at(y1, x1);
      out.pixels[i * side + j] = (1.0 - fy) * top + fy * bot;
    }
  }
  return out;
}

namespace detail {

// Skips PGM whitespace and '#' comments, tracking the byte offset for error
// reporting.
inline void skip_pgm_space(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
}

inline std::size_t parse_pgm_uint(const std::string& buf, std::size_t& pos, const char* what,
                                  const std::filesystem::path& path) {
  skip_pgm_space(buf, pos);
  if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9') {
    throw IoError("pgm: expected " + std::string(what) + " at byte " + std::to_string(pos) +
                  " in " + path.string());
  }
  std::size_t v = 0;
  while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
    v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
    ++pos;
  }
  return v;
}

}  // namespace detail

// Binary PGM (P5). Any maxval in [1, 65535] is accepted on read; samples are
// rescaled to [0, 1] as value / maxval (two-byte big-endian samples above 255).
inline ImageBuffer read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("pgm: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') {
    throw IoError("pgm: expected magic 'P5' at byte 0 in " + path.string());
  }
  pos = 2;
  std::size_t width = detail::parse_pgm_uint(buf, pos, "width", path);
  std::size_t height = detail::parse_pgm_uint(buf, pos, "height", path);
  std::size_t maxval = detail::parse_pgm_uint(buf, pos, "maxval", path);
  if (maxval < 1 || maxval > 65535) {
    throw IoError("pgm: maxval " + std::to_string(maxval) + " out of range at byte " +
                  std::to_string(pos) + " in " + path.string());
  }
  if (width == 0 || height == 0) {
    throw IoError("pgm: zero dimension in header of " + path.string());
  }
  if (pos >= buf.size()) {
    throw IoError("pgm: truncated header at byte " + std::to_string(pos) + " in " +
                  path.string());
  }
  ++pos;  // single whitespace byte after maxval

  std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::size_t need = width * height * bytes_per;
  if (buf.size() - pos < need) {
    throw IoError("pgm: expected " + std::to_string(need) + " raster bytes, found " +
                  std::to_string(buf.size() - pos) + " at byte " + std::to_string(pos) +
                  " in " + path.string());
  }
  ImageBuffer img;
  img.width = width;
  img.height = height;
  img.pixels.resize(width * height);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data()) + pos;
  for (std::size_t i = 0; i < width * height; ++i) {
    std::size_t v = bytes_per == 1 ? p[i] : (static_cast<std::size_t>(p[2 * i]) << 8) | p[2 * i + 1];
    img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

// Writes maxval-255 binary PGM with pixel = round(value * 255).
inline void write_pgm(const ImageBuffer& img, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("pgm: cannot write " + path.string());
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::string bytes(img.width * img.height, '\0');
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    double v = img.pixels[i];
    long q = std::lround(v * 255.0);
    if (q < 0) q = 0;
    if (q > 255) q = 255;
    bytes[i] = static_cast<char>(static_cast<unsigned char>(q));
  }
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("pgm: write failed for " + path.string());
}

}  // namespace tinytrain
