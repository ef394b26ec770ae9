#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "streamnet/error.hpp"

// Binary PPM (P6) reader/writer. Codec-free and bit-exact, which is the point:
// CLI image I/O must round-trip identically in any ecosystem.

namespace streamnet::ppm {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

  std::size_t byte_count() const { return width * height * 3; }
};

namespace detail {

inline int next_header_token(std::istream& in, std::string& token) {
  token.clear();
  int c = in.get();
  // skip whitespace and '#' comments
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    token.push_back(static_cast<char>(c));
    c = in.get();
  }
  return token.empty() ? EOF : 0;
}

inline std::size_t parse_dimension(const std::string& token, const char* what) {
  std::size_t value = 0;
  for (char c : token) {
    if (c < '0' || c > '9') {
      throw FormatError(std::string("ppm: non-numeric ") + what + " '" + token + "'");
    }
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  if (value == 0) throw FormatError(std::string("ppm: zero ") + what);
  return value;
}

}  // namespace detail

inline Image read(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string());
  std::string token;
  if (detail::next_header_token(file, token) == EOF || token != "P6") {
    throw FormatError("ppm: " + path.string() + " is not a P6 file");
  }
  Image image;
  if (detail::next_header_token(file, token) == EOF) throw FormatError("ppm: missing width");
  image.width = detail::parse_dimension(token, "width");
  if (detail::next_header_token(file, token) == EOF) throw FormatError("ppm: missing height");
  image.height = detail::parse_dimension(token, "height");
  if (detail::next_header_token(file, token) == EOF) throw FormatError("ppm: missing maxval");
  if (token != "255") {
    throw FormatError("ppm: only maxval 255 is supported, got " + token);
  }
  // exactly one whitespace byte separates the header from the raster
  image.pixels.resize(image.byte_count());
  file.read(reinterpret_cast<char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (static_cast<std::size_t>(file.gcount()) != image.pixels.size()) {
    throw FormatError("ppm: " + path.string() + " truncated (" +
                      std::to_string(file.gcount()) + " of " +
                      std::to_string(image.pixels.size()) + " raster bytes)");
  }
  return image;
}

inline void write(const std::filesystem::path& path, const Image& image) {
  if (image.pixels.size() != image.byte_count()) {
    throw ShapeError("ppm: pixel buffer size does not match dimensions");
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write " + path.string());
  file << "P6\n" << image.width << " " << image.height << "\n255\n";
  file.write(reinterpret_cast<const char*>(image.pixels.data()),
             static_cast<std::streamsize>(image.pixels.size()));
  if (!file) throw IoError("short write to " + path.string());
}

/// Interleaved RGB -> planar [3,H,W] bytes.
inline std::vector<std::uint8_t> to_chw(const Image& image) {
  std::vector<std::uint8_t> out(image.byte_count());
  const std::size_t plane = image.width * image.height;
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = image.pixels[3 * i];
    out[plane + i] = image.pixels[3 * i + 1];
    out[2 * plane + i] = image.pixels[3 * i + 2];
  }
  return out;
}

/// Planar [3,H,W] bytes -> interleaved RGB image.
inline Image from_chw(const std::vector<std::uint8_t>& chw, std::size_t height,
                      std::size_t width) {
  if (chw.size() != 3 * height * width) {
    throw ShapeError("ppm: expected " + std::to_string(3 * height * width) +
                     " planar bytes, got " + std::to_string(chw.size()));
  }
  Image image{width, height, std::vector<std::uint8_t>(chw.size())};
  const std::size_t plane = width * height;
  for (std::size_t i = 0; i < plane; ++i) {
    image.pixels[3 * i] = chw[i];
    image.pixels[3 * i + 1] = chw[plane + i];
    image.pixels[3 * i + 2] = chw[2 * plane + i];
  }
  return image;
}

}  // namespace streamnet::ppm
