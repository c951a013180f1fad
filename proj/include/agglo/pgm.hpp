#pragma once

// Binary PGM (P5, 8-bit) image input and output.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "agglo/core.hpp"
#include "agglo/io.hpp"

namespace agglo::pgm {

namespace detail {

// Reads the next whitespace-separated token, skipping '#' comments.
inline std::string next_token(const std::string& data, std::size_t& pos) {
  while (pos < data.size()) {
    const char c = data[pos];
    if (c == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
  if (start == pos) throw std::runtime_error("PGM: truncated header");
  return data.substr(start, pos - start);
}

inline int parse_dim(const std::string& tok, const char* what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(tok, &used);
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("PGM: bad ") + what + " '" + tok + "'");
  }
  if (used != tok.size() || v < 1)
    throw std::runtime_error(std::string("PGM: bad ") + what + " '" + tok + "'");
  return v;
}

}  // namespace detail

inline GrayImage decode(const std::string& data, double pixel_pitch = 15.0) {
  std::size_t pos = 0;
  if (detail::next_token(data, pos) != "P5")
    throw std::runtime_error("PGM: expected binary P5 magic");
  const int w = detail::parse_dim(detail::next_token(data, pos), "width");
  const int h = detail::parse_dim(detail::next_token(data, pos), "height");
  const int maxval = detail::parse_dim(detail::next_token(data, pos), "maxval");
  if (maxval > 255)
    throw std::runtime_error("PGM: only 8-bit images supported (maxval " +
                             std::to_string(maxval) + ")");
  ++pos;  // single whitespace byte after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h;
  if (data.size() - pos < need) throw std::runtime_error("PGM: truncated pixel data");
  GrayImage img(w, h, 0.0, pixel_pitch);
  for (std::size_t i = 0; i < need; ++i)
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(data[pos + i]));
  return img;
}

inline GrayImage read(const std::filesystem::path& path, double pixel_pitch = 15.0) {
  return decode(io::read_file(path), pixel_pitch);
}

inline std::string encode(const GrayImage& img) {
  if (img.empty()) throw std::invalid_argument("PGM: empty image");
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (double v : img.pixels) {
    const double clamped = v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamped))));
  }
  return out;
}

inline void write(const std::filesystem::path& path, const GrayImage& img) {
  io::atomic_write(path, encode(img));
}

inline std::string encode_mask(const BinaryMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) +
                    "\n255\n";
  out.reserve(out.size() + mask.bits.size());
  for (std::uint8_t b : mask.bits) out.push_back(b ? '\xff' : '\0');
  return out;
}

inline void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  io::atomic_write(path, encode_mask(mask));
}

inline BinaryMask decode_mask(const std::string& data) {
  const GrayImage img = decode(data);
  BinaryMask mask(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) mask.bits[i] = img.pixels[i] >= 128.0;
  return mask;
}

inline BinaryMask read_mask(const std::filesystem::path& path) {
  return decode_mask(io::read_file(path));
}

}  // namespace agglo::pgm
