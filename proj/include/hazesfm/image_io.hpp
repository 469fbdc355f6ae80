#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "hazesfm/image.hpp"

namespace hazesfm {

// PFM ("Pf" single channel / "PF" RGB) and binary PPM (P6, maxval 255) codecs.
// PFM carries float data bit-exactly: little-endian payload (negative scale),
// rows stored bottom-up. PFM holds 32-bit floats, so round trips are exact for
// float-representable samples.

namespace detail {

constexpr long kMaxDim = 1 << 20;

inline std::string read_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {  // comment to end of line
      while ((ch = in.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (!std::isspace(ch)) {
      tok.push_back(static_cast<char>(ch));
      break;
    }
  }
  while ((ch = in.get()) != EOF) {
    if (std::isspace(ch)) break;
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw std::runtime_error("image header: unexpected end of file");
  return tok;
}

inline long parse_dim(const std::string& tok, const char* what) {
  long v = 0;
  try {
    v = std::stol(tok);
  } catch (...) {
    throw std::runtime_error(std::string("image header: bad ") + what);
  }
  if (v <= 0 || v > kMaxDim)
    throw std::runtime_error(std::string("image header: ") + what + " out of range");
  return v;
}

}  // namespace detail

inline ImageF read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pfm: cannot open " + path);
  const std::string magic = detail::read_token(in);
  int channels = 0;
  if (magic == "PF") channels = 3;
  else if (magic == "Pf") channels = 1;
  else throw std::runtime_error("read_pfm: malformed header '" + magic + "' in " + path);
  const long w = detail::parse_dim(detail::read_token(in), "width");
  const long h = detail::parse_dim(detail::read_token(in), "height");
  double scale = 0.0;
  try {
    scale = std::stod(detail::read_token(in));
  } catch (...) {
    throw std::runtime_error("read_pfm: malformed scale in " + path);
  }
  if (!(scale < 0.0))
    throw std::runtime_error("read_pfm: big-endian data unsupported in " + path);

  ImageF img(channels, static_cast<int>(h), static_cast<int>(w));
  std::vector<float> row(static_cast<size_t>(w) * channels);
  for (long y = h - 1; y >= 0; --y) {  // bottom-up storage
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw std::runtime_error("read_pfm: truncated payload in " + path);
    for (long x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        const float v = row[static_cast<size_t>(x) * channels + c];
        if (!std::isfinite(v))
          throw std::runtime_error("read_pfm: non-finite sample in " + path);
        img.at(c, static_cast<int>(y), static_cast<int>(x)) = v;
      }
  }
  return img;
}

inline void write_pfm(const ImageF& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_pfm: channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pfm: cannot open " + path);
  out << (img.channels == 3 ? "PF" : "Pf") << "\n"
      << img.width << " " << img.height << "\n"
      << "-1.0\n";
  std::vector<float> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[static_cast<size_t>(x) * img.channels + c] =
            static_cast<float>(img.at(c, y, x));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write_pfm: write failed for " + path);
}

// Quantization convention: byte = round(clamp(v, 0, 1) * 255), v = byte / 255.
inline double byte_to_unit(uint8_t b) { return b / 255.0; }
inline uint8_t unit_to_byte(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline ImageF read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  const std::string magic = detail::read_token(in);
  if (magic != "P6")
    throw std::runtime_error("read_ppm: malformed header '" + magic + "' in " + path);
  const long w = detail::parse_dim(detail::read_token(in), "width");
  const long h = detail::parse_dim(detail::read_token(in), "height");
  const long maxval = detail::parse_dim(detail::read_token(in), "maxval");
  if (maxval != 255)
    throw std::runtime_error("read_ppm: unsupported maxval " + std::to_string(maxval) +
                             " in " + path);
  ImageF img(3, static_cast<int>(h), static_cast<int>(w));
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (long y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
    if (!in) throw std::runtime_error("read_ppm: truncated payload in " + path);
    for (long x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, static_cast<int>(y), static_cast<int>(x)) =
            byte_to_unit(row[static_cast<size_t>(x) * 3 + c]);
  }
  return img;
}

inline void write_ppm(const ImageF& img, const std::string& path) {
  if (img.channels != 3) throw std::invalid_argument("write_ppm: needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * 3 + c] = unit_to_byte(img.at(c, y, x));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

}  // namespace hazesfm
