#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcs/image_grid.hpp"

namespace mcs::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// [0,1] -> 0..255 with round-half-away-from-zero; out-of-range values clamp.
inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline double from_byte(std::uint8_t b) { return static_cast<double>(b) / 255.0; }

/// Snap values to the 8-bit grid a PGM round trip would produce.
inline ImageGrid quantize8(ImageGrid img) {
  for (double& v : img.values()) v = from_byte(to_byte(v));
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const ImageGrid& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) bytes[i] = static_cast<char>(to_byte(img[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

namespace detail {

inline std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

inline int parse_header_int(const std::string& tok, const std::string& what, const std::string& path) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw IoError("'" + path + "': malformed PGM header (" + what + ")");
  return std::stoi(tok);
}

}  // namespace detail

/// Reads 8-bit binary PGM (P5, maxval 1..255). Values are scaled by 1/maxval.
inline ImageGrid read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  if (detail::next_token(in) != "P5") throw IoError("'" + path.string() + "': not a binary PGM (P5)");
  const int w = detail::parse_header_int(detail::next_token(in), "width", path.string());
  const int h = detail::parse_header_int(detail::next_token(in), "height", path.string());
  const int maxval = detail::parse_header_int(detail::next_token(in), "maxval", path.string());
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) throw IoError("'" + path.string() + "': unsupported PGM geometry");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError("'" + path.string() + "': truncated pixel data");
  ImageGrid img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<double>(bytes[i]) / maxval;
  return img;
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace mcs::io
