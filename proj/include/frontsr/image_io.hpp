#pragma once

// 8-bit binary PGM (P5, grayscale) and PPM (P6, color) image files.
// Values are quantized with round(255 * clamp(v, 0, 1)) on write and mapped
// back to byte/255.0 on read. Writers emit a canonical header so identical
// tensors produce identical bytes; readers accept standard whitespace and
// '#' comments.

#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

namespace frontsr::img {

inline std::uint8_t quantize(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return std::uint8_t(std::lround(255.0 * c));
}

inline void write_image(const std::filesystem::path& path, const Tensor& x) {
  check(x.rank() == 3 && (x.dim(0) == 1 || x.dim(0) == 3),
        "write_image: tensor must be (1,H,W) or (3,H,W)");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::string out = C == 1 ? "P5\n" : "P6\n";
  out += std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + C * H * W);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t c = 0; c < C; ++c) out.push_back(char(quantize(x.at(c, h, w))));
  write_file_atomic(path, out);
}

namespace detail {

// Skip whitespace and '#'-to-end-of-line comments, then parse an unsigned int.
inline std::size_t parse_header_int(const std::string& s, std::size_t& pos,
                                    const std::string& what) {
  while (pos < s.size()) {
    const char c = s[pos];
    if (c == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  check_runtime(pos < s.size() && s[pos] >= '0' && s[pos] <= '9',
                "image header: expected " + what);
  std::size_t v = 0;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
    v = v * 10 + std::size_t(s[pos] - '0');
    check_runtime(v <= (std::size_t(1) << 20), "image header: " + what + " out of range");
    ++pos;
  }
  return v;
}

}  // namespace detail

inline Tensor read_image(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  check_runtime(raw.size() >= 2 && raw[0] == 'P' && (raw[1] == '5' || raw[1] == '6'),
                "not a P5/P6 image file: " + path.string());
  const std::size_t C = raw[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const std::size_t W = detail::parse_header_int(raw, pos, "width");
  const std::size_t H = detail::parse_header_int(raw, pos, "height");
  const std::size_t maxval = detail::parse_header_int(raw, pos, "maxval");
  check_runtime(maxval == 255, "image maxval must be 255: " + path.string());
  check_runtime(pos < raw.size() &&
                    (raw[pos] == ' ' || raw[pos] == '\t' || raw[pos] == '\r' || raw[pos] == '\n'),
                "image header: missing separator before pixel data");
  ++pos;
  check_runtime(raw.size() - pos == C * H * W, "image pixel payload has the wrong size: " +
                                                   path.string());
  Tensor t({C, H, W});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t c = 0; c < C; ++c)
        t.at(c, h, w) = double(std::uint8_t(raw[pos++])) / 255.0;
  return t;
}

}  // namespace frontsr::img
