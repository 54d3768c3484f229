#pragma once

// 8-bit RGB images and binary PPM (P6) / PGM (P5) io.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hparse {

class RasterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rgb = std::array<std::uint8_t, 3>;

struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // row-major, interleaved

  Image() = default;
  Image(int h, int w, Rgb fill = {0, 0, 0}) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3) {
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
      rgb[i] = fill[0];
      rgb[i + 1] = fill[1];
      rgb[i + 2] = fill[2];
    }
  }

  [[nodiscard]] Rgb at(int y, int x) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  void set(int y, int x, Rgb c) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline void write_netpbm(const std::filesystem::path& path, const char* magic, int w, int h,
                         const std::vector<std::uint8_t>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RasterError("cannot write " + path.string());
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw RasterError("cannot write " + path.string());
}

inline std::vector<std::uint8_t> read_netpbm(const std::filesystem::path& path, const std::string& magic,
                                             int channels, int& w, int& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RasterError("cannot open " + path.string());
  std::string m;
  int maxval = 0;
  in >> m;
  // skip comment lines between header tokens
  auto next_int = [&](int& v) {
    while (in >> std::ws && in.peek() == '#') in.ignore(1 << 20, '\n');
    in >> v;
  };
  next_int(w);
  next_int(h);
  next_int(maxval);
  if (!in || m != magic || w <= 0 || h <= 0 || maxval != 255) throw RasterError("unsupported raster header in " + path.string());
  in.get();
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) throw RasterError("truncated raster " + path.string());
  return data;
}

}  // namespace detail

inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  detail::write_netpbm(path, "P6", img.width, img.height, img.rgb);
}

inline Image read_ppm(const std::filesystem::path& path) {
  Image img;
  img.rgb = detail::read_netpbm(path, "P6", 3, img.width, img.height);
  return img;
}

/// Single-channel 8-bit map (e.g. a semantic label map with ids < 256).
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  detail::write_netpbm(path, "P5", img.width, img.height, img.values);
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  GrayImage img;
  img.values = detail::read_netpbm(path, "P5", 1, img.width, img.height);
  return img;
}

}  // namespace hparse
