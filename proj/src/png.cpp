#include "diffsem/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace diffsem {

namespace {

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  const size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, int width, int height, int channels,
               const std::vector<unsigned char>& pixels) {
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  const size_t row = static_cast<size_t>(width) * channels;
  if (pixels.size() != row * static_cast<size_t>(height))
    throw std::invalid_argument("write_png: pixel buffer size mismatch");

  // Filter byte 0 per scanline.
  std::vector<unsigned char> raw;
  raw.reserve((row + 1) * static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), pixels.begin() + static_cast<std::ptrdiff_t>(y * row),
               pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * row));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: deflate failed");
  z.resize(zlen);

  std::vector<unsigned char> out;
  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.insert(out.end(), sig, sig + 8);
  std::vector<unsigned char> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);                                     // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);                 // gray / truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  const size_t w = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (w != out.size()) throw std::runtime_error("write_png: short write to " + path);
}

void write_image_grid(const std::string& path, const Tensor<float>& images, int count,
                      int per_row) {
  const int n = std::min(count, images.dim(0));
  if (n <= 0) throw std::invalid_argument("write_image_grid: no images");
  const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const int cols = std::min(per_row, n);
  const int rows = (n + cols - 1) / cols;
  const int gap = 2;
  const int gw = cols * w + (cols - 1) * gap;
  const int gh = rows * h + (rows - 1) * gap;
  std::vector<unsigned char> pix(static_cast<size_t>(gw) * gh * c, 0);
  for (int i = 0; i < n; ++i) {
    const int gx = (i % cols) * (w + gap);
    const int gy = (i / cols) * (h + gap);
    const float* img = images.ptr() + static_cast<std::int64_t>(i) * c * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) {
          const float v = img[(ch * h + y) * w + x];
          const float cl = std::min(1.0f, std::max(0.0f, v));
          pix[(static_cast<size_t>(gy + y) * gw + (gx + x)) * c + ch] =
              static_cast<unsigned char>(cl * 255.0f + 0.5f);
        }
  }
  write_png(path, gw, gh, c, pix);
}

}  // namespace diffsem
