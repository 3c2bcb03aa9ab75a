#include "stylediff/image_io.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace stylediff {

namespace {

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t get_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

uint8_t to_byte(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(c * 255.0f + 0.5f);
}

}  // namespace

void write_bmp(const std::string& path, const Tensorf& image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw DimensionError("write_bmp expects HxWx3, got " + shape_str(image.shape()));
  const Index H = image.dim(0), W = image.dim(1);
  const Index row_bytes = (3 * W + 3) / 4 * 4;
  const uint32_t data_size = static_cast<uint32_t>(row_bytes * H);
  std::vector<uint8_t> buf;
  buf.reserve(54 + data_size);
  buf.push_back('B');
  buf.push_back('M');
  put_u32(buf, 54 + data_size);
  put_u32(buf, 0);
  put_u32(buf, 54);
  put_u32(buf, 40);  // BITMAPINFOHEADER
  put_u32(buf, static_cast<uint32_t>(W));
  put_u32(buf, static_cast<uint32_t>(H));
  put_u16(buf, 1);
  put_u16(buf, 24);
  put_u32(buf, 0);
  put_u32(buf, data_size);
  put_u32(buf, 2835);
  put_u32(buf, 2835);
  put_u32(buf, 0);
  put_u32(buf, 0);
  // rows bottom-up, BGR
  for (Index y = H - 1; y >= 0; --y) {
    size_t row_start = buf.size();
    for (Index x = 0; x < W; ++x) {
      const float* px = image.data() + (y * W + x) * 3;
      buf.push_back(to_byte(px[2]));
      buf.push_back(to_byte(px[1]));
      buf.push_back(to_byte(px[0]));
    }
    while (buf.size() - row_start < static_cast<size_t>(row_bytes)) buf.push_back(0);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write on " + path);
}

Tensorf read_bmp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 54 || buf[0] != 'B' || buf[1] != 'M')
    throw std::runtime_error(path + " is not a BMP file");
  uint32_t off = get_u32(&buf[10]);
  int32_t W = static_cast<int32_t>(get_u32(&buf[18]));
  int32_t H = static_cast<int32_t>(get_u32(&buf[22]));
  uint16_t bpp = get_u16(&buf[28]);
  uint32_t comp = get_u32(&buf[30]);
  if (bpp != 24 || comp != 0)
    throw std::runtime_error(path + ": only 24-bit uncompressed BMP supported");
  if (W <= 0 || H <= 0) throw std::runtime_error(path + ": bad dimensions");
  const Index row_bytes = (3 * W + 3) / 4 * 4;
  if (buf.size() < off + static_cast<size_t>(row_bytes) * static_cast<size_t>(H))
    throw std::runtime_error(path + ": truncated pixel data");
  Tensorf img = Tensorf::uninit({H, W, 3});
  for (Index y = 0; y < H; ++y) {
    const uint8_t* row = buf.data() + off + (H - 1 - y) * row_bytes;
    for (Index x = 0; x < W; ++x) {
      float* px = img.data() + (y * W + x) * 3;
      px[0] = static_cast<float>(row[3 * x + 2]) / 255.0f;
      px[1] = static_cast<float>(row[3 * x + 1]) / 255.0f;
      px[2] = static_cast<float>(row[3 * x + 0]) / 255.0f;
    }
  }
  return img;
}

Tensorf quantize_to_8bit(const Tensorf& image) {
  Tensorf out = Tensorf::uninit(image.shape());
  for (Index i = 0; i < image.numel(); ++i)
    out[i] = static_cast<float>(to_byte(image[i])) / 255.0f;
  return out;
}

}  // namespace stylediff
