#include "xmac/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

// Minimal PNG container on top of zlib: color types 0 (gray) and 2 (RGB),
// bit depths 8 and 16, no interlace. All five scanline filters are handled
// on read; writes use filter 0 throughout.

namespace xmac {

namespace {

constexpr unsigned char kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint32_t be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

struct RawPng {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  // interleaved samples scaled to [0,1]
  std::vector<double> samples;
};

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

RawPng read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open PNG: " + path);
  std::vector<unsigned char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0)
    throw ParseError("not a PNG file: " + path);

  RawPng png;
  std::vector<unsigned char> idat;
  size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 12 <= file.size() && !saw_iend) {
    const uint32_t len = be32(&file[pos]);
    if (pos + 12 + len > file.size()) throw ParseError("truncated PNG chunk: " + path);
    const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
    const unsigned char* data = &file[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw ParseError("bad IHDR length: " + path);
      png.width = static_cast<int>(be32(data));
      png.height = static_cast<int>(be32(data + 4));
      png.bit_depth = data[8];
      const int color_type = data[9];
      if (data[12] != 0) throw ParseError("interlaced PNG not supported: " + path);
      if (png.bit_depth != 8 && png.bit_depth != 16)
        throw ParseError("unsupported PNG bit depth " + std::to_string(png.bit_depth) + ": " + path);
      if (color_type == 0)
        png.channels = 1;
      else if (color_type == 2)
        png.channels = 3;
      else
        throw ParseError("unsupported PNG color type " + std::to_string(color_type) + ": " + path);
      if (png.width <= 0 || png.height <= 0) throw ParseError("bad PNG dimensions: " + path);
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend) throw ParseError("incomplete PNG: " + path);

  const size_t bytes_per_sample = static_cast<size_t>(png.bit_depth) / 8;
  const size_t row_bytes = static_cast<size_t>(png.width) * png.channels * bytes_per_sample;
  const size_t raw_size = static_cast<size_t>(png.height) * (row_bytes + 1);
  std::vector<unsigned char> raw(raw_size);
  uLongf out_len = raw_size;
  if (uncompress(raw.data(), &out_len, idat.data(), idat.size()) != Z_OK || out_len != raw_size)
    throw ParseError("corrupt PNG pixel data: " + path);

  // undo per-row filters in place
  const size_t bpp = png.channels * bytes_per_sample;
  std::vector<unsigned char> prev(row_bytes, 0);
  std::vector<unsigned char> cur(row_bytes);
  std::vector<unsigned char> pixels;
  pixels.reserve(static_cast<size_t>(png.height) * row_bytes);
  for (int y = 0; y < png.height; ++y) {
    const unsigned char filter = raw[static_cast<size_t>(y) * (row_bytes + 1)];
    const unsigned char* src = &raw[static_cast<size_t>(y) * (row_bytes + 1) + 1];
    for (size_t i = 0; i < row_bytes; ++i) {
      const int a = i >= bpp ? cur[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= bpp ? prev[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw ParseError("unknown PNG filter type: " + path);
      }
      cur[i] = static_cast<unsigned char>(v & 0xff);
    }
    pixels.insert(pixels.end(), cur.begin(), cur.end());
    std::swap(prev, cur);
  }

  const double scale = png.bit_depth == 8 ? 255.0 : 65535.0;
  const size_t n = static_cast<size_t>(png.width) * png.height * png.channels;
  png.samples.resize(n);
  if (png.bit_depth == 8) {
    for (size_t i = 0; i < n; ++i) png.samples[i] = pixels[i] / scale;
  } else {
    for (size_t i = 0; i < n; ++i)
      png.samples[i] = ((pixels[2 * i] << 8) | pixels[2 * i + 1]) / scale;
  }
  return png;
}

void append_chunk(std::vector<unsigned char>& out, const char* type,
                  const std::vector<unsigned char>& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uint32_t crc =
      crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, crc);
}

void write_png(const std::string& path, const std::vector<unsigned char>& pixels, int width,
               int height, int channels, int bit_depth) {
  const size_t bytes_per_sample = static_cast<size_t>(bit_depth) / 8;
  const size_t row_bytes = static_cast<size_t>(width) * channels * bytes_per_sample;
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<size_t>(height) * (row_bytes + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: None
    raw.insert(raw.end(), pixels.begin() + static_cast<size_t>(y) * row_bytes,
               pixels.begin() + static_cast<size_t>(y + 1) * row_bytes);
  }
  uLongf bound = compressBound(raw.size());
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), raw.size(), Z_DEFAULT_COMPRESSION) != Z_OK)
    throw IoError("PNG compression failed: " + path);
  compressed.resize(bound);

  std::vector<unsigned char> out(kSignature, kSignature + 8);
  std::vector<unsigned char> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(width));
  put_be32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(static_cast<unsigned char>(bit_depth));
  ihdr.push_back(channels == 1 ? 0 : 2);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write PNG: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

unsigned char quant8(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace

MultibandImage read_image(const std::string& path) {
  RawPng png = read_png(path);
  MultibandImage img = MultibandImage::blank(png.height, png.width);
  const size_t n = img.pixels();
  if (png.channels == 1) {
    for (size_t i = 0; i < n; ++i) img.red[i] = img.green[i] = img.blue[i] = png.samples[i];
  } else {
    for (size_t i = 0; i < n; ++i) {
      img.red[i] = png.samples[3 * i];
      img.green[i] = png.samples[3 * i + 1];
      img.blue[i] = png.samples[3 * i + 2];
    }
  }
  return img;
}

void write_image(const MultibandImage& img, const std::string& path) {
  const size_t n = img.pixels();
  std::vector<unsigned char> pixels(n * 3);
  for (size_t i = 0; i < n; ++i) {
    pixels[3 * i] = quant8(img.red[i]);
    pixels[3 * i + 1] = quant8(img.green[i]);
    pixels[3 * i + 2] = quant8(img.blue[i]);
  }
  write_png(path, pixels, img.width, img.height, 3, 8);
}

std::vector<double> read_gray(const std::string& path, int& height, int& width) {
  RawPng png = read_png(path);
  height = png.height;
  width = png.width;
  if (png.channels == 1) return png.samples;
  // tolerate RGB sidecars by averaging
  std::vector<double> gray(static_cast<size_t>(png.width) * png.height);
  for (size_t i = 0; i < gray.size(); ++i)
    gray[i] = (png.samples[3 * i] + png.samples[3 * i + 1] + png.samples[3 * i + 2]) / 3.0;
  return gray;
}

void write_gray(const std::string& path, const std::vector<double>& values, int height, int width,
                int bit_depth) {
  if (static_cast<size_t>(height) * width != values.size())
    throw ShapeError("write_gray: size mismatch");
  if (bit_depth == 8) {
    std::vector<unsigned char> pixels(values.size());
    for (size_t i = 0; i < values.size(); ++i) pixels[i] = quant8(values[i]);
    write_png(path, pixels, width, height, 1, 8);
  } else if (bit_depth == 16) {
    std::vector<unsigned char> pixels(values.size() * 2);
    for (size_t i = 0; i < values.size(); ++i) {
      const double c = values[i] < 0.0 ? 0.0 : (values[i] > 1.0 ? 1.0 : values[i]);
      const uint16_t q = static_cast<uint16_t>(std::lround(c * 65535.0));
      pixels[2 * i] = static_cast<unsigned char>(q >> 8);
      pixels[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
    }
    write_png(path, pixels, width, height, 1, 16);
  } else {
    throw ConfigError("write_gray: bit depth must be 8 or 16");
  }
}

}  // namespace xmac
