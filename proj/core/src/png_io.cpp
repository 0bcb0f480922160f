#include "pathogan/png_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "pathogan/errors.hpp"

namespace pathogan {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& payload) {
  put_u32(out, static_cast<uint32_t>(payload.size()));
  const size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32(out, crc);
}

}  // namespace

std::vector<uint8_t> encode_png_gray(const Tensor<uint8_t>& img) {
  const int H = img.dim(0), W = img.dim(1);
  // filter byte 0 per scanline
  std::vector<uint8_t> raw(static_cast<size_t>(H) * (W + 1));
  for (int y = 0; y < H; ++y) {
    raw[static_cast<size_t>(y) * (W + 1)] = 0;
    std::memcpy(raw.data() + static_cast<size_t>(y) * (W + 1) + 1,
                img.ptr() + static_cast<int64_t>(y) * W, static_cast<size_t>(W));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw IoError("png: deflate failed");
  compressed.resize(bound);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(W));
  put_u32(ihdr, static_cast<uint32_t>(H));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // deflate
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", {});
  return out;
}

void write_png_gray(const std::string& path, const Tensor<uint8_t>& img) {
  const std::vector<uint8_t> bytes = encode_png_gray(img);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write " + path);
  const size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (written != bytes.size()) throw IoError("short write to " + path);
}

Tensor<uint8_t> gray_from_signed(const Tensor<float>& img) {
  Tensor<uint8_t> out(img.shape);
  for (int64_t i = 0; i < img.numel(); ++i) {
    const float v = (img[i] + 1.0f) * 0.5f * 255.0f;
    out[i] = static_cast<uint8_t>(std::lround(std::min(255.0f, std::max(0.0f, v))));
  }
  return out;
}

Tensor<uint8_t> gray_from_unit(const Tensor<float>& img) {
  Tensor<uint8_t> out(img.shape);
  for (int64_t i = 0; i < img.numel(); ++i) {
    const float v = img[i] * 255.0f;
    out[i] = static_cast<uint8_t>(std::lround(std::min(255.0f, std::max(0.0f, v))));
  }
  return out;
}

}  // namespace pathogan
