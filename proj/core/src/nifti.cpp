#include "pathogan/nifti.hpp"

#include <zlib.h>

#include <cstring>
#include <vector>

#include "pathogan/errors.hpp"

namespace pathogan {

namespace {

// the nifti-1 header fields we touch, at their fixed offsets
constexpr int kHeaderSize = 348;
constexpr int kDimOffset = 40;        // int16[8]
constexpr int kDatatypeOffset = 70;   // int16
constexpr int kVoxOffsetOffset = 108; // float32
constexpr int kSclSlopeOffset = 112;  // float32
constexpr int kSclInterOffset = 116;  // float32
constexpr int kMagicOffset = 344;     // char[4]

enum Datatype : int16_t {
  kU8 = 2,
  kI16 = 4,
  kI32 = 8,
  kF32 = 16,
  kF64 = 64,
};

template <typename V>
V read_at(const std::vector<char>& buf, int offset) {
  V v;
  std::memcpy(&v, buf.data() + offset, sizeof(V));
  return v;
}

template <typename Src>
void convert(const std::vector<char>& raw, Tensor<float>& out, float slope,
             float inter) {
  const Src* src = reinterpret_cast<const Src*>(raw.data());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<float>(src[i]) * slope + inter;
}

}  // namespace

Tensor<float> load_nifti(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");  // reads plain files transparently
  if (!f) throw IoError("cannot read " + path);

  std::vector<char> header(kHeaderSize);
  if (gzread(f, header.data(), kHeaderSize) != kHeaderSize) {
    gzclose(f);
    throw IoError("truncated nifti header in " + path);
  }
  if (read_at<int32_t>(header, 0) != kHeaderSize) {
    gzclose(f);
    throw IoError(path + " is not a nifti-1 file (or wrong endianness)");
  }
  const char* magic = header.data() + kMagicOffset;
  if (std::strncmp(magic, "n+1", 3) != 0) {
    gzclose(f);
    throw IoError(path + ": only single-file (n+1) nifti is supported");
  }

  int16_t dim[8];
  std::memcpy(dim, header.data() + kDimOffset, sizeof(dim));
  const int ndim = dim[0];
  if (ndim < 3 || (ndim > 3 && dim[4] > 1)) {
    gzclose(f);
    throw IoError(path + ": expected a 3-D scalar volume");
  }
  const int nx = dim[1], ny = dim[2], nz = dim[3];
  const int16_t datatype = read_at<int16_t>(header, kDatatypeOffset);
  float vox_offset = read_at<float>(header, kVoxOffsetOffset);
  float slope = read_at<float>(header, kSclSlopeOffset);
  float inter = read_at<float>(header, kSclInterOffset);
  if (slope == 0.0f) {
    slope = 1.0f;
    inter = 0.0f;
  }

  size_t elem = 0;
  switch (datatype) {
    case kU8: elem = 1; break;
    case kI16: elem = 2; break;
    case kI32: elem = 4; break;
    case kF32: elem = 4; break;
    case kF64: elem = 8; break;
    default:
      gzclose(f);
      throw IoError(path + ": unsupported nifti datatype " + std::to_string(datatype));
  }

  // skip the gap between header and data (typically 4 bytes of extension flags)
  const int skip = static_cast<int>(vox_offset) - kHeaderSize;
  if (skip > 0) {
    std::vector<char> gap(skip);
    if (gzread(f, gap.data(), skip) != skip) {
      gzclose(f);
      throw IoError("truncated nifti data in " + path);
    }
  }

  Tensor<float> out({nz, ny, nx});
  std::vector<char> raw(static_cast<size_t>(out.numel()) * elem);
  const int64_t want = static_cast<int64_t>(raw.size());
  int64_t got = 0;
  while (got < want) {
    const int chunk = static_cast<int>(std::min<int64_t>(want - got, 1 << 24));
    const int r = gzread(f, raw.data() + got, chunk);
    if (r <= 0) break;
    got += r;
  }
  gzclose(f);
  if (got != want) throw IoError("truncated nifti data in " + path);

  switch (datatype) {
    case kU8: convert<uint8_t>(raw, out, slope, inter); break;
    case kI16: convert<int16_t>(raw, out, slope, inter); break;
    case kI32: convert<int32_t>(raw, out, slope, inter); break;
    case kF32: convert<float>(raw, out, slope, inter); break;
    case kF64: convert<double>(raw, out, slope, inter); break;
  }
  return out;
}

void save_nifti(const std::string& path, const Tensor<float>& volume) {
  if (volume.rank() != 3) throw IoError("save_nifti expects a (nz,ny,nx) tensor");
  std::vector<char> header(kHeaderSize, 0);
  const int32_t hdr_size = kHeaderSize;
  std::memcpy(header.data(), &hdr_size, 4);
  int16_t dim[8] = {3, static_cast<int16_t>(volume.dim(2)),
                    static_cast<int16_t>(volume.dim(1)),
                    static_cast<int16_t>(volume.dim(0)), 1, 1, 1, 1};
  std::memcpy(header.data() + kDimOffset, dim, sizeof(dim));
  const int16_t datatype = kF32, bitpix = 32;
  std::memcpy(header.data() + kDatatypeOffset, &datatype, 2);
  std::memcpy(header.data() + 72, &bitpix, 2);
  const float vox_offset = 352.0f, slope = 1.0f, inter = 0.0f;
  std::memcpy(header.data() + kVoxOffsetOffset, &vox_offset, 4);
  std::memcpy(header.data() + kSclSlopeOffset, &slope, 4);
  std::memcpy(header.data() + kSclInterOffset, &inter, 4);
  // pixdim: qfac + unit spacing
  const float pixdim[8] = {1, 1, 1, 1, 0, 0, 0, 0};
  std::memcpy(header.data() + 76, pixdim, sizeof(pixdim));
  std::memcpy(header.data() + kMagicOffset, "n+1", 4);
  const char pad[4] = {0, 0, 0, 0};

  const bool gz = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
  if (gz) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw IoError("cannot write " + path);
    bool ok = gzwrite(f, header.data(), kHeaderSize) == kHeaderSize &&
              gzwrite(f, pad, 4) == 4;
    const int64_t bytes = volume.numel() * 4;
    int64_t done = 0;
    while (ok && done < bytes) {
      const int chunk = static_cast<int>(std::min<int64_t>(bytes - done, 1 << 24));
      ok = gzwrite(f, reinterpret_cast<const char*>(volume.ptr()) + done, chunk) ==
           chunk;
      done += chunk;
    }
    gzclose(f);
    if (!ok) throw IoError("short write to " + path);
  } else {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write " + path);
    bool ok = std::fwrite(header.data(), 1, kHeaderSize, f) == kHeaderSize &&
              std::fwrite(pad, 1, 4, f) == 4 &&
              std::fwrite(volume.ptr(), 4, volume.data.size(), f) ==
                  volume.data.size();
    std::fclose(f);
    if (!ok) throw IoError("short write to " + path);
  }
}

}  // namespace pathogan
