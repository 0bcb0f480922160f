#include "pathogan/npy.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "pathogan/errors.hpp"

namespace pathogan {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string dtype_of(const float*) { return "<f4"; }
std::string dtype_of(const double*) { return "<f8"; }
std::string dtype_of(const uint8_t*) { return "|u1"; }
std::string dtype_of(const int32_t*) { return "<i4"; }

template <typename T>
void save_impl(const std::string& path, const Tensor<T>& t) {
  std::string shape = "(";
  for (size_t i = 0; i < t.shape.size(); ++i) {
    shape += std::to_string(t.shape[i]);
    if (i + 1 < t.shape.size() || t.shape.size() == 1) shape += ", ";
  }
  if (shape.size() > 1 && shape.back() == ' ') shape.resize(shape.size() - 1);
  shape += ")";
  std::string header = "{'descr': '" + dtype_of(t.ptr()) +
                       "', 'fortran_order': False, 'shape': " + shape + ", }";
  const size_t base = 10;  // magic(6) + version(2) + header_len(2)
  size_t total = base + header.size() + 1;
  const size_t pad = (64 - total % 64) % 64;
  header.append(pad, ' ');
  header += '\n';

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path);
  const unsigned char magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  std::fwrite(magic, 1, 8, f.get());
  const uint16_t hlen = static_cast<uint16_t>(header.size());
  std::fwrite(&hlen, 2, 1, f.get());
  std::fwrite(header.data(), 1, header.size(), f.get());
  if (std::fwrite(t.ptr(), sizeof(T), t.data.size(), f.get()) != t.data.size())
    throw IoError("short write to " + path);
}

std::string header_field(const std::string& header, const std::string& key) {
  const size_t at = header.find("'" + key + "'");
  if (at == std::string::npos) throw IoError("npy header missing " + key);
  size_t pos = header.find(':', at);
  if (pos == std::string::npos) throw IoError("malformed npy header");
  ++pos;
  while (pos < header.size() && header[pos] == ' ') ++pos;
  if (header[pos] == '\'') {
    const size_t end = header.find('\'', pos + 1);
    return header.substr(pos + 1, end - pos - 1);
  }
  if (header[pos] == '(') {
    const size_t end = header.find(')', pos);
    return header.substr(pos, end - pos + 1);
  }
  size_t end = pos;
  while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
  return header.substr(pos, end - pos);
}

template <typename Src, typename T>
void convert(const std::vector<char>& raw, Tensor<T>& out) {
  const Src* src = reinterpret_cast<const Src*>(raw.data());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(src[i]);
}

}  // namespace

void save_npy(const std::string& path, const Tensor<float>& t) { save_impl(path, t); }
void save_npy(const std::string& path, const Tensor<double>& t) { save_impl(path, t); }
void save_npy(const std::string& path, const Tensor<uint8_t>& t) { save_impl(path, t); }
void save_npy(const std::string& path, const Tensor<int32_t>& t) { save_impl(path, t); }

template <typename T>
Tensor<T> load_npy(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot read " + path);
  unsigned char magic[8];
  if (std::fread(magic, 1, 8, f.get()) != 8 || magic[0] != 0x93 ||
      std::memcmp(magic + 1, "NUMPY", 5) != 0)
    throw IoError(path + " is not an npy file");
  uint16_t hlen16 = 0;
  uint32_t hlen = 0;
  if (magic[6] == 1) {
    if (std::fread(&hlen16, 2, 1, f.get()) != 1) throw IoError("truncated npy header");
    hlen = hlen16;
  } else {
    if (std::fread(&hlen, 4, 1, f.get()) != 1) throw IoError("truncated npy header");
  }
  std::string header(hlen, '\0');
  if (std::fread(header.data(), 1, hlen, f.get()) != hlen)
    throw IoError("truncated npy header");

  const std::string descr = header_field(header, "descr");
  const std::string order = header_field(header, "fortran_order");
  if (order.find("True") != std::string::npos)
    throw IoError("fortran-order npy not supported: " + path);
  const std::string shape_str = header_field(header, "shape");

  std::vector<int> shape;
  std::string num;
  for (char c : shape_str) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      num += c;
    } else if (!num.empty()) {
      shape.push_back(std::stoi(num));
      num.clear();
    }
  }
  if (shape.empty()) shape.push_back(1);

  Tensor<T> out(shape);
  size_t elem = 0;
  if (descr == "<f4" || descr == "|f4") elem = 4;
  else if (descr == "<f8") elem = 8;
  else if (descr == "<i2") elem = 2;
  else if (descr == "<i4") elem = 4;
  else if (descr == "<i8") elem = 8;
  else if (descr == "|u1") elem = 1;
  else throw IoError("unsupported npy dtype " + descr + " in " + path);

  std::vector<char> raw(static_cast<size_t>(out.numel()) * elem);
  if (std::fread(raw.data(), 1, raw.size(), f.get()) != raw.size())
    throw IoError("truncated npy data in " + path);

  if (descr == "<f4" || descr == "|f4") convert<float>(raw, out);
  else if (descr == "<f8") convert<double>(raw, out);
  else if (descr == "<i2") convert<int16_t>(raw, out);
  else if (descr == "<i4") convert<int32_t>(raw, out);
  else if (descr == "<i8") convert<int64_t>(raw, out);
  else convert<uint8_t>(raw, out);
  return out;
}

template Tensor<float> load_npy<float>(const std::string&);
template Tensor<double> load_npy<double>(const std::string&);
template Tensor<uint8_t> load_npy<uint8_t>(const std::string&);
template Tensor<int32_t> load_npy<int32_t>(const std::string&);

}  // namespace pathogan
