#pragma once

#include <cstdint>
#include <string>

#include "pathogan/tensor.hpp"

namespace pathogan {

// Minimal .npy (format version 1.0) reader/writer, C-order only.
// Supported dtypes: f4, f8, i2, i4, i8, u1; loads convert to the requested
// element type.

void save_npy(const std::string& path, const Tensor<float>& t);
void save_npy(const std::string& path, const Tensor<double>& t);
void save_npy(const std::string& path, const Tensor<uint8_t>& t);
void save_npy(const std::string& path, const Tensor<int32_t>& t);

template <typename T>
Tensor<T> load_npy(const std::string& path);

extern template Tensor<float> load_npy<float>(const std::string&);
extern template Tensor<double> load_npy<double>(const std::string&);
extern template Tensor<uint8_t> load_npy<uint8_t>(const std::string&);
extern template Tensor<int32_t> load_npy<int32_t>(const std::string&);

}  // namespace pathogan
