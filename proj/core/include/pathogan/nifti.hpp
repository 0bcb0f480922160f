#pragma once

#include <string>

#include "pathogan/tensor.hpp"

namespace pathogan {

// Minimal NIfTI-1 single-file (.nii / .nii.gz) support: one scalar volume,
// returned as (nz, ny, nx) with scl_slope/scl_inter applied. Covers the
// datatypes common in brain MRI distributions.
Tensor<float> load_nifti(const std::string& path);

// float32 writer, mainly for tests and phantom export
void save_nifti(const std::string& path, const Tensor<float>& volume);

}  // namespace pathogan
