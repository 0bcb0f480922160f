#pragma once

#include <string>
#include <vector>

#include "pathogan/tensor.hpp"

namespace pathogan {

using Mask = Tensor<uint8_t>;  // (H, W), nonzero = foreground

// 100 * 2|a.b| / (|a|+|b|); 100 when both masks are empty.
double dice_percent(const Mask& a, const Mask& b);

// Boundary pixels: foreground with at least one 4-neighbor outside the mask
// (the image border counts as background).
std::vector<std::pair<int, int>> boundary_pixels(const Mask& m);

// Directed nearest-boundary distances from every boundary pixel of `from` to
// the boundary of `to`, exact Euclidean metric.
std::vector<double> directed_boundary_distances(const Mask& from, const Mask& to);

// Inclusive linear-interpolation percentile of a sample, q in [0,1].
double percentile_linear(std::vector<double> values, double q);

// 95th percentile of the pooled symmetric boundary distances. Empty-mask
// pairs: 0 when both are empty, otherwise the image diagonal as a penalty.
double hd95(const Mask& a, const Mask& b);

// Mean of the two directed mean boundary distances, same empty handling.
double avd(const Mask& a, const Mask& b);

inline bool mask_empty(const Mask& m) {
  for (uint8_t v : m.data)
    if (v) return false;
  return true;
}

inline double empty_mask_penalty(const Mask& m) {
  const double h = m.dim(0), w = m.dim(1);
  return std::sqrt(h * h + w * w);
}

struct PatientSlicePair {
  std::string patient_id;
  Mask pred;
  Mask gold;
};

struct PatientDice {
  std::string patient_id;
  double dice_pp = 0;
};

// Stacks each patient's slices into a pseudo-volume and computes one Dice per
// patient. Patients whose stacked gold and prediction are both empty are
// excluded (reported via the skipped list when given).
std::vector<PatientDice> dice_per_patient(const std::vector<PatientSlicePair>& slices,
                                          std::vector<std::string>* skipped = nullptr);

struct Aggregate {
  double mean = 0, stddev = 0, median = 0;
  int64_t count = 0;
};

Aggregate aggregate(const std::vector<double>& values);

// "mean±std(median)" with one decimal, the table formatting of the reports
std::string format_aggregate(const Aggregate& a);

}  // namespace pathogan
