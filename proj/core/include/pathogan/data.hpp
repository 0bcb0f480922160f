#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pathogan/rng.hpp"
#include "pathogan/tensor.hpp"

namespace pathogan {

enum class Domain { kHealthy, kPathological };

// One multi-channel 2-D slice, values in [-1,1].
struct ImageSlice {
  Tensor<float> data;  // (n, H, W)
  std::string patient_id;
  int slice_index = 0;
  Domain domain = Domain::kHealthy;
};

// Slice plus its reference mask (empty tensor when unavailable). The mask is
// used only for domain labeling and evaluation.
struct DataSlice {
  ImageSlice image;
  Tensor<uint8_t> gold;  // (H, W), 0/1
  bool has_gold() const { return gold.numel() > 0; }
};

struct VolumeRecord {
  std::string patient_id;
  Tensor<float> channels;                         // (n, D, H, W)
  std::optional<Tensor<int32_t>> segmentation;    // (D, H, W)
};

struct SliceSelection {
  int lo = 60;
  int hi = 100;  // inclusive
  int pathology_threshold = 20;
};

struct AugmentationConfig {
  bool enabled = true;
  double mirror_prob = 0.5;
  double rotation_range = 0.1;  // radians, U[-range, range]
  double scale_base = 1.1;      // scale = base^r, r ~ U[-1,1]
  int deform_grid_spacing = 128;
  double deform_sigma = 5.0;  // pixels, per displacement component
};

// Per channel: shift/scale the nonzero voxels to mean 0, variance 1/3
// (population), then clip everything to [-1,1]. Zero voxels stay zero.
VolumeRecord normalize_volume(VolumeRecord v);

// Transverse slices lo..hi (inclusive, clamped to the volume): empty mask ->
// healthy, more than threshold pixels -> pathological, in between discarded.
std::vector<ImageSlice> select_and_label_slices(const VolumeRecord& v, int lo,
                                                int hi, int threshold);
std::vector<DataSlice> select_and_label_slices_with_gold(const VolumeRecord& v,
                                                         const SliceSelection& sel);

// Random mirror, rotation, scaling and a smooth elastic deformation; the
// output is re-clipped to [-1,1]. Draw order is fixed so a seeded Rng
// reproduces the transform.
ImageSlice augment(const ImageSlice& s, const AugmentationConfig& cfg, Rng& rng);

// Synthetic stand-in corpus: elliptical "anatomy" with smooth texture;
// pathological volumes add bright/dark blobs with ground-truth masks always
// above the 20-pixel labeling threshold. count_a / count_b are slice counts;
// volumes hold two slices each.
std::vector<VolumeRecord> generate_phantom_dataset(int count_a, int count_b,
                                                   int size, int n_channels,
                                                   Rng& rng);

struct TrainingSet {
  std::vector<DataSlice> healthy;
  std::vector<DataSlice> pathological;
};

// Uniform subsample without replacement; count < 0 keeps everything.
TrainingSet subsample_pool(TrainingSet pool, int healthy_count,
                           int pathological_count, Rng& rng);

// normalize -> slice -> label -> subsample over a set of volumes
TrainingSet build_training_set(const std::vector<VolumeRecord>& volumes,
                               int healthy_count, int pathological_count,
                               const SliceSelection& sel, Rng& rng);

// ---- on-disk dataset ----------------------------------------------------
// A dataset directory holds one dense-array file per channel (plus the
// segmentation) per patient and a JSON manifest naming them.

struct ManifestEntry {
  std::string id;
  std::string split;  // "train" or "eval"
  std::vector<std::string> channels;
  std::string segmentation;  // empty if absent
};

struct Manifest {
  std::string format = "npy";  // "npy" or "nifti"
  int channels = 1;
  int size = 64;
  std::vector<ManifestEntry> patients;
  std::string base_dir;  // directory of the manifest file; set on load

  static Manifest load(const std::string& path);
  void save(const std::string& path) const;
};

VolumeRecord load_volume(const Manifest& m, const ManifestEntry& e);

// Loads, normalizes and slices every patient of the given split.
TrainingSet load_slice_pool(const Manifest& m, const std::string& split,
                            const SliceSelection& sel);

// Generates and writes a phantom dataset (train + eval splits); returns the
// manifest path.
std::string write_phantom_dataset(const std::string& out_dir, int train_healthy,
                                  int train_pathological, int eval_pathological,
                                  int size, int channels, uint64_t seed);

}  // namespace pathogan
