#include "pathogan/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pathogan/errors.hpp"
#include "pathogan/nifti.hpp"
#include "pathogan/npy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pathogan {

VolumeRecord normalize_volume(VolumeRecord v) {
  const int n = v.channels.dim(0);
  const int64_t voxels = v.channels.numel() / n;
  for (int c = 0; c < n; ++c) {
    float* ch = v.channels.ptr() + c * voxels;
    double sum = 0, count = 0;
    for (int64_t i = 0; i < voxels; ++i) {
      if (ch[i] != 0.0f) {
        sum += ch[i];
        count += 1;
      }
    }
    if (count == 0)
      throw EmptyChannelError("channel " + std::to_string(c) + " of " +
                              v.patient_id + " is all zeros");
    const double mean = sum / count;
    double var = 0;
    for (int64_t i = 0; i < voxels; ++i) {
      if (ch[i] != 0.0f) {
        const double d = ch[i] - mean;
        var += d * d;
      }
    }
    var /= count;
    if (var == 0.0)
      throw DegenerateChannelError("channel " + std::to_string(c) + " of " +
                                   v.patient_id + " has zero variance");
    const double scale = 1.0 / std::sqrt(3.0 * var);
    for (int64_t i = 0; i < voxels; ++i) {
      if (ch[i] == 0.0f) continue;
      double t = (ch[i] - mean) * scale;
      t = std::min(1.0, std::max(-1.0, t));
      ch[i] = static_cast<float>(t);
    }
  }
  return v;
}

namespace {

int64_t mask_pixels(const Tensor<int32_t>& seg, int d) {
  const int64_t hw = static_cast<int64_t>(seg.dim(1)) * seg.dim(2);
  const int32_t* s = seg.ptr() + d * hw;
  int64_t n = 0;
  for (int64_t i = 0; i < hw; ++i)
    if (s[i] != 0) ++n;
  return n;
}

ImageSlice extract_slice(const VolumeRecord& v, int d, Domain domain) {
  const int n = v.channels.dim(0), D = v.channels.dim(1);
  const int H = v.channels.dim(2), W = v.channels.dim(3);
  ImageSlice s;
  s.data = Tensor<float>({n, H, W});
  for (int c = 0; c < n; ++c)
    std::copy(
        v.channels.ptr() + (static_cast<int64_t>(c) * D + d) * H * W,
        v.channels.ptr() + (static_cast<int64_t>(c) * D + d + 1) * H * W,
        s.data.ptr() + static_cast<int64_t>(c) * H * W);
  s.patient_id = v.patient_id;
  s.slice_index = d;
  s.domain = domain;
  return s;
}

Tensor<uint8_t> extract_gold(const VolumeRecord& v, int d) {
  const int H = v.channels.dim(2), W = v.channels.dim(3);
  Tensor<uint8_t> gold({H, W});
  const int64_t hw = static_cast<int64_t>(H) * W;
  const int32_t* s = v.segmentation->ptr() + d * hw;
  for (int64_t i = 0; i < hw; ++i) gold[i] = s[i] != 0 ? 1 : 0;
  return gold;
}

}  // namespace

std::vector<DataSlice> select_and_label_slices_with_gold(const VolumeRecord& v,
                                                         const SliceSelection& sel) {
  if (!v.segmentation)
    throw MissingSegmentationError("volume " + v.patient_id +
                                   " has no manual segmentation");
  const int D = v.channels.dim(1);
  const int lo = std::max(0, sel.lo);
  const int hi = std::min(D - 1, sel.hi);
  std::vector<DataSlice> out;
  for (int d = lo; d <= hi; ++d) {
    const int64_t pixels = mask_pixels(*v.segmentation, d);
    if (pixels != 0 && pixels <= sel.pathology_threshold) continue;  // discarded
    DataSlice s;
    s.image = extract_slice(
        v, d, pixels == 0 ? Domain::kHealthy : Domain::kPathological);
    s.gold = extract_gold(v, d);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ImageSlice> select_and_label_slices(const VolumeRecord& v, int lo,
                                                int hi, int threshold) {
  SliceSelection sel;
  sel.lo = lo;
  sel.hi = hi;
  sel.pathology_threshold = threshold;
  std::vector<ImageSlice> out;
  for (DataSlice& s : select_and_label_slices_with_gold(v, sel))
    out.push_back(std::move(s.image));
  return out;
}

// ---- augmentation -----------------------------------------------------------

namespace {

// cubic B-spline basis
double bspline3(double u) {
  u = std::abs(u);
  if (u < 1.0) return (4.0 - 6.0 * u * u + 3.0 * u * u * u) / 6.0;
  if (u < 2.0) {
    const double t = 2.0 - u;
    return t * t * t / 6.0;
  }
  return 0.0;
}

// In-place interpolation prefilter so the spline passes through the samples.
void bspline_prefilter_1d(std::vector<double>& c) {
  const int n = static_cast<int>(c.size());
  if (n < 2) return;
  const double z = std::sqrt(3.0) - 2.0;
  for (double& v : c) v *= 6.0;
  const int horizon = std::min<int>(n, 28);  // |z|^28 < 1e-16
  double sum = c[0];
  double zk = z;
  for (int k = 1; k < horizon; ++k) {
    sum += zk * c[k];
    zk *= z;
  }
  c[0] = sum;
  for (int i = 1; i < n; ++i) c[i] += z * c[i - 1];
  c[n - 1] = (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
  for (int i = n - 2; i >= 0; --i) c[i] = z * (c[i + 1] - c[i]);
}

struct DeformField {
  int gy0 = 0, gx0 = 0, ny = 0, nx = 0, spacing = 1;
  std::vector<double> cy, cx;  // prefiltered coefficients, row-major

  double eval(int comp, double y, double x) const {
    const std::vector<double>& c = comp == 0 ? cy : cx;
    const double ty = y / spacing, tx = x / spacing;
    const int iy = static_cast<int>(std::floor(ty)), ix = static_cast<int>(std::floor(tx));
    double acc = 0;
    for (int a = -1; a <= 2; ++a) {
      const int ny_idx = iy + a - gy0;
      if (ny_idx < 0 || ny_idx >= ny) continue;
      const double wy = bspline3(ty - (iy + a));
      for (int b = -1; b <= 2; ++b) {
        const int nx_idx = ix + b - gx0;
        if (nx_idx < 0 || nx_idx >= nx) continue;
        acc += wy * bspline3(tx - (ix + b)) * c[ny_idx * nx + nx_idx];
      }
    }
    return acc;
  }
};

DeformField draw_deform_field(int H, int W, int spacing, double sigma, Rng& rng) {
  DeformField f;
  f.spacing = spacing;
  f.gy0 = -1;
  f.gx0 = -1;
  f.ny = (H - 1) / spacing + 4;  // nodes -1 .. floor((H-1)/g)+2
  f.nx = (W - 1) / spacing + 4;
  f.cy.resize(static_cast<size_t>(f.ny) * f.nx);
  f.cx.resize(static_cast<size_t>(f.ny) * f.nx);
  for (int i = 0; i < f.ny * f.nx; ++i) {
    f.cy[i] = rng.normal(0.0, sigma);
    f.cx[i] = rng.normal(0.0, sigma);
  }
  // prefilter rows then columns of both component grids
  for (auto* grid : {&f.cy, &f.cx}) {
    std::vector<double> line;
    for (int r = 0; r < f.ny; ++r) {
      line.assign(grid->begin() + static_cast<size_t>(r) * f.nx,
                  grid->begin() + static_cast<size_t>(r + 1) * f.nx);
      bspline_prefilter_1d(line);
      std::copy(line.begin(), line.end(), grid->begin() + static_cast<size_t>(r) * f.nx);
    }
    for (int col = 0; col < f.nx; ++col) {
      line.resize(f.ny);
      for (int r = 0; r < f.ny; ++r) line[r] = (*grid)[static_cast<size_t>(r) * f.nx + col];
      bspline_prefilter_1d(line);
      for (int r = 0; r < f.ny; ++r) (*grid)[static_cast<size_t>(r) * f.nx + col] = line[r];
    }
  }
  return f;
}

float bilinear(const float* ch, int H, int W, double y, double x) {
  if (y <= -1.0 || x <= -1.0 || y >= H || x >= W) return 0.0f;
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto at = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
    return ch[static_cast<int64_t>(yy) * W + xx];
  };
  return static_cast<float>((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                            fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)));
}

}  // namespace

ImageSlice augment(const ImageSlice& s, const AugmentationConfig& cfg, Rng& rng) {
  const int n = s.data.dim(0), H = s.data.dim(1), W = s.data.dim(2);

  // fixed draw order: mirror, rotation, scale, grid displacements
  const bool mirror = rng.uniform() < cfg.mirror_prob;
  const double theta = rng.uniform(-cfg.rotation_range, cfg.rotation_range);
  const double scale = std::pow(cfg.scale_base, rng.uniform(-1.0, 1.0));
  const DeformField field =
      draw_deform_field(H, W, cfg.deform_grid_spacing, cfg.deform_sigma, rng);

  ImageSlice out = s;
  if (mirror) {
    for (int c = 0; c < n; ++c) {
      float* ch = out.data.ptr() + static_cast<int64_t>(c) * H * W;
      for (int y = 0; y < H; ++y)
        std::reverse(ch + static_cast<int64_t>(y) * W, ch + static_cast<int64_t>(y + 1) * W);
    }
  }

  // rotation + scaling about the image center, one resampling pass
  if (theta != 0.0 || scale != 1.0) {
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    Tensor<float> warped({n, H, W});
    for (int c = 0; c < n; ++c) {
      const float* src = out.data.ptr() + static_cast<int64_t>(c) * H * W;
      float* dst = warped.ptr() + static_cast<int64_t>(c) * H * W;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const double dy = (y - cy) / scale, dx = (x - cx) / scale;
          const double sy = cy + cos_t * dy - sin_t * dx;
          const double sx = cx + sin_t * dy + cos_t * dx;
          dst[static_cast<int64_t>(y) * W + x] = bilinear(src, H, W, sy, sx);
        }
      }
    }
    out.data = std::move(warped);
  }

  // elastic deformation
  if (cfg.deform_sigma > 0.0) {
    Tensor<float> warped({n, H, W});
    std::vector<double> disp_y(static_cast<size_t>(H) * W), disp_x(disp_y.size());
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        disp_y[static_cast<size_t>(y) * W + x] = field.eval(0, y, x);
        disp_x[static_cast<size_t>(y) * W + x] = field.eval(1, y, x);
      }
    for (int c = 0; c < n; ++c) {
      const float* src = out.data.ptr() + static_cast<int64_t>(c) * H * W;
      float* dst = warped.ptr() + static_cast<int64_t>(c) * H * W;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const size_t i = static_cast<size_t>(y) * W + x;
          dst[i + 0] = bilinear(src, H, W, y + disp_y[i], x + disp_x[i]);
        }
    }
    out.data = std::move(warped);
  }

  for (float& v : out.data.data) v = std::min(1.0f, std::max(-1.0f, v));
  return out;
}

// ---- phantoms -----------------------------------------------------------------

std::vector<VolumeRecord> generate_phantom_dataset(int count_a, int count_b,
                                                   int size, int n_channels,
                                                   Rng& rng) {
  std::vector<VolumeRecord> out;
  const int S = size;

  auto make_volume = [&](bool pathological, int index) {
    const int depth = 2;
    VolumeRecord v;
    v.patient_id =
        (pathological ? "phantomB_" : "phantomA_") + std::to_string(index);
    v.channels = Tensor<float>({n_channels, depth, S, S}, 0.0f);
    v.segmentation = Tensor<int32_t>({depth, S, S}, 0);

    // shared anatomy across the volume's slices
    const double cy = S / 2.0 + rng.uniform(-S / 16.0, S / 16.0);
    const double cx = S / 2.0 + rng.uniform(-S / 16.0, S / 16.0);
    const double ay = rng.uniform(0.28, 0.36) * S;
    const double ax = rng.uniform(0.28, 0.36) * S;
    const double phi = rng.uniform(0.0, M_PI);
    const double cos_p = std::cos(phi), sin_p = std::sin(phi);

    auto radius = [&](int y, int x) {
      const double dy = y - cy, dx = x - cx;
      const double ry = (cos_p * dy - sin_p * dx) / ay;
      const double rx = (sin_p * dy + cos_p * dx) / ax;
      return std::sqrt(ry * ry + rx * rx);
    };

    for (int d = 0; d < depth; ++d) {
      // per-slice texture per channel
      for (int c = 0; c < n_channels; ++c) {
        const double base = rng.uniform(0.35, 0.6);
        const double amp = rng.uniform(0.08, 0.16);
        const double fy = rng.uniform(0.5, 1.5), fx = rng.uniform(0.5, 1.5);
        const double py = rng.uniform(0.0, 1.0), px = rng.uniform(0.0, 1.0);
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            const double r = radius(y, x);
            if (r >= 1.0) continue;
            const double edge = std::min(1.0, (1.0 - r) / 0.08);
            const double tex = amp *
                               std::sin(2 * M_PI * (fy * y / S + py)) *
                               std::sin(2 * M_PI * (fx * x / S + px));
            v.channels.data[((static_cast<int64_t>(c) * depth + d) * S + y) * S + x] =
                static_cast<float>((base + tex) * edge);
          }
      }

      if (!pathological) continue;

      // one or two blobs, redrawn until the mask clears the labeling threshold
      int64_t mask_count = 0;
      std::vector<int32_t> mask(static_cast<size_t>(S) * S, 0);
      while (mask_count <= 20) {
        std::fill(mask.begin(), mask.end(), 0);
        mask_count = 0;
        const int blobs = rng.uniform() < 0.3 ? 2 : 1;
        std::vector<std::array<double, 4>> blob_params;  // by, bx, rho, amp
        for (int bi = 0; bi < blobs; ++bi) {
          const double u = rng.uniform(0.0, 2 * M_PI);
          const double rad = std::sqrt(rng.uniform(0.0, 1.0)) * 0.5;
          const double oy = rad * std::cos(u) * ay, ox = rad * std::sin(u) * ax;
          const double by = cy + cos_p * oy + sin_p * ox;
          const double bx = cx - sin_p * oy + cos_p * ox;
          const double rho = rng.uniform(0.08, 0.14) * S;
          const double amp = rng.uniform(0.5, 0.9);
          blob_params.push_back({by, bx, rho, amp});
        }
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            const double r = radius(y, x);
            if (r >= 1.0) continue;
            const double edge = std::min(1.0, (1.0 - r) / 0.08);
            double bump = 0;
            for (const auto& [by, bx, rho, amp] : blob_params) {
              const double dd = (y - by) * (y - by) + (x - bx) * (x - bx);
              bump = std::max(bump, amp * std::exp(-dd / (2 * rho * rho)));
            }
            if (bump > 0.25 && edge >= 0.5) {
              mask[static_cast<size_t>(y) * S + x] = 1;
              ++mask_count;
            }
            if (bump <= 1e-4) continue;
            for (int c = 0; c < n_channels; ++c) {
              const double sign = (c % 2 == 0) ? 1.0 : -1.0;
              float& val = v.channels.data[((static_cast<int64_t>(c) * depth + d) * S + y) * S + x];
              val = static_cast<float>(val + sign * bump * edge);
            }
          }
      }
      std::copy(mask.begin(), mask.end(),
                v.segmentation->ptr() + static_cast<int64_t>(d) * S * S);
    }
    return v;
  };

  const int vols_a = (count_a + 1) / 2, vols_b = (count_b + 1) / 2;
  for (int i = 0; i < vols_a; ++i) out.push_back(make_volume(false, i));
  for (int i = 0; i < vols_b; ++i) out.push_back(make_volume(true, i));
  return out;
}

// ---- pools and subsampling ------------------------------------------------------

TrainingSet subsample_pool(TrainingSet pool, int healthy_count,
                           int pathological_count, Rng& rng) {
  auto pick = [&](std::vector<DataSlice>& v, int count, const char* what) {
    if (count < 0) return;
    if (static_cast<int>(v.size()) < count)
      throw InsufficientSlicesError(std::string("requested ") + std::to_string(count) +
                                    " " + what + " slices, only " +
                                    std::to_string(v.size()) + " available");
    std::vector<int> idx(v.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    rng.shuffle(idx);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    std::vector<DataSlice> kept;
    kept.reserve(count);
    for (int i : idx) kept.push_back(std::move(v[i]));
    v = std::move(kept);
  };
  pick(pool.healthy, healthy_count, "healthy");
  pick(pool.pathological, pathological_count, "pathological");
  return pool;
}

TrainingSet build_training_set(const std::vector<VolumeRecord>& volumes,
                               int healthy_count, int pathological_count,
                               const SliceSelection& sel, Rng& rng) {
  TrainingSet pool;
  for (const VolumeRecord& raw : volumes) {
    VolumeRecord v = normalize_volume(raw);
    for (DataSlice& s : select_and_label_slices_with_gold(v, sel)) {
      (s.image.domain == Domain::kHealthy ? pool.healthy : pool.pathological)
          .push_back(std::move(s));
    }
  }
  return subsample_pool(std::move(pool), healthy_count, pathological_count, rng);
}

// ---- manifest ---------------------------------------------------------------------

Manifest Manifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path + ": " + e.what());
  }
  Manifest m;
  m.format = j.value("format", "npy");
  m.channels = j.value("channels", 1);
  m.size = j.value("size", 64);
  for (const json& p : j.at("patients")) {
    ManifestEntry e;
    e.id = p.at("id").get<std::string>();
    e.split = p.value("split", "train");
    for (const json& c : p.at("channels")) e.channels.push_back(c.get<std::string>());
    e.segmentation = p.value("segmentation", "");
    m.patients.push_back(std::move(e));
  }
  m.base_dir = fs::path(path).parent_path().string();
  return m;
}

void Manifest::save(const std::string& path) const {
  json j;
  j["format"] = format;
  j["channels"] = channels;
  j["size"] = size;
  j["patients"] = json::array();
  for (const ManifestEntry& e : patients) {
    json p;
    p["id"] = e.id;
    p["split"] = e.split;
    p["channels"] = e.channels;
    if (!e.segmentation.empty()) p["segmentation"] = e.segmentation;
    j["patients"].push_back(std::move(p));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

VolumeRecord load_volume(const Manifest& m, const ManifestEntry& e) {
  VolumeRecord v;
  v.patient_id = e.id;
  if (static_cast<int>(e.channels.size()) != m.channels)
    throw ChannelMismatchError("patient " + e.id + " lists " +
                               std::to_string(e.channels.size()) +
                               " channels, manifest declares " +
                               std::to_string(m.channels));
  std::vector<Tensor<float>> channels;
  for (const std::string& rel : e.channels) {
    const std::string path = (fs::path(m.base_dir) / rel).string();
    Tensor<float> ch =
        m.format == "nifti" ? load_nifti(path) : load_npy<float>(path);
    if (ch.rank() != 3) throw IoError(path + ": expected a (D,H,W) array");
    channels.push_back(std::move(ch));
  }
  for (size_t c = 1; c < channels.size(); ++c)
    if (channels[c].shape != channels[0].shape)
      throw ChannelMismatchError("patient " + e.id + ": channel shapes differ");

  const int D = channels[0].dim(0), H = channels[0].dim(1), W = channels[0].dim(2);
  v.channels = Tensor<float>({m.channels, D, H, W});
  for (int c = 0; c < m.channels; ++c)
    std::copy(channels[c].data.begin(), channels[c].data.end(),
              v.channels.ptr() + static_cast<int64_t>(c) * D * H * W);

  if (!e.segmentation.empty()) {
    const std::string path = (fs::path(m.base_dir) / e.segmentation).string();
    Tensor<int32_t> seg;
    if (m.format == "nifti") {
      Tensor<float> raw = load_nifti(path);
      seg = Tensor<int32_t>(raw.shape);
      for (int64_t i = 0; i < raw.numel(); ++i)
        seg[i] = static_cast<int32_t>(std::lround(raw[i]));
    } else {
      seg = load_npy<int32_t>(path);
    }
    if (seg.shape != std::vector<int>{D, H, W})
      throw ChannelMismatchError("patient " + e.id +
                                 ": segmentation shape differs from channels");
    v.segmentation = std::move(seg);
  }
  return v;
}

TrainingSet load_slice_pool(const Manifest& m, const std::string& split,
                            const SliceSelection& sel) {
  TrainingSet pool;
  for (const ManifestEntry& e : m.patients) {
    if (e.split != split) continue;
    VolumeRecord v = normalize_volume(load_volume(m, e));
    for (DataSlice& s : select_and_label_slices_with_gold(v, sel)) {
      (s.image.domain == Domain::kHealthy ? pool.healthy : pool.pathological)
          .push_back(std::move(s));
    }
  }
  return pool;
}

std::string write_phantom_dataset(const std::string& out_dir, int train_healthy,
                                  int train_pathological, int eval_pathological,
                                  int size, int channels, uint64_t seed) {
  fs::create_directories(out_dir);
  Rng rng(seed);
  const std::vector<VolumeRecord> train =
      generate_phantom_dataset(train_healthy, train_pathological, size, channels, rng);
  const std::vector<VolumeRecord> eval_set =
      generate_phantom_dataset(0, eval_pathological, size, channels, rng);

  Manifest m;
  m.format = "npy";
  m.channels = channels;
  m.size = size;

  auto dump = [&](const VolumeRecord& v, const std::string& split, int idx) {
    ManifestEntry e;
    e.id = split + "_" + v.patient_id;
    e.split = split;
    const int D = v.channels.dim(1), H = v.channels.dim(2), W = v.channels.dim(3);
    for (int c = 0; c < channels; ++c) {
      const std::string name = e.id + "_c" + std::to_string(c) + ".npy";
      Tensor<float> ch({D, H, W});
      std::copy(v.channels.ptr() + static_cast<int64_t>(c) * D * H * W,
                v.channels.ptr() + static_cast<int64_t>(c + 1) * D * H * W,
                ch.ptr());
      save_npy((fs::path(out_dir) / name).string(), ch);
      e.channels.push_back(name);
    }
    const std::string seg_name = e.id + "_seg.npy";
    save_npy((fs::path(out_dir) / seg_name).string(), *v.segmentation);
    e.segmentation = seg_name;
    m.patients.push_back(std::move(e));
    (void)idx;
  };

  int idx = 0;
  for (const VolumeRecord& v : train) dump(v, "train", idx++);
  for (const VolumeRecord& v : eval_set) dump(v, "eval", idx++);

  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  m.save(manifest_path);
  return manifest_path;
}

}  // namespace pathogan
