#include "pathogan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

namespace pathogan {

double dice_percent(const Mask& a, const Mask& b) {
  int64_t na = 0, nb = 0, inter = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const bool va = a[i] != 0, vb = b[i] != 0;
    na += va;
    nb += vb;
    inter += va && vb;
  }
  if (na + nb == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
  const int H = m.dim(0), W = m.dim(1);
  std::vector<std::pair<int, int>> out;
  auto at = [&](int y, int x) -> bool {
    if (y < 0 || y >= H || x < 0 || x >= W) return false;
    return m[static_cast<int64_t>(y) * W + x] != 0;
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!at(y, x)) continue;
      if (!at(y - 1, x) || !at(y + 1, x) || !at(y, x - 1) || !at(y, x + 1))
        out.emplace_back(y, x);
    }
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared-distance lower envelope (Felzenszwalb & Huttenlocher).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n,
            std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (f[v[0]] == kInf) {
      v[0] = q;
      continue;
    }
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    if (f[v[0]] == kInf) {
      d[q] = kInf;
      continue;
    }
    while (z[k + 1] < q) ++k;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

// exact squared Euclidean distance transform to the given sites
std::vector<double> edt_squared(int H, int W,
                                const std::vector<std::pair<int, int>>& sites) {
  std::vector<double> grid(static_cast<size_t>(H) * W, kInf);
  for (const auto& [y, x] : sites) grid[static_cast<size_t>(y) * W + x] = 0.0;

  const int n = std::max(H, W);
  std::vector<double> f(n), d(n);
  std::vector<int> v(n);
  std::vector<double> z(n + 1);

  for (int x = 0; x < W; ++x) {  // columns
    for (int y = 0; y < H; ++y) f[y] = grid[static_cast<size_t>(y) * W + x];
    edt_1d(f, d, H, v, z);
    for (int y = 0; y < H; ++y) grid[static_cast<size_t>(y) * W + x] = d[y];
  }
  for (int y = 0; y < H; ++y) {  // rows
    for (int x = 0; x < W; ++x) f[x] = grid[static_cast<size_t>(y) * W + x];
    edt_1d(f, d, W, v, z);
    for (int x = 0; x < W; ++x) grid[static_cast<size_t>(y) * W + x] = d[x];
  }
  return grid;
}

}  // namespace

std::vector<double> directed_boundary_distances(const Mask& from, const Mask& to) {
  const auto bf = boundary_pixels(from);
  const auto bt = boundary_pixels(to);
  std::vector<double> out;
  if (bf.empty() || bt.empty()) return out;
  const std::vector<double> dist2 = edt_squared(from.dim(0), from.dim(1), bt);
  out.reserve(bf.size());
  for (const auto& [y, x] : bf)
    out.push_back(std::sqrt(dist2[static_cast<size_t>(y) * from.dim(1) + x]));
  return out;
}

double percentile_linear(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n == 1) return values[0];
  const double rank = q * static_cast<double>(n - 1);
  const size_t lo = static_cast<size_t>(rank);
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= n) return values[n - 1];
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

double hd95(const Mask& a, const Mask& b) {
  const bool ea = mask_empty(a), eb = mask_empty(b);
  if (ea && eb) return 0.0;
  if (ea || eb) return empty_mask_penalty(a);
  std::vector<double> pool = directed_boundary_distances(a, b);
  const std::vector<double> back = directed_boundary_distances(b, a);
  pool.insert(pool.end(), back.begin(), back.end());
  return percentile_linear(std::move(pool), 0.95);
}

double avd(const Mask& a, const Mask& b) {
  const bool ea = mask_empty(a), eb = mask_empty(b);
  if (ea && eb) return 0.0;
  if (ea || eb) return empty_mask_penalty(a);
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  return 0.5 * (mean(directed_boundary_distances(a, b)) +
                mean(directed_boundary_distances(b, a)));
}

std::vector<PatientDice> dice_per_patient(const std::vector<PatientSlicePair>& slices,
                                          std::vector<std::string>* skipped) {
  // group, preserving first-seen patient order
  std::vector<std::string> order;
  std::map<std::string, std::vector<const PatientSlicePair*>> groups;
  for (const PatientSlicePair& s : slices) {
    auto [it, inserted] = groups.try_emplace(s.patient_id);
    if (inserted) order.push_back(s.patient_id);
    it->second.push_back(&s);
  }

  std::vector<PatientDice> out;
  for (const std::string& id : order) {
    const auto& group = groups[id];
    const int H = group[0]->pred.dim(0), W = group[0]->pred.dim(1);
    Mask pred({static_cast<int>(group.size()) * H, W});
    Mask gold(pred.shape);
    for (size_t k = 0; k < group.size(); ++k) {
      std::copy(group[k]->pred.data.begin(), group[k]->pred.data.end(),
                pred.data.begin() + k * H * W);
      std::copy(group[k]->gold.data.begin(), group[k]->gold.data.end(),
                gold.data.begin() + k * H * W);
    }
    if (mask_empty(pred) && mask_empty(gold)) {
      if (skipped) skipped->push_back(id);
      continue;
    }
    out.push_back({id, dice_percent(pred, gold)});
  }
  return out;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.count = static_cast<int64_t>(values.size());
  if (values.empty()) return a;
  double sum = 0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(var / static_cast<double>(values.size()));
  a.median = percentile_linear(values, 0.5);
  return a;
}

std::string format_aggregate(const Aggregate& a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f±%.1f(%.1f)", a.mean, a.stddev, a.median);
  return buf;
}

}  // namespace pathogan
