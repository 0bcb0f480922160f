#include "pathogan/panel.hpp"

#include <cmath>

#include "pathogan/errors.hpp"

namespace pathogan {

namespace {

Tensor<float> channel_unit(const Tensor<float>& img, int c) {
  const int H = img.dim(1), W = img.dim(2);
  Tensor<float> out({H, W});
  const float* src = img.ptr() + static_cast<int64_t>(c) * H * W;
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = (src[i] + 1.0f) * 0.5f;  // [-1,1] -> [0,1]
  return out;
}

}  // namespace

std::vector<PanelRow> build_panel_rows(const Tensor<float>& input,
                                       const Tensor<uint8_t>* gold,
                                       const Tensor<float>& inpaint,
                                       const Tensor<float>& labelmap,
                                       const Tensor<float>& translated) {
  const int n = input.dim(0);
  if (inpaint.dim(0) != n || translated.dim(0) != n)
    throw ShapeMismatchError("panel: channel counts disagree");

  std::vector<PanelRow> rows(3);
  for (int c = 0; c < n; ++c) rows[0].push_back(channel_unit(input, c));
  if (gold) {
    Tensor<float> g({gold->dim(0), gold->dim(1)});
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = (*gold)[i] ? 1.0f : 0.0f;
    rows[0].push_back(std::move(g));
  } else {
    rows[0].push_back(std::nullopt);
  }

  for (int c = 0; c < n; ++c) rows[1].push_back(channel_unit(inpaint, c));
  rows[1].push_back(labelmap);  // already in (0,1)

  for (int c = 0; c < n; ++c) rows[2].push_back(channel_unit(translated, c));
  rows[2].push_back(std::nullopt);
  return rows;
}

int count_populated(const std::vector<PanelRow>& rows) {
  int n = 0;
  for (const PanelRow& row : rows)
    for (const PanelCell& cell : row)
      if (cell) ++n;
  return n;
}

Tensor<uint8_t> compose_panel(const std::vector<PanelRow>& rows, int gutter) {
  int H = 0, W = 0;
  size_t cols = 0;
  for (const PanelRow& row : rows) {
    cols = std::max(cols, row.size());
    for (const PanelCell& cell : row)
      if (cell) {
        H = cell->dim(0);
        W = cell->dim(1);
      }
  }
  if (H == 0) throw ShapeMismatchError("panel: no populated cells");

  const int total_h = static_cast<int>(rows.size()) * H +
                      (static_cast<int>(rows.size()) - 1) * gutter;
  const int total_w =
      static_cast<int>(cols) * W + (static_cast<int>(cols) - 1) * gutter;
  Tensor<uint8_t> out({total_h, total_w}, 0);

  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      const PanelCell& cell = rows[r][c];
      if (!cell) continue;
      if (cell->dim(0) != H || cell->dim(1) != W)
        throw ShapeMismatchError("panel: cell sizes disagree");
      const int oy = static_cast<int>(r) * (H + gutter);
      const int ox = static_cast<int>(c) * (W + gutter);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const float v = (*cell)[static_cast<int64_t>(y) * W + x] * 255.0f;
          out[static_cast<int64_t>(oy + y) * total_w + ox + x] =
              static_cast<uint8_t>(std::lround(std::min(255.0f, std::max(0.0f, v))));
        }
    }
  }
  return out;
}

}  // namespace pathogan
