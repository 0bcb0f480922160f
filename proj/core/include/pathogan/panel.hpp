#pragma once

#include <optional>
#include <vector>

#include "pathogan/data.hpp"
#include "pathogan/tensor.hpp"

namespace pathogan {

// One grid cell: an (H,W) grayscale image already mapped to [0,1].
// Unpopulated cells render as black.
using PanelCell = std::optional<Tensor<float>>;
using PanelRow = std::vector<PanelCell>;

// The 3-row figure layout:
//   row 1: the n input channels + the manual segmentation (when available)
//   row 2: the n inpaintings + the probability map
//   row 3: the n translated channels (last cell empty)
// All rows have n+1 columns. Images are [-1,1] data mapped to [0,1];
// segmentation and probability maps are used as-is.
std::vector<PanelRow> build_panel_rows(const Tensor<float>& input,      // (n,H,W)
                                       const Tensor<uint8_t>* gold,     // (H,W) or null
                                       const Tensor<float>& inpaint,    // (n,H,W)
                                       const Tensor<float>& labelmap,   // (H,W)
                                       const Tensor<float>& translated  // (n,H,W)
);

int count_populated(const std::vector<PanelRow>& rows);

// Renders rows into one 8-bit grayscale image with a gutter between cells.
Tensor<uint8_t> compose_panel(const std::vector<PanelRow>& rows, int gutter = 2);

}  // namespace pathogan
