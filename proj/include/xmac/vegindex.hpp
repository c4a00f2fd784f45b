#pragma once

#include <string>
#include <vector>

#include "xmac/image.hpp"
#include "xmac/tensor.hpp"

namespace xmac {

enum class IndexKind { kNdvi, kNpci, kMcari };

const char* index_name(IndexKind kind);

/// One vegetation-index plane. Raw NDVI/NPCI live in [-1,1] by construction;
/// MCARI is unbounded until normalized.
struct IndexMap {
  IndexKind kind = IndexKind::kNdvi;
  int height = 0;
  int width = 0;
  std::vector<double> values;
  bool normalized = false;
};

/// 3 x H x W stack in the fixed channel order (NDVI, NPCI, MCARI), all
/// values normalized to [0,1].
struct IndexStack {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // channel-major

  Tensor to_tensor() const;  // float [3,H,W]
};

// NDVI = (NIR - Red) / (NIR + Red). Denominators below 1e-6 yield 0 at that
// pixel instead of letting a NaN leak into training.
IndexMap ndvi(const MultibandImage& img);

// NPCI = (Red - Blue) / (Red + Blue), same degenerate-pixel guard.
IndexMap npci(const MultibandImage& img);

// MCARI on the available bands: [(NIR - Red) - 0.2 (NIR - Green)] * NIR/Red.
// The canonical definition uses narrow bands R700/R670/R550; with only
// RGB+NIR those map to NIR/Red/Green. An approximation, not a calibration.
IndexMap mcari(const MultibandImage& img);

// NDVI/NPCI map through the fixed affine (x+1)/2; MCARI is min-max scaled
// per image, constant maps landing on 0.5.
IndexMap normalize_index(const IndexMap& map);

IndexStack build_index_stack(const MultibandImage& img);

// Test/demo escape hatch for cameras without an NIR channel: substitutes
// NIR := Green. Opt-in only; results are not physically meaningful.
MultibandImage apply_nir_proxy(const MultibandImage& img);

}  // namespace xmac
