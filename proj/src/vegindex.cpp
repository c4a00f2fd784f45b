#include "xmac/vegindex.hpp"

#include <algorithm>
#include <cmath>

namespace xmac {

namespace {

constexpr double kDenomEps = 1e-6;

void require_band(const std::vector<double>& band, const char* name, const char* index) {
  if (band.empty())
    throw ConfigError(std::string(index) + ": required band '" + name +
                      "' is missing (see --nir-proxy for NIR-less inputs)");
}

double safe_ratio(double num, double den) { return den < kDenomEps ? 0.0 : num / den; }

}  // namespace

const char* index_name(IndexKind kind) {
  switch (kind) {
    case IndexKind::kNdvi: return "NDVI";
    case IndexKind::kNpci: return "NPCI";
    case IndexKind::kMcari: return "MCARI";
  }
  return "?";
}

IndexMap ndvi(const MultibandImage& img) {
  require_band(img.nir, "NIR", "ndvi");
  IndexMap out{IndexKind::kNdvi, img.height, img.width, {}, false};
  out.values.resize(img.pixels());
  for (size_t i = 0; i < img.pixels(); ++i)
    out.values[i] = safe_ratio(img.nir[i] - img.red[i], img.nir[i] + img.red[i]);
  return out;
}

IndexMap npci(const MultibandImage& img) {
  require_band(img.red, "Red", "npci");
  require_band(img.blue, "Blue", "npci");
  IndexMap out{IndexKind::kNpci, img.height, img.width, {}, false};
  out.values.resize(img.pixels());
  for (size_t i = 0; i < img.pixels(); ++i)
    out.values[i] = safe_ratio(img.red[i] - img.blue[i], img.red[i] + img.blue[i]);
  return out;
}

IndexMap mcari(const MultibandImage& img) {
  require_band(img.nir, "NIR", "mcari");
  require_band(img.red, "Red", "mcari");
  require_band(img.green, "Green", "mcari");
  IndexMap out{IndexKind::kMcari, img.height, img.width, {}, false};
  out.values.resize(img.pixels());
  for (size_t i = 0; i < img.pixels(); ++i) {
    const double nir = img.nir[i], red = img.red[i], green = img.green[i];
    out.values[i] = ((nir - red) - 0.2 * (nir - green)) * (nir / std::max(red, kDenomEps));
  }
  return out;
}

IndexMap normalize_index(const IndexMap& map) {
  if (map.normalized) throw ConfigError("normalize_index: map already normalized");
  IndexMap out = map;
  out.normalized = true;
  if (map.kind == IndexKind::kMcari) {
    auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
    const double lo = map.values.empty() ? 0.0 : *lo_it;
    const double hi = map.values.empty() ? 0.0 : *hi_it;
    if (hi - lo < 1e-12) {
      std::fill(out.values.begin(), out.values.end(), 0.5);
    } else {
      for (auto& v : out.values) v = (v - lo) / (hi - lo);
    }
  } else {
    for (auto& v : out.values) v = (v + 1.0) / 2.0;
  }
  return out;
}

IndexStack build_index_stack(const MultibandImage& img) {
  const IndexMap maps[3] = {normalize_index(ndvi(img)), normalize_index(npci(img)),
                            normalize_index(mcari(img))};
  IndexStack stack;
  stack.height = img.height;
  stack.width = img.width;
  stack.data.reserve(img.pixels() * 3);
  for (const auto& m : maps) stack.data.insert(stack.data.end(), m.values.begin(), m.values.end());
  return stack;
}

Tensor IndexStack::to_tensor() const {
  std::vector<float> f(data.size());
  for (size_t i = 0; i < data.size(); ++i) f[i] = static_cast<float>(data[i]);
  return Tensor::from({3, height, width}, std::move(f));
}

MultibandImage apply_nir_proxy(const MultibandImage& img) {
  MultibandImage out = img;
  if (!out.has_nir()) out.nir = out.green;
  return out;
}

}  // namespace xmac
