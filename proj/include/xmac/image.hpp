#pragma once

#include <string>
#include <vector>

#include "xmac/common.hpp"

namespace xmac {

/// H x W raster with named reflectance bands in [0,1]. Red/Green/Blue are
/// required; NIR is optional and empty when absent. Band math runs in double
/// so index values survive round-trips through the formulas unharmed.
struct MultibandImage {
  int height = 0;
  int width = 0;
  std::vector<double> red, green, blue;
  std::vector<double> nir;

  bool has_nir() const { return !nir.empty(); }
  size_t pixels() const { return static_cast<size_t>(height) * static_cast<size_t>(width); }

  static MultibandImage blank(int h, int w, bool with_nir = false) {
    MultibandImage img;
    img.height = h;
    img.width = w;
    img.red.assign(img.pixels(), 0.0);
    img.green.assign(img.pixels(), 0.0);
    img.blue.assign(img.pixels(), 0.0);
    if (with_nir) img.nir.assign(img.pixels(), 0.0);
    return img;
  }

  void validate() const {
    if (height <= 0 || width <= 0) throw ShapeError("image: non-positive dimensions");
    const size_t n = pixels();
    if (red.size() != n || green.size() != n || blue.size() != n)
      throw ShapeError("image: band sizes disagree with dimensions");
    if (!nir.empty() && nir.size() != n) throw ShapeError("image: NIR band size mismatch");
    for (const auto* band : {&red, &green, &blue, &nir})
      for (double v : *band)
        if (!(v >= 0.0 && v <= 1.0)) throw ShapeError("image: band value outside [0,1]");
  }
};

}  // namespace xmac
