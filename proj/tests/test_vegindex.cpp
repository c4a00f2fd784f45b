#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xmac/vegindex.hpp"

using namespace xmac;

namespace {

MultibandImage uniform_image(int h, int w, double r, double g, double b, double nir = -1.0) {
  MultibandImage img = MultibandImage::blank(h, w, nir >= 0.0);
  std::fill(img.red.begin(), img.red.end(), r);
  std::fill(img.green.begin(), img.green.end(), g);
  std::fill(img.blue.begin(), img.blue.end(), b);
  if (nir >= 0.0) std::fill(img.nir.begin(), img.nir.end(), nir);
  return img;
}

MultibandImage random_image(int h, int w, Rng& rng) {
  MultibandImage img = MultibandImage::blank(h, w, true);
  for (auto* band : {&img.red, &img.green, &img.blue, &img.nir})
    for (auto& v : *band) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("ndvi: symmetry, hand value, degenerate denominator, missing band") {
  auto eq = uniform_image(3, 3, 0.4, 0.2, 0.1, 0.4);  // NIR == Red
  for (double v : ndvi(eq).values) CHECK(v == 0.0);

  auto img = uniform_image(2, 2, 0.2, 0.3, 0.1, 0.8);
  for (double v : ndvi(img).values) CHECK(std::fabs(v - 0.6) < 1e-12);

  auto zero = uniform_image(2, 2, 0.0, 0.5, 0.5, 0.0);
  for (double v : ndvi(zero).values) CHECK(v == 0.0);

  auto no_nir = uniform_image(2, 2, 0.2, 0.3, 0.1);
  CHECK_THROWS_AS(ndvi(no_nir), ConfigError);
  CHECK_NOTHROW(ndvi(apply_nir_proxy(no_nir)));
}

TEST_CASE("npci: symmetry and hand values in both directions") {
  auto eq = uniform_image(2, 2, 0.3, 0.5, 0.3);
  for (double v : npci(eq).values) CHECK(v == 0.0);

  auto hi = uniform_image(2, 2, 0.9, 0.5, 0.1);
  for (double v : npci(hi).values) CHECK(std::fabs(v - 0.8) < 1e-12);

  auto lo = uniform_image(2, 2, 0.1, 0.5, 0.9);
  for (double v : npci(lo).values) CHECK(std::fabs(v + 0.8) < 1e-12);
}

TEST_CASE("mcari: vanishes when bands coincide, hand value, zero NIR") {
  auto eq = uniform_image(2, 2, 0.4, 0.4, 0.2, 0.4);
  for (double v : mcari(eq).values) CHECK(v == 0.0);

  // [(0.8-0.2) - 0.2*(0.8-0.4)] * 0.8/0.2 = 0.52 * 4 = 2.08
  auto img = uniform_image(2, 2, 0.2, 0.4, 0.1, 0.8);
  for (double v : mcari(img).values) CHECK(std::fabs(v - 2.08) < 1e-12);

  auto dark = uniform_image(2, 2, 0.2, 0.4, 0.1, 0.0);
  for (double v : mcari(dark).values) CHECK(v == 0.0);
}

TEST_CASE("normalize_index: affine for NDVI/NPCI, min-max for MCARI") {
  IndexMap m{IndexKind::kNdvi, 1, 3, {0.0, 1.0, -1.0}, false};
  auto n = normalize_index(m);
  CHECK(n.values[0] == doctest::Approx(0.5));
  CHECK(n.values[1] == doctest::Approx(1.0));
  CHECK(n.values[2] == doctest::Approx(0.0));
  CHECK(n.normalized);
  CHECK_THROWS_AS(normalize_index(n), ConfigError);

  IndexMap mc{IndexKind::kMcari, 1, 2, {0.0, 2.08}, false};
  auto nc = normalize_index(mc);
  CHECK(nc.values[0] == doctest::Approx(0.0));
  CHECK(nc.values[1] == doctest::Approx(1.0));

  IndexMap flat{IndexKind::kMcari, 1, 3, {1.3, 1.3, 1.3}, false};
  for (double v : normalize_index(flat).values) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("build_index_stack: all-equal bands give 0.5 everywhere, fixed order") {
  auto img = uniform_image(4, 5, 0.3, 0.3, 0.3, 0.3);
  auto stack = build_index_stack(img);
  CHECK(stack.height == 4);
  CHECK(stack.width == 5);
  CHECK(stack.data.size() == 3u * 20u);
  for (double v : stack.data) CHECK(v == doctest::Approx(0.5));

  Tensor t = stack.to_tensor();
  CHECK(t.shape == std::vector<int64_t>{3, 4, 5});
}

TEST_CASE("property: raw NDVI/NPCI bounded, normalized stack in [0,1], purity") {
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    auto img = random_image(3, 4, rng);
    auto nd = ndvi(img), np = npci(img);
    for (double v : nd.values) CHECK((v >= -1.0 && v <= 1.0));
    for (double v : np.values) CHECK((v >= -1.0 && v <= 1.0));
    auto stack = build_index_stack(img);
    for (double v : stack.data) CHECK((v >= 0.0 && v <= 1.0));
  }

  // identical input -> identical output, and the Green band cannot move NDVI/NPCI
  Rng rng2(77);
  auto img = random_image(5, 5, rng2);
  auto a = build_index_stack(img);
  auto b = build_index_stack(img);
  CHECK(a.data == b.data);

  auto tweaked = img;
  for (auto& v : tweaked.green) v = 1.0 - v;
  CHECK(ndvi(img).values == ndvi(tweaked).values);
  CHECK(npci(img).values == npci(tweaked).values);
}
