#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "support.hpp"
#include "xmac/data.hpp"
#include "xmac/image_io.hpp"
#include "xmac/vegindex.hpp"

using namespace xmac;
namespace fs = std::filesystem;

namespace {

MultibandImage ramp_image(int h, int w, bool with_nir) {
  MultibandImage img = MultibandImage::blank(h, w, with_nir);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      img.red[i] = (y * w + x) % 256 / 255.0;
      img.green[i] = (y * 3 + x * 7) % 256 / 255.0;
      img.blue[i] = (y * 11 + x) % 256 / 255.0;
      if (with_nir) img.nir[i] = (y + x) % 256 / 255.0;
    }
  return img;
}

// Multiset of sample fingerprints, for partition checks.
std::multiset<std::string> fingerprints(const Dataset& ds) {
  std::multiset<std::string> out;
  for (const auto& s : ds.samples) {
    std::string f = s.class_name + ":";
    for (size_t i = 0; i < std::min<size_t>(8, s.rgb.red.size()); ++i)
      f += std::to_string(s.rgb.red[i]) + ",";
    out.insert(f);
  }
  return out;
}

}  // namespace

TEST_CASE("png: 8-bit round trip is byte-exact, scaling endpoints hold") {
  testsup::TempDir tmp("png8");
  MultibandImage img = ramp_image(13, 9, false);
  img.red[0] = 1.0;
  img.green[0] = 0.0;
  const std::string path = tmp.str() + "/a.png";
  write_image(img, path);
  MultibandImage back = read_image(path);
  CHECK(back.height == 13);
  CHECK(back.width == 9);
  CHECK(back.red[0] == doctest::Approx(1.0));
  CHECK(back.green[0] == doctest::Approx(0.0));
  for (size_t i = 0; i < img.pixels(); ++i) {
    CHECK(back.red[i] == doctest::Approx(img.red[i]).epsilon(1e-9));
    CHECK(back.green[i] == doctest::Approx(img.green[i]).epsilon(1e-9));
    CHECK(back.blue[i] == doctest::Approx(img.blue[i]).epsilon(1e-9));
  }
  // second write of the re-read image is byte-identical
  const std::string path2 = tmp.str() + "/b.png";
  write_image(back, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
}

TEST_CASE("png: 16-bit grayscale read, corrupt and alien files rejected") {
  testsup::TempDir tmp("png16");
  std::vector<double> plane = {0.0, 1.0, 0.25, 0.5, 0.75, 1.0 / 3.0};
  const std::string path = tmp.str() + "/g.png";
  write_gray(path, plane, 2, 3, 16);
  int h = 0, w = 0;
  auto back = read_gray(path, h, w);
  CHECK(h == 2);
  CHECK(w == 3);
  CHECK(back[0] == doctest::Approx(0.0));
  CHECK(back[1] == doctest::Approx(1.0));  // 65535 -> 1.0
  for (size_t i = 0; i < plane.size(); ++i) CHECK(std::fabs(back[i] - plane[i]) < 1e-4);

  const std::string junk = tmp.str() + "/junk.png";
  std::ofstream(junk) << "this is not a png";
  CHECK_THROWS_AS(read_image(junk), ParseError);
  CHECK_THROWS_AS(read_image(tmp.str() + "/missing.png"), IoError);
}

TEST_CASE("load_dataset: layout, ordering, sidecars, error paths") {
  testsup::TempDir tmp("load");
  Dataset ds;
  ds.class_names = {"alpha", "beta"};
  for (int i = 0; i < 3; ++i) {
    LabeledSample s{ramp_image(6, 6, true), 0, "alpha", LabeledSample::Source::kSynthetic};
    ds.samples.push_back(s);
  }
  for (int i = 0; i < 2; ++i) {
    LabeledSample s{ramp_image(6, 6, false), 1, "beta", LabeledSample::Source::kSynthetic};
    ds.samples.push_back(s);
  }
  write_dataset(ds, tmp.str());

  Dataset loaded = load_dataset(tmp.str());
  CHECK(loaded.class_names == std::vector<std::string>{"alpha", "beta"});
  REQUIRE(loaded.samples.size() == 5);
  std::vector<int> labels;
  for (const auto& s : loaded.samples) labels.push_back(s.label);
  CHECK(labels == std::vector<int>{0, 0, 0, 1, 1});
  CHECK(loaded.samples[0].rgb.has_nir());
  CHECK(!loaded.samples[3].rgb.has_nir());

  testsup::TempDir empty("empty");
  CHECK_THROWS_AS(load_dataset(empty.str()), IoError);
  fs::create_directories(fs::path(empty.str()) / "vacant");
  CHECK_THROWS_AS(load_dataset(empty.str()), IoError);

  // mismatched NIR sidecar dimensions
  testsup::TempDir bad("badnir");
  fs::create_directories(fs::path(bad.str()) / "c");
  write_image(ramp_image(6, 6, false), (fs::path(bad.str()) / "c" / "x.png").string());
  write_gray((fs::path(bad.str()) / "c" / "x.nir.png").string(), std::vector<double>(16, 0.5), 4, 4);
  CHECK_THROWS_AS(load_dataset(bad.str()), IoError);
}

TEST_CASE("center_crop: identity, offset arithmetic, replicate padding") {
  MultibandImage img = ramp_image(4, 4, true);
  MultibandImage same = center_crop(img, 4);
  CHECK(same.red == img.red);

  MultibandImage big = ramp_image(6, 6, false);
  MultibandImage c = center_crop(big, 4);
  CHECK(c.height == 4);
  // offset = (6-4)/2 = 1: rows/cols 1..4 survive
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(c.red[static_cast<size_t>(y) * 4 + x] ==
            big.red[static_cast<size_t>(y + 1) * 6 + (x + 1)]);

  MultibandImage small = ramp_image(2, 2, true);
  MultibandImage padded = center_crop(small, 4);
  CHECK(padded.height == 4);
  CHECK(padded.width == 4);
  CHECK(padded.red[0] == small.red[0]);      // corner replicated
  CHECK(padded.nir[15] == small.nir[3]);
}

TEST_CASE("augment: identity config, involution, bounds, NIR geometric lock-step") {
  LabeledSample s{ramp_image(8, 8, true), 0, "c", LabeledSample::Source::kReal};
  Rng rng(5);
  auto id = augment(s, AugmentConfig::identity(), rng);
  CHECK(id.rgb.red == s.rgb.red);
  CHECK(id.rgb.nir == s.rgb.nir);

  // two 180-degree rotations restore the image
  AugmentConfig rot180{0.0, 0.0, false, 0.0, 0.0};
  LabeledSample manual = s;
  for (int i = 0; i < 2; ++i) {
    AugmentConfig both_flips{1.0, 1.0, false, 0.0, 0.0};  // hflip+vflip == rot180
    Rng r(1);
    manual = augment(manual, both_flips, r);
  }
  CHECK(manual.rgb.red == s.rgb.red);
  (void)rot180;

  AugmentConfig full;  // defaults: everything on
  Rng rng2(99);
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = augment(s, full, rng2);
    for (const auto* plane : {&a.rgb.red, &a.rgb.green, &a.rgb.blue, &a.rgb.nir})
      for (double v : *plane) CHECK((v >= 0.0 && v <= 1.0));
  }

  // coordinate-tagged image: red and NIR must receive the same geometry
  MultibandImage tag = MultibandImage::blank(4, 4, true);
  for (size_t i = 0; i < 16; ++i) tag.red[i] = tag.nir[i] = i / 16.0;
  LabeledSample ts{tag, 0, "c", LabeledSample::Source::kReal};
  AugmentConfig geo{0.5, 0.5, true, 0.0, 0.0};  // geometric only
  Rng rng3(123);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = augment(ts, geo, rng3);
    CHECK(a.rgb.red == a.rgb.nir);
  }
}

TEST_CASE("stratified_split: paper ratios, exact partition, determinism") {
  SynthConfig cfg = default_synth_config(8, 3);
  Dataset ds = make_synthetic_dataset(cfg, 100);
  SplitSpec spec{0.8, 0.1, 0.1, 42};
  auto split = stratified_split(ds, spec);

  std::map<std::string, int> tr, va, te;
  for (const auto& s : split.train.samples) tr[s.class_name]++;
  for (const auto& s : split.val.samples) va[s.class_name]++;
  for (const auto& s : split.test.samples) te[s.class_name]++;
  for (const auto& name : ds.class_names) {
    CHECK(tr[name] == 80);
    CHECK(va[name] == 10);
    CHECK(te[name] == 10);
  }

  auto all = fingerprints(split.train);
  for (const auto& f : fingerprints(split.val)) all.insert(f);
  for (const auto& f : fingerprints(split.test)) all.insert(f);
  CHECK(all == fingerprints(ds));

  auto split2 = stratified_split(ds, spec);
  CHECK(fingerprints(split2.train) == fingerprints(split.train));
  spec.seed = 43;
  auto split3 = stratified_split(ds, spec);
  CHECK(fingerprints(split3.train) != fingerprints(split.train));

  // class too small
  Dataset tiny;
  tiny.class_names = {"a"};
  tiny.samples = {ds.samples[0], ds.samples[0]};
  tiny.samples[0].label = tiny.samples[1].label = 0;
  CHECK_THROWS_AS(stratified_split(tiny, spec), ConfigError);
}

TEST_CASE("kfold_split: fold sizes, exact partition, minimum class size") {
  SynthConfig cfg = default_synth_config(8, 4);
  Dataset ds = make_synthetic_dataset(cfg, 50);
  auto folds = kfold_split(ds, 5, 7);
  REQUIRE(folds.size() == 5);

  auto all = fingerprints(ds);
  std::multiset<std::string> test_union;
  for (const auto& f : folds) {
    std::map<std::string, int> per_class;
    for (const auto& s : f.test.samples) per_class[s.class_name]++;
    for (const auto& name : ds.class_names) CHECK(per_class[name] == 10);
    for (const auto& fp : fingerprints(f.test)) test_union.insert(fp);
    CHECK(f.train.size() + f.test.size() == ds.size());
  }
  CHECK(test_union == all);

  // k equal to the min class size still works: 1 test sample per class
  Dataset small = make_synthetic_dataset(default_synth_config(8, 5), 3);
  auto f3 = kfold_split(small, 3, 1);
  for (const auto& f : f3) CHECK(f.test.size() == small.class_names.size());
  CHECK_THROWS_AS(kfold_split(small, 4, 1), ConfigError);
}

TEST_CASE("synthetic generator: determinism, NIR-only statistics, empty error") {
  SynthConfig cfg = default_synth_config(16, 11);
  Dataset a = make_synthetic_dataset(cfg, 4);
  Dataset b = make_synthetic_dataset(cfg, 4);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].rgb.red == b.samples[i].rgb.red);
    CHECK(a.samples[i].rgb.nir == b.samples[i].rgb.nir);
  }
  CHECK_THROWS_AS(make_synthetic_dataset(cfg, 0), ConfigError);

  SynthConfig nironly = default_synth_config(16, 12);
  nironly.nir_only = true;
  Dataset d = make_synthetic_dataset(nironly, 100);
  std::vector<double> rgb_mean(nironly.classes.size(), 0.0), nir_mean(nironly.classes.size(), 0.0);
  std::vector<int> count(nironly.classes.size(), 0);
  for (const auto& s : d.samples) {
    double rm = 0, nm = 0;
    for (size_t i = 0; i < s.rgb.pixels(); ++i) {
      rm += (s.rgb.red[i] + s.rgb.green[i] + s.rgb.blue[i]) / 3.0;
      nm += s.rgb.nir[i];
    }
    rgb_mean[static_cast<size_t>(s.label)] += rm / s.rgb.pixels();
    nir_mean[static_cast<size_t>(s.label)] += nm / s.rgb.pixels();
    count[static_cast<size_t>(s.label)]++;
  }
  for (size_t c = 0; c < count.size(); ++c) {
    rgb_mean[c] /= count[c];
    nir_mean[c] /= count[c];
  }
  // RGB means agree across classes to within the noise amplitude
  for (size_t c = 1; c < rgb_mean.size(); ++c)
    CHECK(std::fabs(rgb_mean[c] - rgb_mean[0]) < nironly.noise);
  // NIR means track the configured offsets
  for (size_t c = 0; c < nir_mean.size(); ++c)
    for (size_t e = 0; e < c; ++e) {
      const double want = nironly.classes[c].nir_offset - nironly.classes[e].nir_offset;
      if (std::fabs(want) > 0.05) CHECK(std::fabs((nir_mean[c] - nir_mean[e]) - want * /*leaf frac*/ 0.42) < 0.12);
    }
}

TEST_CASE("synthetic generator: trivial color-threshold classifier beats 90%") {
  SynthConfig cfg = default_synth_config(32, 21);
  Dataset ds = make_synthetic_dataset(cfg, 30);
  int correct = 0;
  for (const auto& s : ds.samples) {
    // nearest-lesion-color pixel count, "healthy" when nothing matches
    std::vector<int> votes(cfg.classes.size(), 0);
    for (size_t i = 0; i < s.rgb.pixels(); ++i)
      for (size_t c = 0; c < cfg.classes.size(); ++c) {
        if (cfg.classes[c].count_hi == 0) continue;
        const auto& spec = cfg.classes[c];
        const double d = std::max({std::fabs(s.rgb.red[i] - spec.lesion_r),
                                   std::fabs(s.rgb.green[i] - spec.lesion_g),
                                   std::fabs(s.rgb.blue[i] - spec.lesion_b)});
        if (d < 0.09) votes[c]++;
      }
    int best = 3;  // healthy_leaf
    int best_votes = 2;  // noise floor
    for (size_t c = 0; c < votes.size(); ++c)
      if (votes[c] > best_votes) {
        best = static_cast<int>(c);
        best_votes = votes[c];
      }
    if (best == s.label) ++correct;
  }
  CHECK(static_cast<double>(correct) / ds.size() > 0.9);
}

TEST_CASE("batch_iterator: partition arithmetic, order, epoch determinism") {
  SynthConfig cfg = default_synth_config(8, 31);
  Dataset ds = make_synthetic_dataset(cfg, 2);  // 12 samples
  Dataset ten;
  ten.class_names = ds.class_names;
  ten.samples.assign(ds.samples.begin(), ds.samples.begin() + 10);

  BatchIterator it(ten, 4, 0, 0, false, 8);
  std::vector<int64_t> sizes;
  size_t total = 0;
  while (auto b = it.next()) {
    sizes.push_back(b->rgb.dim(0));
    CHECK(b->rgb.shape == std::vector<int64_t>{b->rgb.dim(0), 3, 8, 8});
    CHECK(b->index.shape == b->rgb.shape);
    total += b->labels.size();
  }
  CHECK(sizes == std::vector<int64_t>{4, 4, 2});
  CHECK(total == 10);

  // unshuffled order equals dataset order
  BatchIterator seq(ten, 3, 9, 0, false, 8);
  std::vector<int> labels;
  while (auto b = seq.next()) labels.insert(labels.end(), b->labels.begin(), b->labels.end());
  std::vector<int> want;
  for (const auto& s : ten.samples) want.push_back(s.label);
  CHECK(labels == want);

  // same (seed, epoch) -> same permutation; different epoch -> different
  auto epoch_labels = [&](uint64_t seed, int epoch) {
    BatchIterator bi(ten, 3, seed, epoch, true, 8);
    std::vector<int> out;
    while (auto b = bi.next()) out.insert(out.end(), b->labels.begin(), b->labels.end());
    return out;
  };
  CHECK(epoch_labels(5, 0) == epoch_labels(5, 0));
  CHECK(epoch_labels(5, 0) != epoch_labels(5, 1));

  // batching never drops or duplicates samples
  std::multiset<int> seen(labels.begin(), labels.end());
  std::multiset<int> expect(want.begin(), want.end());
  CHECK(seen == expect);

  // missing NIR propagates unless the proxy is requested
  Dataset no_nir = ten;
  for (auto& s : no_nir.samples) s.rgb.nir.clear();
  BatchIterator broken(no_nir, 4, 0, 0, false, 8);
  CHECK_THROWS_AS(broken.next(), ConfigError);
  BatchIterator proxied(no_nir, 4, 0, 0, false, 8, nullptr, true, true);
  CHECK(proxied.next().has_value());
}
