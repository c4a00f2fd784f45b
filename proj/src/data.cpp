#include "xmac/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "xmac/image_io.hpp"
#include "xmac/vegindex.hpp"

namespace fs = std::filesystem;

namespace xmac {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Fisher-Yates with our Rng so the permutation is identical on every run.
template <typename V>
void shuffle_indices(V& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

// Largest-remainder apportionment of n into parts proportional to ratios.
std::vector<size_t> apportion(size_t n, const std::vector<double>& ratios) {
  std::vector<size_t> counts(ratios.size());
  std::vector<std::pair<double, size_t>> rema(ratios.size());
  size_t assigned = 0;
  for (size_t i = 0; i < ratios.size(); ++i) {
    const double ideal = n * ratios[i];
    counts[i] = static_cast<size_t>(std::floor(ideal));
    rema[i] = {ideal - std::floor(ideal), i};
    assigned += counts[i];
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (size_t r = 0; assigned < n; ++r, ++assigned) ++counts[rema[r % rema.size()].second];
  return counts;
}

std::vector<std::vector<size_t>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<size_t>> by_class(ds.class_names.size());
  for (size_t i = 0; i < ds.samples.size(); ++i)
    by_class[static_cast<size_t>(ds.samples[i].label)].push_back(i);
  return by_class;
}

Dataset subset(const Dataset& ds, const std::vector<size_t>& idx) {
  Dataset out;
  out.class_names = ds.class_names;
  out.samples.reserve(idx.size());
  for (size_t i : idx) out.samples.push_back(ds.samples[i]);
  return out;
}

void geometric_transform(MultibandImage& img, bool hflip, bool vflip, int quarter_turns) {
  auto transform_plane = [&](std::vector<double>& plane, int h, int w) {
    std::vector<double> tmp(plane.size());
    if (hflip) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) tmp[y * w + x] = plane[y * w + (w - 1 - x)];
      plane.swap(tmp);
    }
    if (vflip) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) tmp[y * w + x] = plane[(h - 1 - y) * w + x];
      plane.swap(tmp);
    }
    for (int t = 0; t < quarter_turns; ++t) {
      // 90 degrees clockwise: (y,x) <- (h-1-x, y)
      std::vector<double> rot(plane.size());
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) rot[x * h + (h - 1 - y)] = plane[y * w + x];
      plane.swap(rot);
      std::swap(h, w);
    }
  };
  const int h = img.height, w = img.width;
  transform_plane(img.red, h, w);
  transform_plane(img.green, h, w);
  transform_plane(img.blue, h, w);
  if (img.has_nir()) transform_plane(img.nir, h, w);
  if (quarter_turns % 2 == 1) std::swap(img.height, img.width);
}

}  // namespace

Dataset load_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root);
  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw IoError("dataset has no class subdirectories: " + root);

  Dataset ds;
  ds.class_names = class_dirs;
  for (size_t label = 0; label < class_dirs.size(); ++label) {
    const fs::path dir = fs::path(root) / class_dirs[label];
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (e.is_regular_file() && ends_with(name, ".png") && !ends_with(name, ".nir.png"))
        files.push_back(name);
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("empty class directory: " + dir.string());
    for (const auto& name : files) {
      LabeledSample s;
      s.rgb = read_image((dir / name).string());
      s.label = static_cast<int>(label);
      s.class_name = class_dirs[label];
      const std::string stem = name.substr(0, name.size() - 4);
      const fs::path nir_path = dir / (stem + ".nir.png");
      if (fs::exists(nir_path)) {
        int h = 0, w = 0;
        s.rgb.nir = read_gray(nir_path.string(), h, w);
        if (h != s.rgb.height || w != s.rgb.width)
          throw IoError("NIR sidecar dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                        " do not match " + (dir / name).string());
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& root) {
  fs::create_directories(root);
  std::vector<int> counter(ds.class_names.size(), 0);
  for (const auto& s : ds.samples) {
    const fs::path dir = fs::path(root) / s.class_name;
    fs::create_directories(dir);
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", counter[static_cast<size_t>(s.label)]++);
    write_image(s.rgb, (dir / (std::string(name) + ".png")).string());
    if (s.rgb.has_nir())
      write_gray((dir / (std::string(name) + ".nir.png")).string(), s.rgb.nir, s.rgb.height,
                 s.rgb.width);
  }
}

MultibandImage center_crop(const MultibandImage& img, int size) {
  if (size <= 0) throw ConfigError("center_crop: size must be positive");
  MultibandImage src = img;
  // replicate-pad edges until both dimensions reach the crop size
  if (src.height < size || src.width < size) {
    const int h = std::max(src.height, size), w = std::max(src.width, size);
    const int oy = (h - src.height) / 2, ox = (w - src.width) / 2;
    MultibandImage padded = MultibandImage::blank(h, w, src.has_nir());
    auto pad_plane = [&](const std::vector<double>& in, std::vector<double>& out) {
      for (int y = 0; y < h; ++y) {
        const int sy = std::clamp(y - oy, 0, src.height - 1);
        for (int x = 0; x < w; ++x) {
          const int sx = std::clamp(x - ox, 0, src.width - 1);
          out[static_cast<size_t>(y) * w + x] = in[static_cast<size_t>(sy) * src.width + sx];
        }
      }
    };
    pad_plane(src.red, padded.red);
    pad_plane(src.green, padded.green);
    pad_plane(src.blue, padded.blue);
    if (src.has_nir()) pad_plane(src.nir, padded.nir);
    src = std::move(padded);
  }
  if (src.height == size && src.width == size) return src;

  const int oy = (src.height - size) / 2, ox = (src.width - size) / 2;
  MultibandImage out = MultibandImage::blank(size, size, src.has_nir());
  auto crop_plane = [&](const std::vector<double>& in, std::vector<double>& dst) {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        dst[static_cast<size_t>(y) * size + x] =
            in[static_cast<size_t>(y + oy) * src.width + (x + ox)];
  };
  crop_plane(src.red, out.red);
  crop_plane(src.green, out.green);
  crop_plane(src.blue, out.blue);
  if (src.has_nir()) crop_plane(src.nir, out.nir);
  return out;
}

LabeledSample augment(const LabeledSample& sample, const AugmentConfig& config, Rng& rng) {
  LabeledSample out = sample;
  const bool hflip = config.p_hflip > 0 && rng.bernoulli(config.p_hflip);
  const bool vflip = config.p_vflip > 0 && rng.bernoulli(config.p_vflip);
  const int quarter_turns = config.rotate90 ? static_cast<int>(rng.below(4)) : 0;
  geometric_transform(out.rgb, hflip, vflip, quarter_turns);

  const double offset = config.brightness > 0 ? rng.uniform(-config.brightness, config.brightness) : 0.0;
  const double gain = config.contrast > 0 ? rng.uniform(1.0 - config.contrast, 1.0 + config.contrast) : 1.0;
  if (offset == 0.0 && gain == 1.0) return out;
  // photometric jitter on the color bands only; NIR is a radiometric channel
  for (auto* plane : {&out.rgb.red, &out.rgb.green, &out.rgb.blue})
    for (auto& v : *plane) v = std::clamp((v - 0.5) * gain + 0.5 + offset, 0.0, 1.0);
  return out;
}

SplitResult stratified_split(const Dataset& ds, const SplitSpec& spec) {
  if (spec.train <= 0 || spec.val <= 0 || spec.test <= 0)
    throw ConfigError("stratified_split: each ratio must be positive");
  if (std::fabs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw ConfigError("stratified_split: ratios must sum to 1");
  std::vector<size_t> tr, va, te;
  auto by_class = indices_by_class(ds);
  for (size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 3)
      throw ConfigError("stratified_split: class '" + ds.class_names[c] + "' has only " +
                        std::to_string(idx.size()) + " samples, need at least 3");
    Rng rng(Rng::mix(spec.seed) ^ (0x51ed2700ull + c));
    shuffle_indices(idx, rng);
    const auto counts = apportion(idx.size(), {spec.train, spec.val, spec.test});
    size_t p = 0;
    for (size_t i = 0; i < counts[0]; ++i) tr.push_back(idx[p++]);
    for (size_t i = 0; i < counts[1]; ++i) va.push_back(idx[p++]);
    for (size_t i = 0; i < counts[2]; ++i) te.push_back(idx[p++]);
  }
  std::sort(tr.begin(), tr.end());
  std::sort(va.begin(), va.end());
  std::sort(te.begin(), te.end());
  return {subset(ds, tr), subset(ds, va), subset(ds, te)};
}

std::vector<Fold> kfold_split(const Dataset& ds, int k, uint64_t seed) {
  if (k < 2) throw ConfigError("kfold_split: k must be >= 2");
  auto by_class = indices_by_class(ds);
  std::vector<std::vector<size_t>> fold_test(static_cast<size_t>(k));
  for (size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < static_cast<size_t>(k))
      throw ConfigError("kfold_split: class '" + ds.class_names[c] + "' has " +
                        std::to_string(idx.size()) + " samples, fewer than k=" + std::to_string(k));
    Rng rng(Rng::mix(seed) ^ (0xf01d5ull + c));
    shuffle_indices(idx, rng);
    for (size_t i = 0; i < idx.size(); ++i) fold_test[i % static_cast<size_t>(k)].push_back(idx[i]);
  }
  std::vector<Fold> folds;
  for (int f = 0; f < k; ++f) {
    auto test_idx = fold_test[static_cast<size_t>(f)];
    std::sort(test_idx.begin(), test_idx.end());
    std::vector<size_t> train_idx;
    for (int g = 0; g < k; ++g)
      if (g != f)
        train_idx.insert(train_idx.end(), fold_test[static_cast<size_t>(g)].begin(),
                         fold_test[static_cast<size_t>(g)].end());
    std::sort(train_idx.begin(), train_idx.end());
    folds.push_back({subset(ds, train_idx), subset(ds, test_idx)});
  }
  return folds;
}

SynthConfig default_synth_config(int size, uint64_t seed) {
  SynthConfig cfg;
  cfg.size = size;
  cfg.seed = seed;
  cfg.classes = {
      {"bacterial_spot", 0.28, 0.13, 0.05, 3, 6, 0.04, 0.07, -0.25},
      {"cercospora_leaf_spot", 0.68, 0.58, 0.38, 2, 4, 0.05, 0.09, -0.15},
      {"curl_virus", 0.78, 0.74, 0.12, 4, 8, 0.03, 0.06, -0.05},
      {"healthy_leaf", 0.0, 0.0, 0.0, 0, 0, 0.0, 0.0, 0.25},
      {"nutrition_deficiency", 0.55, 0.62, 0.22, 1, 2, 0.10, 0.16, 0.05},
      {"white_spot", 0.88, 0.90, 0.85, 2, 5, 0.04, 0.07, -0.35},
  };
  return cfg;
}

Dataset make_synthetic_dataset(const SynthConfig& config, int n_per_class,
                               std::vector<LesionBox>* boxes) {
  if (config.classes.size() < 2) throw ConfigError("synth: need at least 2 classes");
  if (n_per_class <= 0) throw ConfigError("synth: n_per_class must be positive");
  for (const auto& c : config.classes)
    if (c.nir_offset < -1.0 || c.nir_offset > 1.0)
      throw ConfigError("synth: NIR offset outside [-1,1] for class " + c.name);

  const int s = config.size;
  Dataset ds;
  for (const auto& c : config.classes) ds.class_names.push_back(c.name);
  if (boxes) boxes->clear();

  for (size_t ci = 0; ci < config.classes.size(); ++ci) {
    const auto& spec = config.classes[ci];
    for (int k = 0; k < n_per_class; ++k) {
      Rng rng(Rng::mix(config.seed) ^ Rng::mix(0xbead5eedull + ci * 100003ull + static_cast<uint64_t>(k)));
      LabeledSample sample;
      sample.label = static_cast<int>(ci);
      sample.class_name = spec.name;
      sample.source = LabeledSample::Source::kSynthetic;
      MultibandImage& img = sample.rgb;
      img = MultibandImage::blank(s, s, true);

      // dark soil background
      const double soil_r = rng.uniform(0.06, 0.12);
      const double soil_g = rng.uniform(0.05, 0.10);
      const double soil_b = rng.uniform(0.04, 0.08);
      // leaf ellipse
      const double cx = s * rng.uniform(0.45, 0.55), cy = s * rng.uniform(0.45, 0.55);
      const double ax = s * rng.uniform(0.32, 0.42), ay = s * rng.uniform(0.30, 0.42);
      const double angle = rng.uniform(0.0, 3.14159265358979);
      const double ca = std::cos(angle), sa = std::sin(angle);
      // nir_only keeps the shared color bands tight so per-image reflectance
      // variation cannot drown the class signal carried by the NIR offsets
      const double green_mid = (config.leaf_green_lo + config.leaf_green_hi) / 2.0;
      const double leaf_r = config.nir_only ? rng.uniform(0.17, 0.19) : rng.uniform(0.14, 0.22);
      const double leaf_g = config.nir_only
                                ? rng.uniform(green_mid - 0.01, green_mid + 0.01)
                                : rng.uniform(config.leaf_green_lo, config.leaf_green_hi);
      const double leaf_b = config.nir_only ? rng.uniform(0.13, 0.15) : rng.uniform(0.10, 0.18);
      const double leaf_nir = 0.5 + spec.nir_offset;
      // nir_only pins the soil NDVI near zero; a freely varying background
      // NDVI would otherwise dominate the class-level differences
      const double soil_nir = config.nir_only ? soil_r : 0.15;

      std::vector<uint8_t> leaf_mask(img.pixels(), 0);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double u = (dx * ca + dy * sa) / ax, v = (-dx * sa + dy * ca) / ay;
          const size_t i = static_cast<size_t>(y) * s + x;
          const bool leaf = u * u + v * v <= 1.0;
          leaf_mask[i] = leaf;
          img.red[i] = leaf ? leaf_r : soil_r;
          img.green[i] = leaf ? leaf_g : soil_g;
          img.blue[i] = leaf ? leaf_b : soil_b;
          img.nir[i] = leaf ? leaf_nir : soil_nir;
        }

      LesionBox box;
      if (!config.nir_only && spec.count_hi > 0) {
        const int count = spec.count_lo + static_cast<int>(rng.below(
                              static_cast<uint64_t>(spec.count_hi - spec.count_lo + 1)));
        for (int l = 0; l < count; ++l) {
          const double r = s * rng.uniform(spec.radius_lo, spec.radius_hi);
          // place lesion center well inside the leaf ellipse
          const double t = rng.uniform(0.0, 2.0 * 3.14159265358979);
          const double rho = std::sqrt(rng.uniform(0.0, 0.45));
          const double lx = cx + std::cos(t) * rho * ax, ly = cy + std::sin(t) * rho * ay;
          for (int y = std::max(0, static_cast<int>(ly - r - 1));
               y <= std::min(s - 1, static_cast<int>(ly + r + 1)); ++y)
            for (int x = std::max(0, static_cast<int>(lx - r - 1));
                 x <= std::min(s - 1, static_cast<int>(lx + r + 1)); ++x) {
              const double d2 = (x - lx) * (x - lx) + (y - ly) * (y - ly);
              const size_t i = static_cast<size_t>(y) * s + x;
              if (d2 <= r * r && leaf_mask[i]) {
                img.red[i] = spec.lesion_r;
                img.green[i] = spec.lesion_g;
                img.blue[i] = spec.lesion_b;
                img.nir[i] = std::clamp(leaf_nir - 0.2, 0.0, 1.0);
                if (box.empty()) {
                  box = {x, y, x, y};
                } else {
                  box.x0 = std::min(box.x0, x);
                  box.y0 = std::min(box.y0, y);
                  box.x1 = std::max(box.x1, x);
                  box.y1 = std::max(box.y1, y);
                }
              }
            }
        }
      }

      for (auto* plane : {&img.red, &img.green, &img.blue, &img.nir})
        for (auto& v : *plane) v = std::clamp(v + config.noise * rng.normal(), 0.0, 1.0);

      ds.samples.push_back(std::move(sample));
      if (boxes) boxes->push_back(box);
    }
  }
  // interleave classes so truncated prefixes stay balanced
  std::vector<size_t> order;
  for (int k = 0; k < n_per_class; ++k)
    for (size_t c = 0; c < config.classes.size(); ++c) order.push_back(c * n_per_class + k);
  Dataset shuffled;
  shuffled.class_names = ds.class_names;
  std::vector<LesionBox> shuffled_boxes;
  for (size_t i : order) {
    shuffled.samples.push_back(std::move(ds.samples[i]));
    if (boxes) shuffled_boxes.push_back((*boxes)[i]);
  }
  if (boxes) *boxes = std::move(shuffled_boxes);
  return shuffled;
}

BatchIterator::BatchIterator(const Dataset& ds, int batch_size, uint64_t seed, int epoch,
                             bool shuffle, int crop_size, const AugmentConfig* aug,
                             bool compute_index, bool nir_proxy)
    : ds_(&ds),
      batch_size_(batch_size),
      seed_(seed),
      shuffle_(shuffle),
      crop_size_(crop_size),
      aug_(aug),
      compute_index_(compute_index),
      nir_proxy_(nir_proxy) {
  if (batch_size_ < 1) throw ConfigError("batch_iterator: batch size must be >= 1");
  reset(epoch);
}

void BatchIterator::reset(int epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(ds_->samples.size());
  std::iota(order_.begin(), order_.end(), size_t{0});
  if (shuffle_) {
    Rng rng(Rng::mix(seed_) ^ Rng::mix(0xe90cull + static_cast<uint64_t>(epoch)));
    shuffle_indices(order_, rng);
  }
  aug_rng_ = Rng(Rng::mix(seed_ ^ 0xa06ull) ^ static_cast<uint64_t>(epoch));
}

size_t BatchIterator::num_batches() const {
  return (ds_->samples.size() + static_cast<size_t>(batch_size_) - 1) /
         static_cast<size_t>(batch_size_);
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const size_t n = std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);
  const int s = crop_size_;
  Batch batch;
  batch.rgb = Tensor::zeros({static_cast<int64_t>(n), 3, s, s});
  if (compute_index_) batch.index = Tensor::zeros({static_cast<int64_t>(n), 3, s, s});
  float* rp = batch.rgb.ptr();
  const size_t plane = static_cast<size_t>(s) * s;

  for (size_t b = 0; b < n; ++b) {
    const LabeledSample& raw = ds_->samples[order_[cursor_ + b]];
    LabeledSample prepared;
    prepared.rgb = center_crop(raw.rgb, s);
    prepared.label = raw.label;
    if (aug_) {
      prepared = augment(prepared, *aug_, aug_rng_);
    }
    if (nir_proxy_) prepared.rgb = apply_nir_proxy(prepared.rgb);
    const MultibandImage& img = prepared.rgb;
    for (size_t i = 0; i < plane; ++i) {
      rp[(b * 3 + 0) * plane + i] = static_cast<float>(img.red[i]);
      rp[(b * 3 + 1) * plane + i] = static_cast<float>(img.green[i]);
      rp[(b * 3 + 2) * plane + i] = static_cast<float>(img.blue[i]);
    }
    if (compute_index_) {
      IndexStack stack = build_index_stack(img);
      float* ip = batch.index.ptr();
      for (size_t i = 0; i < plane * 3; ++i)
        ip[b * 3 * plane + i] = static_cast<float>(stack.data[i]);
    }
    batch.labels.push_back(raw.label);
  }
  cursor_ += n;
  return batch;
}

}  // namespace xmac
