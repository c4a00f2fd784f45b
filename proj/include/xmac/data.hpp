#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xmac/image.hpp"
#include "xmac/rng.hpp"
#include "xmac/tensor.hpp"

namespace xmac {

struct LabeledSample {
  MultibandImage rgb;
  int label = 0;
  std::string class_name;
  enum class Source { kReal, kSynthetic } source = Source::kReal;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::vector<std::string> class_names;

  size_t size() const { return samples.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  uint64_t seed = 0;
};

struct SplitResult {
  Dataset train, val, test;
};

struct AugmentConfig {
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  bool rotate90 = true;        // uniform choice of {0,90,180,270} degrees
  double brightness = 0.1;     // offset ~ U(-brightness, brightness)
  double contrast = 0.1;       // scale ~ U(1-contrast, 1+contrast)

  static AugmentConfig identity() { return {0.0, 0.0, false, 0.0, 0.0}; }
};

// One lesion recipe per class. NIR offsets shift the whole-leaf NIR
// reflectance; lesions additionally dent the NIR band locally.
struct SynthClassSpec {
  std::string name;
  double lesion_r = 0, lesion_g = 0, lesion_b = 0;
  int count_lo = 0, count_hi = 0;
  double radius_lo = 0, radius_hi = 0;  // fraction of image size
  double nir_offset = 0;               // within [-1,1]
};

struct SynthConfig {
  int size = 64;
  std::vector<SynthClassSpec> classes;
  double leaf_green_lo = 0.45, leaf_green_hi = 0.60;
  double noise = 0.02;
  // When set, class identity is carried only by the NIR band: no lesions are
  // drawn and the RGB distribution is identical across classes.
  bool nir_only = false;
  uint64_t seed = 0;
};

// Pixel bounding box of the union of a sample's lesions (inclusive).
struct LesionBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool empty() const { return x1 < x0 || y1 < y0; }
  long area() const { return empty() ? 0 : static_cast<long>(x1 - x0 + 1) * (y1 - y0 + 1); }
};

// The six default lesion recipes (RGB-visible mode).
SynthConfig default_synth_config(int size = 64, uint64_t seed = 0);

/// Loads `root/<class>/*.png` with optional `<stem>.nir.png` sidecars.
/// Classes are directory names, sorted lexicographically; sample order is
/// class order then filename order.
Dataset load_dataset(const std::string& root);

/// Writes a dataset in the same layout (8-bit RGB + 8-bit gray NIR sidecars).
void write_dataset(const Dataset& ds, const std::string& root);

/// Centered size x size crop; smaller images are replicate-padded first.
MultibandImage center_crop(const MultibandImage& img, int size);

/// Random flips, 90-degree rotations and brightness/contrast jitter. The NIR
/// band gets the same geometric transform as the color bands but no
/// photometric jitter. Output stays in [0,1].
LabeledSample augment(const LabeledSample& sample, const AugmentConfig& config, Rng& rng);

/// Class-stratified partition; per-class counts are within one sample of the
/// requested ratios and the three parts tile the dataset exactly.
SplitResult stratified_split(const Dataset& ds, const SplitSpec& spec);

struct Fold {
  Dataset train, test;
};

/// Stratified k-fold; every sample lands in exactly one test fold.
std::vector<Fold> kfold_split(const Dataset& ds, int k, uint64_t seed);

/// Procedural leaf images: elliptical leaf on dark soil, per-class lesion
/// disks and NIR offsets. `boxes`, when given, receives one lesion bounding
/// box per sample.
Dataset make_synthetic_dataset(const SynthConfig& config, int n_per_class,
                               std::vector<LesionBox>* boxes = nullptr);

struct Batch {
  Tensor rgb;    // [N,3,S,S]
  Tensor index;  // [N,3,S,S] when computed, undefined otherwise
  std::vector<int> labels;
};

/// Walks a dataset in deterministic epochs. Shuffling is a pure function of
/// (seed, epoch); the index stack is computed per sample after cropping and
/// augmentation so indices always match the pixels the model sees.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, int batch_size, uint64_t seed, int epoch, bool shuffle,
                int crop_size, const AugmentConfig* aug = nullptr, bool compute_index = true,
                bool nir_proxy = false);

  std::optional<Batch> next();
  void reset(int epoch);
  size_t num_batches() const;

 private:
  const Dataset* ds_;
  int batch_size_;
  uint64_t seed_;
  bool shuffle_;
  int crop_size_;
  const AugmentConfig* aug_;
  bool compute_index_;
  bool nir_proxy_;
  int epoch_ = 0;
  size_t cursor_ = 0;
  std::vector<size_t> order_;
  Rng aug_rng_{0};
};

}  // namespace xmac
