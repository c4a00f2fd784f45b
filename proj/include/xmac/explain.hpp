#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "xmac/data.hpp"
#include "xmac/image.hpp"
#include "xmac/model.hpp"

namespace xmac {

/// Per-pixel heatmap at input resolution, max-normalized to [0,1].
/// An identically zero raw map stays all zeros instead of dividing by zero.
struct SaliencyMap {
  std::vector<float> values;  // h*w
  int height = 0;
  int width = 0;
  int target_class = 0;
  std::string source_layer;
};

/// Partition of the six input planes (R,G,B,NDVI,NPCI,MCARI) into
/// explainable features: whole planes, or square pixel blocks spanning all
/// planes. Masked features are filled with the per-plane baseline (the
/// training-set mean when available, 0.5 otherwise).
struct FeatureSpec {
  enum class Mode { kChannels, kPatches };
  Mode mode = Mode::kChannels;
  int patch = 8;  // patch edge in pixels (patch mode)
  std::array<double, 6> baseline = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5};

  static FeatureSpec channels() { return {}; }
  static FeatureSpec patches(int patch_px) {
    FeatureSpec s;
    s.mode = Mode::kPatches;
    s.patch = patch_px;
    return s;
  }

  int feature_count(int h, int w) const;
  std::vector<std::string> feature_ids(int h, int w) const;
};

struct Attribution {
  std::vector<double> values;  // signed Shapley estimates, one per feature
  double base_value = 0;       // model output on the fully masked input
  int target_class = 0;
  std::string mode;  // "exact" or "sampled"
  int n_samples = 0;
  std::vector<std::string> feature_ids;

  std::string to_json() const;
};

// ---- Grad-CAM++ ----

/// The channel-weighting core on a raw feature map A and its gradient G
/// (both [C,h,w] flattened). Location weights use the second/third-derivative
/// closed form with Y = exp(score), which collapses to products of first
/// derivatives; 0/0 cells resolve to 0. Returns the pre-normalization map.
std::vector<float> gradcam_raw(const std::vector<float>& activations,
                               const std::vector<float>& gradients, int channels, int h, int w);

/// Full pipeline on one sample: infer-mode forward with a recorded tape,
/// backward from the pre-softmax score of `target_class`, channel weighting
/// on the post-attention feature map, bilinear upsample to input resolution
/// and max-normalization.
SaliencyMap gradcam_pp(Model& model, const Tensor& rgb, const Tensor& index, int target_class);

// ---- Shapley attributions ----

// Model evaluation under a feature mask, as a plain function of the masked
// inputs. Must return the target-class output (probability by default).
using PredictFn = std::function<double(const Tensor& rgb, const Tensor& index)>;

// Coalition-level evaluation for the solver cores; bit i enables feature i.
using MaskFn = std::function<double(const std::vector<uint8_t>&)>;

struct MaskAttribution {
  std::vector<double> values;
  double base_value = 0;
  double full_value = 0;
};

/// Weighted-least-squares Kernel SHAP over coalitions. `exact` (or a sample
/// budget covering every coalition) enumerates all 2^M-2 interior coalitions,
/// which reproduces exact Shapley values; otherwise coalitions are drawn by
/// the kernel's size distribution in complement pairs, pre-generated
/// sequentially from `rng` so results do not depend on evaluation order.
MaskAttribution kernel_shap_masks(const MaskFn& f, int m, int n_samples, Rng& rng, bool exact);

/// Brute-force Shapley enumeration, 2^M evaluations; refuses M > 12.
MaskAttribution exact_shapley_masks(const MaskFn& f, int m);

Attribution kernel_shap(const PredictFn& predict, const Tensor& rgb, const Tensor& index,
                        const FeatureSpec& spec, int target_class, int n_samples, Rng& rng,
                        bool exact = false);

Attribution exact_shapley(const PredictFn& predict, const Tensor& rgb, const Tensor& index,
                          const FeatureSpec& spec, int target_class);

/// Masks features out of an (rgb, index) pair per the spec's baseline rule.
std::pair<Tensor, Tensor> apply_feature_mask(const Tensor& rgb, const Tensor& index,
                                             const FeatureSpec& spec,
                                             const std::vector<uint8_t>& mask);

/// Per-plane means over a dataset (R,G,B from pixels, NDVI/NPCI/MCARI from
/// the normalized index stacks), for use as SHAP baselines.
std::array<double, 6> plane_means(const Dataset& ds, int crop, bool nir_proxy = false);

/// Arithmetic mean of channel-mode attributions grouped by target class.
/// Returns (class -> per-channel mean) in class order; classes without
/// attributions are absent.
std::vector<std::pair<int, std::vector<double>>> aggregate_channel_shap(
    const std::vector<Attribution>& attributions);

// ---- rendering ----

/// Blue-to-red colormap blend over the color bands; alpha 0 returns the
/// image unchanged.
MultibandImage overlay_heatmap(const MultibandImage& rgb, const SaliencyMap& map, double alpha);

/// The colormap used by overlay_heatmap, exposed for tests.
std::array<double, 3> saliency_color(double v);

}  // namespace xmac
