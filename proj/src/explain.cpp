#include "xmac/explain.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "xmac/vegindex.hpp"

namespace xmac {

namespace {

using nlohmann::ordered_json;

const char* kPlaneNames[6] = {"R", "G", "B", "NDVI", "NPCI", "MCARI"};

double binom(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r *= static_cast<double>(n - i + 1) / static_cast<double>(i);
  return r;
}

// Solve A x = b in place by Gaussian elimination with partial pivoting.
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b, int n) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[static_cast<size_t>(r) * n + col]) >
          std::fabs(a[static_cast<size_t>(pivot) * n + col]))
        pivot = r;
    if (std::fabs(a[static_cast<size_t>(pivot) * n + col]) < 1e-300)
      throw Error("kernel_shap: singular regression system (too few distinct coalitions)");
    if (pivot != col) {
      for (int c = 0; c < n; ++c)
        std::swap(a[static_cast<size_t>(pivot) * n + c], a[static_cast<size_t>(col) * n + c]);
      std::swap(b[static_cast<size_t>(pivot)], b[static_cast<size_t>(col)]);
    }
    const double d = a[static_cast<size_t>(col) * n + col];
    for (int r = col + 1; r < n; ++r) {
      const double factor = a[static_cast<size_t>(r) * n + col] / d;
      if (factor == 0.0) continue;
      for (int c = col; c < n; ++c)
        a[static_cast<size_t>(r) * n + c] -= factor * a[static_cast<size_t>(col) * n + c];
      b[static_cast<size_t>(r)] -= factor * b[static_cast<size_t>(col)];
    }
  }
  std::vector<double> x(static_cast<size_t>(n));
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[static_cast<size_t>(r)];
    for (int c = r + 1; c < n; ++c) acc -= a[static_cast<size_t>(r) * n + c] * x[static_cast<size_t>(c)];
    x[static_cast<size_t>(r)] = acc / a[static_cast<size_t>(r) * n + r];
  }
  return x;
}

// Constrained WLS: rows (mask, weight, f value). The efficiency constraint
// sum(phi) = full - base is enforced by eliminating the last feature.
std::vector<double> solve_kernel_regression(const std::vector<std::vector<uint8_t>>& masks,
                                            const std::vector<double>& weights,
                                            const std::vector<double>& values, int m, double base,
                                            double full) {
  const double span = full - base;
  if (m == 1) return {span};
  const int n = m - 1;
  std::vector<double> ata(static_cast<size_t>(n) * n, 0.0);
  std::vector<double> atb(static_cast<size_t>(n), 0.0);
  std::vector<double> row(static_cast<size_t>(n));
  for (size_t r = 0; r < masks.size(); ++r) {
    const auto& z = masks[r];
    const double zm = z[static_cast<size_t>(m - 1)] ? 1.0 : 0.0;
    for (int i = 0; i < n; ++i) row[static_cast<size_t>(i)] = (z[static_cast<size_t>(i)] ? 1.0 : 0.0) - zm;
    const double y = values[r] - base - zm * span;
    const double w = weights[r];
    for (int i = 0; i < n; ++i) {
      if (row[static_cast<size_t>(i)] == 0.0) continue;
      atb[static_cast<size_t>(i)] += w * row[static_cast<size_t>(i)] * y;
      for (int j = 0; j < n; ++j)
        ata[static_cast<size_t>(i) * n + j] += w * row[static_cast<size_t>(i)] * row[static_cast<size_t>(j)];
    }
  }
  std::vector<double> phi = solve_linear(std::move(ata), std::move(atb), n);
  double sum = 0.0;
  for (double v : phi) sum += v;
  phi.push_back(span - sum);
  return phi;
}

}  // namespace

// ---- Grad-CAM++ ----

std::vector<float> gradcam_raw(const std::vector<float>& activations,
                               const std::vector<float>& gradients, int channels, int h, int w) {
  const size_t plane = static_cast<size_t>(h) * w;
  if (activations.size() != plane * channels || gradients.size() != activations.size())
    throw ShapeError("gradcam_raw: activation/gradient size mismatch");
  std::vector<float> map(plane, 0.0f);
  for (int k = 0; k < channels; ++k) {
    const float* a = activations.data() + static_cast<size_t>(k) * plane;
    const float* g = gradients.data() + static_cast<size_t>(k) * plane;
    // sum_ab A_ab g^3_ab, shared by every alpha of this channel
    double sum_ag3 = 0.0;
    for (size_t i = 0; i < plane; ++i)
      sum_ag3 += static_cast<double>(a[i]) * g[i] * g[i] * g[i];
    double wk = 0.0;
    for (size_t i = 0; i < plane; ++i) {
      const double g2 = static_cast<double>(g[i]) * g[i];
      const double denom = 2.0 * g2 + sum_ag3;
      const double alpha = (g2 == 0.0 || denom == 0.0) ? 0.0 : g2 / denom;
      wk += alpha * std::max(0.0, static_cast<double>(g[i]));
    }
    for (size_t i = 0; i < plane; ++i) map[i] += static_cast<float>(wk) * a[i];
  }
  for (auto& v : map) v = std::max(v, 0.0f);
  return map;
}

SaliencyMap gradcam_pp(Model& model, const Tensor& rgb, const Tensor& index, int target_class) {
  if (rgb.dim(0) != 1) throw ShapeError("gradcam_pp: expected a single sample");
  if (target_class < 0 || target_class >= model.config.num_classes)
    throw ShapeError("gradcam_pp: class index " + std::to_string(target_class) + " out of range");
  Rng rng(0);
  auto out = forward(model, rgb, index, Mode::kInfer, rng, /*record_tape=*/true);
  TensorT<float> score = pick(out.tape.get(), out.logits, target_class);
  model.zero_grad();
  out.tape->backward(score);

  const int c = static_cast<int>(out.attended.dim(1));
  const int h = static_cast<int>(out.attended.dim(2));
  const int w = static_cast<int>(out.attended.dim(3));
  std::vector<float> raw = gradcam_raw(*out.attended.data, *out.attended.grad, c, h, w);

  std::vector<float> up = bilinear_resize(raw, h, w, rgb.dim(2), rgb.dim(3));
  float mx = 0.0f;
  for (float v : up) mx = std::max(mx, v);
  if (mx > 0.0f)
    for (auto& v : up) v /= mx;

  SaliencyMap map;
  map.values = std::move(up);
  map.height = static_cast<int>(rgb.dim(2));
  map.width = static_cast<int>(rgb.dim(3));
  map.target_class = target_class;
  map.source_layer = model.config.attention.enabled ? "attention" : "fusion";
  return map;
}

// ---- feature partitions ----

int FeatureSpec::feature_count(int h, int w) const {
  if (mode == Mode::kChannels) return 6;
  if (patch < 1) throw ConfigError("feature spec: patch size must be >= 1");
  const int gh = (h + patch - 1) / patch;
  const int gw = (w + patch - 1) / patch;
  return gh * gw;
}

std::vector<std::string> FeatureSpec::feature_ids(int h, int w) const {
  std::vector<std::string> ids;
  if (mode == Mode::kChannels) {
    for (const char* name : kPlaneNames) ids.emplace_back(name);
    return ids;
  }
  const int gh = (h + patch - 1) / patch;
  const int gw = (w + patch - 1) / patch;
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c) ids.push_back("p" + std::to_string(r) + "_" + std::to_string(c));
  return ids;
}

std::pair<Tensor, Tensor> apply_feature_mask(const Tensor& rgb, const Tensor& index,
                                             const FeatureSpec& spec,
                                             const std::vector<uint8_t>& mask) {
  const int h = static_cast<int>(rgb.dim(2)), w = static_cast<int>(rgb.dim(3));
  Tensor mrgb = Tensor::from(rgb.shape, *rgb.data);
  Tensor midx = Tensor::from(index.shape, *index.data);
  const size_t plane = static_cast<size_t>(h) * w;
  auto plane_ptr = [&](int p) {
    return p < 3 ? mrgb.ptr() + static_cast<size_t>(p) * plane
                 : midx.ptr() + static_cast<size_t>(p - 3) * plane;
  };
  if (spec.mode == FeatureSpec::Mode::kChannels) {
    for (int p = 0; p < 6; ++p) {
      if (mask[static_cast<size_t>(p)]) continue;
      float* dst = plane_ptr(p);
      std::fill(dst, dst + plane, static_cast<float>(spec.baseline[static_cast<size_t>(p)]));
    }
  } else {
    const int gw = (w + spec.patch - 1) / spec.patch;
    for (size_t f = 0; f < mask.size(); ++f) {
      if (mask[f]) continue;
      const int r = static_cast<int>(f) / gw, c = static_cast<int>(f) % gw;
      for (int p = 0; p < 6; ++p) {
        float* dst = plane_ptr(p);
        const float fill = static_cast<float>(spec.baseline[static_cast<size_t>(p)]);
        for (int y = r * spec.patch; y < std::min(h, (r + 1) * spec.patch); ++y)
          for (int x = c * spec.patch; x < std::min(w, (c + 1) * spec.patch); ++x)
            dst[static_cast<size_t>(y) * w + x] = fill;
      }
    }
  }
  return {std::move(mrgb), std::move(midx)};
}

std::array<double, 6> plane_means(const Dataset& ds, int crop, bool nir_proxy) {
  std::array<double, 6> sums{};
  size_t count = 0;
  for (const auto& s : ds.samples) {
    MultibandImage img = center_crop(s.rgb, crop);
    if (nir_proxy) img = apply_nir_proxy(img);
    IndexStack stack = build_index_stack(img);
    const size_t plane = img.pixels();
    for (size_t i = 0; i < plane; ++i) {
      sums[0] += img.red[i];
      sums[1] += img.green[i];
      sums[2] += img.blue[i];
      sums[3] += stack.data[i];
      sums[4] += stack.data[plane + i];
      sums[5] += stack.data[2 * plane + i];
    }
    count += plane;
  }
  if (count == 0) throw ConfigError("plane_means: empty dataset");
  for (auto& v : sums) v /= static_cast<double>(count);
  return sums;
}

// ---- Shapley solvers ----

MaskAttribution kernel_shap_masks(const MaskFn& f, int m, int n_samples, Rng& rng, bool exact) {
  if (m < 1) throw ConfigError("kernel_shap: need at least one feature");
  MaskAttribution out;
  std::vector<uint8_t> none(static_cast<size_t>(m), 0), all(static_cast<size_t>(m), 1);
  out.base_value = f(none);
  out.full_value = f(all);
  if (m == 1) {
    out.values = {out.full_value - out.base_value};
    return out;
  }

  std::vector<std::vector<uint8_t>> masks;
  std::vector<double> weights, values;

  const bool covers_all = m <= 25 && (exact || static_cast<double>(n_samples) >= std::pow(2.0, m) - 2.0);
  if (covers_all) {
    // full enumeration with the Shapley kernel weight makes the regression
    // reproduce exact Shapley values
    const uint64_t count = (1ull << m) - 1;
    for (uint64_t bits = 1; bits < count; ++bits) {
      std::vector<uint8_t> z(static_cast<size_t>(m));
      int size = 0;
      for (int i = 0; i < m; ++i) {
        z[static_cast<size_t>(i)] = (bits >> i) & 1;
        size += z[static_cast<size_t>(i)];
      }
      masks.push_back(z);
      weights.push_back(static_cast<double>(m - 1) /
                        (binom(m, size) * size * (m - size)));
      values.push_back(f(z));
    }
  } else {
    if (exact) throw ConfigError("kernel_shap: exact mode limited to 25 features");
    if (n_samples < m + 2)
      throw ConfigError("kernel_shap: need at least M+2 = " + std::to_string(m + 2) +
                        " samples, got " + std::to_string(n_samples));
    // coalition sizes follow the kernel's size marginal; the subset at a
    // given size is uniform, and each draw contributes its complement too
    std::vector<double> size_cdf(static_cast<size_t>(m - 1));
    double acc = 0.0;
    for (int s = 1; s < m; ++s) {
      acc += 1.0 / (static_cast<double>(s) * (m - s));
      size_cdf[static_cast<size_t>(s - 1)] = acc;
    }
    std::vector<int> pool(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) pool[static_cast<size_t>(i)] = i;
    while (static_cast<int>(masks.size()) < n_samples) {
      const double u = rng.uniform() * acc;
      int size = 1;
      while (size < m - 1 && size_cdf[static_cast<size_t>(size - 1)] < u) ++size;
      // partial Fisher-Yates: the first `size` entries become the coalition
      for (int i = 0; i < size; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(m - i)));
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
      }
      std::vector<uint8_t> z(static_cast<size_t>(m), 0);
      for (int i = 0; i < size; ++i) z[static_cast<size_t>(pool[static_cast<size_t>(i)])] = 1;
      masks.push_back(z);
      weights.push_back(1.0);
      values.push_back(f(z));
      if (static_cast<int>(masks.size()) < n_samples) {
        std::vector<uint8_t> zc(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) zc[static_cast<size_t>(i)] = 1 - z[static_cast<size_t>(i)];
        masks.push_back(zc);
        weights.push_back(1.0);
        values.push_back(f(zc));
      }
    }
  }
  out.values =
      solve_kernel_regression(masks, weights, values, m, out.base_value, out.full_value);
  return out;
}

MaskAttribution exact_shapley_masks(const MaskFn& f, int m) {
  if (m < 1) throw ConfigError("exact_shapley: need at least one feature");
  if (m > 12)
    throw ConfigError("exact_shapley: " + std::to_string(m) +
                      " features would need 2^M evaluations; use kernel_shap instead");
  const uint64_t total = 1ull << m;
  std::vector<double> value(total);
  std::vector<uint8_t> z(static_cast<size_t>(m));
  for (uint64_t bits = 0; bits < total; ++bits) {
    for (int i = 0; i < m; ++i) z[static_cast<size_t>(i)] = (bits >> i) & 1;
    value[bits] = f(z);
  }

  // phi_i = sum_S |S|! (M-|S|-1)! / M! * [f(S+i) - f(S)]
  std::vector<double> fact(static_cast<size_t>(m) + 1, 1.0);
  for (int i = 1; i <= m; ++i) fact[static_cast<size_t>(i)] = fact[static_cast<size_t>(i - 1)] * i;
  MaskAttribution out;
  out.base_value = value[0];
  out.full_value = value[total - 1];
  out.values.assign(static_cast<size_t>(m), 0.0);
  for (uint64_t bits = 0; bits < total; ++bits) {
    const int size = __builtin_popcountll(bits);
    for (int i = 0; i < m; ++i) {
      if (bits & (1ull << i)) continue;
      const double weight = fact[static_cast<size_t>(size)] *
                            fact[static_cast<size_t>(m - size - 1)] / fact[static_cast<size_t>(m)];
      out.values[static_cast<size_t>(i)] += weight * (value[bits | (1ull << i)] - value[bits]);
    }
  }
  return out;
}

namespace {

MaskFn bind_image(const PredictFn& predict, const Tensor& rgb, const Tensor& index,
                  const FeatureSpec& spec) {
  return [&predict, &rgb, &index, &spec](const std::vector<uint8_t>& mask) {
    auto [mrgb, midx] = apply_feature_mask(rgb, index, spec, mask);
    return predict(mrgb, midx);
  };
}

}  // namespace

Attribution kernel_shap(const PredictFn& predict, const Tensor& rgb, const Tensor& index,
                        const FeatureSpec& spec, int target_class, int n_samples, Rng& rng,
                        bool exact) {
  const int h = static_cast<int>(rgb.dim(2)), w = static_cast<int>(rgb.dim(3));
  const int m = spec.feature_count(h, w);
  MaskAttribution core = kernel_shap_masks(bind_image(predict, rgb, index, spec), m, n_samples,
                                           rng, exact);
  Attribution a;
  a.values = std::move(core.values);
  a.base_value = core.base_value;
  a.target_class = target_class;
  a.mode = exact ? "exact" : "sampled";
  a.n_samples = exact ? 0 : n_samples;
  a.feature_ids = spec.feature_ids(h, w);
  return a;
}

Attribution exact_shapley(const PredictFn& predict, const Tensor& rgb, const Tensor& index,
                          const FeatureSpec& spec, int target_class) {
  const int h = static_cast<int>(rgb.dim(2)), w = static_cast<int>(rgb.dim(3));
  const int m = spec.feature_count(h, w);
  MaskAttribution core = exact_shapley_masks(bind_image(predict, rgb, index, spec), m);
  Attribution a;
  a.values = std::move(core.values);
  a.base_value = core.base_value;
  a.target_class = target_class;
  a.mode = "exact";
  a.feature_ids = spec.feature_ids(h, w);
  return a;
}

std::string Attribution::to_json() const {
  ordered_json j;
  j["mode"] = mode;
  j["class"] = target_class;
  j["base_value"] = base_value;
  j["feature_ids"] = feature_ids;
  j["values"] = values;
  j["n_samples"] = n_samples;
  return j.dump(2);
}

std::vector<std::pair<int, std::vector<double>>> aggregate_channel_shap(
    const std::vector<Attribution>& attributions) {
  std::vector<std::pair<int, std::vector<double>>> out;
  std::vector<int> counts;
  for (const auto& a : attributions) {
    if (a.values.size() != 6 || a.mode.empty() ||
        a.feature_ids != FeatureSpec::channels().feature_ids(0, 0))
      throw ConfigError("aggregate_channel_shap: attributions must all be channel-mode");
    size_t slot = out.size();
    for (size_t i = 0; i < out.size(); ++i)
      if (out[i].first == a.target_class) slot = i;
    if (slot == out.size()) {
      out.emplace_back(a.target_class, std::vector<double>(6, 0.0));
      counts.push_back(0);
    }
    for (size_t i = 0; i < 6; ++i) out[slot].second[i] += a.values[i];
    ++counts[slot];
  }
  for (size_t i = 0; i < out.size(); ++i)
    for (auto& v : out[i].second) v /= counts[i];
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

// ---- rendering ----

std::array<double, 3> saliency_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  // five stops: blue, cyan, green, yellow, red
  static const double stops[5][3] = {
      {0, 0, 1}, {0, 1, 1}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}};
  const double t = v * 4.0;
  const int seg = std::min(3, static_cast<int>(t));
  const double frac = t - seg;
  return {stops[seg][0] + frac * (stops[seg + 1][0] - stops[seg][0]),
          stops[seg][1] + frac * (stops[seg + 1][1] - stops[seg][1]),
          stops[seg][2] + frac * (stops[seg + 1][2] - stops[seg][2])};
}

MultibandImage overlay_heatmap(const MultibandImage& rgb, const SaliencyMap& map, double alpha) {
  if (rgb.height != map.height || rgb.width != map.width)
    throw ShapeError("overlay_heatmap: image and map dimensions differ");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("overlay_heatmap: alpha must be in [0,1]");
  MultibandImage out = rgb;
  for (size_t i = 0; i < rgb.pixels(); ++i) {
    const auto c = saliency_color(map.values[i]);
    out.red[i] = (1.0 - alpha) * rgb.red[i] + alpha * c[0];
    out.green[i] = (1.0 - alpha) * rgb.green[i] + alpha * c[1];
    out.blue[i] = (1.0 - alpha) * rgb.blue[i] + alpha * c[2];
  }
  return out;
}

}  // namespace xmac
