#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xmac/data.hpp"
#include "xmac/model.hpp"

namespace xmac {

/// Mean cross-entropy over the batch, computed through log-sum-exp so large
/// logits cannot overflow. Backward is (softmax - onehot)/N.
template <typename T>
TensorT<T> cross_entropy_loss(TapeT<T>* tape, const TensorT<T>& logits,
                              const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: expected [N,K] logits");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy: batch size " + std::to_string(n) + " vs " +
                     std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || y >= k)
      throw ShapeError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                       std::to_string(k) + ")");

  const T* lp = logits.cptr();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const T* row = lp + i * k;
    T mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double lse = 0.0;
    for (int64_t j = 0; j < k; ++j) lse += std::exp(static_cast<double>(row[j] - mx));
    lse = std::log(lse) + static_cast<double>(mx);
    total += lse - static_cast<double>(row[labels[static_cast<size_t>(i)]]);
  }
  TensorT<T> out = TensorT<T>::from({1}, {static_cast<T>(total / static_cast<double>(n))});

  if (tape && logits.requires_grad) {
    out.set_requires_grad();
    TensorT<T> logits_c = logits, out_c = out;
    const std::vector<int> labels_c = labels;
    tape->record([=]() mutable {
      const T gy = (*out_c.grad)[0];
      const T* rowp = logits_c.cptr();
      T* gx = logits_c.gptr();
      for (int64_t i = 0; i < n; ++i) {
        const T* row = rowp + i * k;
        T mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
        for (int64_t j = 0; j < k; ++j) {
          const double soft = std::exp(static_cast<double>(row[j] - mx)) / denom;
          const double onehot = j == labels_c[static_cast<size_t>(i)] ? 1.0 : 0.0;
          gx[i * k + j] += gy * static_cast<T>((soft - onehot) / static_cast<double>(n));
        }
      }
    });
  }
  return out;
}

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int max_epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_decay_factor = 0.5;
  int lr_plateau_patience = 5;
  double lr_min_delta = 1e-4;
  int early_stop_patience = 10;
  uint64_t seed = 0;
  std::optional<AugmentConfig> augment;  // off by default
  bool nir_proxy = false;

  void validate() const {
    if (learning_rate < 0) throw ConfigError("train: learning rate must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw ConfigError("train: betas must lie in [0,1)");
    if (lr_plateau_patience < 1 || early_stop_patience < 1)
      throw ConfigError("train: patience values must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  }
};

/// Bias-corrected Adam moments, one slot per registered parameter.
struct AdamState {
  std::vector<std::vector<float>> m, v;
  int64_t t = 0;

  static AdamState init(const Model& model) {
    AdamState s;
    for (const auto& [name, p] : model.params) {
      s.m.emplace_back(p.data->size(), 0.0f);
      s.v.emplace_back(p.data->size(), 0.0f);
    }
    return s;
  }
};

/// One Adam update from the gradients currently stored on the parameters.
void adam_step(Model& model, AdamState& state, const TrainConfig& config, double lr);

/// Halves the rate after `patience` consecutive epochs without the loss
/// improving by at least `min_delta`; an improvement resets the counter.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor, int patience, double min_delta)
      : lr_(lr), factor_(factor), patience_(patience), min_delta_(min_delta) {}

  double observe(double val_loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double learning_rate = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based
  std::string stop_reason;
  TrainConfig config;

  std::string to_json() const;
};

/// Full training loop: batched forward/backward/Adam, per-epoch validation in
/// infer mode, plateau LR decay, early stopping, best-weights restoration.
/// The model is left holding the best-validation-loss weights.
TrainHistory train(Model& model, const Dataset& train_set, const Dataset& val_set,
                   const TrainConfig& config);

struct EvalResult {
  std::vector<int> predictions;
  std::vector<std::vector<float>> probabilities;  // [N][K]
};

/// Infer-mode pass over the dataset in order; argmax ties break toward the
/// lowest class index.
EvalResult evaluate(Model& model, const Dataset& dataset, int batch_size = 32,
                    bool nir_proxy = false);

struct KfoldResult {
  std::vector<std::string> config_names;
  // accuracy[fold][config]; a failed cell holds NaN and its error message
  std::vector<std::vector<double>> accuracy;
  std::vector<std::vector<std::string>> errors;
};

/// Trains every config on every fold and reports test-fold accuracies.
/// A failing cell is recorded and the remaining folds keep running. The
/// trained model for (fold 0, config 0) can be captured for explainability
/// follow-ups via `keep_first`.
KfoldResult run_kfold(const Dataset& dataset, const std::vector<ModelConfig>& configs,
                      const std::vector<std::string>& config_names, const TrainConfig& config,
                      int k, Model* keep_first = nullptr);

}  // namespace xmac
