#include "xmac/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace xmac {

namespace {

using nlohmann::ordered_json;

std::vector<std::vector<float>> snapshot_params(const Model& m) {
  std::vector<std::vector<float>> out;
  out.reserve(m.params.size() + m.buffers.size());
  for (const auto& [name, p] : m.params) out.push_back(*p.data);
  for (const auto& [name, b] : m.buffers) out.push_back(*b);
  return out;
}

void restore_params(Model& m, const std::vector<std::vector<float>>& snap) {
  size_t i = 0;
  for (auto& [name, p] : m.params) *p.data = snap[i++];
  for (auto& [name, b] : m.buffers) *b = snap[i++];
}

}  // namespace

void adam_step(Model& model, AdamState& state, const TrainConfig& config, double lr) {
  ++state.t;
  const double b1 = config.beta1, b2 = config.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (size_t p = 0; p < model.params.size(); ++p) {
    auto& param = *model.params[p].second.data;
    const auto& grad = *model.params[p].second.grad;
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != param.size())
      throw ShapeError("adam_step: moment size mismatch for " + model.params[p].first);
    for (size_t i = 0; i < param.size(); ++i) {
      const double g = grad[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      param[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + config.adam_eps));
    }
  }
}

double PlateauSchedule::observe(double val_loss) {
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    stale_ = 0;
  } else {
    ++stale_;
    if (stale_ >= patience_) {
      lr_ *= factor_;
      stale_ = 0;
    }
  }
  return lr_;
}

std::string TrainHistory::to_json() const {
  ordered_json j;
  j["config"] = {{"learning_rate", config.learning_rate},
                 {"batch_size", config.batch_size},
                 {"max_epochs", config.max_epochs},
                 {"adam_betas", {config.beta1, config.beta2}},
                 {"adam_eps", config.adam_eps},
                 {"lr_decay_factor", config.lr_decay_factor},
                 {"lr_plateau_patience", config.lr_plateau_patience},
                 {"lr_min_delta", config.lr_min_delta},
                 {"early_stop_patience", config.early_stop_patience},
                 {"seed", config.seed},
                 {"augment", config.augment.has_value()}};
  j["epochs"] = ordered_json::array();
  for (const auto& e : epochs)
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.val_loss},
                           {"val_accuracy", e.val_accuracy},
                           {"learning_rate", e.learning_rate}});
  j["best_epoch"] = best_epoch;
  j["stop_reason"] = stop_reason;
  return j.dump(2);
}

namespace {

// Validation pass: loss and accuracy in infer mode.
std::pair<double, double> validate_epoch(Model& model, const Dataset& val_set, int batch_size,
                                         bool nir_proxy) {
  Rng rng(0);
  BatchIterator it(val_set, batch_size, 0, 0, false, model.config.input_h, nullptr,
                   model.config.index_branch_enabled, nir_proxy);
  double loss_sum = 0.0;
  int64_t correct = 0, total = 0;
  while (auto batch = it.next()) {
    auto out = forward(model, batch->rgb, batch->index, Mode::kInfer, rng);
    TensorT<float> loss = cross_entropy_loss<float>(nullptr, out.logits, batch->labels);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch->labels.size());
    const int64_t k = out.logits.dim(1);
    for (size_t i = 0; i < batch->labels.size(); ++i) {
      int best = 0;
      for (int64_t j = 1; j < k; ++j)
        if ((*out.probabilities.data)[i * k + j] > (*out.probabilities.data)[i * k + best])
          best = static_cast<int>(j);
      correct += best == batch->labels[i];
      ++total;
    }
  }
  return {loss_sum / static_cast<double>(total), static_cast<double>(correct) / total};
}

}  // namespace

TrainHistory train(Model& model, const Dataset& train_set, const Dataset& val_set,
                   const TrainConfig& config) {
  config.validate();
  if (train_set.samples.empty() || val_set.samples.empty())
    throw ConfigError("train: empty train or validation split");

  TrainHistory history;
  history.config = config;
  AdamState adam = AdamState::init(model);
  PlateauSchedule schedule(config.learning_rate, config.lr_decay_factor,
                           config.lr_plateau_patience, config.lr_min_delta);
  Rng dropout_rng(Rng::mix(config.seed) ^ 0xd009ull);

  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
  std::vector<std::vector<float>> best_snapshot = snapshot_params(model);
  history.best_epoch = 0;
  history.stop_reason = "max_epochs";

  double lr = config.learning_rate;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    BatchIterator it(train_set, config.batch_size, config.seed, epoch, true,
                     model.config.input_h, config.augment ? &*config.augment : nullptr,
                     model.config.index_branch_enabled, config.nir_proxy);
    double loss_sum = 0.0;
    int64_t seen = 0;
    int batch_index = 0;
    while (auto batch = it.next()) {
      auto out = forward(model, batch->rgb, batch->index, Mode::kTrain, dropout_rng);
      TensorT<float> loss = cross_entropy_loss(out.tape.get(), out.logits, batch->labels);
      if (!std::isfinite(loss.item()))
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(batch_index));
      model.zero_grad();
      out.tape->backward(loss);
      if (lr > 0) adam_step(model, adam, config, lr);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch->labels.size());
      seen += static_cast<int64_t>(batch->labels.size());
      ++batch_index;
    }

    const auto [val_loss, val_acc] =
        validate_epoch(model, val_set, config.batch_size, config.nir_proxy);
    history.epochs.push_back(
        {epoch, loss_sum / static_cast<double>(seen), val_loss, val_acc, lr});

    if (val_loss < best_val) {
      best_val = val_loss;
      history.best_epoch = epoch;
      best_snapshot = snapshot_params(model);
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= config.early_stop_patience) {
        history.stop_reason = "early_stop";
        break;
      }
    }
    lr = schedule.observe(val_loss);
  }

  restore_params(model, best_snapshot);
  return history;
}

EvalResult evaluate(Model& model, const Dataset& dataset, int batch_size, bool nir_proxy) {
  if (dataset.num_classes() != 0 && dataset.num_classes() != model.config.num_classes)
    throw ConfigError("evaluate: dataset has " + std::to_string(dataset.num_classes()) +
                      " classes but the model expects " +
                      std::to_string(model.config.num_classes));
  EvalResult result;
  if (dataset.samples.empty()) return result;
  Rng rng(0);
  BatchIterator it(dataset, batch_size, 0, 0, false, model.config.input_h, nullptr,
                   model.config.index_branch_enabled, nir_proxy);
  while (auto batch = it.next()) {
    auto out = forward(model, batch->rgb, batch->index, Mode::kInfer, rng);
    const int64_t k = out.probabilities.dim(1);
    for (size_t i = 0; i < batch->labels.size(); ++i) {
      std::vector<float> row(static_cast<size_t>(k));
      for (int64_t j = 0; j < k; ++j) row[static_cast<size_t>(j)] = (*out.probabilities.data)[i * k + j];
      int best = 0;
      for (int64_t j = 1; j < k; ++j)
        if (row[static_cast<size_t>(j)] > row[static_cast<size_t>(best)]) best = static_cast<int>(j);
      result.predictions.push_back(best);
      result.probabilities.push_back(std::move(row));
    }
  }
  return result;
}

KfoldResult run_kfold(const Dataset& dataset, const std::vector<ModelConfig>& configs,
                      const std::vector<std::string>& config_names, const TrainConfig& config,
                      int k, Model* keep_first) {
  if (configs.size() != config_names.size())
    throw ConfigError("run_kfold: configs and names differ in length");
  auto folds = kfold_split(dataset, k, config.seed);
  KfoldResult result;
  result.config_names = config_names;
  result.accuracy.assign(folds.size(), std::vector<double>(configs.size(),
                                                           std::numeric_limits<double>::quiet_NaN()));
  result.errors.assign(folds.size(), std::vector<std::string>(configs.size()));

  for (size_t f = 0; f < folds.size(); ++f) {
    // carve a small validation set out of the fold's training part so early
    // stopping never sees the test fold: one in ten per class, at least one
    Dataset inner_train, inner_val;
    inner_train.class_names = inner_val.class_names = dataset.class_names;
    {
      std::vector<std::vector<size_t>> by_class(dataset.class_names.size());
      for (size_t i = 0; i < folds[f].train.samples.size(); ++i)
        by_class[static_cast<size_t>(folds[f].train.samples[i].label)].push_back(i);
      for (auto& idx : by_class) {
        const size_t n_val = idx.empty() ? 0 : std::max<size_t>(1, idx.size() / 10);
        for (size_t i = 0; i < idx.size(); ++i)
          (i < n_val ? inner_val : inner_train).samples.push_back(folds[f].train.samples[idx[i]]);
      }
    }
    for (size_t c = 0; c < configs.size(); ++c) {
      try {
        Model model = build_model<float>(configs[c], config.seed + 1000 * f);
        train(model, inner_train, inner_val, config);
        EvalResult eval = evaluate(model, folds[f].test, config.batch_size, config.nir_proxy);
        int64_t correct = 0;
        for (size_t i = 0; i < eval.predictions.size(); ++i)
          correct += eval.predictions[i] == folds[f].test.samples[i].label;
        result.accuracy[f][c] =
            static_cast<double>(correct) / static_cast<double>(folds[f].test.size());
        if (keep_first && f == 0 && c == 0) *keep_first = std::move(model);
      } catch (const std::exception& e) {
        result.errors[f][c] = e.what();
      }
    }
  }
  return result;
}

}  // namespace xmac
