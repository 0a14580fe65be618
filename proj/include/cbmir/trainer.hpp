#pragma once

// Per-sample SGD on negative log-likelihood, plus stratified k-fold
// cross-validation.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace cbmir {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t max_epochs = 30;
  std::uint64_t rng_seed = 0;
  bool shuffle_each_epoch = true;
  std::size_t log_interval = 0;  // samples between progress callbacks, 0 = off
  std::size_t batch_size = 1;    // >1 averages gradients over consecutive samples

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning rate must be a finite non-negative number");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_error = 0.0;  // fraction misclassified in the train-mode passes
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double final_loss = 0.0;
  double final_training_error = 0.0;
  std::size_t updates = 0;
};

struct TrainHooks {
  std::function<void(const EpochStats&)> on_epoch;
  std::function<void(std::size_t epoch, std::size_t seen, double running_loss)> on_progress;
};

inline double nll_loss(const Tensor& log_probs, std::size_t label) {
  if (label >= log_probs.size())
    throw InputError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(log_probs.size()) + " classes");
  return -log_probs[label];
}

// dJ/d(log_probs): -1 at the label, 0 elsewhere.
inline Tensor nll_grad(const Tensor& log_probs, std::size_t label) {
  if (label >= log_probs.size()) throw InputError("label out of range");
  Tensor g(log_probs.shape());
  g[label] = -1.0;
  return g;
}

namespace detail {

inline void check_grads_finite(const Network& net) {
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const auto& p = net.params(i);
    if (!p.weight_grads.all_finite() || !p.bias_grads.all_finite())
      throw NumericalError("non-finite gradient in layer " + std::to_string(i) + " (" +
                           layer_name(net.spec().layers[i]) + ")");
  }
}

inline void apply_update(Network& net, double step) {
  if (step == 0.0) return;
  for (auto& p : net.params()) {
    for (std::size_t k = 0; k < p.weights.size(); ++k) p.weights[k] -= step * p.weight_grads[k];
    for (std::size_t k = 0; k < p.biases.size(); ++k) p.biases[k] -= step * p.bias_grads[k];
  }
}

// Forward in train mode and backward; gradients accumulate. Returns loss.
inline double accumulate_sample(Network& net, const Sample& sample, Rng& rng, Workspace& ws,
                                std::size_t* predicted = nullptr) {
  const Tensor log_probs = net.forward(sample.image, Mode::train, &rng, &ws);
  const double loss = nll_loss(log_probs, sample.label);
  if (!std::isfinite(loss))
    throw NumericalError("non-finite loss on sample " + sample.source_id);
  if (predicted) *predicted = argmax(log_probs);
  net.backward(ws, nll_grad(log_probs, sample.label));
  return loss;
}

}  // namespace detail

// theta <- theta - lr * grad J(theta; sample). Gradients are zeroed first.
inline double sgd_step(Network& net, const Sample& sample, const TrainConfig& config, Rng& rng,
                       Workspace* ws = nullptr, std::size_t* predicted = nullptr) {
  Workspace local;
  Workspace& w = ws ? *ws : local;
  net.zero_grads();
  const double loss = detail::accumulate_sample(net, sample, rng, w, predicted);
  detail::check_grads_finite(net);
  detail::apply_update(net, config.learning_rate);
  return loss;
}

inline TrainReport train(Network& net, std::span<const Sample> samples, const TrainConfig& config,
                         const TrainHooks& hooks = {}) {
  config.validate();
  if (samples.empty()) throw InputError("cannot train on an empty split");
  Rng rng(config.rng_seed);
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainReport report;
  Workspace ws;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (config.shuffle_each_epoch) rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t wrong = 0;
    std::size_t in_batch = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Sample& s = samples[order[k]];
      std::size_t pred = 0;
      if (config.batch_size == 1) {
        loss_sum += sgd_step(net, s, config, rng, &ws, &pred);
        ++report.updates;
      } else {
        if (in_batch == 0) net.zero_grads();
        loss_sum += detail::accumulate_sample(net, s, rng, ws, &pred);
        if (++in_batch == config.batch_size || k + 1 == order.size()) {
          detail::check_grads_finite(net);
          detail::apply_update(net, config.learning_rate / static_cast<double>(in_batch));
          ++report.updates;
          in_batch = 0;
        }
      }
      wrong += pred != s.label;
      if (config.log_interval && hooks.on_progress && (k + 1) % config.log_interval == 0)
        hooks.on_progress(epoch, k + 1, loss_sum / static_cast<double>(k + 1));
    }
    EpochStats st;
    st.epoch = epoch;
    st.mean_loss = loss_sum / static_cast<double>(samples.size());
    st.train_error = static_cast<double>(wrong) / static_cast<double>(samples.size());
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(st);
    if (hooks.on_epoch) hooks.on_epoch(st);
  }
  report.final_loss = report.epochs.back().mean_loss;
  report.final_training_error = report.epochs.back().train_error;
  return report;
}

// One "epoch mean_loss train_error seconds" line per epoch.
inline void write_train_report(std::ostream& out, const TrainReport& report) {
  out << "epoch\tmean_loss\ttrain_error\tseconds\n";
  for (const auto& e : report.epochs)
    out << e.epoch << '\t' << format_real(e.mean_loss) << '\t' << format_real(e.train_error) << '\t'
        << format_real(e.seconds) << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation helpers

inline std::vector<std::size_t> predict_labels(const Network& net, std::span<const Sample> samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(argmax(net.forward(s.image, Mode::eval)));
  return out;
}

inline MetricsReport evaluate_classifier(const Network& net, std::span<const Sample> samples,
                                         std::vector<std::string> class_names = {}) {
  std::vector<std::size_t> truth;
  truth.reserve(samples.size());
  for (const auto& s : samples) truth.push_back(s.label);
  const auto pred = predict_labels(net, samples);
  return evaluate_predictions(truth, pred, net.spec().num_classes, std::move(class_names));
}

// ---------------------------------------------------------------------------
// Cross-validation

// Per class: seeded shuffle, then deal indices round-robin into k folds.
inline std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<Sample>& samples,
                                                              std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InputError("k-fold cross-validation needs k >= 2");
  std::vector<std::vector<std::size_t>> folds(k);
  Rng rng(seed);
  for (auto& [label, idx] : indices_by_class(samples)) {
    if (idx.size() < k)
      throw InputError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                       " samples, fewer than k = " + std::to_string(k));
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t j = 0; j < idx.size(); ++j) folds[j % k].push_back(idx[j]);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

// Trains one fresh network per fold (make_network(fold) supplies it) on the
// other k-1 folds and evaluates it in eval mode on the held-out fold.
inline std::vector<MetricsReport> k_fold_cross_validate(
    const std::vector<Sample>& samples, std::size_t k, const TrainConfig& config,
    const std::function<Network(std::size_t fold)>& make_network,
    std::vector<std::string> class_names = {}) {
  const auto folds = stratified_folds(samples, k, config.rng_seed);
  std::vector<MetricsReport> reports;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<char> held(samples.size(), 0);
    for (auto i : folds[f]) held[i] = 1;
    std::vector<Sample> train_set, val_set;
    for (std::size_t i = 0; i < samples.size(); ++i) (held[i] ? val_set : train_set).push_back(samples[i]);
    Network net = make_network(f);
    TrainConfig fold_config = config;
    fold_config.rng_seed = config.rng_seed + f + 1;
    train(net, train_set, fold_config);
    reports.push_back(evaluate_classifier(net, val_set, class_names));
  }
  return reports;
}

}  // namespace cbmir
