#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>
#include <vector>

#include "binloc/core.hpp"
#include "binloc/crn.hpp"
#include "binloc/dataset.hpp"

namespace binloc {

struct TrainConfig {
  double learning_rate = 1e-3;
  double lr_final_fraction = 1.0;  // cosine decay to learning_rate * this by the last epoch; 1 = constant
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
  unsigned threads = 1;
  CrnConfig model = CrnConfig::desk();

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error("train: learning_rate must be positive");
    if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0)) throw Error("train: lr_final_fraction must be in (0, 1]");
    if (epochs < 1) throw Error("train: epochs must be >= 1");
    if (batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw Error("train: betas must be in [0, 1)");
    model.validate();
  }
  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
  double learning_rate_at(std::size_t epoch) const {
    if (epochs <= 1 || lr_final_fraction == 1.0) return learning_rate;
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
    return learning_rate * (lr_final_fraction + (1.0 - lr_final_fraction) * 0.5 * (1.0 + std::cos(kPi * t)));
  }
};

struct Example {
  GccFeature features;
  DirectionVector label;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_time_s = 0.0;
};

struct TrainResult {
  ModelParams best;
  ModelParams last;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

inline void write_train_log(const std::vector<EpochLog>& log, std::ostream& out) {
  out << "epoch,train_loss,val_loss,wall_time\n";
  out << std::setprecision(10);
  for (const auto& e : log) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.wall_time_s << '\n';
}

inline std::vector<Example> load_examples(const DatasetManifest& m, Split split) {
  std::vector<Example> out;
  for (const auto* r : m.in_split(split)) {
    auto lf = m.load(*r);
    out.push_back({std::move(lf.features), lf.label});
  }
  return out;
}

namespace detail {

// Runs fn(i) for i in [0, n) on up to `threads` workers; fn must only write slot i.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(m);
            if (!failure) failure = std::current_exception();
            next = n;
          }
        }
      });
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Mean absolute-cosine loss over `examples` (degenerate outputs count as 1).
inline double mean_loss(const std::vector<Example>& examples, const ModelParams& params, unsigned threads = 1) {
  if (examples.empty()) return 0.0;
  std::vector<double> losses(examples.size());
  detail::parallel_for(examples.size(), threads, [&](std::size_t i) {
    const auto v = forward(examples[i].features, params);
    losses[i] = v.is_degenerate() ? 1.0 : abs_cosine_loss(examples[i].label, v);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

/// Mini-batch Adam on the absolute-cosine loss. Per-example gradients are reduced in
/// index order, so the result does not depend on `threads`. Row 0 of the log holds the
/// losses of the initial parameters.
inline TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                         const TrainConfig& config,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) throw Error("train: empty training set");
  for (const auto& e : train_set)
    if (e.features.lags() != config.model.input_lags)
      throw Error("train: feature width " + std::to_string(e.features.lags()) + " does not match model input_lags " +
                  std::to_string(config.model.input_lags));

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  const auto& selection_set = val_set.empty() ? train_set : val_set;

  TrainResult result;
  ModelParams params = ModelParams::initialize(config.model, config.seed);
  AdamState state = AdamState::for_params(params);
  AdamConfig adam = config.adam();

  EpochLog initial{0, mean_loss(train_set, params, config.threads), 0.0, 0.0};
  initial.val_loss = val_set.empty() ? initial.train_loss : mean_loss(val_set, params, config.threads);
  initial.wall_time_s = elapsed();
  result.log.push_back(initial);
  if (on_epoch) on_epoch(initial);
  result.best = params;
  double best_val = initial.val_loss;

  std::vector<std::size_t> order(train_set.size());
  std::vector<BackwardResult> slots(std::min(config.batch_size, train_set.size()));
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, 0xe000 + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    adam.learning_rate = config.learning_rate_at(epoch);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - begin);
      detail::parallel_for(count, config.threads, [&](std::size_t k) {
        const auto& ex = train_set[order[begin + k]];
        slots[k] = backward(ex.features, params, ex.label);
      });
      ModelParams grads = std::move(slots[0].grads);
      loss_sum += slots[0].loss;
      for (std::size_t k = 1; k < count; ++k) {
        loss_sum += slots[k].loss;
        for (std::size_t t = 0; t < grads.tensors.size(); ++t) {
          auto& dst = grads.tensors[t].data;
          const auto& src = slots[k].grads.tensors[t].data;
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& t : grads.tensors)
        for (auto& x : t.data) x *= inv;
      clip_global_norm(grads, config.clip_norm);
      adam_step(params, grads, state, adam);
    }
    if (!params.all_finite()) throw Error("train: non-finite parameters after epoch " + std::to_string(epoch));

    EpochLog row{epoch, loss_sum / static_cast<double>(order.size()), 0.0, 0.0};
    row.val_loss = mean_loss(selection_set, params, config.threads);
    row.wall_time_s = elapsed();
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
    if (row.val_loss < best_val) {
      best_val = row.val_loss;
      result.best = params;
      result.best_epoch = epoch;
    }
  }
  result.last = std::move(params);
  return result;
}

inline TrainResult train(const DatasetManifest& dataset, const TrainConfig& config,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  auto train_set = load_examples(dataset, Split::train);
  if (train_set.empty()) throw Error("train: dataset has no training records");
  return train(train_set, load_examples(dataset, Split::val), config, on_epoch);
}

}  // namespace binloc
