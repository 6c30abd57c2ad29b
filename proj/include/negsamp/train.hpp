#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "negsamp/dual_encoder.hpp"
#include "negsamp/error.hpp"
#include "negsamp/rng.hpp"
#include "negsamp/sampling.hpp"

namespace negsamp {

/// Plain mini-batch SGD. The default iteration budget is a desk-scale
/// reduction of the 20000 iterations used for full-size runs.
struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::size_t max_iterations = 2000;
  std::uint64_t seed = 0;
  double gradient_clip_norm = 5.0;
  std::size_t eval_every = 100;
  bool fine_tune_embeddings = false;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw Error(ErrorKind::Config, "learning_rate must be finite and non-negative");
    if (batch_size == 0) throw Error(ErrorKind::Config, "batch_size must be positive");
    if (max_iterations == 0) throw Error(ErrorKind::Config, "max_iterations must be positive");
    if (!(gradient_clip_norm > 0.0)) throw Error(ErrorKind::Config, "gradient_clip_norm must be positive");
    if (eval_every == 0) throw Error(ErrorKind::Config, "eval_every must be positive");
  }
};

struct LossPoint {
  std::size_t iteration = 0;  // 1-based iteration at which the window ended
  double loss = 0.0;          // mean batch loss over the window
};

struct TrainResult {
  DualEncoderModel model;
  std::vector<LossPoint> trace;
};

/// Mean loss over a whole example set.
inline double mean_loss(const DualEncoderModel& model, const std::vector<TrainingExample>& examples) {
  if (examples.empty()) throw Error(ErrorKind::Data, "mean_loss: no examples");
  double total = 0.0;
  for (const auto& ex : examples) {
    const double p = model.score_pair(ex.context_tokens, ex.response_tokens);
    const double pc = std::clamp(p, kLogClamp, 1.0 - kLogClamp);
    total -= ex.label ? std::log(pc) : std::log(1.0 - pc);
  }
  return total / static_cast<double>(examples.size());
}

/// Supplies a fresh example set for epoch `epoch` (>= 1); used when negatives
/// are resampled every epoch.
using EpochResampler = std::function<std::vector<TrainingExample>(std::size_t epoch)>;

inline TrainResult train(DualEncoderModel model, std::vector<TrainingExample> examples,
                         const TrainConfig& cfg, const EpochResampler& resample = {}) {
  cfg.validate();
  if (examples.empty()) throw Error(ErrorKind::Data, "train: training set is empty");
  TrainResult result;

  std::vector<std::size_t> order;
  std::size_t epoch = 0;
  std::size_t cursor = 0;
  auto start_epoch = [&] {
    order.resize(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    cursor = 0;
  };
  start_epoch();

  double window_loss = 0.0;
  std::size_t window_batches = 0;
  std::vector<TrainingExample> batch;
  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    if (cursor >= order.size()) {
      ++epoch;
      if (resample) {
        examples = resample(epoch);
        if (examples.empty()) throw Error(ErrorKind::Data, "train: resampled training set is empty");
      }
      start_epoch();
    }
    batch.clear();
    for (std::size_t b = 0; b < cfg.batch_size && cursor < order.size(); ++b)
      batch.push_back(examples[order[cursor++]]);

    auto lg = loss_and_gradients(model, batch, cfg.fine_tune_embeddings);
    if (!std::isfinite(lg.loss))
      throw Error(ErrorKind::Numeric, "training diverged at iteration " + std::to_string(it));
    window_loss += lg.loss;
    ++window_batches;

    double sq = 0.0;
    lg.gradients.params.visit_tensors([&](const std::string&, const auto& t) { sq += t.squaredNorm(); });
    if (cfg.fine_tune_embeddings) sq += lg.gradients.embeddings.squaredNorm();
    const double norm = std::sqrt(sq);
    const double step = cfg.learning_rate * (norm > cfg.gradient_clip_norm ? cfg.gradient_clip_norm / norm : 1.0);

    if (step != 0.0) {
      // Model and gradient tensors visit in the same order.
      std::vector<const double*> grads;
      std::vector<Eigen::Index> sizes;
      lg.gradients.params.visit_tensors([&](const std::string&, const auto& t) {
        grads.push_back(t.data());
        sizes.push_back(t.size());
      });
      std::size_t k = 0;
      model.visit_tensors([&](const std::string&, auto& t) {
        Eigen::Map<const Eigen::VectorXd> g(grads[k], sizes[k]);
        Eigen::Map<Eigen::VectorXd>(t.data(), t.size()) -= step * g;
        ++k;
      });
      if (cfg.fine_tune_embeddings) model.embeddings().matrix() -= step * lg.gradients.embeddings;
    }

    if (it % cfg.eval_every == 0 || it == cfg.max_iterations) {
      result.trace.push_back({it, window_loss / static_cast<double>(window_batches)});
      window_loss = 0.0;
      window_batches = 0;
    }
  }
  result.model = std::move(model);
  return result;
}

/// Builds the training set from pairs and trains; with
/// `strategy.resample_each_epoch` the negatives are redrawn each epoch from
/// a seed derived from (seed, epoch).
inline TrainResult train_on_pairs(DualEncoderModel model, const std::vector<ContextResponsePair>& pairs,
                                  const ResponseDistribution& dist, const SamplingStrategy& strategy,
                                  std::uint64_t sampling_seed, const TrainConfig& cfg,
                                  const EmbeddingTable* kde_embeddings = nullptr) {
  auto examples = build_training_set(pairs, dist, strategy, sampling_seed, kde_embeddings);
  EpochResampler resample;
  if (strategy.resample_each_epoch) {
    resample = [&](std::size_t epoch) {
      return build_training_set(pairs, dist, strategy,
                                derive_seed(sampling_seed, static_cast<std::uint64_t>(epoch)),
                                kde_embeddings);
    };
  }
  return train(std::move(model), std::move(examples), cfg, resample);
}

}  // namespace negsamp
