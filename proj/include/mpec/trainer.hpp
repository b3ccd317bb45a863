#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpec/losses.hpp"
#include "mpec/model.hpp"
#include "mpec/pipeline.hpp"
#include "mpec/scene.hpp"
#include "mpec/text.hpp"

namespace mpec::trainer {

using num::ParameterSet;
using num::Tensor;

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t warmup_steps = 200;
  std::size_t batch_size = 4;
  std::size_t texts_per_scene = 64;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool use_p2e = true;
  bool use_e2l = true;
  bool cross_view_aug = true;
  bool use_captions = true;
  bool use_referrals = true;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 10;  // epochs; 0 keeps only the final one
  std::size_t view_attempts = 8;      // resamples when an entity drops out of both views

  void validate() const;
};

// Everything the trainer needs besides data. `resolved` is the full config
// echoed into checkpoints; its hash guards resumption.
struct TrainSetup {
  model::ModelConfig model;
  pipeline::AugmentationConfig augmentation;
  pipeline::GridMaskConfig masking;
  losses::LossConfig loss;
  TrainConfig train;
  nlohmann::json resolved = nlohmann::json::object();

  void validate() const;
};

// Linear warmup to lr, then half-cosine decay to zero at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& config);

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  static OptimizerState zeros_like(const ParameterSet& params);
  bool operator==(const OptimizerState&) const = default;
};

// Decoupled weight decay Adam with bias correction. Throws NumericalError
// before touching anything when a gradient is not finite.
void adamw_step(ParameterSet& params, std::span<const Tensor> grads, OptimizerState& state,
                double lr, const TrainConfig& config);

struct MetricsRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_overall = 0.0;
  double loss_p2e = 0.0;
  double loss_e2l = 0.0;
  double loss_t2e = 0.0;
  double loss_e2t = 0.0;
  double grad_norm = 0.0;
  std::size_t scenes_used = 0;
  std::size_t scenes_skipped = 0;

  nlohmann::json to_json() const;
  bool operator==(const MetricsRecord&) const = default;
};

// A batch entry: the scene and its dataset index, which seeds its
// randomness together with the step.
struct BatchItem {
  const scene::Scene* scene;
  std::size_t index;
};

// One optimisation step over a batch. Scenes are processed independently
// (in parallel when threads > 1) and reduced in batch order, so the result
// does not depend on the thread count.
MetricsRecord train_step(std::span<const BatchItem> batch, ParameterSet& params,
                         OptimizerState& state, const TrainSetup& setup,
                         const text::Vocabulary& vocab, std::size_t step,
                         std::size_t total_steps, std::size_t epoch, std::size_t threads = 1);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  std::size_t threads = 1;
  bool quiet = false;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::size_t steps = 0;
};

std::size_t steps_per_epoch(std::size_t num_scenes, std::size_t batch_size);

// Writes metrics.jsonl, timing.jsonl, checkpoint_epochNNNN.mpckpt every
// checkpoint_every epochs and checkpoint_final.mpckpt at the end.
TrainResult train(std::span<const scene::Scene> dataset, const text::Vocabulary& vocab,
                  const TrainSetup& setup, const std::filesystem::path& out_dir,
                  const TrainOptions& options = {});

// Checkpoint holding parameters, optimizer moments and the training state.
model::Checkpoint make_train_checkpoint(const ParameterSet& params, const OptimizerState& state,
                                        const TrainSetup& setup, std::size_t epoch,
                                        std::size_t step);

// Model parameters only (optimizer tensors removed).
ParameterSet checkpoint_parameters(const model::Checkpoint& ckpt);

}  // namespace mpec::trainer
