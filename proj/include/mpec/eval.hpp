#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpec/model.hpp"
#include "mpec/num/tensor.hpp"
#include "mpec/scene.hpp"
#include "mpec/text.hpp"

namespace mpec::eval {

using num::Tensor;

// Argmax over categories of cosine(features[i], anchors[c]); ties go to the
// lowest category id. Zero rows score 0 against every anchor and so land on
// category 0; their count is written to `zero_rows`.
std::vector<std::size_t> predict_per_point(const Tensor& features, const Tensor& anchors,
                                           std::size_t* zero_rows = nullptr);

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<double> iou;                 // per class; 0 for absent classes
  std::vector<double> acc;
  std::vector<bool> present;               // class has ground-truth points
  std::vector<std::uint64_t> gt_points;
  std::vector<std::vector<std::uint64_t>> confusion;  // [ground truth][prediction]
  double f_miou = 0.0;
  double f_macc = 0.0;
  std::size_t scenes = 0;
  std::size_t points = 0;             // all evaluated points
  std::size_t foreground_points = 0;
  std::size_t zero_feature_points = 0;

  nlohmann::json to_json() const;
};

// Accumulates foreground confusion over scenes.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(std::size_t num_classes);

  // ground_truth is a category id or -1 for background; background points
  // are counted in `points` but skipped.
  void add(std::span<const std::size_t> predictions, std::span<const int> ground_truth);
  void add_scene() { ++scenes_; }
  void add_zero_rows(std::size_t n) { zero_rows_ += n; }

  // Throws ValidationError when no foreground point was seen.
  EvalReport report(std::vector<std::string> class_names = {}) const;

 private:
  std::size_t num_classes_;
  std::vector<std::vector<std::uint64_t>> confusion_;
  std::size_t points_ = 0;
  std::size_t scenes_ = 0;
  std::size_t zero_rows_ = 0;
};

EvalReport compute_metrics(std::span<const std::size_t> predictions,
                           std::span<const int> ground_truth, std::size_t num_classes);

std::vector<int> ground_truth_labels(const scene::Scene& scene);

// Per-scene hook: receives the scene and its per-point predictions.
using SceneCallback = std::function<void(const scene::Scene&, const std::vector<std::size_t>&)>;

EvalReport evaluate(const num::ParameterSet& params, const model::ModelConfig& config,
                    std::span<const scene::Scene> scenes, const text::Vocabulary& vocab,
                    const SceneCallback& on_scene = {});

}  // namespace mpec::eval
