#include "mpec/eval.hpp"

#include <cmath>

#include "mpec/errors.hpp"

namespace mpec::eval {

using nlohmann::json;

namespace {

std::vector<double> row_norms(const Tensor& t) {
  std::vector<double> n(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double sq = 0.0;
    for (double v : t.row(r)) sq += v * v;
    n[r] = std::sqrt(sq);
  }
  return n;
}

}  // namespace

std::vector<std::size_t> predict_per_point(const Tensor& features, const Tensor& anchors,
                                           std::size_t* zero_rows) {
  if (anchors.rows() == 0) throw ValidationError("predict_per_point: no categories");
  if (features.cols() != anchors.cols()) {
    throw ShapeError("predict_per_point: feature dim " + std::to_string(features.cols()) +
                     " differs from anchor dim " + std::to_string(anchors.cols()));
  }
  const std::vector<double> fn = row_norms(features);
  const std::vector<double> an = row_norms(anchors);
  std::vector<std::size_t> labels(features.rows(), 0);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto f = features.row(i);
    if (fn[i] < 1e-12) {
      ++zeros;
      continue;
    }
    double best = -2.0;
    for (std::size_t c = 0; c < anchors.rows(); ++c) {
      const auto a = anchors.row(c);
      double dot = 0.0;
      for (std::size_t d = 0; d < f.size(); ++d) dot += f[d] * a[d];
      const double cosine = dot / (fn[i] * std::max(an[c], 1e-12));
      if (cosine > best) {
        best = cosine;
        labels[i] = c;
      }
    }
  }
  if (zero_rows != nullptr) *zero_rows = zeros;
  return labels;
}

json EvalReport::to_json() const {
  json classes = json::array();
  for (std::size_t c = 0; c < iou.size(); ++c) {
    classes.push_back({{"id", c},
                       {"name", c < class_names.size() ? class_names[c] : std::to_string(c)},
                       {"present", static_cast<bool>(present[c])},
                       {"gt_points", gt_points[c]},
                       {"iou", iou[c]},
                       {"acc", acc[c]}});
  }
  return json{{"f_miou", f_miou},
              {"f_macc", f_macc},
              {"classes", classes},
              {"confusion", confusion},
              {"scenes", scenes},
              {"points", points},
              {"foreground_points", foreground_points},
              {"zero_feature_points", zero_feature_points}};
}

ConfusionAccumulator::ConfusionAccumulator(std::size_t num_classes)
    : num_classes_(num_classes),
      confusion_(num_classes, std::vector<std::uint64_t>(num_classes, 0)) {
  if (num_classes == 0) throw ValidationError("metrics: no classes");
}

void ConfusionAccumulator::add(std::span<const std::size_t> predictions,
                               std::span<const int> ground_truth) {
  if (predictions.size() != ground_truth.size()) {
    throw ShapeError("metrics: prediction and ground truth lengths differ");
  }
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int gt = ground_truth[i];
    if (gt < 0) continue;
    if (static_cast<std::size_t>(gt) >= num_classes_ || predictions[i] >= num_classes_) {
      throw ValidationError("metrics: label out of range");
    }
    ++confusion_[static_cast<std::size_t>(gt)][predictions[i]];
  }
  points_ += predictions.size();
}

EvalReport ConfusionAccumulator::report(std::vector<std::string> class_names) const {
  const std::size_t c = num_classes_;
  EvalReport r;
  r.class_names = std::move(class_names);
  r.confusion = confusion_;
  r.iou.assign(c, 0.0);
  r.acc.assign(c, 0.0);
  r.present.assign(c, false);
  r.gt_points.assign(c, 0);
  r.scenes = scenes_;
  r.points = points_;
  r.zero_feature_points = zero_rows_;
  std::vector<std::uint64_t> predicted(c, 0);
  for (std::size_t g = 0; g < c; ++g) {
    for (std::size_t p = 0; p < c; ++p) {
      r.gt_points[g] += confusion_[g][p];
      predicted[p] += confusion_[g][p];
    }
  }
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    r.foreground_points += r.gt_points[k];
    if (r.gt_points[k] == 0) continue;
    r.present[k] = true;
    ++present;
    const double tp = static_cast<double>(confusion_[k][k]);
    const double fn = static_cast<double>(r.gt_points[k]) - tp;
    const double fp = static_cast<double>(predicted[k]) - tp;
    r.iou[k] = tp / (tp + fp + fn);
    r.acc[k] = tp / (tp + fn);
    r.f_miou += r.iou[k];
    r.f_macc += r.acc[k];
  }
  if (present == 0) throw ValidationError("metrics: no foreground points");
  r.f_miou /= static_cast<double>(present);
  r.f_macc /= static_cast<double>(present);
  return r;
}

EvalReport compute_metrics(std::span<const std::size_t> predictions,
                           std::span<const int> ground_truth, std::size_t num_classes) {
  ConfusionAccumulator acc(num_classes);
  acc.add(predictions, ground_truth);
  return acc.report();
}

std::vector<int> ground_truth_labels(const scene::Scene& scene) {
  std::vector<int> gt(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) gt[i] = scene.point_category(i);
  return gt;
}

EvalReport evaluate(const num::ParameterSet& params, const model::ModelConfig& config,
                    std::span<const scene::Scene> scenes, const text::Vocabulary& vocab,
                    const SceneCallback& on_scene) {
  if (config.adapter.out_dim != vocab.dim) {
    throw ValidationError("evaluate: checkpoint adapter dim " +
                          std::to_string(config.adapter.out_dim) +
                          " differs from vocabulary dim " + std::to_string(vocab.dim));
  }
  Tensor anchors(vocab.num_categories(), vocab.dim);
  for (std::size_t c = 0; c < vocab.num_categories(); ++c) {
    const std::vector<double> a = text::embed_category(vocab, c);
    for (std::size_t d = 0; d < vocab.dim; ++d) anchors(c, d) = a[d];
  }
  ConfusionAccumulator acc(vocab.num_categories());
  for (const scene::Scene& s : scenes) {
    const Tensor f_vl = model::encode_inference(s, params, config);
    std::size_t zeros = 0;
    const std::vector<std::size_t> pred = predict_per_point(f_vl, anchors, &zeros);
    acc.add(pred, ground_truth_labels(s));
    acc.add_zero_rows(zeros);
    acc.add_scene();
    if (on_scene) on_scene(s, pred);
  }
  return acc.report(vocab.category_names);
}

}  // namespace mpec::eval
