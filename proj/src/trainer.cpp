#include "mpec/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <thread>

#include "file_util.hpp"
#include "mpec/errors.hpp"
#include "mpec/rng.hpp"

namespace mpec::trainer {

using nlohmann::json;

namespace {

constexpr const char* kMomentPrefix1 = "optim.m.";
constexpr const char* kMomentPrefix2 = "optim.v.";

struct SceneOutcome {
  bool used = false;
  std::string skip_reason;
  double p2e = 0.0, t2e = 0.0, e2t = 0.0, e2l = 0.0, overall = 0.0;
  std::vector<Tensor> grads;
};

std::uint64_t scene_seed(const TrainSetup& setup, std::size_t step, std::size_t index) {
  return derive_seed(setup.train.seed, {step, index});
}

pipeline::ViewPair build_views(const scene::Scene& s, const TrainSetup& setup,
                               std::uint64_t seed) {
  if (!setup.train.cross_view_aug) {
    return pipeline::make_shared_view_pair(s, setup.augmentation, derive_seed(seed, {10}),
                                           /*allow_missing_entities=*/true);
  }
  for (std::size_t a = 0; a < setup.train.view_attempts; ++a) {
    try {
      return pipeline::make_view_pair(s, setup.augmentation, setup.masking,
                                      derive_seed(seed, {10, a}));
    } catch (const pipeline::EntityMissingError&) {
    }
  }
  return pipeline::make_view_pair(s, setup.augmentation, setup.masking,
                                  derive_seed(seed, {10, setup.train.view_attempts}),
                                  /*allow_missing_entities=*/true);
}

SceneOutcome run_scene(const scene::Scene& s, std::size_t index, const ParameterSet& params,
                       const TrainSetup& setup, const text::Vocabulary& vocab,
                       std::size_t step) {
  SceneOutcome out;
  const std::uint64_t seed = scene_seed(setup, step, index);
  const TrainConfig& tc = setup.train;
  const pipeline::ViewPair pair = build_views(s, setup, seed);

  num::Tape tape;
  const num::BoundParameters bound(tape, params);
  const num::Var f_u = model::encode_view(bound, setup.model, pair.u);
  const num::Var f_v = model::encode_view(bound, setup.model, pair.v);

  num::Var total;
  auto accumulate = [&](num::Var term) { total = total.valid() ? num::add(total, term) : term; };

  if (tc.use_p2e) {
    const losses::P2eTargets targets =
        losses::p2e_targets(pair, setup.loss.max_background, derive_seed(seed, {11}));
    try {
      const num::Var p2e = losses::p2e_loss(f_u, f_v, targets, setup.loss);
      out.p2e = p2e.value().item();
      accumulate(p2e);
    } catch (const losses::DegenerateError& e) {
      out.skip_reason = e.what();
      return out;
    }
  }

  if (tc.use_e2l) {
    const model::MergedFeatures merged = model::merge_features(f_u, f_v, pair);
    const num::Var f_vl = model::project_vl(bound, merged.features);
    const text::TextEmbeddingSet sampled = text::sample_texts(
        s, vocab, tc.texts_per_scene, derive_seed(seed, {12}),
        text::TextTypes{tc.use_captions, tc.use_referrals});

    // Texts whose target did not survive augmentation have no column.
    std::vector<bool> present(s.num_entities() + 1, false);
    for (std::uint32_t id : merged.entity_mask) present[id] = true;
    std::vector<const text::TextDescription*> kept;
    for (const auto& t : sampled.texts) {
      bool ok = true;
      for (std::uint32_t id : t.target_entity_ids) ok = ok && present[id];
      if (ok) kept.push_back(&t);
    }
    if (kept.empty()) {
      out.skip_reason = "no text targets survive augmentation";
      return out;
    }
    Tensor emb(kept.size(), vocab.dim);
    std::vector<std::uint32_t> first_target;
    std::vector<std::vector<std::uint32_t>> target_sets;
    for (std::size_t r = 0; r < kept.size(); ++r) {
      for (std::size_t d = 0; d < vocab.dim; ++d) emb(r, d) = kept[r]->embedding[d];
      first_target.push_back(kept[r]->target_entity_ids.front());
      target_sets.push_back(kept[r]->target_entity_ids);
    }
    // Frozen text tower: embeddings enter as constants.
    const num::Var texts = tape.constant(std::move(emb));
    const losses::SimilarityBlock block = losses::text_entity_similarities(
        texts, f_vl, merged.entity_mask, setup.loss.pool_features);
    const num::Var t2e = losses::t2e_loss(block, first_target, setup.loss.tau);
    const num::Var e2t = losses::e2t_loss(
        block, target_sets, setup.loss.e2t_use_tau ? 1.0 / setup.loss.tau : 1.0);
    const num::Var e2l = losses::e2l_loss(t2e, e2t, setup.loss.alpha, setup.loss.beta);
    out.t2e = t2e.value().item();
    out.e2t = e2t.value().item();
    out.e2l = e2l.value().item();
    accumulate(e2l);
  }

  out.overall = total.value().item();
  tape.backward(total);
  out.grads = bound.grads();
  out.used = true;
  return out;
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "checkpoint_epoch%04zu.mpckpt", epoch);
  return buf;
}

// Keeps the metrics lines up to `step` so a resumed run continues the same
// file it would have written uninterrupted.
void truncate_metrics(const std::filesystem::path& path, std::size_t step) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) break;
    if (j["step"].get<std::size_t>() > step) break;
    kept += line;
    kept.push_back('\n');
  }
  in.close();
  detail::write_file(path, kept);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("train.lr must be > 0");
  if (batch_size == 0) throw ValidationError("train.batch_size must be >= 1");
  if (texts_per_scene == 0) throw ValidationError("train.texts_per_scene must be >= 1");
  if (!use_p2e && !use_e2l) throw ValidationError("train: at least one of use_p2e, use_e2l must be on");
  if (use_e2l && !use_captions && !use_referrals) {
    throw ValidationError("train: use_e2l needs captions or referrals enabled");
  }
  if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("train.eps must be > 0");
  if (view_attempts == 0) throw ValidationError("train.view_attempts must be >= 1");
}

void TrainSetup::validate() const {
  model.validate();
  augmentation.validate();
  masking.validate();
  loss.validate();
  train.validate();
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& config) {
  const double s = static_cast<double>(step);
  const double warm = static_cast<double>(config.warmup_steps);
  if (step < config.warmup_steps) return config.lr * s / warm;
  if (total_steps <= config.warmup_steps) return config.lr;
  const double progress =
      std::min(1.0, (s - warm) / (static_cast<double>(total_steps) - warm));
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimizerState OptimizerState::zeros_like(const ParameterSet& params) {
  OptimizerState s;
  for (const auto& p : params.items()) {
    s.m.emplace_back(p.value.rows(), p.value.cols());
    s.v.emplace_back(p.value.rows(), p.value.cols());
  }
  return s;
}

void adamw_step(ParameterSet& params, std::span<const Tensor> grads, OptimizerState& state,
                double lr, const TrainConfig& config) {
  auto& items = params.items();
  if (grads.size() != items.size() || state.m.size() != items.size() ||
      state.v.size() != items.size()) {
    throw ShapeError("adamw_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!grads[i].same_shape(items[i].value) || !state.m[i].same_shape(items[i].value) ||
        !state.v[i].same_shape(items[i].value)) {
      throw ShapeError("adamw_step: shape mismatch for " + items[i].name);
    }
    if (!grads[i].all_finite()) {
      throw NumericalError("adamw_step: non-finite gradient for " + items[i].name);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i].value.data();
    auto& m = state.m[i].data();
    auto& v = state.v[i].data();
    const auto& g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] = p[k] * decay - lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

json MetricsRecord::to_json() const {
  return json{{"step", step},
              {"epoch", epoch},
              {"lr", lr},
              {"loss_overall", loss_overall},
              {"loss_p2e", loss_p2e},
              {"loss_e2l", loss_e2l},
              {"loss_t2e", loss_t2e},
              {"loss_e2t", loss_e2t},
              {"grad_norm", grad_norm},
              {"scenes_used", scenes_used},
              {"scenes_skipped", scenes_skipped}};
}

MetricsRecord train_step(std::span<const BatchItem> batch, ParameterSet& params,
                         OptimizerState& state, const TrainSetup& setup,
                         const text::Vocabulary& vocab, std::size_t step,
                         std::size_t total_steps, std::size_t epoch, std::size_t threads) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  std::vector<SceneOutcome> outcomes(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t b = first; b < batch.size(); b += stride) {
      try {
        outcomes[b] = run_scene(*batch[b].scene, batch[b].index, params, setup, vocab, step);
      } catch (...) {
        errors[b] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, batch.size()));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  MetricsRecord rec;
  rec.step = step;
  rec.epoch = epoch;
  rec.lr = lr_at(step, total_steps, setup.train);
  std::vector<Tensor> grads;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    SceneOutcome& o = outcomes[b];
    if (!o.used) {
      ++rec.scenes_skipped;
      std::cerr << "warning: step " << step << ": skipping scene " << batch[b].scene->scene_id
                << ": " << o.skip_reason << "\n";
      continue;
    }
    ++rec.scenes_used;
    rec.loss_overall += o.overall;
    rec.loss_p2e += o.p2e;
    rec.loss_e2l += o.e2l;
    rec.loss_t2e += o.t2e;
    rec.loss_e2t += o.e2t;
    if (grads.empty()) {
      grads = std::move(o.grads);
    } else {
      for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& acc = grads[i].data();
        const auto& g = o.grads[i].data();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
      }
    }
  }
  if (rec.scenes_used == 0) return rec;

  const double inv = 1.0 / static_cast<double>(rec.scenes_used);
  rec.loss_overall *= inv;
  rec.loss_p2e *= inv;
  rec.loss_e2l *= inv;
  rec.loss_t2e *= inv;
  rec.loss_e2t *= inv;
  double sq = 0.0;
  for (auto& g : grads) {
    for (double& x : g.data()) {
      x *= inv;
      sq += x * x;
    }
  }
  rec.grad_norm = std::sqrt(sq);
  adamw_step(params, grads, state, rec.lr, setup.train);
  return rec;
}

std::size_t steps_per_epoch(std::size_t num_scenes, std::size_t batch_size) {
  return (num_scenes + batch_size - 1) / batch_size;
}

model::Checkpoint make_train_checkpoint(const ParameterSet& params, const OptimizerState& state,
                                        const TrainSetup& setup, std::size_t epoch,
                                        std::size_t step) {
  model::Checkpoint ckpt;
  ckpt.tensors = params;
  const auto& items = params.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    ckpt.tensors.add(kMomentPrefix1 + items[i].name, state.m[i]);
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    ckpt.tensors.add(kMomentPrefix2 + items[i].name, state.v[i]);
  }
  ckpt.meta["config"] = setup.resolved;
  ckpt.meta["state"] = {{"epoch", epoch}, {"step", step}, {"optimizer_step", state.step}};
  ckpt.config_hash = model::config_hash(setup.resolved);
  return ckpt;
}

ParameterSet checkpoint_parameters(const model::Checkpoint& ckpt) {
  ParameterSet out;
  for (const auto& p : ckpt.tensors.items()) {
    if (p.name.starts_with("optim.")) continue;
    out.add(p.name, p.value);
  }
  return out;
}

TrainResult train(std::span<const scene::Scene> dataset, const text::Vocabulary& vocab,
                  const TrainSetup& setup, const std::filesystem::path& out_dir,
                  const TrainOptions& options) {
  setup.validate();
  if (dataset.empty()) throw ValidationError("train: empty dataset");
  if (setup.model.adapter.out_dim != vocab.dim) {
    throw ValidationError("train: adapter output dim " + std::to_string(setup.model.adapter.out_dim) +
                          " differs from vocabulary dim " + std::to_string(vocab.dim));
  }
  const TrainConfig& tc = setup.train;
  const std::size_t per_epoch = steps_per_epoch(dataset.size(), tc.batch_size);
  const std::size_t total_steps = per_epoch * tc.epochs;

  ParameterSet params = model::init_params(setup.model);
  OptimizerState state = OptimizerState::zeros_like(params);
  std::size_t start_epoch = 0;
  std::size_t step = 0;
  const auto metrics_path = out_dir / "metrics.jsonl";
  const auto timing_path = out_dir / "timing.jsonl";

  if (options.resume) {
    const model::Checkpoint ckpt = model::load_checkpoint(*options.resume);
    if (ckpt.config_hash != model::config_hash(setup.resolved)) {
      throw ValidationError("resume: checkpoint config differs from the current config");
    }
    ParameterSet restored = checkpoint_parameters(ckpt);
    for (auto& p : params.items()) {
      if (!restored.contains(p.name) || !restored.get(p.name).same_shape(p.value)) {
        throw ValidationError("resume: checkpoint lacks parameter " + p.name);
      }
      p.value = restored.get(p.name);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string& name = params.items()[i].name;
      state.m[i] = ckpt.tensors.get(kMomentPrefix1 + name);
      state.v[i] = ckpt.tensors.get(kMomentPrefix2 + name);
    }
    const json& st = ckpt.meta.at("state");
    start_epoch = st.at("epoch").get<std::size_t>();
    step = st.at("step").get<std::size_t>();
    state.step = st.at("optimizer_step").get<std::size_t>();
    std::filesystem::create_directories(out_dir);
    truncate_metrics(metrics_path, step);
    truncate_metrics(timing_path, step);
  } else {
    std::filesystem::create_directories(out_dir);
    detail::write_file(metrics_path, "");
    detail::write_file(timing_path, "");
  }

  std::ofstream metrics(metrics_path, std::ios::app);
  std::ofstream timing(timing_path, std::ios::app);
  if (!metrics || !timing) throw IoError("cannot open metrics files in " + out_dir.string());
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = start_epoch + 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(tc.seed, {0xE90C, epoch}));
    rng.shuffle(order);

    for (std::size_t first = 0; first < order.size(); first += tc.batch_size) {
      std::vector<BatchItem> batch;
      for (std::size_t b = first; b < std::min(order.size(), first + tc.batch_size); ++b) {
        batch.push_back({&dataset[order[b]], order[b]});
      }
      ++step;
      const MetricsRecord rec =
          train_step(batch, params, state, setup, vocab, step, total_steps, epoch, options.threads);
      metrics << rec.to_json().dump() << '\n' << std::flush;
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      timing << json{{"step", step}, {"wall_time", wall}}.dump() << '\n' << std::flush;
      if (!metrics || !timing) throw IoError("failed writing metrics in " + out_dir.string());
    }
    if (!options.quiet) {
      std::cerr << "epoch " << epoch << "/" << tc.epochs << " step " << step << "\n";
    }
    if (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0 && epoch != tc.epochs) {
      model::save_checkpoint(make_train_checkpoint(params, state, setup, epoch, step),
                             out_dir / checkpoint_name(epoch));
    }
  }

  TrainResult result;
  result.final_checkpoint = out_dir / "checkpoint_final.mpckpt";
  result.steps = step;
  model::save_checkpoint(make_train_checkpoint(params, state, setup, std::max(start_epoch, tc.epochs), step),
                         result.final_checkpoint);
  return result;
}

}  // namespace mpec::trainer
