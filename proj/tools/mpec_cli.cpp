// mpec: dataset generation, training, evaluation and self-checks.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mpec/config.hpp"
#include "mpec/errors.hpp"
#include "mpec/eval.hpp"
#include "mpec/scene.hpp"
#include "mpec/suites.hpp"
#include "mpec/text.hpp"
#include "mpec/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mpec;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;

  config::RunConfig resolve() const {
    std::optional<fs::path> file;
    if (!config_file.empty()) file = config_file;
    return config::resolve(file, overrides);
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON run config");
  cmd->add_option("--set", c.overrides, "Override, e.g. --set train.lr=0.002")->take_all();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError("malformed JSON in " + path.string());
  return j;
}

std::string scene_file(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04zu.mpscene", index);
  return buf;
}

std::vector<scene::Scene> load_split(const fs::path& data_dir, const std::string& split) {
  const json splits = read_json(data_dir / "splits.json");
  if (!splits.contains(split)) throw ValidationError("splits.json has no split " + split);
  std::vector<scene::Scene> scenes;
  for (const auto& name : splits[split]) scenes.push_back(scene::load_scene(data_dir / name.get<std::string>()));
  if (scenes.empty()) throw ValidationError("split " + split + " is empty");
  return scenes;
}

std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

int cmd_gen(const Common& common, const std::string& out_opt) {
  const config::RunConfig cfg = common.resolve();
  const fs::path out = out_opt.empty() ? fs::path(cfg.paths.data_dir) : fs::path(out_opt);
  fs::create_directories(out);
  for (std::size_t i = 0; i < cfg.scene.num_scenes; ++i) {
    scene::save_scene(scene::generate_scene(cfg.scene, i), out / scene_file(i));
  }
  const text::Vocabulary vocab =
      text::build_vocabulary(cfg.scene.num_categories, cfg.vocabulary.num_relations,
                             cfg.vocabulary.dim, cfg.vocabulary.seed);
  text::save_vocabulary(vocab, out / "vocab.json");
  const scene::DatasetSplit split = scene::split_dataset(
      cfg.scene.num_scenes, cfg.split.train_fraction, cfg.split.val_fraction, cfg.split.seed);
  json splits{{"train", json::array()}, {"val", json::array()}};
  for (std::size_t i : split.train) splits["train"].push_back(scene_file(i));
  for (std::size_t i : split.val) splits["val"].push_back(scene_file(i));
  write_text(out / "splits.json", splits.dump(2) + "\n");
  write_text(out / "config.json", config::to_json(cfg).dump(2) + "\n");
  std::cerr << "wrote " << cfg.scene.num_scenes << " scenes (" << split.train.size() << " train, "
            << split.val.size() << " val) to " << out.string() << "\n";
  return 0;
}

struct TrainFlags {
  std::string data, out, resume;
  std::size_t threads = 0;
  bool no_p2e = false, no_e2l = false, no_cross_view = false;
  bool captions_only = false, referrals_only = false, quiet = false;
};

int cmd_train(const Common& common, const TrainFlags& f) {
  config::RunConfig cfg = common.resolve();
  if (f.no_p2e) cfg.train.use_p2e = false;
  if (f.no_e2l) cfg.train.use_e2l = false;
  if (f.no_cross_view) cfg.train.cross_view_aug = false;
  if (f.captions_only && f.referrals_only) {
    throw ValidationError("--captions-only and --referrals-only are exclusive");
  }
  if (f.captions_only) cfg.train.use_referrals = false;
  if (f.referrals_only) cfg.train.use_captions = false;
  if (!f.data.empty()) cfg.paths.data_dir = f.data;
  if (!f.out.empty()) cfg.paths.out_dir = f.out;
  cfg.validate();

  const fs::path data(cfg.paths.data_dir), out(cfg.paths.out_dir);
  const std::vector<scene::Scene> scenes = load_split(data, "train");
  const text::Vocabulary vocab = text::load_vocabulary(data / "vocab.json");
  fs::create_directories(out);
  write_text(out / "config.json", config::to_json(cfg).dump(2) + "\n");

  trainer::TrainOptions opts;
  if (!f.resume.empty()) opts.resume = fs::path(f.resume);
  opts.threads = f.threads == 0 ? default_threads() : f.threads;
  opts.quiet = f.quiet;
  const trainer::TrainResult r = trainer::train(scenes, vocab, config::train_setup(cfg), out, opts);
  std::cout << r.final_checkpoint.string() << "\n";
  return 0;
}

struct EvalFlags {
  std::string checkpoint, data, split, out;
  bool per_scene = false;
};

int cmd_eval(const Common& common, const EvalFlags& f) {
  config::RunConfig cfg = common.resolve();
  const model::Checkpoint ckpt = model::load_checkpoint(f.checkpoint);
  if (!ckpt.meta.contains("config")) throw ValidationError("checkpoint carries no config");
  const config::RunConfig trained = config::from_json(ckpt.meta["config"]);
  const std::string split = f.split.empty() ? cfg.eval.split : f.split;
  if (split != "train" && split != "val") throw ValidationError("--split must be train or val");
  const fs::path data(f.data.empty() ? cfg.paths.data_dir : f.data);
  const std::vector<scene::Scene> scenes = load_split(data, split);
  const text::Vocabulary vocab = text::load_vocabulary(data / "vocab.json");

  const fs::path ckpt_path(f.checkpoint);
  const fs::path report_path =
      f.out.empty() ? ckpt_path.parent_path() / ("eval_" + split + ".json") : fs::path(f.out);
  std::ofstream per_scene;
  if (f.per_scene) {
    fs::path p = report_path;
    p.replace_extension(".scenes.jsonl");
    per_scene.open(p);
    if (!per_scene) throw IoError("cannot write " + p.string());
  }
  const eval::EvalReport report = eval::evaluate(
      trainer::checkpoint_parameters(ckpt), trained.model, scenes, vocab,
      [&](const scene::Scene& s, const std::vector<std::size_t>& pred) {
        if (f.per_scene) {
          per_scene << json{{"scene_id", s.scene_id}, {"predictions", pred},
                            {"ground_truth", eval::ground_truth_labels(s)}}.dump()
                    << "\n";
        }
      });
  json j = report.to_json();
  j["split"] = split;
  j["checkpoint"] = ckpt_path.string();
  j["config"] = ckpt.meta["config"];
  write_text(report_path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  char line[128];
  std::snprintf(line, sizeof(line), "f-mIoU %.4f  f-mAcc %.4f  (%zu scenes, %s split)\n",
                report.f_miou, report.f_macc, report.scenes, split.c_str());
  std::cerr << line;
  return 0;
}

int print_suite(const suites::SuiteReport& rep, bool as_json) {
  if (as_json) {
    std::cout << rep.to_json().dump(2) << "\n";
  } else {
    for (const auto& c : rep.checks) {
      std::printf("%-4s %-40s n=%-5zu max_err=%.3e tol=%.1e\n", c.passed ? "ok" : "FAIL",
                  c.name.c_str(), c.instances, c.max_error, c.tolerance);
    }
    std::printf("%s: %s in %.2f s\n", rep.suite.c_str(), rep.passed() ? "PASS" : "FAIL", rep.seconds);
  }
  return rep.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked point-entity contrastive training at desk scale"};
  app.require_subcommand(1);

  Common common;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Generate scenes, vocabulary and splits");
  add_common(gen, common);
  gen->add_option("--out", gen_out, "Output directory (default paths.data_dir)");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train encoder and adapter");
  add_common(train, common);
  train->add_option("--data", tf.data, "Dataset directory (default paths.data_dir)");
  train->add_option("--out", tf.out, "Run directory (default paths.out_dir)");
  train->add_option("--resume", tf.resume, "Resume from a training checkpoint");
  train->add_option("--threads", tf.threads, "Worker threads (default: all cores)");
  train->add_flag("--no-p2e", tf.no_p2e, "Disable the point-entity loss");
  train->add_flag("--no-e2l", tf.no_e2l, "Disable the entity-language loss");
  train->add_flag("--no-cross-view", tf.no_cross_view, "Single shared view, no masking");
  train->add_flag("--captions-only", tf.captions_only, "Use caption texts only");
  train->add_flag("--referrals-only", tf.referrals_only, "Use referral texts only");
  train->add_flag("--quiet", tf.quiet, "No per-epoch progress");

  EvalFlags ef;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, common);
  ev->add_option("--checkpoint", ef.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", ef.data, "Dataset directory (default paths.data_dir)");
  ev->add_option("--split", ef.split, "train or val (default eval.split)");
  ev->add_option("--out", ef.out, "Report path (default next to the checkpoint)");
  ev->add_flag("--per-scene", ef.per_scene, "Also write per-point predictions as JSONL");

  std::uint64_t suite_seed = 1;
  std::size_t instances = 0;
  bool as_json = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--seed", suite_seed, "Suite seed");
  gc->add_option("--instances", instances, "Instances per check (default 20)");
  gc->add_flag("--json", as_json, "JSON report");
  auto* orc = app.add_subcommand("oracle", "Brute-force equivalence suite");
  add_common(orc, common);
  orc->add_option("--seed", suite_seed, "Suite seed");
  orc->add_option("--instances", instances, "Instances per check (default 100)");
  orc->add_flag("--json", as_json, "JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen(common, gen_out);
    if (*train) return cmd_train(common, tf);
    if (*ev) return cmd_eval(common, ef);
    if (*gc) return print_suite(suites::run_gradcheck_suite(suite_seed, instances ? instances : 20), as_json);
    if (*orc) {
      const config::RunConfig cfg = common.resolve();
      return print_suite(suites::run_oracle_suite(suite_seed, instances ? instances : 100, 1000,
                                                  cfg.augmentation, cfg.masking),
                         as_json);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
