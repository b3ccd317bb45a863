#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mpec/config.hpp"
#include "mpec/errors.hpp"

using namespace mpec;
using namespace mpec::config;
using nlohmann::json;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults round trip through JSON") {
  const RunConfig c;
  CHECK_NOTHROW(c.validate());
  const RunConfig back = from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(c.train.lr == 1e-3);
  CHECK(c.loss.tau == 0.07);
  CHECK(c.loss.alpha == 1.0);
  CHECK(c.loss.beta == 6.0);
  CHECK(c.masking.cell_size == 0.1);
  CHECK(c.masking.ratio == 0.4);
  CHECK(c.scene.num_scenes == 250);
}

TEST_CASE("unknown keys and wrong types name the key") {
  CHECK(error_of([] { from_json(json{{"train", {{"lrr", 0.1}}}}); }).find("train.lrr") !=
        std::string::npos);
  CHECK(error_of([] { from_json(json{{"bogus", 1}}); }).find("bogus") != std::string::npos);
  CHECK(error_of([] { from_json(json{{"train", {{"epochs", "many"}}}}); }).find("train.epochs") !=
        std::string::npos);
  CHECK(error_of([] { from_json(json{{"train", {{"epochs", -3}}}}); }).find("train.epochs") !=
        std::string::npos);
}

TEST_CASE("overrides") {
  const RunConfig c = resolve(std::nullopt, {"train.lr=0.002", "train.use_referrals=false",
                                             "paths.out_dir=somewhere"});
  CHECK(c.train.lr == 0.002);
  CHECK_FALSE(c.train.use_referrals);
  CHECK(c.paths.out_dir == "somewhere");
  CHECK_THROWS_AS(resolve(std::nullopt, {"train.lr"}), ValidationError);
  CHECK_THROWS_AS(resolve(std::nullopt, {"train.nope=1"}), ValidationError);
  CHECK_THROWS_AS(resolve(std::nullopt, {"masking.ratio=0.6"}), ValidationError);
}

TEST_CASE("config file then overrides") {
  const auto path = std::filesystem::temp_directory_path() / "mpec_tests" / "cfg.json";
  std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path);
    out << R"({"train": {"epochs": 3, "lr": 0.01}})";
  }
  const RunConfig c = resolve(path, {"train.lr=0.02"});
  CHECK(c.train.epochs == 3);
  CHECK(c.train.lr == 0.02);
  {
    std::ofstream out(path);
    out << "{broken";
  }
  CHECK_THROWS_AS(resolve(path, {}), ValidationError);
}

TEST_CASE("MPEC_SEED replaces the training seed") {
  ::setenv("MPEC_SEED", "4242", 1);
  const RunConfig c = resolve(std::nullopt, {"train.seed=3"});
  ::setenv("MPEC_SEED", "nope", 1);
  CHECK_THROWS_AS(resolve(std::nullopt, {}), ValidationError);
  ::unsetenv("MPEC_SEED");
  CHECK(c.train.seed == 4242);
  CHECK(resolve(std::nullopt, {"train.seed=3"}).train.seed == 3);
}

TEST_CASE("cross-section validation") {
  CHECK_THROWS_AS(resolve(std::nullopt, {"vocabulary.dim=16"}), ValidationError);
  CHECK_NOTHROW(resolve(std::nullopt, {"vocabulary.dim=16", "model.adapter.out_dim=16"}));
  CHECK_THROWS_AS(resolve(std::nullopt, {"eval.split=test"}), ValidationError);
}

TEST_CASE("training view leaves out paths and eval") {
  RunConfig a, b;
  b.paths.out_dir = "elsewhere";
  b.eval.split = "train";
  CHECK(training_view(a) == training_view(b));
  CHECK_FALSE(training_view(a).contains("paths"));
  const auto setup = train_setup(a);
  CHECK(setup.resolved == training_view(a));
  b.train.seed = 99;
  CHECK(model::config_hash(training_view(a)) != model::config_hash(training_view(b)));
}
