#include <doctest.h>

#include <fstream>

#include "bifuse/config.hpp"
#include "support/testing.hpp"

using namespace bifuse;
using namespace bifuse::testing;
using nlohmann::json;

namespace {

bool mentions(const ConfigError& e, const std::string& s) {
  for (const auto& p : e.problems())
    if (p.find(s) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("defaults round-trip through json") {
  const RunConfig c;
  const json j = to_json(c);
  CHECK(to_json(config_from_json(j)) == j);
  CHECK(j["bilevel"]["inner_lr"] == 2e-4);
  CHECK(j["bilevel"]["outer_lr"] == 1e-4);
  CHECK(j["encoder"]["tap_layers"] == json::array({2, 5, 8, 11}));
  CHECK(j["metrics"]["qy"]["window"] == 7);
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("unknown fields and type errors are reported per field") {
  json j = to_json(RunConfig{});
  j["adapter"]["widht"] = 3;
  j["data"]["batch_size"] = "sixteen";
  j["extra"] = true;
  try {
    config_from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(mentions(e, "adapter.widht"));
    CHECK(mentions(e, "data.batch_size"));
    CHECK(mentions(e, "extra"));
  }
}

TEST_CASE("file then dotted overrides") {
  ScratchDir dir("config");
  {
    std::ofstream f(dir / "run.json");
    f << R"({"seed": 3, "data": {"crop": 64}, "bilevel": {"mode": "joint"}})";
  }
  const RunConfig c = resolve_config((dir / "run.json").string(), {"data.crop=32", "loss.ssim=0.5", "task=\"mef\""});
  CHECK(c.seed == 3);
  CHECK(c.data.crop == 32);
  CHECK(c.loss.ssim == 0.5);
  CHECK(c.task == "mef");
  CHECK(c.bilevel.mode == TrainMode::Joint);
  CHECK(c.data.batch_size == 16);

  const RunConfig bare = resolve_config("", {"task=mif"});
  CHECK(bare.task == "mif");
  CHECK_THROWS_AS(resolve_config("", {"nonsense"}), ConfigError);
  CHECK_THROWS_AS(resolve_config("", {"data.nope=1"}), ConfigError);
  CHECK_THROWS_AS(resolve_config((dir / "missing.json").string(), {}), ConfigError);
}

TEST_CASE("semantic validation") {
  RunConfig c;
  c.bilevel.eta_inner = 1e-4;
  c.bilevel.eta_outer = 2e-4;
  try {
    validate(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(mentions(e, "inner_lr"));
  }
  c.bilevel.strict_lr_order = false;
  CHECK_NOTHROW(validate(c));

  RunConfig t;
  t.encoder.tap_layers = {2, 5, 8, 12};
  CHECK_THROWS_AS(validate(t), ConfigError);
  RunConfig q;
  q.metrics.qy.window = 6;
  CHECK_THROWS_AS(validate(q), ConfigError);
  RunConfig task;
  task.task = "xray";
  CHECK_THROWS_AS(validate(task), ConfigError);
  RunConfig a;
  a.bilevel.ema_alpha = 1.0;
  CHECK_THROWS_AS(validate(a), ConfigError);
}

TEST_CASE("ablation variants") {
  const RunConfig base;
  CHECK_FALSE(apply_variant(base, "no_adapter").adapter.enabled);
  const RunConfig enc = apply_variant(base, "no_pretrained_encoder");
  CHECK(enc.encoder.depth == 4);
  CHECK(enc.encoder.trainable);
  const RunConfig rec = apply_variant(base, "no_reconstruction");
  CHECK_FALSE(rec.reconstruction.enabled);
  CHECK(rec.bilevel.mode == TrainMode::FusionOnly);
  CHECK(apply_variant(base, "no_bilevel").bilevel.mode == TrainMode::Joint);
  CHECK(apply_variant(base, "full").variant == "full");
  CHECK_THROWS_AS(apply_variant(base, "no_fusion"), ConfigError);
  for (const auto& v : variant_names()) CHECK_NOTHROW(validate(apply_variant(base, v)));
}
