#include <doctest.h>

#include "bilearn/checkpoint.hpp"
#include "bilearn/config.hpp"

#include <filesystem>
#include <fstream>

using namespace bilearn;
namespace fs = std::filesystem;

TEST_CASE("presets carry the published schedule") {
  const RunConfig full = from_flat(preset("paper_full"));
  CHECK(full.train.epochs == 320);
  CHECK(full.train.warmup_epochs == 20);
  CHECK(full.train.batch_size == 256);
  CHECK(full.train.lr_init == 0.04);
  CHECK(full.train.momentum == 0.9);
  CHECK(full.train.weight_decay == 5e-4);
  CHECK(full.train.t_max == 300);
  CHECK(full.train.eta_min == 2e-4);
  CHECK(full.train.threshold == 0.3);
  CHECK(full.train.beta_scale == 50.0);
  CHECK(full.train.loss.alpha == 0.1);
  CHECK(full.train.loss.lambda == 1e-6);
  CHECK(full.train.loss.gamma == 0.9);
  CHECK(full.train.loss.delta == 0.1);
  CHECK(full.model.backbone == Backbone::kPreActResNet34);
  CHECK(full.model.num_shallow_heads == 3);
  CHECK(full.model.ema_decay == 0.999);

  const RunConfig hundred = from_flat(preset("paper_full_cifar100"));
  CHECK(hundred.train.epochs == 340);
  CHECK(hundred.train.warmup_epochs == 40);
  CHECK(hundred.model.num_classes == 100);

  const RunConfig desk = from_flat(preset("desk_blobs"));
  CHECK(desk.train.epochs == 60);
  CHECK(desk.train.warmup_epochs == 5);
  CHECK(desk.train.t_max == 55);
  CHECK(desk.data.n == 3000);
  CHECK(desk.data.separation == 6.0);
  CHECK(desk.noise.rate == 0.4);
  CHECK(desk.model.backbone == Backbone::kTinyMlp);

  for (const auto& name : preset_names()) CHECK_NOTHROW(from_flat(preset(name)));
  CHECK_THROWS_AS(preset("nope"), ValidationError);
}

TEST_CASE("flat text round trip") {
  const RunConfig desk = from_flat(preset("desk_blobs"));
  const std::string text = format_flat_config(to_flat(desk));
  const FlatConfig back = parse_flat_config(text);
  CHECK(back == to_flat(desk));
  CHECK(format_flat_config(to_flat(from_flat(back))) == text);
}

TEST_CASE("config files with a base preset and comments") {
  const auto path = fs::temp_directory_path() / "bilearn_config_test.conf";
  {
    std::ofstream out(path);
    out << "# small run\nbase = desk_blobs\n\ntrain.epochs = 12   # shorter\nrun.name = tiny\n";
  }
  const RunConfig c = from_flat(load_flat_config(path.string()));
  CHECK(c.train.epochs == 12);
  CHECK(c.name == "tiny");
  CHECK(c.data.n == 3000);
  fs::remove(path);

  CHECK_THROWS_AS(parse_flat_config("just words\n"), ValidationError);
  CHECK_THROWS_AS(load_flat_config("/nonexistent/file.conf"), ValidationError);
}

TEST_CASE("overrides accept full or trailing keys") {
  FlatConfig f = preset("desk_blobs");
  apply_override(f, "lr_init=0.04");
  CHECK(f.at("train.lr_init") == "0.04");
  apply_override(f, "train.epochs = 7");
  CHECK(f.at("train.epochs") == "7");
  apply_override(f, "seed=3");
  CHECK(from_flat(f).train.seed == 3);
  CHECK_THROWS_AS(apply_override(f, "no_such_key=1"), ValidationError);
  CHECK_THROWS_AS(apply_override(f, "missing-equals"), ValidationError);
}

TEST_CASE("validation errors name the field") {
  auto with = [](const std::string& assignment) {
    FlatConfig f = preset("desk_blobs");
    apply_override(f, assignment);
    return f;
  };
  CHECK_THROWS_WITH_AS(from_flat(with("train.epochs=0")), doctest::Contains("train.epochs"), ValidationError);
  CHECK_THROWS_WITH_AS(from_flat(with("train.warmup_epochs=61")), doctest::Contains("train.warmup_epochs"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(from_flat(with("train.lr_init=abc")), doctest::Contains("train.lr_init"), ValidationError);
  CHECK_THROWS_WITH_AS(from_flat(with("noise.rate=1.5")), doctest::Contains("noise.rate"), ValidationError);
  CHECK_THROWS_WITH_AS(from_flat(with("model.backbone=vgg")), doctest::Contains("model.backbone"), ValidationError);
  CHECK_THROWS_WITH_AS(from_flat(with("detect.threshold=1")), doctest::Contains("detect.threshold"), ValidationError);
  CHECK_THROWS_WITH_AS(from_flat(with("model.num_classes=4")), doctest::Contains("model.num_classes"), ValidationError);
  FlatConfig unknown = preset("desk_blobs");
  unknown["train.bogus"] = "1";
  CHECK_THROWS_WITH_AS(from_flat(unknown), doctest::Contains("train.bogus"), ValidationError);
  // Pure warm-up runs are allowed.
  CHECK_NOTHROW(from_flat(with("train.warmup_epochs=60")));
}

TEST_CASE("checkpoint files round-trip bit-exactly") {
  Checkpoint c;
  c.meta["epoch"] = 3;
  c.meta["note"] = "x";
  Matrix<float> f(2, 3);
  f << 1.5f, -2.0f, 3.25f, 1e-30f, 7.0f, -0.0f;
  Matrix<double> d(1, 2);
  d << 0.1, 1.0 / 3.0;
  c.put("f", f);
  c.put("d", d);
  c.put("i", std::vector<std::int32_t>{-1, 0, 7});
  const auto path = fs::temp_directory_path() / "bilearn_ckpt_test.bin";
  c.save(path);
  const Checkpoint back = Checkpoint::load(path);
  CHECK(back == c);
  CHECK(back.f32("f") == f);
  CHECK(back.f64("d") == d);
  CHECK(back.i32("i") == std::vector<std::int32_t>{-1, 0, 7});
  CHECK(back.meta["epoch"] == 3);
  CHECK_THROWS(back.f32("missing"));

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "garbage";
  }
  CHECK_THROWS_AS(Checkpoint::load(path), RuntimeError);
  fs::remove(path);
}
