#include <cmath>
#include <random>

#include "doctest.h"
#include "imgmatch/io.hpp"
#include "imgmatch/train.hpp"
#include "test_util.hpp"

using namespace imgmatch;
using namespace imgmatch::train;
using imgmatch::testing::TempDir;

namespace {

graph::FeatureMap constant_map(std::size_t c, std::size_t h, std::size_t w, float v) {
  Tensor t({c, h, w});
  for (float& x : t.data()) x = v;
  return {std::move(t), 1};
}

std::vector<PreparedScene> small_dataset(const TempDir& dir, double corruption,
                                         std::size_t count, std::size_t layers,
                                         double share = 0.5) {
  synth::SceneSpec spec;
  spec.cue_corruption = corruption;
  const auto m = synth::gen_dataset(spec, count, share, 1, dir.path());
  return load_scenes(m, layers);
}

std::vector<double> column(const std::vector<LossRecord>& rs, double LossRecord::*f) {
  std::vector<double> out;
  for (const auto& r : rs) out.push_back(r.*f);
  return out;
}

}  // namespace

TEST_CASE("diffusion proxy loss") {
  const auto a = constant_map(2, 3, 4, 0.5f);
  CHECK(diffusion_proxy_loss(a, a) == 0.0);
  const auto b = constant_map(2, 3, 4, 1.5f);
  CHECK(diffusion_proxy_loss(b, a) == doctest::Approx(1.0).epsilon(1e-12));
  const auto c = constant_map(2, 3, 5, 0.5f);
  try {
    diffusion_proxy_loss(a, c);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShape);
  }
}

TEST_CASE("total loss") {
  CHECK(total_loss(0.4, -0.6, 0.2) == doctest::Approx(0.28).epsilon(1e-12));
  CHECK(total_loss(0.4, -0.6, 0.0) == 0.4);
  CHECK(total_loss(0.7, -1.0, 0.2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(total_loss(0.1, 0.1, -0.5), Error);
}

TEST_CASE("pooling matrix averages 2x2 blocks") {
  const Tensor64 p = pooling_matrix(4, 6);
  REQUIRE(p.shape() == numcore::Shape{6, 24});
  for (std::size_t r = 0; r < 6; ++r) {
    double row = 0.0;
    for (std::size_t k = 0; k < 24; ++k) row += p.at(r, k);
    CHECK(row == doctest::Approx(1.0));
  }
  // Output cell (1, 2) covers input rows 2..3, cols 4..5.
  CHECK(p.at(1 * 3 + 2, 2 * 6 + 4) == 0.25);
  CHECK(p.at(1 * 3 + 2, 3 * 6 + 5) == 0.25);
  CHECK(p.at(1 * 3 + 2, 0) == 0.0);
}

TEST_CASE("config parsing") {
  const TrainConfig c = parse_config(
      "# run\r\nlambda=0.5\r\nrho=0.1\nlayers=2\nsteps=10\nlr=0.001\nseed=3\n"
      "manifest=data/m.jsonl\nbackground_mask=true\nmode=pairwise\nd=4\n",
      "run.cfg", "/base");
  CHECK(c.lambda == 0.5);
  CHECK(c.rho == 0.1);
  CHECK(c.layers == 2);
  CHECK(c.steps == 10);
  CHECK(c.lr == 0.001);
  CHECK(c.seed == 3);
  CHECK(c.d == 4);
  CHECK(c.manifest == std::filesystem::path("/base/data/m.jsonl"));
  CHECK(c.background_mask);
  CHECK(c.mode == graph::MqaMode::kPairwise);
  CHECK(parse_config(dump_config(c)).manifest == c.manifest);
  CHECK(dump_config(parse_config(dump_config(c))) == dump_config(c));

  try {
    parse_config("lambda=0.2\nlamda=0.3\n", "run.cfg");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
    CHECK(std::string(e.what()).find("lamda") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("lambda=-1\n"), Error);
  CHECK_THROWS_AS(parse_config("steps=0\n"), Error);
  CHECK_THROWS_AS(parse_config("mode=slow\n"), Error);
  CHECK_THROWS_AS(parse_config("lambda=abc\n"), Error);
}

TEST_CASE("model init and flatten round trip") {
  const ToyModel a = ToyModel::init(2, 8, 3, 4, 9);
  const ToyModel b = ToyModel::init(2, 8, 3, 4, 9);
  CHECK(a.flatten() == b.flatten());
  CHECK(a.generator.shape() == numcore::Shape{2, 8});
  CHECK(a.wq[2].shape() == numcore::Shape{8, 4});
  const Tensor flat = a.flatten();
  CHECK(flat.size() == 2 * 8 + 3 * 2 * 8 * 4);
  double sq = 0.0;
  for (float v : flat.data()) sq += static_cast<double>(v) * v;
  const double sd = std::sqrt(sq / static_cast<double>(flat.size()));
  CHECK(sd == doctest::Approx(kInitStddev).epsilon(0.15));

  const ToyModel back = ToyModel::unflatten(flat, 2, 8, 3, 4);
  CHECK(back.flatten() == flat);
  CHECK_THROWS_AS(ToyModel::unflatten(flat, 2, 8, 2, 4), Error);
}

TEST_CASE("single step record satisfies the loss identity") {
  TempDir dir("train1");
  const auto scenes = small_dataset(dir, 0.25, 4, 3);
  TrainConfig cfg;
  cfg.steps = 1;
  const auto r = run_training(init_model(scenes, cfg), cfg, scenes);
  REQUIRE(r.records.size() == 1);
  const LossRecord& rec = r.records.front();
  CHECK(rec.step == 1);
  CHECK(std::abs(rec.l_total - (rec.l_diff + 0.2 * rec.l_match)) <= 1e-6);
  CHECK(rec.c_layers.size() == 3);
  CHECK(rec.c_mean == doctest::Approx(-rec.l_match));
}

TEST_CASE("training is deterministic and keeps the loss identity") {
  TempDir dir("train_det");
  const auto scenes = small_dataset(dir, 0.25, 6, 3);
  TrainConfig cfg;
  cfg.steps = 60;
  const auto a = run_training(init_model(scenes, cfg), cfg, scenes);
  const auto b = run_training(init_model(scenes, cfg), cfg, scenes);
  CHECK(metrics_csv(a.records, 3) == metrics_csv(b.records, 3));
  CHECK(a.model.flatten() == b.model.flatten());
  for (const auto& rec : a.records) {
    CHECK(std::abs(rec.l_total - (rec.l_diff + cfg.lambda * rec.l_match)) <= 1e-6);
    CHECK(rec.c_mean >= 0.0);
    CHECK(rec.c_mean <= 1.0);
  }
  cfg.seed = 8;
  const auto c = run_training(init_model(scenes, cfg), cfg, scenes);
  CHECK(metrics_csv(c.records, 3) != metrics_csv(a.records, 3));

  const std::string csv = metrics_csv(a.records, 3);
  CHECK(csv.rfind("step,l_diff,l_match,l_total,c_mean,c_l1,c_l2,c_l3\n", 0) == 0);
  CHECK(csv.find('\r') == std::string::npos);
}

TEST_CASE("gradient flow into the projections depends on lambda") {
  TempDir dir("train_grad");
  const auto scenes = small_dataset(dir, 0.0, 2, 3, 1.0);
  for (double lambda : {0.2, 0.0}) {
    TrainConfig cfg;
    cfg.lambda = lambda;
    const ToyModel model = init_model(scenes, cfg);
    Tape tape;
    ForwardVars vars;
    vars.generator = tape.leaf(model.generator.cast<double>());
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      vars.wq.push_back(tape.leaf(model.wq[l].cast<double>()));
      vars.wk.push_back(tape.leaf(model.wk[l].cast<double>()));
    }
    const ForwardResult fr = forward(tape, vars, scenes.front(), cfg);
    REQUIRE_FALSE(fr.all_degenerate);
    tape.backward(fr.l_total);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      for (const Var v : {vars.wq[l], vars.wk[l]}) {
        double mag = 0.0;
        for (double g : tape.grad(v).data()) mag += std::abs(g);
        if (lambda > 0.0) {
          CHECK(mag > 0.0);
        } else {
          CHECK(mag == 0.0);
        }
      }
    }
    double gen_mag = 0.0;
    for (double g : tape.grad(vars.generator).data()) gen_mag += std::abs(g);
    CHECK(gen_mag > 0.0);
  }
}

TEST_CASE("untrained model sits at the 1/m baseline") {
  TempDir dir("train_base");
  const auto scenes = small_dataset(dir, 0.25, 20, 3);
  TrainConfig cfg;
  const EvalResult e = evaluate_ic(init_model(scenes, cfg), scenes, cfg);
  CHECK(e.scenes.size() == 20);
  CHECK(std::abs(e.mean_c - 0.5) <= 0.05);
  for (double c : e.layer_means) CHECK(std::abs(c - 0.5) <= 0.05);
  const std::string csv = eval_csv(e);
  CHECK(csv.rfind("scene,c_l1,c_l2,c_l3,c_mean\nscene_0000,", 0) == 0);
  CHECK(csv.find("\nmean,") != std::string::npos);
}

TEST_CASE("oracle generator with shared projections scores high") {
  // The generator reproduces the target exactly on clean cues; projections
  // are shared N(0, 2^2) draws as in the synth property.
  int good = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TempDir dir("train_oracle");
    synth::SceneSpec spec;
    spec.cue_corruption = 0.0;
    spec.embedding_seed = seed;
    spec.swap = true;
    const auto manifest = synth::gen_dataset(spec, 1, 1.0, seed, dir.path());
    const auto scenes = load_scenes(manifest, 3);
    const auto& entry = manifest.entries.front();
    const auto scene = synth::gen_scene(entry.spec, entry.seed);
    TrainConfig cfg;
    cfg.d = 16;
    ToyModel model = init_model(scenes, cfg);
    for (std::size_t k = 0; k < spec.characters; ++k)
      for (std::size_t ch = 0; ch < spec.channels; ++ch)
        model.generator.at(k, ch) =
            static_cast<float>(spec.embedding_scale * scene.embeddings.at(k, ch));
    std::mt19937_64 rng(500 + seed);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      model.wq[l] = testing::random_normal({spec.channels, cfg.d}, rng, 2.0);
      model.wk[l] = model.wq[l];
    }
    const double c = evaluate_ic(model, scenes, cfg).mean_c;
    if (c >= 0.9) ++good;
  }
  CHECK(good >= 16);
}

TEST_CASE("default training lowers the smoothed total loss and raises C") {
  TempDir dir("train_curve");
  const auto scenes = small_dataset(dir, 0.0, 20, 3);
  TrainConfig cfg;
  cfg.steps = 1000;
  const auto r = run_training(init_model(scenes, cfg), cfg, scenes);
  const auto ma = moving_average(column(r.records, &LossRecord::l_total), 500);
  REQUIRE(ma.size() == 501);
  CHECK(ma.back() < ma.front());
  const auto e = evaluate_ic(r.model, scenes, cfg);
  CHECK(e.mean_c > 0.8);
}

TEST_CASE("moving average") {
  const auto ma = moving_average({1, 2, 3, 4, 5}, 2);
  CHECK(ma == std::vector<double>{1.5, 2.5, 3.5, 4.5});
  CHECK(moving_average({1, 2}, 3).empty());
  CHECK_THROWS_AS(moving_average({1}, 0), Error);
}

TEST_CASE("scene gradient check on ten seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SceneGradCheck g = gradcheck_scene(seed, 1e-3);
    INFO("seed " << seed << " wq " << g.wq << " wk " << g.wk << " f " << g.features);
    CHECK(g.max() <= 1e-3);
  }
}

TEST_CASE("empty or missing manifest is an error") {
  synth::Manifest empty;
  CHECK_THROWS_AS(load_scenes(empty, 3), Error);
  TrainConfig cfg;
  CHECK_THROWS_AS(run_training(cfg), Error);
  TempDir dir("train_empty");
  io::write_file(dir / synth::kManifestName, "");
  cfg.manifest = dir / synth::kManifestName;
  CHECK_THROWS_AS(run_training(cfg), Error);
  CHECK_THROWS_AS(evaluate_ic(ToyModel::init(2, 8, 3, 8, 0), {}, cfg), Error);
}

TEST_CASE("model shape mismatches are rejected") {
  TempDir dir("train_shape");
  const auto scenes = small_dataset(dir, 0.0, 2, 3);
  TrainConfig cfg;
  CHECK_THROWS_AS(evaluate_ic(ToyModel::init(3, 8, 3, 8, 0), scenes, cfg), Error);
  CHECK_THROWS_AS(evaluate_ic(ToyModel::init(2, 8, 3, 4, 0), scenes, cfg), Error);
  cfg.layers = 4;  // 16x16 scenes prepared for 3 layers
  CHECK_THROWS_AS(run_training(init_model(scenes, cfg), cfg, scenes), Error);
}
