#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "wtal/errors.hpp"
#include "wtal/trainer.hpp"

using namespace wtal;

namespace {

SynthConfig tiny_world() {
  SynthConfig c;
  c.num_classes = 3;
  c.feature_dim = 6;
  c.min_length = 28;
  c.max_length = 34;
  c.min_instance_length = 3;
  c.max_instance_length = 5;
  c.num_train = 10;
  c.num_test = 4;
  return c;
}

RunConfig quick_run(std::size_t iterations) {
  RunConfig r;
  r.hyper.iterations = iterations;
  r.batch_size = 4;
  r.learning_rate = 1e-2;
  r.final_learning_rate = 1e-3;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("zero iterations returns the initialization") {
  const auto data = generate(tiny_world());
  const TrainingView view(data.train);
  auto run = quick_run(0);
  run.seed = 3;
  const auto r = train(view, run);
  Rng rng(3);
  CHECK(r.params == init_params(model_shape_for(view, run.hyper), rng));
  CHECK(r.log.empty());
}

TEST_CASE("a single separable video is fitted") {
  Dataset ds{2, 4, std::nullopt, {}};
  VideoRecord v;
  v.id = "only";
  v.rgb = Matrix(12, 4);
  v.flow = Matrix(12, 4);
  for (std::size_t t = 0; t < 12; ++t) {
    const bool action = t >= 4 && t < 8;
    v.rgb(t, action ? 0 : 1) = 1.0;
    v.flow(t, action ? 2 : 3) = 1.0;
  }
  v.label = {false, true};
  v.instances = {{1, 4, 8}};
  ds.videos.push_back(v);
  auto run = quick_run(500);
  run.batch_size = 1;
  const auto r = train(TrainingView(ds), run);
  // the target splits its mass between the class and background, so ln 2 is the floor
  CHECK(r.log.back().losses.fg < std::log(2.0) + 0.05);
  CHECK(r.log.back().losses.fg < r.log.front().losses.fg);
}

TEST_CASE("training is deterministic and worker-count invariant") {
  const auto data = generate(tiny_world());
  const TrainingView view(data.train);
  auto run = quick_run(15);
  run.use_ten = true;
  run.mode = GradMode::Bges;
  const auto a = train(view, run);
  const auto b = train(view, run);
  CHECK(a.params == b.params);
  run.workers = 3;
  const auto c = train(view, run);
  CHECK(a.params == c.params);
  run.seed = 1;
  CHECK_FALSE(train(view, run).params == a.params);
}

TEST_CASE("with lambda = 0 and no continuity branch every mode trains identically") {
  const auto data = generate(tiny_world());
  const TrainingView view(data.train);
  auto run = quick_run(10);
  run.hyper.lambda = 0.0;
  run.mode = GradMode::Standard;
  const auto ref = train(view, run).params;
  for (GradMode m : {GradMode::Bges, GradMode::Grl, GradMode::Bvl, GradMode::BvlPlusBges}) {
    run.mode = m;
    CHECK(train(view, run).params == ref);
  }
}

TEST_CASE("batch gradient is the mean of per-video gradients") {
  const auto data = generate(tiny_world());
  const TrainingView view(data.train);
  auto run = quick_run(1);
  Rng rng(0);
  const auto p = init_params(model_shape_for(view, run.hyper), rng);
  const std::vector<std::size_t> pair{2, 5}, first{2}, second{5};
  Rng r1(0), r2(0), r3(0);
  const auto both = batch_gradient(view, pair, p, run, r1);
  const auto g2 = batch_gradient(view, first, p, run, r2);
  const auto g5 = batch_gradient(view, second, p, run, r3);
  for (std::size_t i = 0; i < both.grads.size(); ++i) {
    CHECK(both.grads[i] == doctest::Approx(0.5 * (g2.grads[i] + g5.grads[i])).epsilon(1e-12));
  }
  CHECK(both.losses.total == doctest::Approx(0.5 * (g2.losses.total + g5.losses.total)));
}

TEST_CASE("bad training inputs") {
  Dataset empty{3, 6, std::nullopt, {}};
  CHECK_THROWS_AS(train(TrainingView(empty), quick_run(1)), InvalidArgument);
  const auto data = generate(tiny_world());
  auto run = quick_run(1);
  run.batch_size = 0;
  CHECK_THROWS_AS(train(TrainingView(data.train), run), InvalidArgument);

  // a blown-up feature surfaces as a numeric failure naming the step
  Dataset broken = data.train;
  broken.videos[0].rgb(0, 0) = std::numeric_limits<double>::infinity();
  run = quick_run(3);
  run.batch_size = broken.videos.size();
  try {
    train(TrainingView(broken), run);
    FAIL("expected a numeric failure");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    CHECK(std::string(e.what()).find(broken.videos[0].id) != std::string::npos);
  }
}

TEST_CASE("step log and checkpoints") {
  const auto data = generate(tiny_world());
  const auto dir = std::filesystem::temp_directory_path() / "wtal_test_trainer";
  std::filesystem::create_directories(dir);
  auto run = quick_run(6);
  run.use_ten = true;
  run.log_path = dir / "log.csv";
  run.checkpoint_path = dir / "model.wtck";
  run.checkpoint_every = 2;
  const auto r = train(TrainingView(data.train), run);
  const auto log = slurp(run.log_path);
  CHECK(log.rfind("step,L_fg,L_bg,L_att,L_KL,L_all,lr\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 7);
  CHECK(log.find("\n5,") != std::string::npos);
  CHECK(read_checkpoint(run.checkpoint_path) == r.params);
  // learning rate drops at the half-way point
  CHECK(r.log[2].learning_rate == 1e-2);
  CHECK(r.log[3].learning_rate == 1e-3);
  for (const auto& e : r.log) {
    CHECK(e.losses.total == doctest::Approx(e.losses.fg + run.hyper.lambda * e.losses.bg +
                                            run.hyper.beta * (e.losses.att + e.losses.kl) +
                                            run.hyper.effective_bvl_weight() * e.losses.bvl));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("formatted log rows") {
  StepLog e;
  e.step = 12;
  e.losses.fg = 0.5;
  e.losses.bg = 0.25;
  e.losses.total = 1.0 / 3.0;
  e.learning_rate = 1e-3;
  CHECK(format_step_log(e) == "12,0.5,0.25,0,0,0.333333333,0.001\n");
}

TEST_CASE("ablation variants") {
  const auto comp = component_variants();
  REQUIRE(comp.size() == 4);
  CHECK(comp[0].name == "BL");
  CHECK_FALSE(comp[0].use_ten);
  CHECK(comp[3].name == "TEN+BGES");
  CHECK(comp[3].mode == GradMode::Bges);
  CHECK(comp[3].use_ten);
  CHECK(mode_variants().size() == 9);
  const std::vector<double> ks{1, 4};
  const auto iv = interval_variants(ks);
  CHECK(iv[1].name == "TEN+BGES k=4");
  CHECK(iv[1].k == std::size_t{4});
  CHECK_THROWS_AS(interval_variants(std::vector<double>{2.5}), InvalidArgument);
  CHECK_THROWS_AS(interval_variants(std::vector<double>{0}), InvalidArgument);
  const std::vector<double> ls{0, 0.3};
  const auto lv = lambda_variants(ls);
  CHECK(lv[1].name == "BL lambda=0.3");
  CHECK(lv[1].lambda == 0.3);
  CHECK_THROWS_AS(lambda_variants(std::vector<double>{-1}), InvalidArgument);
}

TEST_CASE("a one-row ablation") {
  const auto data = generate(tiny_world());
  const auto variants = component_variants();
  const std::vector<AblationVariant> bl{variants[0]};
  std::vector<std::string> progress;
  const auto rows = ablate(data.train, data.test, quick_run(5), bl, 2, default_iou_thresholds(),
                           [&](const std::string& s) { progress.push_back(s); });
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].per_seed.size() == 2);
  CHECK(progress.size() == 2);
  CHECK(progress[1].rfind("BL seed 1: mAP@0.5 ", 0) == 0);
  CHECK(rows[0].mean.map_at(0.3) ==
        doctest::Approx(0.5 * (rows[0].per_seed[0].map_at(0.3) + rows[0].per_seed[1].map_at(0.3))));
  const auto table = format_ablation(rows);
  CHECK(table.rfind("method,mAP@0.1,", 0) == 0);
  CHECK(table.find("\nBL,") != std::string::npos);
  CHECK_THROWS_AS(ablate(data.train, data.test, quick_run(1), bl, 0, default_iou_thresholds()),
                  InvalidArgument);
}
