#include <doctest.h>

#include <cmath>
#include <set>

#include "golden.hpp"
#include "wtal/binary_io.hpp"
#include "wtal/errors.hpp"
#include "wtal/eval.hpp"
#include "wtal/localize.hpp"
#include "wtal/synth.hpp"
#include "wtal/trainer.hpp"

using namespace wtal;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.num_classes = 3;
  c.feature_dim = 6;
  c.min_length = 30;
  c.max_length = 40;
  c.min_instance_length = 3;
  c.max_instance_length = 6;
  c.num_train = 12;
  c.num_test = 5;
  return c;
}

double dist2(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

template <typename V>
concept ExposesSegments = requires(V v) { v.instances; };

}  // namespace

static_assert(!ExposesSegments<TrainingVideo>, "training must not see ground-truth segments");
static_assert(ExposesSegments<VideoRecord>);

TEST_CASE("config validation") {
  auto c = small_config();
  CHECK_NOTHROW(validate(c));
  c.max_instances = 6;
  c.max_instance_length = 5;
  CHECK_THROWS_AS(generate(c), InvalidArgument);  // 6*5 + 7*3 > 30
  c = small_config();
  c.min_gap = 0;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
  c = small_config();
  c.min_gap = 4;  // 3*6 + 4*4 > 30
  CHECK_THROWS_AS(validate(c), InvalidArgument);
  c = small_config();
  c.confound_strength = 1.5;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
  c = small_config();
  c.num_classes = 0;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
  c = small_config();
  c.min_length = 50;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
}

TEST_CASE("generated videos respect their invariants") {
  auto c = small_config();
  c.num_train = 60;
  const auto out = generate(c);
  std::set<std::string> ids;
  for (const Dataset* ds : {&out.train, &out.test}) {
    for (const auto& v : ds->videos) {
      CHECK(ids.insert(v.id).second);
      CHECK(v.length() >= c.min_length);
      CHECK(v.length() <= c.max_length);
      CHECK(v.flow.rows() == v.length());
      CHECK(v.rgb.cols() == c.feature_dim);
      REQUIRE(!v.instances.empty());
      std::vector<bool> union_label(c.num_classes, false);
      std::size_t prev_end = 0;
      for (std::size_t j = 0; j < v.instances.size(); ++j) {
        const auto& inst = v.instances[j];
        CHECK(inst.end > inst.start);
        CHECK(inst.end <= v.length());
        CHECK(inst.end - inst.start >= c.min_instance_length);
        CHECK(inst.end - inst.start <= c.max_instance_length);
        // background gap before each instance
        CHECK(inst.start >= prev_end + c.min_gap);
        prev_end = inst.end;
        union_label[inst.cls] = true;
      }
      CHECK(prev_end + c.min_gap <= v.length());
      CHECK(union_label == v.label);
    }
  }
  CHECK(out.train.videos.front().id == "train_0000");
  CHECK(out.test.videos.front().id == "test_0000");
}

TEST_CASE("generation is deterministic and seed sensitive") {
  const auto c = small_config();
  const auto a = generate(c);
  const auto b = generate(c);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  auto other = c;
  other.seed = 8;
  CHECK(dataset_checksum(generate(other).train) != dataset_checksum(a.train));
}

TEST_CASE("noiseless worlds are their prototypes") {
  auto c = small_config();
  c.noise_sigma = 0.0;
  c.multi_class_prob = 0.0;
  SUBCASE("no confound: nearest-prototype labelling recovers every segment") {
    c.confound_strength = 0.0;
    const auto out = generate(c);
    const auto& P = out.prototypes;
    for (const auto& v : out.train.videos) {
      std::vector<std::ptrdiff_t> truth(v.length(), -1);
      for (const auto& inst : v.instances) {
        for (std::size_t t = inst.start; t < inst.end; ++t) truth[t] = inst.cls;
      }
      for (std::size_t t = 0; t < v.length(); ++t) {
        if (truth[t] >= 0) {
          CHECK(dist2(v.rgb.row(t), P.statics.row(truth[t])) == 0.0);
          CHECK(dist2(v.flow.row(t), P.motions.row(truth[t])) == 0.0);
        } else {
          CHECK(dist2(v.rgb.row(t), P.statics.row(c.num_classes)) == 0.0);
          for (double f : v.flow.row(t)) CHECK(f == 0.0);
        }
        std::size_t best = 0;
        for (std::size_t k = 1; k <= c.num_classes; ++k) {
          if (dist2(v.rgb.row(t), P.statics.row(k)) < dist2(v.rgb.row(t), P.statics.row(best))) {
            best = k;
          }
        }
        const std::ptrdiff_t guess = best == c.num_classes ? -1 : static_cast<std::ptrdiff_t>(best);
        CHECK(guess == truth[t]);
      }
    }
  }
  SUBCASE("full confound: background rgb equals the action prototype") {
    c.confound_strength = 1.0;
    const auto out = generate(c);
    for (const auto& v : out.train.videos) {
      const std::size_t cls = v.instances.front().cls;
      for (std::size_t t = 0; t < v.instances.front().start; ++t) {
        CHECK(dist2(v.rgb.row(t), out.prototypes.statics.row(cls)) < 1e-24);
        for (double f : v.flow.row(t)) CHECK(f == 0.0);
      }
    }
  }
}

TEST_CASE("dataset files round-trip exactly") {
  const auto out = generate(small_config());
  CHECK(deserialize_dataset(serialize_dataset(out.train)) == out.train);

  Dataset empty{4, 7, std::nullopt, {}};
  const auto bytes = serialize_dataset(empty);
  CHECK(bytes.size() == 8 + 4 + 4 + 4 + 8 + 4 + 4);
  CHECK(deserialize_dataset(bytes) == empty);

  Dataset one{2, 2, Timing{30.0, 16.0}, {}};
  VideoRecord v;
  v.id = "clip";
  v.rgb = Matrix(3, 2, {1, 2, 3, 4, 5, 6});
  v.flow = Matrix(3, 2, {-1, -2, -3, -4, -5, -0.5});
  v.label = {false, true};
  v.instances = {{1, 0, 2}};
  one.videos.push_back(v);
  CHECK(deserialize_dataset(serialize_dataset(one)) == one);

  // externally produced features carry no instances; labels stand alone
  Dataset external = one;
  external.videos[0].instances.clear();
  external.videos[0].label = {true, true};
  CHECK(deserialize_dataset(serialize_dataset(external)) == external);

  const auto path = std::filesystem::temp_directory_path() / "wtal_test_synth.wtds";
  write_dataset(path, out.test);
  CHECK(read_dataset(path) == out.test);
  std::filesystem::remove(path);
}

TEST_CASE("damaged dataset files are rejected with offsets") {
  const auto bytes = serialize_dataset(generate(small_config()).test);
  SUBCASE("checksum") {
    auto b = bytes;
    b[b.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(deserialize_dataset(b), FormatError);
  }
  SUBCASE("truncation") {
    for (std::size_t cut : {std::size_t{5}, std::size_t{30}, bytes.size() / 3, bytes.size() - 1}) {
      std::vector<std::uint8_t> b(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(deserialize_dataset(b), FormatError);
    }
  }
  SUBCASE("version") {
    auto b = bytes;
    b[8] = 9;
    try {
      deserialize_dataset(b);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 8);
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
  SUBCASE("trailing bytes") {
    auto b = bytes;
    b.push_back(0);
    CHECK_THROWS_AS(deserialize_dataset(b), FormatError);
  }
}

TEST_CASE("golden seed-7 dataset checksums") {
  const auto out = generate(SynthConfig{});
  CHECK(out.train.videos.size() == 200);
  CHECK(out.test.videos.size() == 60);
  CHECK(dataset_checksum(out.train) == golden::kTrainChecksum);
  CHECK(dataset_checksum(out.test) == golden::kTestChecksum);
}

TEST_CASE("the confounder makes the task harder") {
  // baseline mAP@0.5 averaged over 10 seeds must not rise with confound_strength
  std::vector<double> means;
  for (double conf : {0.0, 0.5, 1.0}) {
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      SynthConfig c;
      c.num_classes = 3;
      c.feature_dim = 8;
      c.num_train = 30;
      c.num_test = 15;
      c.confound_strength = conf;
      c.seed = 100 + seed;
      const auto data = generate(c);
      RunConfig run;
      run.hyper.iterations = 150;
      run.batch_size = 8;
      run.seed = seed;
      run.learning_rate = 1e-2;
      run.final_learning_rate = 1e-3;
      const auto trained = train(TrainingView(data.train), run);
      const auto props = localize_dataset(data.test, trained.params, run.hyper);
      const std::vector<double> thr{0.5};
      sum += evaluate(props, data.test, thr).map[0];
    }
    means.push_back(sum / 10.0);
    MESSAGE("confound " << conf << ": mean mAP@0.5 " << means.back());
  }
  CHECK(means[0] >= means[1]);
  CHECK(means[1] >= means[2]);
}
