#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lpose/synth.hpp"
#include "lpose/train.hpp"

using namespace lpose;
using ad::Tensor;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.spatial_blocks = 2;
  cfg.windows = {2, 4};
  cfg.joints = 17;
  cfg.frames = 9;
  cfg.dropout = 0.0;
  return cfg;
}

TrainConfig fast_train(int epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.epochs = epochs;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 2;
  cfg.seed = seed;
  cfg.hflip = true;
  cfg.conf_dropout_prob = 0.1;
  return cfg;
}

}  // namespace

TEST_CASE("synthesis is deterministic and byte-identical on disk") {
  SyntheticSpec spec;
  spec.sequences = 3;
  spec.frames = 12;
  spec.seed = 99;
  auto skel = Skeleton::preset17();
  auto a = Dataset::from_sequences(synthesize(spec, skel));
  auto b = Dataset::from_sequences(synthesize(spec, skel));
  a.save("synth_det_a.bin");
  b.save("synth_det_b.bin");
  CHECK(slurp("synth_det_a.bin") == slurp("synth_det_b.bin"));
  std::remove("synth_det_a.bin");
  std::remove("synth_det_b.bin");

  SyntheticSpec other = spec;
  other.seed = 100;
  auto c = Dataset::from_sequences(synthesize(other, skel));
  bool differs = false;
  for (std::size_t i = 0; i < c.sequences[0].inputs.numel(); ++i)
    differs = differs || c.sequences[0].inputs.data[i] != a.sequences[0].inputs.data[i];
  CHECK(differs);
}

TEST_CASE("zero-amplitude motion has static ground truth") {
  SyntheticSpec spec;
  spec.sequences = 1;
  spec.frames = 10;
  spec.amplitude = 0.0;
  spec.seed = 5;
  auto skel = Skeleton::preset17();
  auto data = Dataset::from_sequences(synthesize(spec, skel));
  const auto& t = data.sequences[0].targets;
  for (int frame = 1; frame < spec.frames; ++frame)
    for (int r = 0; r < skel.joint_count() * 3; ++r)
      CHECK(t.data[static_cast<std::size_t>(frame * skel.joint_count() * 3 + r)] ==
            doctest::Approx(t.data[static_cast<std::size_t>(r)]).epsilon(1e-6));
}

TEST_CASE("gait-sine trajectories are periodic with the configured period") {
  SyntheticSpec spec;
  spec.sequences = 1;
  spec.frames = 64;
  spec.period = 16;
  spec.seed = 12;
  auto skel = Skeleton::preset17();
  auto data = Dataset::from_sequences(synthesize(spec, skel));
  const auto& targets = data.sequences[0].targets;

  // autocorrelation oracle on the right-ankle x trajectory
  auto autocorr = [&](int joint, int coord, int lag) {
    const int t_n = spec.frames;
    double mean = 0;
    for (int t = 0; t < t_n; ++t)
      mean += targets.data[static_cast<std::size_t>((t * 17 + joint) * 3 + coord)] / t_n;
    double num = 0, den = 0;
    for (int t = 0; t < t_n - lag; ++t) {
      double a = targets.data[static_cast<std::size_t>((t * 17 + joint) * 3 + coord)] - mean;
      double b = targets.data[static_cast<std::size_t>(((t + lag) * 17 + joint) * 3 + coord)] - mean;
      num += a * b;
    }
    for (int t = 0; t < t_n - lag; ++t) {
      double a = targets.data[static_cast<std::size_t>((t * 17 + joint) * 3 + coord)] - mean;
      den += a * a;
    }
    return num / (den + 1e-30);
  };
  // peak at the period across joints and coordinates
  for (int joint : {3, 6, 13, 16}) {
    for (int coord = 0; coord < 3; ++coord) CHECK(autocorr(joint, coord, spec.period) >= 0.999);
  }
}

TEST_CASE("occlusion episodes dent the confidence channel only") {
  SyntheticSpec clean;
  clean.sequences = 2;
  clean.frames = 24;
  clean.seed = 77;
  SyntheticSpec occluded = clean;
  occluded.occlusion_prob = 1.0;
  auto skel = Skeleton::preset17();
  auto a = Dataset::from_sequences(synthesize(clean, skel));
  auto b = Dataset::from_sequences(synthesize(occluded, skel));
  bool conf_below_one = false;
  for (const auto& seq : b.sequences)
    for (std::size_t r = 0; r < seq.inputs.numel() / 3; ++r) {
      float c = seq.inputs.data[r * 3 + 2];
      CHECK(c >= 0.0f);
      CHECK(c <= 1.0f);
      conf_below_one = conf_below_one || c < 0.99f;
    }
  CHECK(conf_below_one);
  for (const auto& seq : a.sequences)
    for (std::size_t r = 0; r < seq.inputs.numel() / 3; ++r)
      CHECK(seq.inputs.data[r * 3 + 2] == 1.0f);
}

TEST_CASE("dataset wire format round-trips and validates") {
  SyntheticSpec spec;
  spec.sequences = 2;
  spec.frames = 8;
  spec.seed = 3;
  auto skel = Skeleton::preset17();
  auto data = Dataset::from_sequences(synthesize(spec, skel));
  data.save("roundtrip.bin");
  auto loaded = Dataset::load("roundtrip.bin");
  REQUIRE(loaded.sequences.size() == data.sequences.size());
  CHECK(loaded.frames == data.frames);
  for (std::size_t s = 0; s < data.sequences.size(); ++s) {
    for (std::size_t i = 0; i < data.sequences[s].inputs.numel(); ++i)
      CHECK(loaded.sequences[s].inputs.data[i] == data.sequences[s].inputs.data[i]);
    for (std::size_t i = 0; i < data.sequences[s].targets.numel(); ++i)
      CHECK(loaded.sequences[s].targets.data[i] == data.sequences[s].targets.data[i]);
  }

  // header starts with the magic and the declared dims
  auto bytes = slurp("roundtrip.bin");
  CHECK(bytes.substr(0, 4) == "HPSE");
  std::remove("roundtrip.bin");

  {
    std::ofstream bad("bad_magic.bin", std::ios::binary);
    bad << "NOPE" << std::string(64, '\0');
  }
  CHECK_THROWS_WITH_AS((void)Dataset::load("bad_magic.bin"), doctest::Contains("magic"),
                       std::runtime_error);
  std::remove("bad_magic.bin");

  // confidence outside [0,1] is rejected
  Dataset invalid = data;
  invalid.sequences[0].inputs.data[2] = 1.5f;
  CHECK_THROWS_WITH_AS(invalid.validate(), doctest::Contains("confidence"), std::runtime_error);
}

TEST_CASE("manifest and spec json round-trip") {
  SyntheticSpec spec;
  spec.generator = "random-smooth-spline";
  spec.sequences = 4;
  spec.seed = 1234;
  spec.occlusion_prob = 0.25;
  auto round = synthetic_spec_from_json(synthetic_spec_to_json(spec));
  CHECK(round.generator == spec.generator);
  CHECK(round.sequences == spec.sequences);
  CHECK(round.seed == spec.seed);
  CHECK(round.occlusion_prob == spec.occlusion_prob);

  write_manifest("manifest_test.json", spec, Skeleton::preset17());
  auto text = slurp("manifest_test.json");
  CHECK(text.find("\"seed\"") != std::string::npos);
  CHECK(text.find("\"joints\"") != std::string::npos);
  std::remove("manifest_test.json");

  SyntheticSpec bad;
  bad.generator = "dance";
  CHECK_THROWS_AS((void)synthesize(bad, Skeleton::preset17()), std::invalid_argument);
}

TEST_CASE("spline generator produces valid, deterministic data") {
  SyntheticSpec spec;
  spec.generator = "random-smooth-spline";
  spec.sequences = 2;
  spec.frames = 20;
  spec.seed = 31;
  auto skel = Skeleton::preset17();
  auto a = Dataset::from_sequences(synthesize(spec, skel));
  auto b = Dataset::from_sequences(synthesize(spec, skel));
  for (std::size_t i = 0; i < a.sequences[0].targets.numel(); ++i)
    CHECK(a.sequences[0].targets.data[i] == b.sequences[0].targets.data[i]);
  a.validate();
}

TEST_CASE("learning-rate schedule: zero start, linear warmup, cosine floor") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_epochs = 5;
  cfg.epochs = 40;
  const std::int64_t spe = 10, total = 400, warm = 50;
  CHECK(lr_at(cfg, 0, spe, total) == 0.0);
  CHECK(lr_at(cfg, warm / 2, spe, total) == doctest::Approx(cfg.lr / 2).epsilon(1e-12));
  CHECK(lr_at(cfg, warm, spe, total) == doctest::Approx(cfg.lr).epsilon(1e-12));
  for (std::int64_t s = 1; s <= warm; ++s)
    CHECK(lr_at(cfg, s, spe, total) >= lr_at(cfg, s - 1, spe, total));
  CHECK(lr_at(cfg, total, spe, total) == doctest::Approx(0.01 * cfg.lr).epsilon(1e-12));
  for (std::int64_t s = warm + 1; s <= total; ++s) CHECK(lr_at(cfg, s, spe, total) <= lr_at(cfg, s - 1, spe, total));
}

TEST_CASE("horizontal flip is an involution and swaps mirrored joints") {
  auto skel = Skeleton::preset17();
  SyntheticSpec spec;
  spec.sequences = 1;
  spec.frames = 6;
  spec.seed = 8;
  auto data = Dataset::from_sequences(synthesize(spec, skel));
  auto inputs = data.sequences[0].inputs.cast<double>();
  auto flipped = hflip_sequence(inputs, skel.mirror);
  auto twice = hflip_sequence(flipped, skel.mirror);
  for (std::size_t i = 0; i < inputs.numel(); ++i) CHECK(twice.data[i] == inputs.data[i]);

  // flipped joint j carries the mirrored joint's data with x negated
  for (int t = 0; t < spec.frames; ++t)
    for (int j = 0; j < 17; ++j) {
      int m = skel.mirror[static_cast<std::size_t>(j)];
      CHECK(flipped.data[static_cast<std::size_t>((t * 17 + j) * 3)] ==
            -inputs.data[static_cast<std::size_t>((t * 17 + m) * 3)]);
      CHECK(flipped.data[static_cast<std::size_t>((t * 17 + j) * 3 + 1)] ==
            inputs.data[static_cast<std::size_t>((t * 17 + m) * 3 + 1)]);
      CHECK(flipped.data[static_cast<std::size_t>((t * 17 + j) * 3 + 2)] ==
            inputs.data[static_cast<std::size_t>((t * 17 + m) * 3 + 2)]);
    }
}

TEST_CASE("training runs, clips gradients, logs and improves") {
  SyntheticSpec spec;
  spec.sequences = 4;
  spec.frames = 9;
  spec.seed = 21;
  auto skel = Skeleton::preset17();
  auto data = Dataset::from_sequences(synthesize(spec, skel));
  Model<double> model(tiny_model(), skel, 101);
  auto loss_params = make_uncertainty_params<double>();

  double max_norm = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepStats& s) { max_norm = std::max(max_norm, s.grad_norm_post_clip); };

  auto out = train_model(model, loss_params, data, nullptr, fast_train(12, 7), "train_smoke", &hooks);
  CHECK(max_norm <= 1.0 + 1e-6);
  REQUIRE(out.epochs.size() == 12);
  CHECK(out.epochs.front().loss_total > out.epochs.back().loss_total);
  CHECK(out.best_epoch >= 0);
  CHECK(std::filesystem::exists(out.best_checkpoint));
  CHECK(std::filesystem::exists(out.final_checkpoint));

  auto log_text = slurp(out.log_path);
  CHECK(log_text.rfind("epoch,lr,loss_total,loss_mpjpe,loss_vel,loss_bone,sigma2_mpjpe,sigma2_vel,"
                       "sigma2_bone,omega,drift,val_mpjpe,wall_s",
                       0) == 0);
  // omega column is zero through epoch 9 and the drift column is tiny in fp64
  CHECK(out.epochs[5].omega == 0.0);
  CHECK(out.epochs[11].omega > 0.0);
  CHECK(out.epochs[3].drift <= 1e-12);

  std::filesystem::remove_all("train_smoke");
}

TEST_CASE("training aborts on non-finite parameters with the tensor name") {
  SyntheticSpec spec;
  spec.sequences = 2;
  spec.frames = 6;
  spec.seed = 22;
  auto skel = Skeleton::preset17();
  auto data = Dataset::from_sequences(synthesize(spec, skel));
  Model<double> model(tiny_model(), skel, 103);
  model.params().named("embed.w_pos").value.data[0] = std::numeric_limits<double>::quiet_NaN();
  auto loss_params = make_uncertainty_params<double>();
  CHECK_THROWS_WITH_AS(
      train_model(model, loss_params, data, nullptr, fast_train(1, 9), "train_nan", nullptr),
      doctest::Contains("non-finite"), std::runtime_error);
  std::filesystem::remove_all("train_nan");
}

TEST_CASE("identical seeds give identical training and evaluation output") {
  SyntheticSpec spec;
  spec.sequences = 3;
  spec.frames = 8;
  spec.seed = 33;
  auto skel = Skeleton::preset17();
  auto data = Dataset::from_sequences(synthesize(spec, skel));

  auto run = [&](const std::string& dir) {
    Model<double> model(tiny_model(), skel, 105);
    auto loss_params = make_uncertainty_params<double>();
    (void)train_model(model, loss_params, data, nullptr, fast_train(4, 11), dir, nullptr);
    auto report = evaluate_model(model, data);
    std::ofstream out(dir + "/report.csv");
    out << report.to_csv();
    out.close();
    return slurp(dir + "/report.csv");
  };
  auto a = run("det_a"), b = run("det_b");
  CHECK(a == b);
  CHECK(slurp("det_a/train_log.csv").substr(0, 200) == slurp("det_b/train_log.csv").substr(0, 200));
  std::filesystem::remove_all("det_a");
  std::filesystem::remove_all("det_b");
}

TEST_CASE("driftwatch is a detached diagnostic") {
  SyntheticSpec spec;
  spec.sequences = 2;
  spec.frames = 6;
  spec.seed = 44;
  auto skel = Skeleton::preset17();
  auto data = Dataset::from_sequences(synthesize(spec, skel));
  Model<float> model(tiny_model(), skel, 107);

  auto before = model.params().named("spatial0.w_qkv").value;
  auto records = driftwatch(model, data, "driftwatch_test.csv");
  auto after = model.params().named("spatial0.w_qkv").value;
  for (std::size_t i = 0; i < before.numel(); ++i) CHECK(before.data[i] == after.data[i]);

  REQUIRE_FALSE(records.empty());
  // sites cover every spatial block, head, and q/k lift
  CHECK(records.size() ==
        data.sequences.size() * static_cast<std::size_t>(tiny_model().spatial_blocks) *
            static_cast<std::size_t>(tiny_model().heads) * 2u);
  for (const auto& r : records) {
    CHECK(r.drift >= 0.0);
    CHECK(r.drift <= 1e-4);  // fp32 lifts at R_q = 3 stay far below the bound
  }
  auto text = slurp("driftwatch_test.csv");
  CHECK(text.rfind("step,site,drift,log10_drift", 0) == 0);
  std::remove("driftwatch_test.csv");
}

TEST_CASE("evaluation report has one row per sequence plus AVG") {
  SyntheticSpec spec;
  spec.sequences = 3;
  spec.frames = 8;
  spec.seed = 55;
  auto skel = Skeleton::preset17();
  auto data = Dataset::from_sequences(synthesize(spec, skel));
  Model<double> model(tiny_model(), skel, 109);
  auto report = evaluate_model(model, data);
  REQUIRE(report.rows.size() == 3);
  auto csv = report.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 3 rows + AVG

  // AVG equals the mean of the rows
  auto avg = report.average();
  double mean_mpjpe = 0;
  for (const auto& r : report.rows) mean_mpjpe += r.mpjpe / 3.0;
  CHECK(avg.mpjpe == doctest::Approx(mean_mpjpe).epsilon(1e-9));

  // ground-truth-as-prediction fixture: all error metrics vanish
  metrics::SequenceMetrics gt_row;
  auto gt = data.sequences[0].targets.cast<double>();
  CHECK(metrics::mpjpe(gt, gt) == 0.0);
  CHECK(metrics::p_mpjpe(gt, gt) <= 1e-9);
  CHECK(metrics::n_mpjpe(gt, gt) <= 1e-9);
  CHECK(metrics::mpjve(gt, gt) == 0.0);
  CHECK(metrics::accel_error(gt, gt) == 0.0);
  CHECK(metrics::blc(gt, gt, skel) == 0.0);
}
