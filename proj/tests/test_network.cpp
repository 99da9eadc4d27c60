#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "lpose/network.hpp"

using namespace lpose;
using ad::Tape;
using ad::Tensor;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.spatial_blocks = 2;
  cfg.windows = {2, 3};
  cfg.joints = 5;
  cfg.frames = 6;
  cfg.dropout = 0.0;
  return cfg;
}

Skeleton star5() { return Skeleton::from_parents({"r", "a", "b", "c", "d"}, {-1, 0, 0, 1, 2}); }

Tensor<double> random_inputs(int t, int j, unsigned seed) {
  std::mt19937_64 rng(seed);
  Tensor<double> in({t, j, 3});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> c(0.2, 1.0);
  for (int r = 0; r < t * j; ++r) {
    in.data[static_cast<std::size_t>(r * 3)] = u(rng);
    in.data[static_cast<std::size_t>(r * 3 + 1)] = u(rng);
    in.data[static_cast<std::size_t>(r * 3 + 2)] = c(rng);
  }
  return in;
}

}  // namespace

TEST_CASE("forward output shape and determinism") {
  auto cfg = small_config();
  Model<double> model(cfg, star5(), 3);
  auto in = random_inputs(cfg.frames, cfg.joints, 5);
  auto out1 = model.predict(in);
  CHECK(out1.shape == std::vector<int>{cfg.frames, cfg.joints, 3});
  auto out2 = model.predict(in);
  for (std::size_t i = 0; i < out1.numel(); ++i) CHECK(out1.data[i] == out2.data[i]);
}

TEST_CASE("forward accepts sequence lengths other than the nominal frames") {
  auto cfg = small_config();
  Model<double> model(cfg, star5(), 3);
  for (int t : {1, 2, 9}) {
    auto out = model.predict(random_inputs(t, cfg.joints, 7));
    CHECK(out.shape == std::vector<int>{t, cfg.joints, 3});
  }
  CHECK_THROWS_AS((void)model.predict(random_inputs(4, cfg.joints + 1, 7)), std::invalid_argument);
}

TEST_CASE("zeroed head weights give all-zero predictions") {
  auto cfg = small_config();
  Model<double> model(cfg, star5(), 11);
  auto& w1 = model.params().named("head.w1").value;
  auto& w2 = model.params().named("head.w2").value;
  w1 = Tensor<double>::zeros(w1.shape);
  w2 = Tensor<double>::zeros(w2.shape);
  auto out = model.predict(random_inputs(cfg.frames, cfg.joints, 13));
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("per-joint head weights are isolated") {
  auto cfg = small_config();
  Model<double> model(cfg, star5(), 17);
  auto in = random_inputs(cfg.frames, cfg.joints, 19);
  auto base = model.predict(in);
  auto& w1 = model.params().named("head.w1").value;
  const int per_joint = cfg.head_mlp_ratio * cfg.d * cfg.d;
  for (int k = 0; k < per_joint; ++k) w1.data[static_cast<std::size_t>(k)] += 0.05;  // joint 0 block
  auto perturbed = model.predict(in);
  for (int t = 0; t < cfg.frames; ++t)
    for (int j = 0; j < cfg.joints; ++j)
      for (int c = 0; c < 3; ++c) {
        std::size_t idx = static_cast<std::size_t>((t * cfg.joints + j) * 3 + c);
        if (j == 0)
          continue;  // joint 0 may change
        CHECK(base.data[idx] == perturbed.data[idx]);
      }
  bool joint0_changed = false;
  for (int t = 0; t < cfg.frames; ++t)
    for (int c = 0; c < 3; ++c)
      joint0_changed = joint0_changed ||
                       base.data[static_cast<std::size_t>(t * cfg.joints * 3 + c)] !=
                           perturbed.data[static_cast<std::size_t>(t * cfg.joints * 3 + c)];
  CHECK(joint0_changed);
}

TEST_CASE("time-constant input gives time-constant prediction") {
  auto cfg = small_config();
  Model<double> model(cfg, star5(), 23);
  Tensor<double> in({cfg.frames, cfg.joints, 3});
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int j = 0; j < cfg.joints; ++j) {
    double x = u(rng), y = u(rng);
    for (int t = 0; t < cfg.frames; ++t) {
      in.data[static_cast<std::size_t>((t * cfg.joints + j) * 3)] = x;
      in.data[static_cast<std::size_t>((t * cfg.joints + j) * 3 + 1)] = y;
      in.data[static_cast<std::size_t>((t * cfg.joints + j) * 3 + 2)] = 0.8;
    }
  }
  auto out = model.predict(in);
  for (int t = 1; t < cfg.frames; ++t)
    for (int r = 0; r < cfg.joints * 3; ++r)
      CHECK(out.data[static_cast<std::size_t>(t * cfg.joints * 3 + r)] ==
            doctest::Approx(out.data[static_cast<std::size_t>(r)]).epsilon(1e-12));
}

TEST_CASE("parameter counts match the closed form") {
  CHECK(ParamStore<double>().count() == 0);

  auto cfg = small_config();
  Model<double> model(cfg, star5(), 31);
  CHECK(model.parameter_count() == analytic_param_count(cfg));

  auto desk = ModelConfig::desk();
  Model<float> desk_model(desk, Skeleton::preset17(), 31);
  CHECK(desk_model.parameter_count() == analytic_param_count(desk));

  // hand-derived closed form for the small config:
  // embed: 16*2 + 16*2 + 2 + 5*16 = 146
  // spatial block: 3*16*16 + 2 + 2 + 6 + 32 + (64*16+64+16*64+16) + 32 = 2970
  // temporal block: 768 + 2 + 32 + 2128 + 32 = 2962
  // head: 32 + 5*(64*16 + 3*64) = 6112
  std::size_t expected = 146 + 2 * (2970 + 2962) + 6112;
  CHECK(model.parameter_count() == expected);
}

TEST_CASE("tangent flow: origin maps fire only at their designated sites") {
  auto cfg = small_config();
  Model<double> model(cfg, star5(), 37);
  auto in = random_inputs(cfg.frames, cfg.joints, 41);

  lorentz::reset_map_call_counts();
  (void)model.predict(in);
  const auto& counts = lorentz::map_call_counts();

  const auto rows = static_cast<std::uint64_t>(cfg.frames * cfg.joints);
  const auto lifts = static_cast<std::uint64_t>(cfg.spatial_blocks * cfg.heads) * 2u * rows;
  CHECK(counts.exp_origin[static_cast<int>(lorentz::MapSite::kAttentionLift)] == lifts);
  CHECK(counts.log_origin[static_cast<int>(lorentz::MapSite::kEmbedding)] == rows);
  CHECK(counts.exp_total() == lifts);
  CHECK(counts.log_total() == rows);
  lorentz::reset_map_call_counts();
}

TEST_CASE("sequence forwards are independent of evaluation order") {
  auto cfg = small_config();
  Model<double> model(cfg, star5(), 43);
  auto a = random_inputs(cfg.frames, cfg.joints, 47);
  auto b = random_inputs(cfg.frames, cfg.joints, 53);
  auto a_first = model.predict(a);
  (void)model.predict(b);
  auto a_second = model.predict(a);
  for (std::size_t i = 0; i < a_first.numel(); ++i) CHECK(a_first.data[i] == a_second.data[i]);
}

TEST_CASE("dropout only acts in training mode and follows the rng") {
  auto cfg = small_config();
  cfg.dropout = 0.3;
  Model<double> model(cfg, star5(), 59);
  auto in = random_inputs(cfg.frames, cfg.joints, 61);

  // eval mode: deterministic, no rng needed
  auto e1 = model.predict(in);
  auto e2 = model.predict(in);
  for (std::size_t i = 0; i < e1.numel(); ++i) CHECK(e1.data[i] == e2.data[i]);

  auto train_forward = [&](unsigned seed) {
    Tape<double> tape;
    auto vars = model.bind(tape, false);
    std::mt19937_64 rng(seed);
    ForwardOptions<double> opts;
    opts.training = true;
    opts.rng = &rng;
    return model.forward(tape, vars, in, opts).prediction.val();
  };
  auto t1 = train_forward(7), t2 = train_forward(7), t3 = train_forward(8);
  for (std::size_t i = 0; i < t1.numel(); ++i) CHECK(t1.data[i] == t2.data[i]);
  bool differs = false;
  for (std::size_t i = 0; i < t1.numel(); ++i) differs = differs || t1.data[i] != t3.data[i];
  CHECK(differs);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  auto cfg = small_config();
  Model<float> model(cfg, star5(), 67);
  const char* path1 = "ckpt_roundtrip_1.bin";
  const char* path2 = "ckpt_roundtrip_2.bin";
  model.save_checkpoint(path1);

  Model<float> twin(cfg, star5(), 1234);  // different init, same structure
  twin.load_checkpoint(path1);
  for (std::size_t e = 0; e < model.params().size(); ++e) {
    const auto& a = model.params().at(static_cast<int>(e)).value;
    const auto& b = twin.params().at(static_cast<int>(e)).value;
    REQUIRE(a.shape == b.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data[i] == b.data[i]);
  }
  twin.save_checkpoint(path2);

  // byte-identical files
  auto slurp = [](const char* p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(path1) == slurp(path2));

  // structural mismatches are rejected
  auto other_cfg = cfg;
  other_cfg.d = 32;
  Model<float> bigger(other_cfg, star5(), 2);
  CHECK_THROWS_AS(bigger.load_checkpoint(path1), std::runtime_error);

  std::remove(path1);
  std::remove(path2);
}

TEST_CASE("model config json round-trip and validation") {
  auto cfg = small_config();
  cfg.shared_lambda = true;
  auto round = model_config_from_json(model_config_to_json(cfg));
  CHECK(round.d == cfg.d);
  CHECK(round.windows == cfg.windows);
  CHECK(round.shared_lambda == cfg.shared_lambda);
  CHECK(round.dropout == cfg.dropout);

  ModelConfig bad;
  bad.d = 10;
  bad.heads = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  ModelConfig bad2;
  bad2.windows = {3};
  CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
}
