#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "dcst/config.hpp"
#include "dcst/model.hpp"
#include "grad_harness.hpp"
#include "pipeline_check.hpp"

namespace dcst {
namespace {

using testing::check_gradients;

std::array<TokenGrid, 4> ladder(std::int64_t n, std::int64_t h, std::int64_t c, Rng& rng,
                                bool grad = false) {
  std::array<TokenGrid, 4> f;
  for (int s = 0; s < 4; ++s) {
    const auto hs = h >> s;
    f[s] = TokenGrid::wrap(uniform_tensor({n, hs * hs, c << s}, rng, -1, 1, grad), hs, hs);
  }
  return f;
}

TEST(FpnDecoder, FusedShape) {
  Rng rng(0);
  FpnConfig cfg;
  FpnDecoder fpn({8, 16, 32, 64}, cfg, rng);
  auto fused = fpn.fuse(ladder(1, 16, 8, rng));
  EXPECT_EQ(fused.shape(), (Shape{1, 256, 16, 16}));
}

TEST(FpnDecoder, ZeroCoarseLevelsReduceToFinestLateral) {
  Rng rng(1);
  FpnConfig cfg;
  cfg.lateral_dim = 12;
  FpnDecoder fpn({4, 8, 16, 32}, cfg, rng);
  auto f = ladder(1, 8, 4, rng);
  for (int s = 1; s < 4; ++s) f[s].tokens = Tensor::zeros(f[s].tokens.shape());
  auto fused = fpn.fuse(f);
  auto want = fpn.smooth(fpn.lateral[0](tokens_to_map(f[0])));
  ASSERT_EQ(fused.shape(), want.shape());
  for (std::int64_t i = 0; i < want.numel(); ++i) ASSERT_NEAR(fused[i], want[i], 1e-6);
}

TEST(FpnDecoder, GradientReachesEveryStage) {
  Rng rng(2);
  FpnConfig cfg;
  cfg.lateral_dim = 8;
  FpnDecoder fpn({4, 8, 16, 32}, cfg, rng);
  auto f = ladder(1, 8, 4, rng, true);
  sum(fpn.fuse(f)).backward();
  for (int s = 0; s < 4; ++s) {
    double mag = 0.0;
    for (float g : f[s].tokens.grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0) << "stage " << s + 1;
  }
}

TEST(FpnDecoder, RejectsBrokenLadder) {
  Rng rng(3);
  FpnDecoder fpn({4, 8, 16, 32}, FpnConfig{}, rng);
  auto f = ladder(1, 8, 4, rng);
  f[2] = TokenGrid::wrap(Tensor::zeros({1, 9, 16}), 3, 3);
  EXPECT_THROW(fpn.fuse(f), ShapeError);
  auto g = ladder(1, 8, 2, rng);  // wrong channels
  EXPECT_THROW(fpn.fuse(g), ShapeError);
}

TEST(SegHead, UpsamplesFourTimesIntoOpenUnitInterval) {
  Rng rng(4);
  SegHead head(16, 8, rng);
  auto x = uniform_tensor({2, 16, 5, 7}, rng, -30, 30);
  auto y = head.forward(x);
  EXPECT_EQ(y.shape(), (Shape{2, 1, 20, 28}));
  for (float v : y.data()) {
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
}

TEST(SegHead, ZeroLogitsGiveOneHalf) {
  Rng rng(5);
  SegHead head(4, 4, rng);
  for (auto* t : {&head.deconv2_weight, &head.deconv2_bias})
    for (auto& v : t->mutable_data()) v = 0.0f;
  auto y = head.forward(uniform_tensor({1, 4, 4, 4}, rng));
  for (float v : y.data()) ASSERT_EQ(v, 0.5f);
}

ModelConfig micro_config() {
  ModelConfig c;
  c.encoder.embed_dim = 8;
  c.encoder.depths = {1, 1, 1, 1};
  c.encoder.heads = {1, 2, 4, 8};
  c.encoder.window = 4;
  c.encoder.image_h = c.encoder.image_w = 32;
  c.dcb.stages = {3, 4};
  c.fpn.lateral_dim = 8;
  c.fpn.head_dim = 4;
  return c;
}

TEST(DcstModel, OutputMatchesInputSize) {
  DcstModel model(micro_config(), 1);
  Rng rng(0);
  const std::int64_t sizes[][2] = {{32, 32}, {64, 96}, {8, 8}, {40, 27}};
  for (const auto& s : sizes) {
    auto y = model.forward(uniform_tensor({1, 3, s[0], s[1]}, rng), Mode::eval);
    EXPECT_EQ(y.shape(), (Shape{1, 1, s[0], s[1]}));
    for (float v : y.data()) {
      ASSERT_GT(v, 0.0f);
      ASSERT_LT(v, 1.0f);
    }
  }
  EXPECT_THROW(model.forward(Tensor::zeros({1, 1, 32, 32}), Mode::eval), ShapeError);
}

TEST(DcstModel, ParameterGroupsAudit) {
  DcstModel model(ModelConfig::toy(), 3);
  std::int64_t dcb = 0;
  for (const auto& p : model.parameters().params()) {
    const bool in_dcb = p.name.find(".dcb.") != std::string::npos;
    EXPECT_EQ(p.group == ParamGroup::dcb, in_dcb) << p.name;
    dcb += in_dcb ? p.tensor.numel() : 0;
  }
  // toy widths at stages 3 and 4 are 128 and 256
  EXPECT_EQ(dcb, 2 * (128 * 128 * 9 + 2 * 128) + 2 * (256 * 256 * 9 + 2 * 256));
}

TEST(DcstModel, SeedDeterminesWeights) {
  DcstModel a(micro_config(), 9), b(micro_config(), 9), c(micro_config(), 10);
  const auto& pa = a.parameters().params();
  const auto& pb = b.parameters().params();
  const auto& pc = c.parameters().params();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    auto x = pa[i].tensor.data(), y = pb[i].tensor.data(), z = pc[i].tensor.data();
    ASSERT_EQ(std::memcmp(x.data(), y.data(), x.size_bytes()), 0);
    any_diff |= std::memcmp(x.data(), z.data(), x.size_bytes()) != 0;
  }
  EXPECT_TRUE(any_diff);
}

TEST(DcstModel, StateRoundTrip) {
  DcstModel a(micro_config(), 1);
  Rng rng(2);
  auto img = uniform_tensor({2, 3, 32, 32}, rng);
  a.forward(img, Mode::train);  // move BN running stats away from init
  Checkpoint ckpt;
  a.export_state(ckpt);
  auto path = std::filesystem::temp_directory_path() / "dcst_model_roundtrip.ckpt";
  save_checkpoint(path, ckpt);
  auto b = DcstModel::from_checkpoint(load_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_EQ(b.config().encoder.embed_dim, 8);
  EXPECT_EQ(b.config().dcb.stages, (std::vector<int>{3, 4}));
  auto ya = a.forward(img, Mode::eval), yb = b.forward(img, Mode::eval);
  for (std::int64_t i = 0; i < ya.numel(); ++i) ASSERT_EQ(ya[i], yb[i]);

  Checkpoint broken = ckpt;
  broken.tensors.erase(broken.tensors.begin());
  EXPECT_THROW(b.import_state(broken), ConfigError);
  DcstModel other(ModelConfig::toy(), 0);
  EXPECT_THROW(other.import_state(ckpt), ConfigError);
}

TEST(DcstModel, PlainEncoderHasNoDcbParameters) {
  auto cfg = micro_config();
  cfg.dcb.stages.clear();
  DcstModel m(cfg, 0);
  for (const auto& p : m.parameters().params()) EXPECT_EQ(p.group, ParamGroup::main) << p.name;
  EXPECT_TRUE(m.parameters().buffers().empty());
}

// Whole pipeline on an 8x8 input: image and a few parameters deep inside the
// network against finite differences on sampled coordinates.
TEST(DcstModel, PipelineGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto res = testing::pipeline_gradient_check(seed);
    for (std::size_t i = 0; i < res.reports.size(); ++i) {
      const auto& r = res.reports[i];
      EXPECT_LT(r.error, 1e-2) << res.names[i] << " seed " << seed;
    }
  }
}

TEST(ModelConfig, KeyValueRoundTrip) {
  auto cfg = micro_config();
  cfg.dcb.rates = {2, 5};
  KeyValueConfig kv;
  cfg.to_config(kv);
  auto back = ModelConfig::from_config(KeyValueConfig::parse_string(kv.to_string()));
  EXPECT_EQ(back.encoder.embed_dim, 8);
  EXPECT_EQ(back.encoder.depths, cfg.encoder.depths);
  EXPECT_EQ(back.encoder.heads, cfg.encoder.heads);
  EXPECT_EQ(back.dcb.rates, cfg.dcb.rates);
  EXPECT_EQ(back.dcb.stages, cfg.dcb.stages);
  EXPECT_EQ(back.fpn.head_dim, 4);
}

TEST(ModelConfig, PresetsAndOverrides) {
  auto full = ModelConfig::from_config(KeyValueConfig::parse_string("model.preset = full\n"));
  EXPECT_EQ(full.encoder.embed_dim, 128);
  EXPECT_EQ(full.encoder.depths, (std::array<int, 4>{2, 2, 18, 2}));
  EXPECT_EQ(full.encoder.window, 7);
  auto kv = KeyValueConfig::parse_string("dcb.stages = []\nmodel.window = 2\n");
  auto toy = ModelConfig::from_config(kv);
  EXPECT_TRUE(toy.dcb.stages.empty());
  EXPECT_EQ(toy.encoder.window, 2);
  EXPECT_EQ(toy.encoder.embed_dim, 32);
  EXPECT_THROW(ModelConfig::from_config(KeyValueConfig::parse_string("model.preset = huge")),
               ConfigError);
  EXPECT_THROW(ModelConfig::from_config(KeyValueConfig::parse_string("model.depths = [1,2]")),
               ConfigError);
}

TEST(KeyValueConfig, ParsesCommentsListsAndReportsLines) {
  auto kv = KeyValueConfig::parse_string(
      "# comment\n\n  train.lr = 1e-3 \nlist = [1, 2,3]\nbare = 4,5\nempty = []\nflag = yes\n");
  EXPECT_DOUBLE_EQ(kv.get_double("train.lr", 0), 1e-3);
  EXPECT_EQ(kv.get_int_list("list", {}), (std::vector<std::int64_t>{1, 2, 3}));
  EXPECT_EQ(kv.get_int_list("bare", {}), (std::vector<std::int64_t>{4, 5}));
  EXPECT_TRUE(kv.get_int_list("empty", {7}).empty());
  EXPECT_TRUE(kv.get_bool("flag", false));
  EXPECT_EQ(kv.get_int("missing", 42), 42);
  EXPECT_THROW(kv.get_int("train.lr", 0), ConfigError);
  EXPECT_THROW(kv.check_known({"train.lr"}), ConfigError);
  try {
    KeyValueConfig::parse_string("a = 1\nno equals here\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(KeyValueConfig, DoublesSurviveRoundTrip) {
  KeyValueConfig kv;
  kv.set("a", 0.1 + 0.2);
  kv.set("grid", std::vector<double>{0.3, 0.32});
  auto back = KeyValueConfig::parse_string(kv.to_string());
  EXPECT_EQ(back.get_double("a", 0), 0.1 + 0.2);
  EXPECT_EQ(back.get_double_list("grid", {}), (std::vector<double>{0.3, 0.32}));
}

}  // namespace
}  // namespace dcst
