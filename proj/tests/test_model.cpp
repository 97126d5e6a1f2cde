#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "fmvit/checkpoint.hpp"
#include "fmvit/gradcheck.hpp"
#include "fmvit/model.hpp"
#include "fmvit/ops.hpp"
#include "test_util.hpp"

using namespace fmvit;
using testutil::tiny_config;

namespace {

Tensor randn(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

void zero_linear(LinearParams& p) {
  for (auto& v : p.weight.mutable_data()) v = 0.0;
  for (auto& v : p.bias.mutable_data()) v = 0.0;
}

ModelParams random_params(const ModelConfig& c, std::uint64_t seed, double sd = 0.5) {
  ModelParams p = init_params(c, seed);
  testutil::randomize(p, c, seed + 1000, sd);
  return p;
}

}  // namespace

TEST(Tokenize, Geometry) {
  ModelConfig big;
  big.image_height = big.image_width = 224;
  EXPECT_EQ(big.patches(), 196u);
  EXPECT_EQ(big.tokens(), 197u);

  const ModelConfig c = tiny_config();
  EXPECT_EQ(c.patches(), 4u);
  EXPECT_EQ(c.tokens(), 5u);
  std::mt19937_64 rng(1);
  const ModelParams p = init_params(c, 1);
  const ModalSequence z = tokenize(testutil::random_image(c, rng), Modality::rgb, p.branches[0], c);
  EXPECT_EQ(z.tokens.shape(), (Shape{5, 8}));
  EXPECT_THROW(tokenize(Tensor::zeros({16, 32, 1}), Modality::rgb, p.branches[0], c), ShapeError);
}

TEST(Tokenize, PatchOrderIsRowMajor) {
  ModelConfig c = tiny_config();
  c.image_height = c.image_width = 4;
  c.patch = 2;
  std::vector<double> px(16);
  for (std::size_t i = 0; i < 16; ++i) px[i] = static_cast<double>(i);
  const Tensor patches = patchify(Tensor({4, 4, 1}, px), c);
  EXPECT_EQ(patches.shape(), (Shape{4, 4}));
  const double expect[4][4] = {{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}};
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(patches.at(t, f), expect[t][f]);
}

TEST(Tokenize, ZeroImageGivesZeroPatchTokensAndLearnedCls) {
  const ModelConfig c = tiny_config();
  ModelParams p = init_params(c, 2);
  std::mt19937_64 rng(2);
  p.branches[0].cls = randn({1, 8}, rng);
  const ModalSequence z = tokenize(Tensor::zeros({32, 32, 1}), Modality::rgb, p.branches[0], c);
  for (std::size_t col = 0; col < 8; ++col) EXPECT_EQ(z.tokens.at(0, col), p.branches[0].cls.at(col));
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t col = 0; col < 8; ++col) EXPECT_EQ(z.tokens.at(r, col), 0.0);
}

TEST(Stb, ZeroWeightsLeaveOnlyBiasPath) {
  const ModelConfig c = tiny_config();
  ModelParams params = init_params(c, 3);
  StbParams stb = params.branches[0].stages[0][0];
  for (auto* lp : {&stb.attn.query, &stb.attn.key, &stb.attn.value, &stb.attn.output, &stb.mlp.fc1, &stb.mlp.fc2})
    zero_linear(*lp);
  std::mt19937_64 rng(3);
  const Tensor bo = randn({8}, rng), b2 = randn({8}, rng);
  stb.attn.output.bias = bo;
  stb.mlp.fc2.bias = b2;
  const ModalSequence z{Modality::rgb, randn({5, 8}, rng)};
  const ModalSequence out = stb_forward(z, stb);
  EXPECT_EQ(out.tokens.shape(), z.tokens.shape());
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t col = 0; col < 8; ++col)
      EXPECT_NEAR(out.tokens.at(r, col), z.tokens.at(r, col) + bo.at(col) + b2.at(col), 1e-14);
}

TEST(Stb, GradientCheck) {
  const ModelConfig c = tiny_config();
  ModelParams params = random_params(c, 4);
  const StbParams& stb = params.branches[0].stages[0][0];
  std::mt19937_64 rng(4);
  const Tensor z = randn({5, 8}, rng);
  Tensor w = randn({5, 8}, rng);
  w.set_requires_grad(false);
  auto f = [&] { return sum(mul(stb_forward({Modality::rgb, z}, stb).tokens, w)); };
  GradCheckOptions opt;
  opt.tolerance = 1e-4;
  opt.floor = 1e-5;
  for (const Tensor& x : {z, stb.attn_norm.gamma, stb.attn.query.weight, stb.attn.value.bias, stb.mlp_norm.beta,
                          stb.mlp.fc1.weight, stb.mlp.fc2.weight}) {
    const auto r = finite_diff_check(f, x, opt);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
  }
}

TEST(Cmtb, TwoModalitiesSwapPartnersWithoutRandomness) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 5);
  std::mt19937_64 rng(5);
  const std::vector<ModalSequence> zs{{Modality::rgb, randn({5, 8}, rng)}, {Modality::depth, randn({5, 8}, rng)}};
  std::mt19937_64 used(99), fresh(99);
  CmtbTrace trace;
  const auto out = cmtb_forward(zs, params.cmtb[0], 0.5, used, &trace);
  EXPECT_EQ(trace.partners, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(used(), fresh());
  ASSERT_EQ(out.size(), 2u);
  for (const auto& z : out) EXPECT_EQ(z.tokens.shape(), (Shape{5, 8}));
}

TEST(Cmtb, SingleModalityIsItsOwnPartner) {
  ModelConfig c = tiny_config();
  c.modalities = {Modality::rgb};
  const ModelParams params = random_params(c, 6);
  std::mt19937_64 rng(6);
  const std::vector<ModalSequence> zs{{Modality::rgb, randn({5, 8}, rng)}};
  CmtbTrace trace;
  (void)cmtb_forward(zs, params.cmtb[0], 0.5, rng, &trace);
  EXPECT_EQ(trace.partners, (std::vector<std::size_t>{0}));
  EXPECT_EQ(trace.accumulated, trace.masks[0]);
  EXPECT_THROW(cmtb_forward(std::span<const ModalSequence>{}, params.cmtb[0], 0.5, rng), std::invalid_argument);
}

TEST(Cmtb, ThreeModalityPartnersReproducible) {
  ModelConfig c = tiny_config();
  c.modalities = {Modality::rgb, Modality::depth, Modality::nir};
  const ModelParams params = random_params(c, 7);
  std::mt19937_64 rng(7);
  std::vector<ModalSequence> zs;
  for (auto m : c.modalities) zs.push_back({m, randn({5, 8}, rng)});

  auto record = [&](std::uint64_t seed) {
    std::mt19937_64 r(seed);
    std::vector<std::size_t> all;
    for (int step = 0; step < 30; ++step) {
      CmtbTrace trace;
      (void)cmtb_forward(zs, params.cmtb[0], 0.5, r, &trace);
      for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NE(trace.partners[i], i);
        all.push_back(trace.partners[i]);
      }
    }
    return all;
  };
  const auto a = record(11), b = record(11), other = record(12);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, other);
  // Both candidates show up for every branch.
  for (std::size_t i = 0; i < 3; ++i) {
    std::set<std::size_t> seen;
    for (std::size_t k = i; k < a.size(); k += 3) seen.insert(a[k]);
    EXPECT_EQ(seen.size(), 2u);
  }
}

TEST(Cmtb, ReplicatedInputAccumulatesToSameSupport) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 8);
  std::mt19937_64 rng(8);
  const Tensor t = randn({5, 8}, rng);
  const std::vector<ModalSequence> zs{{Modality::rgb, t}, {Modality::depth, t}};
  CmtbTrace trace;
  (void)cmtb_forward(zs, params.cmtb[0], 0.5, rng, &trace);
  EXPECT_EQ(trace.masks[0], trace.masks[1]);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(trace.accumulated.support(h), trace.masks[0].support(h));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(trace.accumulated.selected(h, j), trace.masks[0].selected(h, j));
  }
}

TEST(Cmtb, PatchTokensPassThrough) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 9);
  std::mt19937_64 rng(9);
  const std::vector<ModalSequence> zs{{Modality::rgb, randn({5, 8}, rng)}, {Modality::depth, randn({5, 8}, rng)}};
  const auto out = cmtb_forward(zs, params.cmtb[0], 0.5, rng);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t r = 1; r < 5; ++r)
      for (std::size_t col = 0; col < 8; ++col) EXPECT_EQ(out[b].tokens.at(r, col), zs[b].tokens.at(r, col));
}

TEST(Forward, LogitCountAndMissingModality) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 10);
  std::mt19937_64 rng(10);
  const ForwardResult out = forward(testutil::random_images(c, rng), params, c, rng);
  EXPECT_EQ(out.logits.size() + (out.joint_logit ? 1 : 0), 3u);
  for (const auto& l : out.logits) EXPECT_EQ(l.shape(), (Shape{1}));

  ImageSet partial;
  partial.emplace(Modality::rgb, testutil::random_image(c, rng));
  EXPECT_THROW(forward(partial, params, c, rng), std::invalid_argument);
}

TEST(Forward, SingleStageWithoutStbs) {
  ModelConfig c = tiny_config();
  c.stbs_per_stage = {0};
  const ModelParams params = random_params(c, 11);
  std::mt19937_64 rng(11);
  ForwardTrace trace;
  const ForwardResult out = forward(testutil::random_images(c, rng), params, c, rng, &trace);
  EXPECT_EQ(trace.stages.size(), 1u);
  ASSERT_TRUE(out.joint_logit.has_value());
  EXPECT_TRUE(std::isfinite(out.joint_logit->item()));
}

TEST(Forward, ZeroedCmtbOutputsEqualIndependentVits) {
  const ModelConfig c = tiny_config();
  ModelParams fm = random_params(c, 12);
  for (auto& cm : fm.cmtb) {
    zero_linear(cm.mma.output);
    zero_linear(cm.mfa.output);
  }
  ModelConfig plain = c;
  plain.cross_modal = false;
  ModelParams vit;
  vit.branches = fm.branches;

  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const ImageSet images = testutil::random_images(c, rng);
    std::mt19937_64 r1(trial), r2(trial);
    const ForwardResult a = forward(images, fm, c, r1), b = forward(images, vit, plain, r2);
    EXPECT_FALSE(b.joint_logit.has_value());
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(a.logits[i].item(), b.logits[i].item(), 1e-12);
  }
}

TEST(TotalLoss, ExactSums) {
  ForwardResult zero;
  zero.logits = {Tensor({1}, {0.0}), Tensor({1}, {0.0})};
  zero.joint_logit = Tensor({1}, {0.0});
  EXPECT_NEAR(total_loss(zero, 1).item(), 3.0 * std::log(2.0), 1e-15);

  ForwardResult sure;
  sure.logits = {Tensor({1}, {20.0}), Tensor({1}, {20.0})};
  sure.joint_logit = Tensor({1}, {20.0});
  EXPECT_LE(total_loss(sure, 1).item(), 1e-7);
  sure.logits = {Tensor({1}, {-20.0}), Tensor({1}, {-20.0})};
  sure.joint_logit = Tensor({1}, {-20.0});
  EXPECT_LE(total_loss(sure, 0).item(), 1e-7);

  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 13);
  std::mt19937_64 rng(13);
  const ForwardResult out = forward(testutil::random_images(c, rng), params, c, rng);
  for (int y : {0, 1}) {
    double manual = 0.0;
    for (const auto& l : out.logits) manual += softplus(y ? -l.item() : l.item());
    manual += softplus(y ? -out.joint_logit->item() : out.joint_logit->item());
    EXPECT_NEAR(total_loss(out, y).item(), manual, 1e-12);
  }
  EXPECT_THROW(total_loss(out, 2), DomainError);
}

TEST(PredictFlexible, SingleModalIsReplicatedAndReportedByItsHead) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 14);
  std::mt19937_64 rng(14);
  const Tensor img = testutil::random_image(c, rng);
  for (auto m : c.modalities) {
    ImageSet one{{m, img}};
    std::mt19937_64 r1(1), r2(1);
    const FlexiblePrediction p = predict_flexible(one, params, c, r1);
    ASSERT_TRUE(p.reported_branch.has_value());
    EXPECT_EQ(*p.reported_branch, c.branch_index(m));
    EXPECT_EQ(p.score, p.branch_scores[c.branch_index(m)]);
    const ForwardResult manual = forward({{Modality::rgb, img}, {Modality::depth, img}}, params, c, r2);
    EXPECT_EQ(p.score, sigmoid(manual.logits[c.branch_index(m)].item()));
  }
}

TEST(PredictFlexible, MultiModalUsesJointHeadAndIsDeterministic) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 15);
  std::mt19937_64 rng(15);
  const ImageSet both = testutil::random_images(c, rng);
  std::mt19937_64 r1(3), r2(3);
  const FlexiblePrediction a = predict_flexible(both, params, c, r1), b = predict_flexible(both, params, c, r2);
  EXPECT_FALSE(a.reported_branch.has_value());
  EXPECT_EQ(a.score, *a.joint_score);
  EXPECT_EQ(a.score, b.score);
  EXPECT_GE(a.score, 0.0);
  EXPECT_LE(a.score, 1.0);

  ImageSet one{{Modality::depth, both.at(Modality::depth)}};
  std::mt19937_64 r3(3), r4(3);
  EXPECT_EQ(predict_flexible(one, params, c, r3).score, predict_flexible(one, params, c, r4).score);

  ImageSet unknown{{Modality::nir, both.at(Modality::rgb)}};
  EXPECT_THROW(predict_flexible(unknown, params, c, r1), std::invalid_argument);
  EXPECT_THROW(predict_flexible({}, params, c, r1), std::invalid_argument);
}

TEST(PredictFlexible, WithoutJointHeadAveragesSuppliedHeads) {
  ModelConfig c = tiny_config();
  c.cross_modal = false;
  const ModelParams params = random_params(c, 16);
  std::mt19937_64 rng(16);
  const ImageSet both = testutil::random_images(c, rng);
  const FlexiblePrediction p = predict_flexible(both, params, c, rng);
  EXPECT_NEAR(p.score, 0.5 * (p.branch_scores[0] + p.branch_scores[1]), 1e-15);
}

TEST(ParamCount, ZeroLayerToyByEnumeration) {
  ModelConfig c = tiny_config();
  c.modalities = {Modality::rgb};
  c.stbs_per_stage = {0};
  c.cross_modal = false;
  const std::size_t d = c.dim, f = c.patch_features(), n = c.tokens();
  const std::size_t expect = (f * d + d) + d + n * d + 2 * d + (d + 1);
  EXPECT_EQ(param_count(c), expect);
  const ModelParams p = init_params(c, 0);
  EXPECT_EQ(param_count(p), expect);
  std::size_t enumerated = 0;
  for (const auto& nt : p.named_tensors(c)) enumerated += nt.tensor.numel();
  EXPECT_EQ(enumerated, expect);
}

TEST(ParamCount, ClosedFormMatchesAllocation) {
  const std::vector<ModelConfig> configs = [] {
    std::vector<ModelConfig> out;
    ModelConfig a = tiny_config();
    out.push_back(a);
    a.cross_modal = false;
    out.push_back(a);
    ModelConfig b = tiny_config();
    b.modalities = {Modality::rgb, Modality::depth, Modality::nir, Modality::thermal};
    b.stbs_per_stage = {2, 0, 3};
    b.channels = 3;
    b.mlp_ratio = 4;
    out.push_back(b);
    return out;
  }();
  for (const auto& c : configs) {
    const ModelParams p = init_params(c, 1);
    std::size_t enumerated = 0;
    for (const auto& nt : p.named_tensors(c)) enumerated += nt.tensor.numel();
    EXPECT_EQ(param_count(c), param_count(p));
    EXPECT_EQ(param_count(p), enumerated);
  }
}

TEST(ParamCount, SharedCmtbIsStoredOncePerStage) {
  const ModelConfig c = tiny_config();
  const ModelParams p = init_params(c, 1);
  EXPECT_EQ(p.cmtb.size(), c.stages());
  ModelConfig plain = c;
  plain.cross_modal = false;
  const std::size_t d = c.dim, attn = 4 * (d * d + d), norms = 2 * (2 * d);
  const std::size_t joint = 2 * (2 * d) + (2 * d + 1);
  EXPECT_EQ(param_count(c) - param_count(plain), c.stages() * (2 * attn + norms) + joint);
}

TEST(Checkpoint, RoundTripIsByteExact) {
  const ModelConfig c = tiny_config();
  const ModelParams p = random_params(c, 17);
  const auto dir = testutil::scratch_dir("ckpt");
  save_checkpoint(dir / "a.fmvt", p, c);
  const ModelParams q = load_checkpoint(dir / "a.fmvt", c);
  save_checkpoint(dir / "b.fmvt", q, c);
  EXPECT_EQ(testutil::read_bytes(dir / "a.fmvt"), testutil::read_bytes(dir / "b.fmvt"));
  const auto pa = p.named_tensors(c), qa = q.named_tensors(c);
  ASSERT_EQ(pa.size(), qa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, qa[i].name);
    for (std::size_t k = 0; k < pa[i].tensor.numel(); ++k) EXPECT_EQ(pa[i].tensor.at(k), qa[i].tensor.at(k));
  }
  const std::string bytes = testutil::read_bytes(dir / "a.fmvt");
  EXPECT_EQ(bytes.rfind("FMVT1 " + std::to_string(param_count(c)) + "\n", 0), 0u);
}

TEST(Checkpoint, RejectsDamagedOrMismatchedFiles) {
  const ModelConfig c = tiny_config();
  const ModelParams p = random_params(c, 18);
  const auto dir = testutil::scratch_dir("ckpt_bad");
  save_checkpoint(dir / "good.fmvt", p, c);
  const std::string bytes = testutil::read_bytes(dir / "good.fmvt");

  testutil::write_bytes(dir / "magic.fmvt", "FMVT2" + bytes.substr(5));
  EXPECT_THROW(load_checkpoint(dir / "magic.fmvt", c), FormatError);
  testutil::write_bytes(dir / "short.fmvt", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(dir / "short.fmvt", c), FormatError);
  testutil::write_bytes(dir / "empty.fmvt", "");
  EXPECT_THROW(load_checkpoint(dir / "empty.fmvt", c), FormatError);

  ModelConfig wider = c;
  wider.dim = 12;
  EXPECT_THROW(load_checkpoint(dir / "good.fmvt", wider), FormatError);
  ModelConfig three = c;
  three.modalities.push_back(Modality::nir);
  EXPECT_THROW(load_checkpoint(dir / "good.fmvt", three), FormatError);
}
