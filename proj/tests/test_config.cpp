#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "fmvit/config.hpp"
#include "fmvit/trainer.hpp"

using namespace fmvit;

namespace {

ConfigEntries parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

// Sets an environment variable for the lifetime of the guard.
struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) {
      setenv("FMVIT_SEED", value, 1);
    } else {
      unsetenv("FMVIT_SEED");
    }
  }
  ~EnvGuard() { unsetenv("FMVIT_SEED"); }
};

}  // namespace

TEST(ConfigText, ParsesCommentsWhitespaceAndOrder) {
  const ConfigEntries e = parse("# model\n\n dim = 16 \nheads=2  # trailing\nmodalities=r,d\n");
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0], (std::pair<std::string, std::string>{"dim", "16"}));
  EXPECT_EQ(e[1].second, "2");
  EXPECT_EQ(e[2].second, "r,d");
}

TEST(ConfigText, RejectsMalformedLines) {
  EXPECT_THROW(parse("dim 16\n"), ConfigError);
  EXPECT_THROW(parse("=16\n"), ConfigError);
  EXPECT_THROW(parse("dim=1\ndim=2\n"), ConfigError);
}

TEST(ModelConfigText, RoundTripAndDefaults) {
  ModelConfig c;
  c.image_height = 64;
  c.image_width = 48;
  c.channels = 3;
  c.dim = 24;
  c.heads = 3;
  c.stbs_per_stage = {2, 0, 1};
  c.lambda = 0.3;
  c.modalities = {Modality::thermal, Modality::rgb};
  c.cross_modal = false;
  const ModelConfig back = model_config_from(parse(render_config(model_config_entries(c))));
  EXPECT_EQ(back.image_height, 64u);
  EXPECT_EQ(back.image_width, 48u);
  EXPECT_EQ(back.channels, 3u);
  EXPECT_EQ(back.dim, 24u);
  EXPECT_EQ(back.heads, 3u);
  EXPECT_EQ(back.stbs_per_stage, c.stbs_per_stage);
  EXPECT_EQ(back.lambda, 0.3);
  EXPECT_EQ(back.modalities, c.modalities);
  EXPECT_FALSE(back.cross_modal);

  const ModelConfig partial = model_config_from(parse("dim=32\n"));
  EXPECT_EQ(partial.dim, 32u);
  EXPECT_EQ(partial.heads, ModelConfig{}.heads);
}

TEST(ModelConfigText, RejectsBadValues) {
  EXPECT_THROW(model_config_from(parse("dimm=16\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("dim=sixteen\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("dim=-4\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("lambda=0.5x\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("lambda=1.5\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("dim=10\nheads=3\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("patch=5\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("modalities=r,x\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("modalities=r,r\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("cross_modal=maybe\n")), ConfigError);
}

TEST(TrainConfigText, RoundTripAndValidation) {
  TrainConfig t;
  t.lr = 3e-4;
  t.batch_size = 4;
  t.seed = 0xFFFFFFFFFFull;
  t.threshold = ThresholdRule::bpcer;
  t.bpcer_target = 0.05;
  const TrainConfig back = train_config_from(parse(render_config(train_config_entries(t))));
  EXPECT_EQ(back.lr, 3e-4);
  EXPECT_EQ(back.batch_size, 4u);
  EXPECT_EQ(back.seed, t.seed);
  EXPECT_EQ(back.threshold, ThresholdRule::bpcer);
  EXPECT_EQ(back.bpcer_target, 0.05);

  EXPECT_NO_THROW(train_config_from(parse("lr=0\n")));
  EXPECT_THROW(train_config_from(parse("lr=-1\n")), ConfigError);
  EXPECT_THROW(train_config_from(parse("batch_size=0\n")), ConfigError);
  EXPECT_THROW(train_config_from(parse("beta1=1\n")), ConfigError);
  EXPECT_THROW(train_config_from(parse("adam_eps=0\n")), ConfigError);
  EXPECT_THROW(train_config_from(parse("threshold=median\n")), ConfigError);
}

TEST(SpecText, RoundTripAndValidation) {
  SyntheticSpec s;
  s.image_size = 16;
  s.rho = {0.9, 0.7};
  s.alpha = {0.5};
  s.sigma = 0.25;
  s.seed = 42;
  const SyntheticSpec back = spec_from(parse(render_config(spec_to_entries(s))));
  EXPECT_EQ(back.image_size, 16u);
  EXPECT_EQ(back.rho, s.rho);
  EXPECT_EQ(back.alpha, s.alpha);
  EXPECT_EQ(back.sigma, 0.25);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_THROW(spec_from(parse("rho=0.3\n")), ConfigError);
  EXPECT_THROW(spec_from(parse("image_size=7\n")), ConfigError);
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(1e-4), "0.0001");
  for (double v : {0.1 + 0.2, 1.0 / 3.0, 6.02214076e23, -2.5e-300}) EXPECT_EQ(std::stod(format_double(v)), v);
}

TEST(ConfigHash, StableAndSensitive) {
  const ConfigEntries a = model_config_entries(ModelConfig{});
  EXPECT_EQ(config_hash(a), config_hash(model_config_entries(ModelConfig{})));
  // FNV-1a of the empty rendering is the offset basis.
  EXPECT_EQ(config_hash({}), 0xcbf29ce484222325ull);
  ModelConfig other;
  other.lambda = 0.6;
  EXPECT_NE(config_hash(a), config_hash(model_config_entries(other)));
}

TEST(SeedOverride, EnvironmentReplacesSeed) {
  TrainConfig t;
  t.seed = 7;
  {
    EnvGuard g(nullptr);
    apply_seed_override(t);
    EXPECT_EQ(t.seed, 7u);
  }
  {
    EnvGuard g("123");
    apply_seed_override(t);
    EXPECT_EQ(t.seed, 123u);
  }
  {
    EnvGuard g("12x");
    EXPECT_THROW(apply_seed_override(t), ConfigError);
  }
}
