#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "fmvit/synth.hpp"
#include "test_util.hpp"

using namespace fmvit;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.image_size = 16;
  s.train_count = 60;
  s.dev_count = 20;
  s.test_count = 20;
  return s;
}

std::size_t quadrant(Modality m) {
  switch (m) {
    case Modality::rgb:
      return 0;
    case Modality::depth:
      return 1;
    case Modality::nir:
      return 2;
    case Modality::thermal:
      return 3;
  }
  return 0;
}

double pixel(const Tensor& img, std::size_t size, std::size_t q, std::size_t dy, std::size_t dx) {
  const std::size_t half = size / 2;
  return img.at(((q / 2) * half + dy) * size + (q % 2) * half + dx);
}

// Full-batch logistic regression on raw pixels; returns accuracy on `eval`.
double logistic_probe(const Dataset& train, const Dataset& eval, std::size_t modality) {
  const std::size_t f = train.height * train.width * train.channels;
  std::vector<double> w(f, 0.0);
  double b = 0.0;
  const double lr = 0.5;
  for (int epoch = 0; epoch < 200; ++epoch) {
    std::vector<double> gw(f, 0.0);
    double gb = 0.0;
    for (const auto& s : train.samples) {
      const auto x = s.images[modality].data();
      double z = b;
      for (std::size_t k = 0; k < f; ++k) z += w[k] * x[k];
      const double err = 1.0 / (1.0 + std::exp(-z)) - s.label;
      for (std::size_t k = 0; k < f; ++k) gw[k] += err * x[k];
      gb += err;
    }
    const double n = static_cast<double>(train.samples.size());
    for (std::size_t k = 0; k < f; ++k) w[k] -= lr * gw[k] / n;
    b -= lr * gb / n;
  }
  std::size_t correct = 0;
  for (const auto& s : eval.samples) {
    const auto x = s.images[modality].data();
    double z = b;
    for (std::size_t k = 0; k < f; ++k) z += w[k] * x[k];
    correct += (z >= 0.0 ? 1 : 0) == s.label;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.samples.size());
}

}  // namespace

TEST(Synth, NoiselessReliableModalityIsLinearlySeparable) {
  SyntheticSpec spec = small_spec();
  spec.rho = {1.0};
  spec.sigma = 0.0;
  const Dataset train = generate_split(spec, 200, 0), eval = generate_split(spec, 200, 1);
  for (std::size_t m = 0; m < 2; ++m) EXPECT_EQ(logistic_probe(train, eval, m), 1.0);
}

TEST(Synth, CoinFlipModalityCarriesNoLabelInformation) {
  SyntheticSpec spec = small_spec();
  spec.rho = {0.5, 1.0};
  spec.sigma = 0.1;
  const Dataset train = generate_split(spec, 2000, 0), eval = generate_split(spec, 2000, 1);
  // 2000 held-out samples: one standard error of a fair coin is about 0.011.
  EXPECT_NEAR(logistic_probe(train, eval, 0), 0.5, 0.05);
  EXPECT_GT(logistic_probe(train, eval, 1), 0.99);
}

TEST(Synth, CuesAndKeysDecodeEveryLabel) {
  for (std::size_t count = 1; count <= 4; ++count) {
    SyntheticSpec spec = small_spec();
    spec.modalities = {Modality::rgb, Modality::depth, Modality::nir, Modality::thermal};
    spec.modalities.resize(count);
    spec.rho = {count == 1 ? 1.0 : 0.8};
    std::mt19937_64 rng(count);
    std::vector<int> flips(count + 1, 0);
    for (int trial = 0; trial < 2000; ++trial) {
      const PlantedCues c = draw_cues(spec, rng);
      EXPECT_EQ(decode_label(c.cues, c.keys), c.label);
      ++flips[c.flipped + 1];
      for (std::size_t i = 0; i < count; ++i) EXPECT_EQ(c.cues[i] != c.label, c.flipped == static_cast<int>(i));
    }
    // Each modality is flipped about 20% of the time.
    for (std::size_t i = 1; i <= count && count > 1; ++i) EXPECT_NEAR(flips[i] / 2000.0, 0.2, 0.04);
  }
}

TEST(Synth, NoiselessImagesDecodeFromPixels) {
  SyntheticSpec spec = small_spec();
  spec.modalities = {Modality::rgb, Modality::depth, Modality::nir};
  spec.rho = {0.75};
  spec.sigma = 0.0;
  const Dataset data = generate_split(spec, 300, 0);
  const std::size_t size = spec.image_size, half = size / 2;
  for (const auto& s : data.samples) {
    std::vector<int> cues;
    std::vector<std::vector<int>> keys;
    for (std::size_t i = 0; i < 3; ++i) {
      cues.push_back(pixel(s.images[i], size, quadrant(spec.modalities[i]), half / 2, half / 2) > 0);
      keys.emplace_back();
      for (std::size_t j = 0; j < 3; ++j) keys.back().push_back(pixel(s.images[i], size, quadrant(spec.modalities[j]), 0, 0) > 0);
    }
    EXPECT_EQ(decode_label(cues, keys), s.label);
  }
}

TEST(Synth, ReplicatedImageReadsAsNothingFlipped) {
  const std::vector<int> cue{1, 1};
  const std::vector<std::vector<int>> same{{0, 1}, {0, 1}};
  EXPECT_EQ(decode_label(cue, same), 1);
  EXPECT_THROW(decode_label(cue, {{0, 1}}), std::invalid_argument);
}

TEST(Synth, RejectsUnrealizableSpecs) {
  SyntheticSpec s = small_spec();
  s.rho = {0.4};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.rho = {0.5, 0.4};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.rho = {0.5, 0.5, 0.9};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.image_size = 6;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.alpha = {1.5};
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(SynthFiles, SameSeedGivesIdenticalBytes) {
  const SyntheticSpec spec = small_spec();
  const auto a = testutil::scratch_dir("synth_a"), b = testutil::scratch_dir("synth_b");
  save_splits(a, generate(spec), spec);
  save_splits(b, generate(spec), spec);
  for (const char* f : {"train.fmvd", "dev.fmvd", "test.fmvd", "manifest.txt"})
    EXPECT_EQ(testutil::read_bytes(a / f), testutil::read_bytes(b / f)) << f;
  SyntheticSpec other = spec;
  other.seed = 2;
  save_splits(b, generate(other), other);
  EXPECT_NE(testutil::read_bytes(a / "train.fmvd"), testutil::read_bytes(b / "train.fmvd"));
}

TEST(SynthFiles, RoundTripAndSize) {
  SyntheticSpec spec = small_spec();
  spec.channels = 3;
  spec.modalities = {Modality::depth, Modality::thermal};
  const Dataset data = generate_split(spec, 25, 0);
  const auto dir = testutil::scratch_dir("synth_rt");
  save_dataset(dir / "x.fmvd", data);
  EXPECT_EQ(std::filesystem::file_size(dir / "x.fmvd"), dataset_file_size(data));
  EXPECT_EQ(dataset_file_size(data), 13u + 2 * 6 + 25 * (1 + 2 * 16 * 16 * 3 * 4));
  const Dataset back = load_dataset(dir / "x.fmvd");
  EXPECT_EQ(back.modalities, data.modalities);
  EXPECT_EQ(back.channels, 3u);
  ASSERT_EQ(back.samples.size(), data.samples.size());
  for (std::size_t s = 0; s < data.samples.size(); ++s) {
    EXPECT_EQ(back.samples[s].label, data.samples[s].label);
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t k = 0; k < data.samples[s].images[m].numel(); ++k)
        ASSERT_EQ(back.samples[s].images[m].at(k), data.samples[s].images[m].at(k));
  }
  save_dataset(dir / "y.fmvd", back);
  EXPECT_EQ(testutil::read_bytes(dir / "x.fmvd"), testutil::read_bytes(dir / "y.fmvd"));
}

TEST(SynthFiles, RejectsDamagedFiles) {
  const SyntheticSpec spec = small_spec();
  const auto dir = testutil::scratch_dir("synth_bad");
  save_dataset(dir / "good.fmvd", generate_split(spec, 5, 0));
  const std::string bytes = testutil::read_bytes(dir / "good.fmvd");

  testutil::write_bytes(dir / "magic.fmvd", "XMVD" + bytes.substr(4));
  EXPECT_THROW(load_dataset(dir / "magic.fmvd"), FormatError);
  std::string version = bytes;
  version[4] = 2;
  testutil::write_bytes(dir / "version.fmvd", version);
  EXPECT_THROW(load_dataset(dir / "version.fmvd"), FormatError);
  testutil::write_bytes(dir / "short.fmvd", bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(load_dataset(dir / "short.fmvd"), FormatError);
  testutil::write_bytes(dir / "long.fmvd", bytes + "x");
  EXPECT_THROW(load_dataset(dir / "long.fmvd"), FormatError);
  testutil::write_bytes(dir / "header.fmvd", bytes.substr(0, 10));
  EXPECT_THROW(load_dataset(dir / "header.fmvd"), FormatError);
}

TEST(SynthFiles, SplitsShareNoRecord) {
  const SyntheticSpec spec = small_spec();
  const DatasetSplits splits = generate(spec);
  auto digest = [](const Sample& s) {
    std::string bytes;
    for (const auto& img : s.images)
      for (double v : img.data()) bytes.append(reinterpret_cast<const char*>(&v), sizeof v);
    return std::hash<std::string>{}(bytes);
  };
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const Dataset* d : {&splits.train, &splits.dev, &splits.test}) {
    for (const auto& s : d->samples) {
      seen.insert(digest(s));
      ++total;
    }
  }
  EXPECT_EQ(seen.size(), total);
  EXPECT_EQ(total, spec.train_count + spec.dev_count + spec.test_count);
}
