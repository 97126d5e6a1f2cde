#pragma once

// Small fixtures shared by the test binaries.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "fmvit/model.hpp"

namespace testutil {

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fmvit_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// 32x32 single-channel, two 16px patches a side, D=8, two heads, two stages.
inline fmvit::ModelConfig tiny_config() {
  fmvit::ModelConfig c;
  c.image_height = c.image_width = 32;
  c.channels = 1;
  c.patch = 16;
  c.dim = 8;
  c.heads = 2;
  c.stbs_per_stage = {1, 1};
  c.mlp_ratio = 2;
  c.lambda = 0.5;
  c.modalities = {fmvit::Modality::rgb, fmvit::Modality::depth};
  return c;
}

// Redraws every weight from N(0, sd^2) in place. The default init is so close
// to zero that relevance maps are nearly flat and masks sit on ties.
inline void randomize(fmvit::ModelParams& params, const fmvit::ModelConfig& config, std::uint64_t seed,
                      double sd = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  for (auto& nt : params.named_tensors(config))
    for (auto& v : nt.tensor.mutable_data()) v = n(rng);
}

inline fmvit::Tensor random_image(const fmvit::ModelConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> px(c.image_height * c.image_width * c.channels);
  for (auto& v : px) v = n(rng);
  return fmvit::Tensor({c.image_height, c.image_width, c.channels}, std::move(px));
}

inline fmvit::ImageSet random_images(const fmvit::ModelConfig& c, std::mt19937_64& rng) {
  fmvit::ImageSet out;
  for (auto m : c.modalities) out.emplace(m, random_image(c, rng));
  return out;
}

}  // namespace testutil
