#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fmvit/binary_io.hpp"
#include "fmvit/model.hpp"
#include "fmvit/tensor.hpp"

namespace fmvit {

/// Parameters of the planted-cue generator.
///
/// Every modality renders a label cue (a signed square of strength alpha in a
/// modality-specific quadrant) over Gaussian background noise. At most one
/// modality per sample shows a flipped cue; modality i is the flipped one with
/// probability 1 - rho_i. Each image also carries one key bit per modality j,
/// drawn as a small signed square in the corner of j's quadrant, at the same
/// place in every modality. Key bits are uniform individually, but XOR over
/// modalities of bit j says whether modality j is the flipped one. A single
/// modality therefore predicts the label with accuracy rho_i at best, while
/// all modalities together determine it exactly. Identical images in every
/// branch read as "nothing flipped".
struct SyntheticSpec {
  std::size_t image_size = 32;
  std::size_t channels = 1;
  std::vector<Modality> modalities{Modality::rgb, Modality::depth};
  std::size_t train_count = 2000;
  std::size_t dev_count = 500;
  std::size_t test_count = 500;
  std::vector<double> alpha{1.0};  // one value for all, or one per modality
  std::vector<double> rho{0.8};    // same
  double sigma = 0.1;
  std::uint64_t seed = 1;

  double alpha_of(std::size_t modality) const;
  double rho_of(std::size_t modality) const;
  /// Throws std::invalid_argument when the probabilities are not realizable.
  void validate() const;
};

struct Sample {
  int label = 0;
  std::vector<Tensor> images;  // [H x W x C] per modality, dataset order
};

struct Dataset {
  std::vector<Modality> modalities;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<Sample> samples;

  std::size_t modality_index(Modality m) const;
  ImageSet images_of(std::size_t sample, std::span<const Modality> subset) const;
};

struct DatasetSplits {
  Dataset train;
  Dataset dev;
  Dataset test;
};

/// Per-sample hidden variables, exposed so tests can check the construction.
struct PlantedCues {
  int label = 0;
  int flipped = -1;  // modality index, -1 for none
  std::vector<int> cues;
  std::vector<std::vector<int>> keys;  // keys[i][j]: modality i's copy of bit j
};

PlantedCues draw_cues(const SyntheticSpec& spec, std::mt19937_64& rng);
Tensor render_modality(const SyntheticSpec& spec, std::size_t modality, int cue, std::span<const int> keys,
                       std::mt19937_64& rng);

/// The label implied by all cues and keys together (exact for >= 2 modalities).
int decode_label(std::span<const int> cues, const std::vector<std::vector<int>>& keys);

Dataset generate_split(const SyntheticSpec& spec, std::size_t count, std::uint64_t split_id);
DatasetSplits generate(const SyntheticSpec& spec);

// FMVD file: "FMVD", u32 version (1), u32 sample count, u8 modality count,
// per modality (u8 tag, u16 H, u16 W, u8 C), then per sample a u8 label and
// each modality's raster as little-endian f32, row-major.
inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);
std::uintmax_t dataset_file_size(const Dataset& data);

/// train.fmvd, dev.fmvd, test.fmvd and manifest.txt inside `dir`.
void save_splits(const std::filesystem::path& dir, const DatasetSplits& splits, const SyntheticSpec& spec);
DatasetSplits load_splits(const std::filesystem::path& dir);
std::string manifest_text(const SyntheticSpec& spec);

}  // namespace fmvit
