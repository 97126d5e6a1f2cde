#include "fmvit/synth.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fmvit/config.hpp"

namespace fmvit {

namespace {

std::size_t quadrant_of(Modality m) {
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

// Adds `value` to a square of side `side` at offset (dy, dx) inside quadrant q
// (0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right).
void paint_square(std::vector<double>& px, std::size_t size, std::size_t channels, std::size_t q, std::size_t dy,
                  std::size_t dx, std::size_t side, double value) {
  const std::size_t half = size / 2;
  const std::size_t y0 = (q / 2) * half + dy, x0 = (q % 2) * half + dx;
  for (std::size_t y = y0; y < y0 + side; ++y)
    for (std::size_t x = x0; x < x0 + side; ++x)
      for (std::size_t c = 0; c < channels; ++c) px[(y * size + x) * channels + c] += value;
}

// Cue: the central half of the quadrant. Key: the quadrant's top-left corner,
// small enough that the two never overlap.
void paint_cue(std::vector<double>& px, std::size_t size, std::size_t channels, std::size_t q, double value) {
  const std::size_t half = size / 2, side = std::max<std::size_t>(half / 2, 1);
  paint_square(px, size, channels, q, (half - side) / 2, (half - side) / 2, side, value);
}

void paint_key(std::vector<double>& px, std::size_t size, std::size_t channels, std::size_t q, double value) {
  const std::size_t half = size / 2, side = std::max<std::size_t>(half / 4, 1);
  paint_square(px, size, channels, q, 0, 0, side, value);
}

constexpr char kMagic[4] = {'F', 'M', 'V', 'D'};

}  // namespace

double SyntheticSpec::alpha_of(std::size_t modality) const { return alpha.size() == 1 ? alpha[0] : alpha.at(modality); }

double SyntheticSpec::rho_of(std::size_t modality) const { return rho.size() == 1 ? rho[0] : rho.at(modality); }

void SyntheticSpec::validate() const {
  if (image_size < 8 || image_size % 2 != 0) throw std::invalid_argument("image_size must be even and >= 8");
  if (image_size > 65535) throw std::invalid_argument("image_size does not fit the file format");
  if (channels == 0 || channels > 255) throw std::invalid_argument("channels must be in [1, 255]");
  if (modalities.empty() || modalities.size() > 4) throw std::invalid_argument("need 1 to 4 modalities");
  for (const auto* list : {&alpha, &rho}) {
    if (list->size() != 1 && list->size() != modalities.size()) {
      throw std::invalid_argument("alpha/rho need one value or one per modality");
    }
  }
  double flip_mass = 0.0;
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    if (!(alpha_of(i) >= 0.0 && alpha_of(i) <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    if (!(rho_of(i) >= 0.5 && rho_of(i) <= 1.0)) throw std::invalid_argument("rho must lie in [0.5, 1]");
    flip_mass += 1.0 - rho_of(i);
  }
  if (flip_mass > 1.0 + 1e-12) {
    throw std::invalid_argument("sum of (1 - rho) over modalities exceeds 1; at most one cue may flip per sample");
  }
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
}

std::size_t Dataset::modality_index(Modality m) const {
  auto it = std::find(modalities.begin(), modalities.end(), m);
  if (it == modalities.end()) {
    throw std::invalid_argument(std::string("dataset has no modality '") + tag_of(m) + "'");
  }
  return static_cast<std::size_t>(it - modalities.begin());
}

ImageSet Dataset::images_of(std::size_t sample, std::span<const Modality> subset) const {
  ImageSet out;
  const Sample& s = samples.at(sample);
  for (auto m : subset) out.emplace(m, s.images[modality_index(m)]);
  return out;
}

PlantedCues draw_cues(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const std::size_t count = spec.modalities.size();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  PlantedCues c;
  c.label = coin(rng) ? 1 : 0;
  const double u = unit(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    acc += 1.0 - spec.rho_of(i);
    if (u < acc) {
      c.flipped = static_cast<int>(i);
      break;
    }
  }
  for (std::size_t i = 0; i < count; ++i) c.cues.push_back(c.label ^ (c.flipped == static_cast<int>(i) ? 1 : 0));

  // Bit j of every modality but the first is a fair coin; the first closes
  // the parity so that the XOR over modalities flags modality j as flipped.
  c.keys.assign(count, std::vector<int>(count, 0));
  for (std::size_t j = 0; j < count; ++j) {
    int parity = 0;
    for (std::size_t i = 1; i < count; ++i) {
      c.keys[i][j] = coin(rng) ? 1 : 0;
      parity ^= c.keys[i][j];
    }
    const int flag = c.flipped == static_cast<int>(j) ? 1 : 0;
    c.keys[0][j] = count == 1 ? (coin(rng) ? 1 : 0) : parity ^ flag;
  }
  return c;
}

int decode_label(std::span<const int> cues, const std::vector<std::vector<int>>& keys) {
  const std::size_t count = cues.size();
  if (count == 0 || keys.size() != count) throw std::invalid_argument("decode_label needs matching cue and key lists");
  if (count == 1) return cues[0];
  for (std::size_t j = 0; j < count; ++j) {
    int parity = 0;
    for (const auto& k : keys) parity ^= k.at(j);
    if (parity) return cues[j] ^ 1;
  }
  return cues[0];
}

Tensor render_modality(const SyntheticSpec& spec, std::size_t modality, int cue, std::span<const int> keys,
                       std::mt19937_64& rng) {
  const std::size_t size = spec.image_size, ch = spec.channels;
  std::vector<double> px(size * size * ch, 0.0);
  if (spec.sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.sigma);
    for (auto& v : px) v = noise(rng);
  }
  const double a = spec.alpha_of(modality);
  paint_cue(px, size, ch, quadrant_of(spec.modalities[modality]), cue ? a : -a);
  for (std::size_t j = 0; j < keys.size(); ++j) paint_key(px, size, ch, quadrant_of(spec.modalities[j]), keys[j] ? a : -a);
  // Stored as f32 on disk; round now so save/load is exact.
  for (auto& v : px) v = static_cast<double>(static_cast<float>(v));
  return Tensor({size, size, ch}, std::move(px));
}

Dataset generate_split(const SyntheticSpec& spec, std::size_t count, std::uint64_t split_id) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(split_id), 0x464d5644u};
  std::mt19937_64 rng(seq);
  Dataset data{spec.modalities, spec.image_size, spec.image_size, spec.channels, {}};
  data.samples.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const PlantedCues cues = draw_cues(spec, rng);
    Sample sample{cues.label, {}};
    for (std::size_t i = 0; i < spec.modalities.size(); ++i) {
      sample.images.push_back(render_modality(spec, i, cues.cues[i], cues.keys[i], rng));
    }
    data.samples.push_back(std::move(sample));
  }
  return data;
}

DatasetSplits generate(const SyntheticSpec& spec) {
  return {generate_split(spec, spec.train_count, 0), generate_split(spec, spec.dev_count, 1),
          generate_split(spec, spec.test_count, 2)};
}

// ---------------------------------------------------------------------------

std::uintmax_t dataset_file_size(const Dataset& data) {
  const std::uintmax_t header = 4 + 4 + 4 + 1 + data.modalities.size() * (1 + 2 + 2 + 1);
  const std::uintmax_t raster = data.height * data.width * data.channels * 4;
  return header + data.samples.size() * (1 + data.modalities.size() * raster);
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  le::write<std::uint32_t>(os, kDatasetVersion);
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(data.samples.size()));
  le::write<std::uint8_t>(os, static_cast<std::uint8_t>(data.modalities.size()));
  for (auto m : data.modalities) {
    le::write<std::uint8_t>(os, static_cast<std::uint8_t>(tag_of(m)));
    le::write<std::uint16_t>(os, static_cast<std::uint16_t>(data.height));
    le::write<std::uint16_t>(os, static_cast<std::uint16_t>(data.width));
    le::write<std::uint8_t>(os, static_cast<std::uint8_t>(data.channels));
  }
  for (const auto& s : data.samples) {
    le::write<std::uint8_t>(os, static_cast<std::uint8_t>(s.label));
    for (const auto& img : s.images)
      for (double v : img.data()) le::write<float>(os, static_cast<float>(v));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw FormatError(path.string() + ": not an FMVD dataset (bad magic)");
  }
  const auto version = le::read<std::uint32_t>(is, "version");
  if (version != kDatasetVersion) {
    throw FormatError(path.string() + ": unsupported FMVD version " + std::to_string(version));
  }
  const auto count = le::read<std::uint32_t>(is, "sample count");
  const auto modality_count = le::read<std::uint8_t>(is, "modality count");
  if (modality_count == 0) throw FormatError(path.string() + ": dataset declares no modalities");

  Dataset data;
  for (std::uint8_t i = 0; i < modality_count; ++i) {
    const auto tag = le::read<std::uint8_t>(is, "modality tag");
    const auto h = le::read<std::uint16_t>(is, "height");
    const auto w = le::read<std::uint16_t>(is, "width");
    const auto c = le::read<std::uint8_t>(is, "channels");
    try {
      data.modalities.push_back(modality_from_tag(static_cast<char>(tag)));
    } catch (const std::invalid_argument& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    if (i == 0) {
      data.height = h;
      data.width = w;
      data.channels = c;
    } else if (h != data.height || w != data.width || c != data.channels) {
      throw FormatError(path.string() + ": modalities with differing raster sizes are not supported");
    }
    if (h == 0 || w == 0 || c == 0) throw FormatError(path.string() + ": empty raster");
  }

  const std::size_t raster = data.height * data.width * data.channels;
  data.samples.reserve(count);
  std::vector<double> px(raster);
  for (std::uint32_t s = 0; s < count; ++s) {
    Sample sample;
    sample.label = le::read<std::uint8_t>(is, "label");
    if (sample.label > 1) throw FormatError(path.string() + ": label out of range");
    for (std::uint8_t m = 0; m < modality_count; ++m) {
      for (auto& v : px) v = static_cast<double>(le::read<float>(is, "raster"));
      sample.images.emplace_back(Shape{data.height, data.width, data.channels}, px);
    }
    data.samples.push_back(std::move(sample));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes after last sample");
  return data;
}

std::string manifest_text(const SyntheticSpec& spec) {
  std::ostringstream os;
  os << "# synthetic planted-cue dataset\n";
  os << render_config(spec_to_entries(spec));
  os << "files=train.fmvd,dev.fmvd,test.fmvd\n";
  return os.str();
}

void save_splits(const std::filesystem::path& dir, const DatasetSplits& splits, const SyntheticSpec& spec) {
  std::filesystem::create_directories(dir);
  save_dataset(dir / "train.fmvd", splits.train);
  save_dataset(dir / "dev.fmvd", splits.dev);
  save_dataset(dir / "test.fmvd", splits.test);
  std::ofstream os(dir / "manifest.txt", std::ios::trunc);
  os << manifest_text(spec);
  if (!os) throw std::runtime_error("failed writing manifest in " + dir.string());
}

DatasetSplits load_splits(const std::filesystem::path& dir) {
  return {load_dataset(dir / "train.fmvd"), load_dataset(dir / "dev.fmvd"), load_dataset(dir / "test.fmvd")};
}

}  // namespace fmvit
