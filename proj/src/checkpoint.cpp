#include "fmvit/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace fmvit {

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const ModelConfig& config) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "FMVT1 " << param_count(params) << '\n';
  for (const auto& [name, tensor] : params.named_tensors(config)) {
    le::write<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    le::write<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
    for (auto e : tensor.shape()) le::write<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    for (double v : tensor.data()) le::write<double>(os, v);
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string header;
  if (!std::getline(is, header)) throw FormatError("empty checkpoint " + path.string());
  std::istringstream hs(header);
  std::string magic;
  std::size_t declared = 0;
  if (!(hs >> magic >> declared) || magic != "FMVT1") {
    throw FormatError("bad checkpoint header '" + header + "' in " + path.string());
  }

  ModelParams params = init_params(config, 0);
  std::map<std::string, Tensor> expected;
  for (auto& nt : params.named_tensors(config)) expected.emplace(nt.name, nt.tensor);

  std::size_t loaded = 0;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto name_len = le::read<std::uint32_t>(is, "name length");
    if (name_len > 4096) throw FormatError("implausible tensor name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("truncated file while reading tensor name");
    const auto rank = le::read<std::uint32_t>(is, "rank");
    if (rank == 0 || rank > 8) throw FormatError("bad rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = le::read<std::uint32_t>(is, "extent");
    auto it = expected.find(name);
    if (it == expected.end()) throw FormatError("unexpected tensor '" + name + "' in checkpoint");
    if (it->second.shape() != shape) {
      throw FormatError("tensor '" + name + "' has shape " + to_string(shape) + ", model expects " +
                        to_string(it->second.shape()));
    }
    auto dst = it->second.mutable_data();
    for (auto& v : dst) v = le::read<double>(is, "payload");
    loaded += dst.size();
    expected.erase(it);
  }
  if (!expected.empty()) throw FormatError("checkpoint lacks tensor '" + expected.begin()->first + "'");
  if (loaded != declared) {
    throw FormatError("checkpoint declares " + std::to_string(declared) + " parameters but holds " +
                      std::to_string(loaded));
  }
  return params;
}

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".cfg";
  return p;
}

}  // namespace fmvit
