#include "fmvit/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace fmvit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<Modality> to_modalities(const std::string& key, const std::string& v) {
  try {
    return parse_modalities(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

template <typename T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += ',';
    out += fmt(item);
  }
  return out;
}

using Handlers = std::map<std::string, std::function<void(const std::string&, const std::string&)>>;

void apply(const ConfigEntries& entries, const Handlers& handlers, const char* kind) {
  for (const auto& [key, value] : entries) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError(std::string("unknown ") + kind + " config key '" + key + "'");
    it->second(key, value);
  }
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

ConfigEntries parse_config(std::istream& is) {
  ConfigEntries out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

ConfigEntries read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path.string());
  return parse_config(is);
}

std::string render_config(const ConfigEntries& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  return out;
}

void write_config_file(const std::filesystem::path& path, const ConfigEntries& entries) {
  std::ofstream os(path, std::ios::trunc);
  os << render_config(entries);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::uint64_t config_hash(const ConfigEntries& entries) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : render_config(entries)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------

ModelConfig model_config_from(const ConfigEntries& entries) {
  ModelConfig c;
  Handlers h{
      {"image_height", [&](auto& k, auto& v) { c.image_height = to_size(k, v); }},
      {"image_width", [&](auto& k, auto& v) { c.image_width = to_size(k, v); }},
      {"channels", [&](auto& k, auto& v) { c.channels = to_size(k, v); }},
      {"patch", [&](auto& k, auto& v) { c.patch = to_size(k, v); }},
      {"dim", [&](auto& k, auto& v) { c.dim = to_size(k, v); }},
      {"heads", [&](auto& k, auto& v) { c.heads = to_size(k, v); }},
      {"stbs_per_stage",
       [&](auto& k, auto& v) {
         c.stbs_per_stage.clear();
         for (const auto& item : split_list(v)) c.stbs_per_stage.push_back(to_size(k, item));
       }},
      {"mlp_ratio", [&](auto& k, auto& v) { c.mlp_ratio = to_size(k, v); }},
      {"lambda", [&](auto& k, auto& v) { c.lambda = to_double(k, v); }},
      {"modalities", [&](auto& k, auto& v) { c.modalities = to_modalities(k, v); }},
      {"cross_modal", [&](auto& k, auto& v) { c.cross_modal = to_bool(k, v); }},
  };
  apply(entries, h, "model");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
  return c;
}

ConfigEntries model_config_entries(const ModelConfig& c) {
  return {
      {"image_height", std::to_string(c.image_height)},
      {"image_width", std::to_string(c.image_width)},
      {"channels", std::to_string(c.channels)},
      {"patch", std::to_string(c.patch)},
      {"dim", std::to_string(c.dim)},
      {"heads", std::to_string(c.heads)},
      {"stbs_per_stage", join<std::size_t>(c.stbs_per_stage, [](const std::size_t& m) { return std::to_string(m); })},
      {"mlp_ratio", std::to_string(c.mlp_ratio)},
      {"lambda", format_double(c.lambda)},
      {"modalities", format_modalities(c.modalities)},
      {"cross_modal", c.cross_modal ? "true" : "false"},
  };
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (eval_every == 0) throw std::invalid_argument("eval_every must be at least 1");
}

TrainConfig train_config_from(const ConfigEntries& entries) {
  TrainConfig c;
  Handlers h{
      {"lr", [&](auto& k, auto& v) { c.lr = to_double(k, v); }},
      {"beta1", [&](auto& k, auto& v) { c.beta1 = to_double(k, v); }},
      {"beta2", [&](auto& k, auto& v) { c.beta2 = to_double(k, v); }},
      {"adam_eps", [&](auto& k, auto& v) { c.adam_eps = to_double(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { c.batch_size = to_size(k, v); }},
      {"epochs", [&](auto& k, auto& v) { c.epochs = to_size(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = to_u64(k, v); }},
      {"clip_norm", [&](auto& k, auto& v) { c.clip_norm = to_double(k, v); }},
      {"eval_every", [&](auto& k, auto& v) { c.eval_every = to_size(k, v); }},
      {"threshold",
       [&](auto& k, auto& v) {
         if (v == "eer") {
           c.threshold = ThresholdRule::eer;
         } else if (v == "bpcer") {
           c.threshold = ThresholdRule::bpcer;
         } else {
           throw ConfigError("key '" + k + "': expected eer or bpcer, got '" + v + "'");
         }
       }},
      {"bpcer_target", [&](auto& k, auto& v) { c.bpcer_target = to_double(k, v); }},
  };
  apply(entries, h, "train");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid train config: ") + e.what());
  }
  return c;
}

ConfigEntries train_config_entries(const TrainConfig& c) {
  return {
      {"lr", format_double(c.lr)},
      {"beta1", format_double(c.beta1)},
      {"beta2", format_double(c.beta2)},
      {"adam_eps", format_double(c.adam_eps)},
      {"batch_size", std::to_string(c.batch_size)},
      {"epochs", std::to_string(c.epochs)},
      {"seed", std::to_string(c.seed)},
      {"clip_norm", format_double(c.clip_norm)},
      {"eval_every", std::to_string(c.eval_every)},
      {"threshold", c.threshold == ThresholdRule::eer ? "eer" : "bpcer"},
      {"bpcer_target", format_double(c.bpcer_target)},
  };
}

SyntheticSpec spec_from(const ConfigEntries& entries) {
  SyntheticSpec s;
  auto doubles = [](const std::string& k, const std::string& v) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(to_double(k, item));
    return out;
  };
  Handlers h{
      {"image_size", [&](auto& k, auto& v) { s.image_size = to_size(k, v); }},
      {"channels", [&](auto& k, auto& v) { s.channels = to_size(k, v); }},
      {"modalities", [&](auto& k, auto& v) { s.modalities = to_modalities(k, v); }},
      {"train_count", [&](auto& k, auto& v) { s.train_count = to_size(k, v); }},
      {"dev_count", [&](auto& k, auto& v) { s.dev_count = to_size(k, v); }},
      {"test_count", [&](auto& k, auto& v) { s.test_count = to_size(k, v); }},
      {"alpha", [&](auto& k, auto& v) { s.alpha = doubles(k, v); }},
      {"rho", [&](auto& k, auto& v) { s.rho = doubles(k, v); }},
      {"sigma", [&](auto& k, auto& v) { s.sigma = to_double(k, v); }},
      {"seed", [&](auto& k, auto& v) { s.seed = to_u64(k, v); }},
  };
  apply(entries, h, "data");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid data spec: ") + e.what());
  }
  return s;
}

ConfigEntries spec_to_entries(const SyntheticSpec& s) {
  auto fmt = [](const double& d) { return format_double(d); };
  return {
      {"image_size", std::to_string(s.image_size)},
      {"channels", std::to_string(s.channels)},
      {"modalities", format_modalities(s.modalities)},
      {"train_count", std::to_string(s.train_count)},
      {"dev_count", std::to_string(s.dev_count)},
      {"test_count", std::to_string(s.test_count)},
      {"alpha", join<double>(s.alpha, fmt)},
      {"rho", join<double>(s.rho, fmt)},
      {"sigma", format_double(s.sigma)},
      {"seed", std::to_string(s.seed)},
  };
}

}  // namespace fmvit
