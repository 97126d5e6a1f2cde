#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fmvit/checkpoint.hpp"
#include "fmvit/config.hpp"
#include "fmvit/metrics.hpp"
#include "fmvit/model.hpp"
#include "fmvit/synth.hpp"
#include "fmvit/trainer.hpp"

namespace fs = std::filesystem;
using namespace fmvit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitFormat = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ModelConfig model_config_for(const fs::path& ckpt) {
  const fs::path sidecar = config_sidecar(ckpt);
  if (!fs::exists(sidecar)) throw UsageError("missing model config next to checkpoint: " + sidecar.string());
  return model_config_from(read_config_file(sidecar));
}

// "r,d;r;d" or repeated --modalities flags; each entry is one subset.
std::vector<std::vector<Modality>> parse_subsets(const std::vector<std::string>& specs, const ModelConfig& config) {
  std::vector<std::vector<Modality>> out;
  for (const auto& spec : specs) {
    std::string item;
    std::istringstream is(spec);
    while (std::getline(is, item, ';')) {
      if (item.empty()) continue;
      try {
        out.push_back(parse_modalities(item));
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
  }
  if (out.empty()) {
    for (auto m : config.modalities) out.push_back({m});
    if (config.modalities.size() > 1) out.push_back(config.modalities);
  }
  for (const auto& subset : out) {
    for (auto m : subset) {
      if (std::find(config.modalities.begin(), config.modalities.end(), m) == config.modalities.end()) {
        throw UsageError(std::string("modality '") + tag_of(m) + "' is not part of the trained model");
      }
    }
  }
  return out;
}

int run_gen_data(const fs::path& spec_path, const fs::path& out) {
  const SyntheticSpec spec = spec_from(read_config_file(spec_path));
  save_splits(out, generate(spec), spec);
  std::cout << "wrote " << (out / "train.fmvd").string() << ", dev.fmvd, test.fmvd, manifest.txt\n";
  return kExitOk;
}

int run_train(const fs::path& model_cfg, const fs::path& train_cfg, const fs::path& data, const fs::path& out,
              bool quiet) {
  const ModelConfig mc = model_config_from(read_config_file(model_cfg));
  TrainConfig tc = train_config_from(read_config_file(train_cfg));
  apply_seed_override(tc);
  const DatasetSplits splits = load_splits(data);
  const TrainResult result = train(mc, tc, splits, quiet ? nullptr : &std::cerr);
  write_run(out, result, mc, tc);
  std::cout << result.report.render();
  return kExitOk;
}

int run_eval(const fs::path& ckpt, const fs::path& data, const std::vector<std::string>& subsets,
             const std::string& threshold_from, const std::string& rule, double bpcer_target,
             const std::optional<fs::path>& dump) {
  const ModelConfig mc = model_config_for(ckpt);
  const ModelParams params = load_checkpoint(ckpt, mc);
  EvalOptions opt;
  opt.subsets = parse_subsets(subsets, mc);
  if (rule == "eer") {
    opt.rule = ThresholdRule::eer;
  } else if (rule == "bpcer") {
    opt.rule = ThresholdRule::bpcer;
  } else {
    throw UsageError("--rule must be eer or bpcer");
  }
  opt.bpcer_target = bpcer_target;
  if (threshold_from != "dev") opt.threshold_scores = fs::path(threshold_from);
  opt.dump_dir = dump;

  const Dataset test = load_dataset(data / "test.fmvd");
  const Dataset dev = opt.threshold_scores ? Dataset{} : load_dataset(data / "dev.fmvd");
  std::cout << render_metrics_table(evaluate(params, mc, dev, test, opt));
  return kExitOk;
}

int run_inspect(const fs::path& ckpt, const fs::path& data, const std::string& split, std::size_t sample,
                std::size_t stage, bool json) {
  const ModelConfig mc = model_config_for(ckpt);
  const ModelParams params = load_checkpoint(ckpt, mc);
  const Dataset ds = load_dataset(data / (split + ".fmvd"));
  try {
    std::cout << inspect(params, mc, ds, sample, stage, json ? DumpFormat::json : DumpFormat::text);
  } catch (const std::out_of_range& e) {
    throw UsageError(e.what());
  }
  return kExitOk;
}

int run_metrics(const fs::path& dev_scores, const std::optional<fs::path>& test_scores, const std::string& rule,
                double bpcer_target) {
  const ScoreSet dev = read_score_file(dev_scores);
  if (rule != "eer" && rule != "bpcer") throw UsageError("--rule must be eer or bpcer");
  const double t = select_threshold(dev, rule == "eer" ? ThresholdRule::eer : ThresholdRule::bpcer, bpcer_target);
  const ScoreSet test = test_scores ? read_score_file(*test_scores) : dev;
  const ErrorRates r = error_rates(test, t);
  std::cout << "threshold=" << format_double(t) << "\n"
            << "apcer=" << format_double(r.apcer) << "\n"
            << "bpcer=" << format_double(r.bpcer) << "\n"
            << "acer=" << format_double(r.acer) << "\n"
            << "hter=" << format_double(hter(test, t)) << "\n"
            << "tpr_at_fpr_1e-2=" << format_double(tpr_at_fpr(test, 1e-2)) << "\n"
            << "tpr_at_fpr_1e-4=" << format_double(tpr_at_fpr(test, 1e-4)) << "\n";
  return kExitOk;
}

int run_count(const fs::path& model_cfg) {
  const ModelConfig mc = model_config_from(read_config_file(model_cfg));
  const ComputeEstimate c = flop_estimate(mc);
  std::cout << "param_count=" << param_count(mc) << "\n"
            << "macs=" << format_double(c.macs) << "\n"
            << "flops=" << format_double(c.flops) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flexible-modal vision transformer for face anti-spoofing, desk scale"};
  app.require_subcommand(1);

  fs::path spec_path, out_dir;
  auto* gen = app.add_subcommand("gen-data", "Generate the planted-cue dataset");
  gen->add_option("--spec", spec_path, "Data spec config file")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();

  fs::path model_cfg, train_cfg, data_dir, train_out;
  bool quiet = false;
  auto* tr = app.add_subcommand("train", "Train a model and write checkpoint + report");
  tr->add_option("--model-config", model_cfg, "Model config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--train-config", train_cfg, "Training config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", train_out, "Run output directory")->required();
  tr->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  fs::path ckpt, eval_data;
  std::vector<std::string> subsets;
  std::string threshold_from = "dev", rule = "eer";
  double bpcer_target = 0.01;
  std::optional<fs::path> dump;
  auto* ev = app.add_subcommand("eval", "Score modality subsets from one checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--modalities", subsets, "Subset such as r,d; repeat or separate with ';' for several rows");
  ev->add_option("--threshold-from", threshold_from, "'dev' or a score file to take the threshold from");
  ev->add_option("--rule", rule, "Threshold rule: eer or bpcer");
  ev->add_option("--bpcer-target", bpcer_target, "BPCER bound for --rule bpcer");
  ev->add_option("--dump-scores", dump, "Directory for per-subset score files");

  std::size_t sample = 0, stage = 0;
  std::string split = "test";
  bool json = false;
  auto* in = app.add_subcommand("inspect", "Dump CMTB internals for one sample");
  in->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  in->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  in->add_option("--sample", sample, "Sample index")->required();
  in->add_option("--stage", stage, "Stage index, from 0")->required();
  in->add_option("--split", split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  in->add_flag("--json", json, "JSON instead of text");

  fs::path dev_scores;
  std::optional<fs::path> test_scores;
  auto* me = app.add_subcommand("metrics", "Recompute metrics from score files");
  me->add_option("--dev", dev_scores, "Score file the threshold comes from")->required()->check(CLI::ExistingFile);
  me->add_option("--test", test_scores, "Score file to evaluate (defaults to --dev)");
  me->add_option("--rule", rule, "Threshold rule: eer or bpcer");
  me->add_option("--bpcer-target", bpcer_target, "BPCER bound for --rule bpcer");

  auto* co = app.add_subcommand("count", "Parameter and FLOP tally of a model config");
  co->add_option("--model-config", model_cfg, "Model config file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return run_gen_data(spec_path, out_dir);
    if (*tr) return run_train(model_cfg, train_cfg, data_dir, train_out, quiet);
    if (*ev) return run_eval(ckpt, eval_data, subsets, threshold_from, rule, bpcer_target, dump);
    if (*in) return run_inspect(ckpt, eval_data, split, sample, stage, json);
    if (*me) return run_metrics(dev_scores, test_scores, rule, bpcer_target);
    if (*co) return run_count(model_cfg);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  }
  return kExitUsage;
}
