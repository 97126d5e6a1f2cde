#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmvit/config.hpp"
#include "fmvit/metrics.hpp"
#include "fmvit/model.hpp"
#include "fmvit/synth.hpp"

namespace fmvit {

/// Non-finite loss or gradient during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

AdamState make_adam_state(std::span<const Tensor> params);

/// One bias-corrected Adam update applied in place to `params`.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, const TrainConfig& config);

/// Rescales `grads` so their joint L2 norm is at most `max_norm` (no-op when
/// max_norm <= 0). Returns the norm before clipping.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

/// Replaces config.seed with $FMVIT_SEED when it is set. Throws ConfigError on
/// a malformed value.
void apply_seed_override(TrainConfig& config);

/// Throws FormatError when `data` cannot feed `config` (missing modality,
/// raster size, channel count).
void check_compatible(const Dataset& data, const ModelConfig& config);

/// Per-sample rng for forward passes. Depends only on its arguments, so the
/// order in which samples are processed never changes the draws.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

/// predict_flexible over every sample, feeding only `subset`.
ScoreSet score_dataset(const Dataset& data, std::span<const Modality> subset, const ModelParams& params,
                       const ModelConfig& config);

struct SubsetMetrics {
  std::vector<Modality> subset;
  double threshold = 0.0;
  ErrorRates dev;
  ErrorRates test;
  double hter = 0.0;
  double tpr_at_fpr_1e2 = 0.0;
  double tpr_at_fpr_1e4 = 0.0;
};

struct EvalOptions {
  std::vector<std::vector<Modality>> subsets;
  ThresholdRule rule = ThresholdRule::eer;
  double bpcer_target = 0.01;
  /// Take the threshold from this score file instead of scoring the dev split.
  std::optional<std::filesystem::path> threshold_scores;
  /// Writes <subset>.dev.scores and <subset>.test.scores here when set.
  std::optional<std::filesystem::path> dump_dir;
};

double select_threshold(const ScoreSet& dev, ThresholdRule rule, double bpcer_target);

/// One row per subset: threshold from dev (or the given file), then test rates.
std::vector<SubsetMetrics> evaluate(const ModelParams& params, const ModelConfig& config, const Dataset& dev,
                                    const Dataset& test, const EvalOptions& options);

std::string render_metrics_table(const std::vector<SubsetMetrics>& rows);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> dev_acer;
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 means the initial parameters
  double best_dev_acer = 1.0;
  std::vector<SubsetMetrics> final_metrics;
  std::uint64_t config_hash = 0;
  std::size_t param_count = 0;
  double wall_seconds = 0.0;  // kept out of render() so reports replay bitwise

  std::string render() const;
};

struct TrainResult {
  ModelParams params;  // best-on-dev parameters
  RunReport report;
};

/// Seeded, shuffled mini-batch Adam on the summed head losses. Keeps the
/// parameters with the lowest dev ACER of the joint head (mean of the branch
/// heads for models without one).
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const DatasetSplits& data,
                  std::ostream* progress = nullptr);

/// Writes model.fmvt (+ sidecar), report.txt and timing.txt into `out_dir`.
void write_run(const std::filesystem::path& out_dir, const TrainResult& result, const ModelConfig& model_config,
               const TrainConfig& train_config);

enum class DumpFormat { text, json };

/// Relevance maps, masks, accumulated mask, selected mass, post-selection
/// attention weights and fusion weights of one CMTB stage for one sample.
std::string inspect(const ModelParams& params, const ModelConfig& config, const Dataset& data, std::size_t sample,
                    std::size_t stage, DumpFormat format);

}  // namespace fmvit
