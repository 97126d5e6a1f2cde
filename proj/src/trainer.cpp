#include "fmvit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fmvit/checkpoint.hpp"
#include "fmvit/ops.hpp"

namespace fmvit {

namespace {

std::vector<Tensor> parameter_list(const ModelParams& params, const ModelConfig& config) {
  std::vector<Tensor> out;
  for (auto& named : params.named_tensors(config)) out.push_back(named.tensor);
  return out;
}

std::string fixed(double value, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

std::string subset_name(std::span<const Modality> subset) {
  std::string out;
  for (auto m : subset) out += tag_of(m);
  return out;
}

// Score used to pick the checkpoint: the joint head when it exists, the mean
// of the branch heads otherwise. Both come out of predict_flexible with every
// configured modality supplied.
double dev_selection_acer(const ModelParams& params, const ModelConfig& config, const Dataset& dev) {
  const ScoreSet s = score_dataset(dev, config.modalities, params, config);
  return error_rates(s, eer_threshold(s)).acer;
}

}  // namespace

AdamState make_adam_state(std::span<const Tensor> params) {
  AdamState state;
  for (const auto& p : params) {
    state.m.emplace_back(p.numel(), 0.0);
    state.v.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, const TrainConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                     " gradients, " + std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || state.m[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " is " + to_string(params[i].shape()) +
                       " but its gradient is " + to_string(grads[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto g = grads[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= config.lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g.data()) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g.mutable_data()) x *= factor;
    }
  }
  return norm;
}

void apply_seed_override(TrainConfig& config) {
  const char* env = std::getenv("FMVIT_SEED");
  if (!env || !*env) return;
  const std::string text(env);
  try {
    std::size_t used = 0;
    const unsigned long long value = std::stoull(text, &used);
    if (used != text.size() || text.front() == '-') throw std::invalid_argument(text);
    config.seed = value;
  } catch (const std::logic_error&) {
    throw ConfigError("FMVIT_SEED must be an unsigned integer, got '" + text + "'");
  }
}

void check_compatible(const Dataset& data, const ModelConfig& config) {
  for (auto m : config.modalities) {
    if (std::find(data.modalities.begin(), data.modalities.end(), m) == data.modalities.end()) {
      throw FormatError(std::string("dataset lacks modality '") + tag_of(m) + "' required by the model");
    }
  }
  if (data.height != config.image_height || data.width != config.image_width || data.channels != config.channels) {
    throw FormatError("dataset rasters are " + to_string({data.height, data.width, data.channels}) +
                      " but the model expects " +
                      to_string({config.image_height, config.image_width, config.channels}));
  }
  if (data.samples.empty()) throw FormatError("dataset has no samples");
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

ScoreSet score_dataset(const Dataset& data, std::span<const Modality> subset, const ModelParams& params,
                       const ModelConfig& config) {
  ScoreSet out;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    auto rng = sample_rng(0, 0, i);
    const FlexiblePrediction pred = predict_flexible(data.images_of(i, subset), params, config, rng);
    out.add(pred.score, data.samples[i].label);
  }
  return out;
}

double select_threshold(const ScoreSet& dev, ThresholdRule rule, double bpcer_target) {
  return rule == ThresholdRule::eer ? eer_threshold(dev) : bpcer_threshold(dev, bpcer_target);
}

std::vector<SubsetMetrics> evaluate(const ModelParams& params, const ModelConfig& config, const Dataset& dev,
                                    const Dataset& test, const EvalOptions& options) {
  check_compatible(test, config);
  if (!options.threshold_scores) check_compatible(dev, config);
  if (options.subsets.empty()) throw std::invalid_argument("evaluate needs at least one modality subset");
  for (const auto& subset : options.subsets) {
    if (subset.empty()) throw std::invalid_argument("empty modality subset");
    for (auto m : subset) (void)config.branch_index(m);
  }
  if (options.dump_dir) std::filesystem::create_directories(*options.dump_dir);

  std::optional<ScoreSet> external;
  if (options.threshold_scores) external = read_score_file(*options.threshold_scores);

  std::vector<SubsetMetrics> rows;
  for (const auto& subset : options.subsets) {
    SubsetMetrics row;
    row.subset = subset;
    const ScoreSet dev_scores = external ? *external : score_dataset(dev, subset, params, config);
    const ScoreSet test_scores = score_dataset(test, subset, params, config);
    row.threshold = select_threshold(dev_scores, options.rule, options.bpcer_target);
    row.dev = error_rates(dev_scores, row.threshold);
    row.test = error_rates(test_scores, row.threshold);
    row.hter = hter(test_scores, row.threshold);
    row.tpr_at_fpr_1e2 = tpr_at_fpr(test_scores, 1e-2);
    row.tpr_at_fpr_1e4 = tpr_at_fpr(test_scores, 1e-4);
    if (options.dump_dir) {
      const std::string name = subset_name(subset);
      if (!external) write_score_file(*options.dump_dir / (name + ".dev.scores"), dev_scores);
      write_score_file(*options.dump_dir / (name + ".test.scores"), test_scores);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_metrics_table(const std::vector<SubsetMetrics>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %12s %8s %8s %8s %8s %8s %12s %12s\n", "subset", "threshold", "dev_acer",
                "apcer", "bpcer", "acer", "hter", "tpr@fpr1e-2", "tpr@fpr1e-4");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %12.6g %8.4f %8.4f %8.4f %8.4f %8.4f %12.4f %12.4f\n",
                  subset_name(r.subset).c_str(), r.threshold, r.dev.acer, r.test.apcer, r.test.bpcer, r.test.acer,
                  r.hter, r.tpr_at_fpr_1e2, r.tpr_at_fpr_1e4);
    os << buf;
  }
  return os.str();
}

std::string RunReport::render() const {
  std::ostringstream os;
  os << "# training\n";
  os << "epoch  train_loss    dev_acer\n";
  char buf[128];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%5zu  %10.6f  %10s\n", e.epoch, e.train_loss,
                  e.dev_acer ? fixed(*e.dev_acer).c_str() : "-");
    os << buf;
  }
  os << "\n# test metrics of the selected checkpoint (threshold from dev)\n";
  os << render_metrics_table(final_metrics);
  os << "\n# summary\n";
  std::snprintf(buf, sizeof buf, "config_hash=%016llx\n", static_cast<unsigned long long>(config_hash));
  os << buf;
  os << "param_count=" << param_count << "\n";
  os << "epochs=" << epochs.size() << "\n";
  os << "best_epoch=" << best_epoch << "\n";
  os << "best_dev_acer=" << format_double(best_dev_acer) << "\n";
  if (!epochs.empty()) os << "final_train_loss=" << format_double(epochs.back().train_loss) << "\n";
  for (const auto& r : final_metrics) {
    const std::string name = subset_name(r.subset);
    os << "test_acer." << name << "=" << format_double(r.test.acer) << "\n";
    os << "test_apcer." << name << "=" << format_double(r.test.apcer) << "\n";
    os << "test_bpcer." << name << "=" << format_double(r.test.bpcer) << "\n";
    os << "threshold." << name << "=" << format_double(r.threshold) << "\n";
  }
  return os.str();
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const DatasetSplits& data,
                  std::ostream* progress) {
  const auto started = std::chrono::steady_clock::now();
  model_config.validate();
  train_config.validate();
  check_compatible(data.train, model_config);
  check_compatible(data.dev, model_config);
  check_compatible(data.test, model_config);

  ModelParams params = init_params(model_config, train_config.seed);
  std::vector<Tensor> tensors = parameter_list(params, model_config);
  AdamState adam = make_adam_state(tensors);

  ConfigEntries hashed = model_config_entries(model_config);
  for (auto& e : train_config_entries(train_config)) hashed.push_back(e);

  RunReport report;
  report.config_hash = config_hash(hashed);
  report.param_count = param_count(params);

  auto snapshot = [&] {
    std::vector<std::vector<double>> out;
    for (const auto& t : tensors) out.emplace_back(t.data().begin(), t.data().end());
    return out;
  };
  std::vector<std::vector<double>> best = snapshot();
  report.best_epoch = 0;
  report.best_dev_acer = dev_selection_acer(params, model_config, data.dev);

  const std::size_t n = data.train.samples.size();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq shuffle_seq{static_cast<std::uint32_t>(train_config.seed),
                              static_cast<std::uint32_t>(train_config.seed >> 32), static_cast<std::uint32_t>(epoch),
                              0x5348u};
    std::mt19937_64 shuffle_rng(shuffle_seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += train_config.batch_size) {
      const std::size_t stop = std::min(n, start + train_config.batch_size);
      Tape tape;
      Tensor batch_loss;
      {
        Tape::Scope scope(tape);
        try {
          for (std::size_t k = start; k < stop; ++k) {
            const std::size_t idx = order[k];
            auto rng = sample_rng(train_config.seed, epoch, idx);
            const ForwardResult out =
                forward(data.train.images_of(idx, model_config.modalities), params, model_config, rng);
            Tensor loss = total_loss(out, data.train.samples[idx].label);
            batch_loss = batch_loss.numel() == 0 ? loss : add(batch_loss, loss);
          }
          batch_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
        } catch (const DomainError& e) {
          throw NumericError(std::string("non-finite value in epoch ") + std::to_string(epoch) + ": " + e.what());
        }
      }
      const double value = batch_loss.item();
      if (!std::isfinite(value)) throw NumericError("loss became non-finite in epoch " + std::to_string(epoch));
      loss_sum += value * static_cast<double>(stop - start);

      const GradientMap grads = tape.backward(batch_loss);
      std::vector<Tensor> g;
      g.reserve(tensors.size());
      for (const auto& t : tensors) g.push_back(grads.of(t));
      clip_global_norm(g, train_config.clip_norm);
      adam_step(tensors, g, adam, train_config);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(n);
    if (epoch % train_config.eval_every == 0 || epoch == train_config.epochs) {
      record.dev_acer = dev_selection_acer(params, model_config, data.dev);
      if (*record.dev_acer < report.best_dev_acer) {
        report.best_dev_acer = *record.dev_acer;
        report.best_epoch = epoch;
        best = snapshot();
      }
    }
    if (progress) {
      *progress << "epoch " << epoch << " loss " << fixed(record.train_loss, 6);
      if (record.dev_acer) *progress << " dev_acer " << fixed(*record.dev_acer);
      *progress << std::endl;
    }
    report.epochs.push_back(record);
  }

  for (std::size_t i = 0; i < tensors.size(); ++i) {
    std::copy(best[i].begin(), best[i].end(), tensors[i].mutable_data().begin());
  }

  EvalOptions eval;
  for (auto m : model_config.modalities) eval.subsets.push_back({m});
  if (model_config.modalities.size() > 1) eval.subsets.push_back(model_config.modalities);
  eval.rule = train_config.threshold;
  eval.bpcer_target = train_config.bpcer_target;
  report.final_metrics = evaluate(params, model_config, data.dev, data.test, eval);

  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(params), std::move(report)};
}

void write_run(const std::filesystem::path& out_dir, const TrainResult& result, const ModelConfig& model_config,
               const TrainConfig& train_config) {
  std::filesystem::create_directories(out_dir);
  const auto ckpt = out_dir / "model.fmvt";
  save_checkpoint(ckpt, result.params, model_config);
  write_config_file(config_sidecar(ckpt), model_config_entries(model_config));
  write_config_file(out_dir / "train.cfg", train_config_entries(train_config));
  {
    std::ofstream os(out_dir / "report.txt", std::ios::trunc);
    os << result.report.render();
    if (!os) throw std::runtime_error("failed writing report.txt");
  }
  std::ofstream os(out_dir / "timing.txt", std::ios::trunc);
  os << "wall_seconds=" << fixed(result.report.wall_seconds, 3) << "\n";
}

// ---------------------------------------------------------------------------

std::string inspect(const ModelParams& params, const ModelConfig& config, const Dataset& data, std::size_t sample,
                    std::size_t stage, DumpFormat format) {
  check_compatible(data, config);
  if (sample >= data.samples.size()) {
    throw std::out_of_range("sample " + std::to_string(sample) + " out of range, dataset has " +
                            std::to_string(data.samples.size()));
  }
  if (!config.cross_modal) throw std::invalid_argument("model has no cross-modal blocks to inspect");
  if (stage >= config.stages()) {
    throw std::out_of_range("stage " + std::to_string(stage) + " out of range, model has " +
                            std::to_string(config.stages()));
  }

  ForwardTrace trace;
  {
    NoGrad no_grad;
    auto rng = sample_rng(0, 0, sample);
    (void)forward(data.images_of(sample, config.modalities), params, config, rng, &trace);
  }
  const CmtbTrace& t = trace.stages.at(stage);

  auto rows_of = [](const Tensor& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.dim(0); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t c = 0; c < m.dim(1); ++c) row.push_back(m.at(r, c));
      rows.push_back(row);
    }
    return rows;
  };
  auto mask_rows = [](const MaskMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t h = 0; h < m.heads; ++h) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t k = 0; k < m.tokens; ++k) row.push_back(m.at(h, k));
      rows.push_back(row);
    }
    return rows;
  };

  nlohmann::json doc;
  doc["sample"] = sample;
  doc["label"] = data.samples[sample].label;
  doc["stage"] = stage;
  doc["lambda"] = config.lambda;
  doc["accumulated_mask"] = mask_rows(t.accumulated);
  doc["branches"] = nlohmann::json::array();
  for (std::size_t b = 0; b < config.modalities.size(); ++b) {
    nlohmann::json br;
    br["modality"] = std::string(1, tag_of(config.modalities[b]));
    br["relevance_map"] = rows_of(t.maps[b].scores);
    br["relevance_softmax"] = rows_of(softmax_lastdim(t.maps[b].scores));
    br["mask"] = mask_rows(t.masks[b]);
    br["selected_mass"] = selected_mass(t.maps[b], t.masks[b]);
    br["mma_weights"] = rows_of(t.mma_weights[b]);
    br["partner"] = std::string(1, tag_of(config.modalities[t.partners[b]]));
    br["mfa_weights"] = rows_of(t.mfa_weights[b]);
    doc["branches"].push_back(br);
  }
  if (format == DumpFormat::json) return doc.dump(2) + "\n";

  std::ostringstream os;
  os.precision(17);
  auto matrix = [&](const std::string& title, const nlohmann::json& rows) {
    os << title << "\n";
    for (std::size_t h = 0; h < rows.size(); ++h) {
      os << "  head " << h << ":";
      for (const auto& v : rows[h]) os << ' ' << v.dump();
      os << "\n";
    }
  };
  os << "sample=" << sample << " label=" << data.samples[sample].label << " stage=" << stage
     << " lambda=" << format_double(config.lambda) << "\n";
  for (const auto& br : doc["branches"]) {
    const std::string m = br["modality"].get<std::string>();
    os << "\n[" << m << "]\n";
    matrix("relevance map", br["relevance_map"]);
    matrix("relevance softmax", br["relevance_softmax"]);
    matrix("mask", br["mask"]);
    os << "selected mass:";
    for (const auto& v : br["selected_mass"]) os << ' ' << v.dump();
    os << "\n";
    matrix("mma weights", br["mma_weights"]);
    os << "mfa partner: " << br["partner"].get<std::string>() << "\n";
    matrix("mfa weights", br["mfa_weights"]);
  }
  os << "\n";
  matrix("accumulated mask", doc["accumulated_mask"]);
  return os.str();
}

}  // namespace fmvit
