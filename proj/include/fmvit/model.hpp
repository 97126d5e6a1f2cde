#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fmvit/attention.hpp"
#include "fmvit/nn.hpp"
#include "fmvit/tensor.hpp"

namespace fmvit {

enum class Modality : char { rgb = 'r', depth = 'd', nir = 'n', thermal = 't' };

char tag_of(Modality m);
Modality modality_from_tag(char tag);
/// "r,d" -> {rgb, depth}. Throws std::invalid_argument on unknown or repeated tags.
std::vector<Modality> parse_modalities(const std::string& list);
std::string format_modalities(std::span<const Modality> modalities);

struct ModelConfig {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t channels = 1;
  std::size_t patch = 16;
  std::size_t dim = 16;
  std::size_t heads = 2;
  std::vector<std::size_t> stbs_per_stage{1, 1};
  std::size_t mlp_ratio = 4;
  double lambda = 0.5;
  std::vector<Modality> modalities{Modality::rgb, Modality::depth};
  /// false builds independent ViT branches: no CMTB, no joint head.
  bool cross_modal = true;

  std::size_t stages() const { return stbs_per_stage.size(); }
  std::size_t patches() const { return (image_height / patch) * (image_width / patch); }
  std::size_t tokens() const { return patches() + 1; }
  std::size_t patch_features() const { return patch * patch * channels; }
  std::size_t branch_index(Modality m) const;
  void validate() const;
};

struct StbParams {
  LayerNormParams attn_norm;
  AttentionParams attn;
  LayerNormParams mlp_norm;
  MlpParams mlp;
};

struct CmtbParams {
  LayerNormParams mma_norm;
  AttentionParams mma;
  LayerNormParams mfa_norm;
  AttentionParams mfa;
};

struct BranchParams {
  LinearParams patch_embed;
  Tensor cls;  // [1 x D]
  Tensor pos;  // [N x D]
  std::vector<std::vector<StbParams>> stages;
  LayerNormParams head_norm;
  LinearParams head;  // D -> 1
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// All learnable weights. Branches follow ModelConfig::modalities order; each
/// stage has exactly one CMTB parameter set that every branch uses.
struct ModelParams {
  std::vector<BranchParams> branches;
  std::vector<CmtbParams> cmtb;
  std::optional<LayerNormParams> joint_norm;
  std::optional<LinearParams> joint_head;

  /// Stable, checkpoint-facing names in a fixed order.
  std::vector<NamedTensor> named_tensors(const ModelConfig& config) const;
};

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

struct ModalSequence {
  Modality modality;
  Tensor tokens;  // [N x D], row 0 is CLS
};

/// Per-CMTB dump for one stage, in branch order.
struct CmtbTrace {
  std::vector<RelevanceMap> maps;
  std::vector<MaskMatrix> masks;
  MaskMatrix accumulated;
  std::vector<Tensor> mma_weights;
  std::vector<std::size_t> partners;
  std::vector<Tensor> mfa_weights;
};

struct ForwardTrace {
  std::vector<CmtbTrace> stages;
};

struct ForwardResult {
  std::vector<Tensor> cls;     // final CLS per branch, [1 x D]
  std::vector<Tensor> logits;  // per-branch head logit, [1]
  std::optional<Tensor> joint_logit;
};

using ImageSet = std::map<Modality, Tensor>;

/// [H x W x C] image -> [N x D] tokens: row-major P x P patches flattened in
/// (y, x, c) order, projected, CLS prepended, position embedding added.
ModalSequence tokenize(const Tensor& image, Modality modality, const BranchParams& branch, const ModelConfig& config);

/// Flattened patches of an image, [n x P*P*C]. Exposed for tests.
Tensor patchify(const Tensor& image, const ModelConfig& config);

ModalSequence stb_forward(const ModalSequence& z, const StbParams& p);

/// One shared cross-modal block over all branches. `rng` is drawn once per
/// branch that has two or more possible partners, in branch order.
std::vector<ModalSequence> cmtb_forward(std::span<const ModalSequence> zs, const CmtbParams& p, double lambda,
                                        std::mt19937_64& rng, CmtbTrace* trace = nullptr);

ForwardResult forward(const ImageSet& images, const ModelParams& params, const ModelConfig& config,
                      std::mt19937_64& rng, ForwardTrace* trace = nullptr);

/// Sum of per-branch BCE losses plus the joint BCE when present.
Tensor total_loss(const ForwardResult& out, int label);

struct FlexiblePrediction {
  double score = 0.0;                 // reported head, sigmoid
  std::vector<double> branch_scores;  // per-branch heads, sigmoid
  std::optional<double> joint_score;
  /// Index into branch_scores of the reported head, or nullopt for the joint head.
  std::optional<std::size_t> reported_branch;
};

/// Single-modal input is replicated into every branch and scored by that
/// modality's head. Multi-modal input feeds each branch its own image (missing
/// branches get the first supplied image in config order) and is scored by the
/// joint head, or the mean of the supplied branches' heads when there is none.
FlexiblePrediction predict_flexible(const ImageSet& images, const ModelParams& params, const ModelConfig& config,
                                    std::mt19937_64& rng);

std::size_t param_count(const ModelParams& params);
/// Closed-form tally of init_params(config) without allocating anything.
std::size_t param_count(const ModelConfig& config);

struct ComputeEstimate {
  double macs = 0.0;
  double flops = 0.0;  // 2 * macs
};
/// Multiply-accumulates of one forward pass (matmuls only).
ComputeEstimate flop_estimate(const ModelConfig& config);

}  // namespace fmvit
