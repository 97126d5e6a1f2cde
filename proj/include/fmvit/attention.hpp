#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "fmvit/nn.hpp"
#include "fmvit/tensor.hpp"

namespace fmvit {

/// Projections of one multi-head attention block. Each projection is D x D;
/// head `h` owns columns [h*d_h, (h+1)*d_h).
struct AttentionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;
  std::size_t heads = 1;

  std::size_t dim() const { return query.in_features(); }
  std::size_t head_dim() const { return dim() / heads; }
  void validate() const;
};

AttentionParams make_attention(std::size_t dim, std::size_t heads, std::mt19937_64& rng);

/// CLS-to-patch scaled dot products, one row per head: [h x n].
struct RelevanceMap {
  Tensor scores;

  std::size_t heads() const { return scores.dim(0); }
  std::size_t tokens() const { return scores.dim(1); }
};

/// Per-head selection over patch tokens. A single-modality mask holds 0/1;
/// after accumulation an entry counts how many modalities selected it.
struct MaskMatrix {
  std::size_t heads = 0;
  std::size_t tokens = 0;
  std::vector<int> counts;  // row-major [heads x tokens]

  int at(std::size_t head, std::size_t token) const { return counts[head * tokens + token]; }
  bool selected(std::size_t head, std::size_t token) const { return at(head, token) > 0; }
  std::size_t support(std::size_t head) const;

  friend bool operator==(const MaskMatrix&, const MaskMatrix&) = default;
};

/// Standard multi-head self-attention over the whole sequence.
Tensor msa(const Tensor& z, const AttentionParams& p);

/// Row 0 of `z` is the CLS token; the query comes from it and the keys from
/// the n patch rows. No softmax is applied.
RelevanceMap relevance_map(const Tensor& z, const AttentionParams& p);

/// Per head: softmax the map row, walk tokens by descending probability
/// (ties by ascending index) and keep the shortest prefix whose mass reaches
/// `lambda`. At least one token is always kept. Reads values only, so the
/// mask carries no gradient.
MaskMatrix threshold_mask_lambda(const RelevanceMap& map, double lambda);

/// The probability mass of each head row that the mask keeps (for reports).
std::vector<double> selected_mass(const RelevanceMap& map, const MaskMatrix& mask);

MaskMatrix accumulate_masks(std::span<const MaskMatrix> masks);

/// Keeps scores where the mask count is positive and writes kMaskedLogit
/// elsewhere. Every head row must keep at least one token.
RelevanceMap select_gamma_M(const RelevanceMap& map, const MaskMatrix& mask);

/// Softmax over each head row of `logits`, then the weighted sum of that
/// head's slice of `values` [n x D], heads concatenated and projected: [1 x D].
/// When `weights` is non-null it receives the attention weights [h x n].
Tensor attend_patches(const RelevanceMap& logits, const Tensor& values, const AttentionParams& p,
                      Tensor* weights = nullptr);

/// Value projection of the patch rows of `z`: [n x D].
Tensor patch_values(const Tensor& z, const AttentionParams& p);

struct MutualAttentionTrace {
  std::vector<RelevanceMap> maps;   // self first, then others in given order
  std::vector<MaskMatrix> masks;    // same order
  MaskMatrix accumulated;
  Tensor weights;                   // [h x n] after selection and softmax
};

/// Mutual attention for the CLS token of `z_self`: every sequence votes a
/// lambda-mass mask from its own relevance map, the votes are summed, and the
/// CLS query of `z_self` attends only over its own patches inside the union.
/// Inputs are expected pre-normalized. Returns the [1 x D] CLS update.
Tensor mutual_attention(const Tensor& z_self, std::span<const Tensor> z_others, const AttentionParams& p,
                        double lambda, MutualAttentionTrace* trace = nullptr);

/// Fusion attention: CLS query from `z_self`, keys and values from the patch
/// rows of `z_partner`. Inputs pre-normalized. Returns the [1 x D] CLS update.
Tensor fusion_attention(const Tensor& z_self, const Tensor& z_partner, const AttentionParams& p,
                        Tensor* weights = nullptr);

/// [z_cls + update || z_pat]: patch rows are copied through unchanged.
Tensor cls_residual(const Tensor& z, const Tensor& update);

}  // namespace fmvit
