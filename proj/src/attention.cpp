#include "fmvit/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fmvit/ops.hpp"

namespace fmvit {

namespace {

Tensor head_slice(const Tensor& x, std::size_t head, std::size_t head_dim) {
  return slice(x, 1, head * head_dim, (head + 1) * head_dim);
}

// Scaled dot products of one projected query row [1 x D] against projected
// keys [n x D], one output row per head: [h x n].
Tensor per_head_scores(const Tensor& query, const Tensor& keys, std::size_t heads, std::size_t head_dim) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> rows;
  rows.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    rows.push_back(scale(matmul(head_slice(query, h, head_dim), transpose(head_slice(keys, h, head_dim))), inv_sqrt));
  }
  return concat(rows, 0);
}

void require_sequence(const Tensor& z, const AttentionParams& p, const char* what) {
  if (z.rank() != 2 || z.dim(1) != p.dim()) {
    throw ShapeError(std::string(what) + ": sequence " + to_string(z.shape()) + " does not match embed dim " +
                     std::to_string(p.dim()));
  }
  if (z.dim(0) < 2) throw ShapeError(std::string(what) + ": sequence has no patch tokens");
}

Tensor cls_row(const Tensor& z) { return slice(z, 0, 0, 1); }
Tensor patch_rows(const Tensor& z) { return slice(z, 0, 1, z.dim(0)); }

}  // namespace

void AttentionParams::validate() const {
  const std::size_t d = dim();
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("embed dim " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  for (const LinearParams* lp : {&query, &key, &value, &output}) {
    if (lp->in_features() != d || lp->out_features() != d || lp->bias.numel() != d) {
      throw ShapeError("attention projection " + to_string(lp->weight.shape()) + " is not " + std::to_string(d) +
                       "x" + std::to_string(d));
    }
  }
}

AttentionParams make_attention(std::size_t dim, std::size_t heads, std::mt19937_64& rng) {
  AttentionParams p;
  p.query = make_linear(dim, dim, rng);
  p.key = make_linear(dim, dim, rng);
  p.value = make_linear(dim, dim, rng);
  p.output = make_linear(dim, dim, rng);
  p.heads = heads;
  p.validate();
  return p;
}

std::size_t MaskMatrix::support(std::size_t head) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < tokens; ++t) n += selected(head, t) ? 1 : 0;
  return n;
}

Tensor msa(const Tensor& z, const AttentionParams& p) {
  p.validate();
  if (z.rank() != 2 || z.dim(1) != p.dim()) {
    throw ShapeError("msa: sequence " + to_string(z.shape()) + " does not match embed dim " + std::to_string(p.dim()));
  }
  const std::size_t dh = p.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = linear(z, p.query);
  Tensor k = linear(z, p.key);
  Tensor v = linear(z, p.value);
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Tensor scores = scale(matmul(head_slice(q, h, dh), transpose(head_slice(k, h, dh))), inv_sqrt);
    heads.push_back(matmul(softmax_lastdim(scores), head_slice(v, h, dh)));
  }
  return linear(concat(heads, 1), p.output);
}

RelevanceMap relevance_map(const Tensor& z, const AttentionParams& p) {
  p.validate();
  require_sequence(z, p, "relevance_map");
  Tensor q = linear(cls_row(z), p.query);
  Tensor k = linear(patch_rows(z), p.key);
  return {per_head_scores(q, k, p.heads, p.head_dim())};
}

MaskMatrix threshold_mask_lambda(const RelevanceMap& map, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw DomainError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  if (map.scores.rank() != 2 || map.scores.numel() == 0) throw ShapeError("empty relevance map");
  const std::size_t heads = map.heads(), n = map.tokens();
  MaskMatrix mask{heads, n, std::vector<int>(heads * n, 0)};
  auto s = map.scores.data();
  std::vector<double> probs(n);
  std::vector<std::size_t> order(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const double* row = s.data() + h * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[j] = std::exp(row[j] - mx);
      total += probs[j];
    }
    for (auto& p : probs) p /= total;

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    double mass = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      mask.counts[h * n + order[k]] = 1;
      mass += probs[order[k]];
      if (mass >= lambda) break;
    }
  }
  return mask;
}

std::vector<double> selected_mass(const RelevanceMap& map, const MaskMatrix& mask) {
  const std::size_t heads = map.heads(), n = map.tokens();
  std::vector<double> out(heads, 0.0);
  auto s = map.scores.data();
  for (std::size_t h = 0; h < heads; ++h) {
    const double* row = s.data() + h * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0, kept = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - mx);
      total += e;
      if (mask.selected(h, j)) kept += e;
    }
    out[h] = kept / total;
  }
  return out;
}

MaskMatrix accumulate_masks(std::span<const MaskMatrix> masks) {
  if (masks.empty()) throw ShapeError("accumulate_masks needs at least one mask");
  MaskMatrix total{masks[0].heads, masks[0].tokens, std::vector<int>(masks[0].counts.size(), 0)};
  for (const auto& m : masks) {
    if (m.heads != total.heads || m.tokens != total.tokens) {
      throw ShapeError("mask shape mismatch: [" + std::to_string(m.heads) + "x" + std::to_string(m.tokens) +
                       "] vs [" + std::to_string(total.heads) + "x" + std::to_string(total.tokens) + "]");
    }
    for (std::size_t i = 0; i < total.counts.size(); ++i) total.counts[i] += m.counts[i];
  }
  return total;
}

RelevanceMap select_gamma_M(const RelevanceMap& map, const MaskMatrix& mask) {
  const std::size_t heads = map.heads(), n = map.tokens();
  if (mask.heads != heads || mask.tokens != n) {
    throw ShapeError("select_gamma_M: mask [" + std::to_string(mask.heads) + "x" + std::to_string(mask.tokens) +
                     "] vs map " + to_string(map.scores.shape()));
  }
  for (std::size_t h = 0; h < heads; ++h) {
    if (mask.support(h) == 0) throw DomainError("select_gamma_M: head " + std::to_string(h) + " selects no token");
  }
  std::vector<double> out(map.scores.data().begin(), map.scores.data().end());
  std::vector<bool> keep(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    keep[i] = mask.counts[i] > 0;
    if (!keep[i]) out[i] = kMaskedLogit;
  }
  return {make_result(map.scores.shape(), std::move(out), {map.scores},
                      [keep = std::move(keep)](std::span<const double> g, GradSpans& gin) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          if (keep[i]) gin[0][i] += g[i];
                      })};
}

Tensor patch_values(const Tensor& z, const AttentionParams& p) { return linear(patch_rows(z), p.value); }

Tensor attend_patches(const RelevanceMap& logits, const Tensor& values, const AttentionParams& p, Tensor* weights) {
  const std::size_t dh = p.head_dim();
  if (logits.heads() != p.heads || values.rank() != 2 || values.dim(0) != logits.tokens() || values.dim(1) != p.dim()) {
    throw ShapeError("attend_patches: logits " + to_string(logits.scores.shape()) + " vs values " +
                     to_string(values.shape()));
  }
  Tensor attn = softmax_lastdim(logits.scores);
  if (weights) *weights = attn.detach();
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    heads.push_back(matmul(slice(attn, 0, h, h + 1), head_slice(values, h, dh)));
  }
  return linear(concat(heads, 1), p.output);
}

Tensor mutual_attention(const Tensor& z_self, std::span<const Tensor> z_others, const AttentionParams& p, double lambda,
                        MutualAttentionTrace* trace) {
  for (const auto& other : z_others) {
    if (other.shape() != z_self.shape()) {
      throw ShapeError("mutual_attention: modality sequences disagree, " + to_string(z_self.shape()) + " vs " +
                       to_string(other.shape()));
    }
  }
  RelevanceMap own = relevance_map(z_self, p);
  std::vector<MaskMatrix> masks{threshold_mask_lambda(own, lambda)};
  std::vector<RelevanceMap> other_maps;
  {
    NoGrad no_grad;
    for (const auto& other : z_others) {
      other_maps.push_back(relevance_map(other, p));
      masks.push_back(threshold_mask_lambda(other_maps.back(), lambda));
    }
  }
  MaskMatrix accumulated = accumulate_masks(masks);
  Tensor weights;
  Tensor out = attend_patches(select_gamma_M(own, accumulated), patch_values(z_self, p), p, trace ? &weights : nullptr);
  if (trace) {
    trace->maps.clear();
    trace->maps.push_back({own.scores.detach()});
    for (auto& m : other_maps) trace->maps.push_back(std::move(m));
    trace->masks = std::move(masks);
    trace->accumulated = std::move(accumulated);
    trace->weights = std::move(weights);
  }
  return out;
}

Tensor fusion_attention(const Tensor& z_self, const Tensor& z_partner, const AttentionParams& p, Tensor* weights) {
  p.validate();
  require_sequence(z_self, p, "fusion_attention");
  require_sequence(z_partner, p, "fusion_attention");
  if (z_self.shape() != z_partner.shape()) {
    throw ShapeError("fusion_attention: " + to_string(z_self.shape()) + " vs partner " + to_string(z_partner.shape()));
  }
  Tensor q = linear(cls_row(z_self), p.query);
  Tensor k = linear(patch_rows(z_partner), p.key);
  RelevanceMap scores{per_head_scores(q, k, p.heads, p.head_dim())};
  return attend_patches(scores, patch_values(z_partner, p), p, weights);
}

Tensor cls_residual(const Tensor& z, const Tensor& update) {
  return concat({add(cls_row(z), update), patch_rows(z)}, 0);
}

}  // namespace fmvit
