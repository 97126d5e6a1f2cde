#include "fmvit/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "fmvit/ops.hpp"

namespace fmvit {

char tag_of(Modality m) { return static_cast<char>(m); }

Modality modality_from_tag(char tag) {
  switch (tag) {
    case 'r':
      return Modality::rgb;
    case 'd':
      return Modality::depth;
    case 'n':
      return Modality::nir;
    case 't':
      return Modality::thermal;
    default:
      throw std::invalid_argument(std::string("unknown modality tag '") + tag + "'");
  }
}

std::vector<Modality> parse_modalities(const std::string& list) {
  std::vector<Modality> out;
  std::string token;
  auto flush = [&] {
    if (token.size() != 1) throw std::invalid_argument("bad modality entry '" + token + "' in '" + list + "'");
    const Modality m = modality_from_tag(token[0]);
    if (std::find(out.begin(), out.end(), m) != out.end()) {
      throw std::invalid_argument("modality '" + token + "' listed twice");
    }
    out.push_back(m);
    token.clear();
  };
  for (char c : list) {
    if (c == ',') {
      flush();
    } else if (c != ' ') {
      token.push_back(c);
    }
  }
  flush();
  return out;
}

std::string format_modalities(std::span<const Modality> modalities) {
  std::string out;
  for (auto m : modalities) {
    if (!out.empty()) out.push_back(',');
    out.push_back(tag_of(m));
  }
  return out;
}

std::size_t ModelConfig::branch_index(Modality m) const {
  auto it = std::find(modalities.begin(), modalities.end(), m);
  if (it == modalities.end()) {
    throw std::invalid_argument(std::string("modality '") + tag_of(m) + "' is not part of this model (" +
                                format_modalities(modalities) + ")");
  }
  return static_cast<std::size_t>(it - modalities.begin());
}

void ModelConfig::validate() const {
  if (patch == 0 || image_height % patch != 0 || image_width % patch != 0) {
    throw std::invalid_argument("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                                " does not tile into " + std::to_string(patch) + "px patches");
  }
  if (channels == 0 || dim == 0 || mlp_ratio == 0) throw std::invalid_argument("channels, dim and mlp_ratio must be positive");
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (stbs_per_stage.empty()) throw std::invalid_argument("at least one stage is required");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (modalities.empty()) throw std::invalid_argument("at least one modality is required");
  for (std::size_t i = 0; i < modalities.size(); ++i)
    for (std::size_t j = i + 1; j < modalities.size(); ++j)
      if (modalities[i] == modalities[j]) throw std::invalid_argument("duplicate modality in config");
}

// ---------------------------------------------------------------------------

namespace {

void push_linear(std::vector<NamedTensor>& out, const std::string& prefix, const LinearParams& p) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
}

void push_norm(std::vector<NamedTensor>& out, const std::string& prefix, const LayerNormParams& p) {
  out.push_back({prefix + ".gamma", p.gamma});
  out.push_back({prefix + ".beta", p.beta});
}

void push_attention(std::vector<NamedTensor>& out, const std::string& prefix, const AttentionParams& p) {
  push_linear(out, prefix + ".query", p.query);
  push_linear(out, prefix + ".key", p.key);
  push_linear(out, prefix + ".value", p.value);
  push_linear(out, prefix + ".output", p.output);
}

Tensor head_logit(const Tensor& cls, const LayerNormParams& norm, const LinearParams& head) {
  return reshape(linear(layer_norm(cls, norm), head), {1});
}

}  // namespace

std::vector<NamedTensor> ModelParams::named_tensors(const ModelConfig& config) const {
  std::vector<NamedTensor> out;
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const BranchParams& br = branches[b];
    const std::string prefix = std::string("branch.") + tag_of(config.modalities.at(b));
    push_linear(out, prefix + ".patch_embed", br.patch_embed);
    out.push_back({prefix + ".cls", br.cls});
    out.push_back({prefix + ".pos", br.pos});
    for (std::size_t s = 0; s < br.stages.size(); ++s) {
      for (std::size_t k = 0; k < br.stages[s].size(); ++k) {
        const StbParams& stb = br.stages[s][k];
        const std::string bp = prefix + ".stage" + std::to_string(s) + ".stb" + std::to_string(k);
        push_norm(out, bp + ".attn_norm", stb.attn_norm);
        push_attention(out, bp + ".attn", stb.attn);
        push_norm(out, bp + ".mlp_norm", stb.mlp_norm);
        push_linear(out, bp + ".mlp.fc1", stb.mlp.fc1);
        push_linear(out, bp + ".mlp.fc2", stb.mlp.fc2);
      }
    }
    push_norm(out, prefix + ".head_norm", br.head_norm);
    push_linear(out, prefix + ".head", br.head);
  }
  for (std::size_t s = 0; s < cmtb.size(); ++s) {
    const std::string prefix = "cmtb" + std::to_string(s);
    push_norm(out, prefix + ".mma_norm", cmtb[s].mma_norm);
    push_attention(out, prefix + ".mma", cmtb[s].mma);
    push_norm(out, prefix + ".mfa_norm", cmtb[s].mfa_norm);
    push_attention(out, prefix + ".mfa", cmtb[s].mfa);
  }
  if (joint_norm) push_norm(out, "joint.norm", *joint_norm);
  if (joint_head) push_linear(out, "joint.head", *joint_head);
  return out;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.dim;
  ModelParams params;
  for (std::size_t b = 0; b < config.modalities.size(); ++b) {
    BranchParams br;
    br.patch_embed = make_linear(config.patch_features(), d, rng);
    br.cls = Tensor::zeros({1, d}, true);
    br.pos = Tensor::zeros({config.tokens(), d}, true);
    for (std::size_t count : config.stbs_per_stage) {
      std::vector<StbParams> stage;
      for (std::size_t k = 0; k < count; ++k) {
        StbParams stb;
        stb.attn_norm = make_layer_norm(d);
        stb.attn = make_attention(d, config.heads, rng);
        stb.mlp_norm = make_layer_norm(d);
        stb.mlp = make_mlp(d, config.mlp_ratio * d, rng);
        stage.push_back(std::move(stb));
      }
      br.stages.push_back(std::move(stage));
    }
    br.head_norm = make_layer_norm(d);
    br.head = make_linear(d, 1, rng);
    params.branches.push_back(std::move(br));
  }
  if (config.cross_modal) {
    for (std::size_t s = 0; s < config.stages(); ++s) {
      CmtbParams c;
      c.mma_norm = make_layer_norm(d);
      c.mma = make_attention(d, config.heads, rng);
      c.mfa_norm = make_layer_norm(d);
      c.mfa = make_attention(d, config.heads, rng);
      params.cmtb.push_back(std::move(c));
    }
    const std::size_t joint = d * config.modalities.size();
    params.joint_norm = make_layer_norm(joint);
    params.joint_head = make_linear(joint, 1, rng);
  }
  return params;
}

// ---------------------------------------------------------------------------

Tensor patchify(const Tensor& image, const ModelConfig& config) {
  const std::size_t h = config.image_height, w = config.image_width, c = config.channels, p = config.patch;
  if (image.shape() != Shape{h, w, c}) {
    throw ShapeError("image " + to_string(image.shape()) + " does not match configured " + to_string(Shape{h, w, c}));
  }
  const std::size_t cols = w / p;
  const std::size_t n = config.patches(), f = config.patch_features();
  std::vector<double> out(n * f);
  auto px = image.data();
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t y0 = (t / cols) * p, x0 = (t % cols) * p;
    double* dst = out.data() + t * f;
    for (std::size_t dy = 0; dy < p; ++dy) {
      const double* src = px.data() + ((y0 + dy) * w + x0) * c;
      std::copy_n(src, p * c, dst + dy * p * c);
    }
  }
  return Tensor({n, f}, std::move(out));
}

ModalSequence tokenize(const Tensor& image, Modality modality, const BranchParams& branch, const ModelConfig& config) {
  Tensor patches = linear(patchify(image, config), branch.patch_embed);
  return {modality, add(concat({branch.cls, patches}, 0), branch.pos)};
}

ModalSequence stb_forward(const ModalSequence& z, const StbParams& p) {
  Tensor mid = add(msa(layer_norm(z.tokens, p.attn_norm), p.attn), z.tokens);
  return {z.modality, add(gelu_mlp(layer_norm(mid, p.mlp_norm), p.mlp), mid)};
}

std::vector<ModalSequence> cmtb_forward(std::span<const ModalSequence> zs, const CmtbParams& p, double lambda,
                                        std::mt19937_64& rng, CmtbTrace* trace) {
  if (zs.empty()) throw std::invalid_argument("cmtb_forward needs at least one modality");
  const std::size_t count = zs.size();
  for (const auto& z : zs) {
    if (z.tokens.shape() != zs[0].tokens.shape()) {
      throw ShapeError("cmtb_forward: modality sequences disagree, " + to_string(zs[0].tokens.shape()) + " vs " +
                       to_string(z.tokens.shape()));
    }
  }

  // Mutual attention: one lambda-mask vote per modality, summed and shared.
  std::vector<Tensor> normed;
  std::vector<RelevanceMap> maps;
  std::vector<MaskMatrix> masks;
  for (const auto& z : zs) {
    normed.push_back(layer_norm(z.tokens, p.mma_norm));
    maps.push_back(relevance_map(normed.back(), p.mma));
    masks.push_back(threshold_mask_lambda(maps.back(), lambda));
  }
  const MaskMatrix accumulated = accumulate_masks(masks);

  std::vector<Tensor> after_mma;
  std::vector<Tensor> mma_weights(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor update = attend_patches(select_gamma_M(maps[i], accumulated), patch_values(normed[i], p.mma), p.mma,
                                   trace ? &mma_weights[i] : nullptr);
    after_mma.push_back(cls_residual(zs[i].tokens, update));
  }

  // Fusion attention against one partner's pre-block tokens.
  std::vector<Tensor> partner_normed;
  for (const auto& z : zs) partner_normed.push_back(layer_norm(z.tokens, p.mfa_norm));

  std::vector<ModalSequence> out;
  std::vector<std::size_t> partners;
  std::vector<Tensor> mfa_weights(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t partner = i;
    if (count == 2) {
      partner = 1 - i;
    } else if (count > 2) {
      std::uniform_int_distribution<std::size_t> pick(0, count - 2);
      const std::size_t r = pick(rng);
      partner = r < i ? r : r + 1;
    }
    partners.push_back(partner);
    Tensor update = fusion_attention(layer_norm(after_mma[i], p.mfa_norm), partner_normed[partner], p.mfa,
                                     trace ? &mfa_weights[i] : nullptr);
    out.push_back({zs[i].modality, cls_residual(after_mma[i], update)});
  }

  if (trace) {
    trace->maps.clear();
    for (const auto& m : maps) trace->maps.push_back({m.scores.detach()});
    trace->masks = masks;
    trace->accumulated = accumulated;
    trace->mma_weights = std::move(mma_weights);
    trace->partners = std::move(partners);
    trace->mfa_weights = std::move(mfa_weights);
  }
  return out;
}

ForwardResult forward(const ImageSet& images, const ModelParams& params, const ModelConfig& config,
                      std::mt19937_64& rng, ForwardTrace* trace) {
  if (params.branches.size() != config.modalities.size()) {
    throw std::invalid_argument("parameters hold " + std::to_string(params.branches.size()) + " branches, config has " +
                                std::to_string(config.modalities.size()));
  }
  std::vector<ModalSequence> zs;
  for (std::size_t b = 0; b < config.modalities.size(); ++b) {
    const Modality m = config.modalities[b];
    auto it = images.find(m);
    if (it == images.end()) throw std::invalid_argument(std::string("missing image for modality '") + tag_of(m) + "'");
    zs.push_back(tokenize(it->second, m, params.branches[b], config));
  }
  if (trace) trace->stages.clear();

  for (std::size_t s = 0; s < config.stages(); ++s) {
    for (std::size_t b = 0; b < zs.size(); ++b) {
      for (const auto& stb : params.branches[b].stages[s]) zs[b] = stb_forward(zs[b], stb);
    }
    if (config.cross_modal) {
      CmtbTrace* stage_trace = nullptr;
      if (trace) stage_trace = &trace->stages.emplace_back();
      zs = cmtb_forward(zs, params.cmtb.at(s), config.lambda, rng, stage_trace);
    }
  }

  ForwardResult out;
  for (std::size_t b = 0; b < zs.size(); ++b) {
    out.cls.push_back(slice(zs[b].tokens, 0, 0, 1));
    out.logits.push_back(head_logit(out.cls.back(), params.branches[b].head_norm, params.branches[b].head));
  }
  if (config.cross_modal) {
    out.joint_logit = head_logit(concat(out.cls, 1), *params.joint_norm, *params.joint_head);
  }
  return out;
}

Tensor total_loss(const ForwardResult& out, int label) {
  const int y[] = {label};
  Tensor loss = bce_with_logit(out.logits.at(0), y);
  for (std::size_t b = 1; b < out.logits.size(); ++b) loss = add(loss, bce_with_logit(out.logits[b], y));
  if (out.joint_logit) loss = add(loss, bce_with_logit(*out.joint_logit, y));
  return loss;
}

FlexiblePrediction predict_flexible(const ImageSet& images, const ModelParams& params, const ModelConfig& config,
                                    std::mt19937_64& rng) {
  if (images.empty()) throw std::invalid_argument("predict_flexible needs at least one modality");
  for (const auto& [m, img] : images) (void)config.branch_index(m);

  ImageSet routed;
  FlexiblePrediction pred;
  if (images.size() == 1) {
    const auto& [m, img] = *images.begin();
    for (auto target : config.modalities) routed.emplace(target, img);
    pred.reported_branch = config.branch_index(m);
  } else {
    const Tensor* fallback = nullptr;
    for (auto m : config.modalities) {
      auto it = images.find(m);
      if (it != images.end() && !fallback) fallback = &it->second;
    }
    for (auto m : config.modalities) {
      auto it = images.find(m);
      routed.emplace(m, it != images.end() ? it->second : *fallback);
    }
  }

  NoGrad no_grad;
  const ForwardResult out = forward(routed, params, config, rng);
  for (const auto& l : out.logits) pred.branch_scores.push_back(sigmoid(l.item()));
  if (out.joint_logit) pred.joint_score = sigmoid(out.joint_logit->item());

  if (pred.reported_branch) {
    pred.score = pred.branch_scores[*pred.reported_branch];
  } else if (pred.joint_score) {
    pred.score = *pred.joint_score;
  } else {
    double total = 0.0;
    for (const auto& [m, img] : images) total += pred.branch_scores[config.branch_index(m)];
    pred.score = total / static_cast<double>(images.size());
  }
  return pred;
}

// ---------------------------------------------------------------------------

std::size_t param_count(const ModelParams& params) {
  std::size_t total = 0;
  auto add_linear = [&](const LinearParams& p) { total += p.weight.numel() + p.bias.numel(); };
  auto add_norm = [&](const LayerNormParams& p) { total += p.gamma.numel() + p.beta.numel(); };
  auto add_attn = [&](const AttentionParams& p) {
    for (const LinearParams* lp : {&p.query, &p.key, &p.value, &p.output}) add_linear(*lp);
  };
  for (const auto& br : params.branches) {
    add_linear(br.patch_embed);
    total += br.cls.numel() + br.pos.numel();
    for (const auto& stage : br.stages)
      for (const auto& stb : stage) {
        add_norm(stb.attn_norm);
        add_attn(stb.attn);
        add_norm(stb.mlp_norm);
        add_linear(stb.mlp.fc1);
        add_linear(stb.mlp.fc2);
      }
    add_norm(br.head_norm);
    add_linear(br.head);
  }
  for (const auto& c : params.cmtb) {
    add_norm(c.mma_norm);
    add_attn(c.mma);
    add_norm(c.mfa_norm);
    add_attn(c.mfa);
  }
  if (params.joint_norm) add_norm(*params.joint_norm);
  if (params.joint_head) add_linear(*params.joint_head);
  return total;
}

std::size_t param_count(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.dim, hidden = config.mlp_ratio * d;
  const std::size_t linear_dd = d * d + d;
  const std::size_t norm = 2 * d;
  const std::size_t attention = 4 * linear_dd;
  const std::size_t stb = 2 * norm + attention + (d * hidden + hidden) + (hidden * d + d);

  std::size_t blocks = 0;
  for (auto m : config.stbs_per_stage) blocks += m;
  const std::size_t branch = config.patch_features() * d + d + d + config.tokens() * d + blocks * stb + norm + (d + 1);
  std::size_t total = branch * config.modalities.size();
  if (config.cross_modal) {
    const std::size_t joint = d * config.modalities.size();
    total += config.stages() * (2 * norm + 2 * attention);
    total += 2 * joint + joint + 1;
  }
  return total;
}

ComputeEstimate flop_estimate(const ModelConfig& config) {
  config.validate();
  const double d = static_cast<double>(config.dim);
  const double n = static_cast<double>(config.patches());
  const double tokens = static_cast<double>(config.tokens());
  const double hidden = static_cast<double>(config.mlp_ratio) * d;
  const double branches = static_cast<double>(config.modalities.size());

  double blocks = 0.0;
  for (auto m : config.stbs_per_stage) blocks += static_cast<double>(m);
  const double stb = 4.0 * tokens * d * d + 2.0 * tokens * tokens * d + 2.0 * tokens * d * hidden;
  // Query from CLS, keys and values from n patches, scores, weighted sum, output projection.
  const double cls_attention = d * d + 2.0 * n * d * d + 2.0 * n * d + d * d;

  double per_branch = n * static_cast<double>(config.patch_features()) * d + blocks * stb + d;
  double macs = branches * per_branch;
  if (config.cross_modal) {
    macs += branches * static_cast<double>(config.stages()) * 2.0 * cls_attention;
    macs += branches * d;
  }
  return {macs, 2.0 * macs};
}

}  // namespace fmvit
