#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "newscap/model/inputs.hpp"

namespace newscap::model {

/// Encoder outputs for one sample plus their per-layer key/value projections,
/// computed once and reused by every decoder step.
template <typename Scalar>
struct EncodedContexts {
  Var<Scalar> image;          // [K x H], decoder-side projection
  Var<Scalar> article;        // [L x H]
  std::optional<Var<Scalar>> entities;  // [M x H]
  struct LayerKeys {
    ProjectedKeys<Scalar> image, article;
    std::optional<ProjectedKeys<Scalar>> entities;
  };
  std::vector<LayerKeys> keys;
  std::vector<int> article_copy, entity_copy;
};

template <typename Scalar>
EncodedContexts<Scalar> encode_contexts(Forward<Scalar>& f, const SampleInputs& in) {
  const Tensor<Scalar> grid = in.features.template cast<Scalar>();
  auto enc_image = project_image(f, grid, f.ids.image_w, f.ids.image_b);
  EncodedContexts<Scalar> c;
  c.image = f.config.share_image_projection ? enc_image
                                            : project_image(f, grid, f.ids.decoder_image_w, f.ids.decoder_image_b);
  c.article = encode_text(f, std::span<const int>(in.article_ids), enc_image);
  if (f.config.use_entities) {
    c.entities = encode_entities(f, std::span<const int>(in.entity_token_ids),
                                 std::span<const MentionSpan>(in.mentions), enc_image);
    c.entity_copy = in.entity_copy;
  }
  c.article_copy = in.article_copy;
  for (const auto& layer : f.ids.decoder) {
    typename EncodedContexts<Scalar>::LayerKeys k{project_keys(f, layer.image.attention, c.image, c.image),
                                                  project_keys(f, layer.article.attention, c.article, c.article),
                                                  std::nullopt};
    if (c.entities) k.entities = project_keys(f, layer.entity.attention, *c.entities, *c.entities);
    c.keys.push_back(k);
  }
  return c;
}

/// Per-step decoder outputs, one row per caption-prefix position.
template <typename Scalar>
struct DecoderOutput {
  Var<Scalar> p_vocab;   // P_s [N x V]
  Var<Scalar> p_star;    // [N x V]
  std::optional<Var<Scalar>> a_article;  // a_V [N x L]
  std::optional<Var<Scalar>> a_entity;   // a_E [N x M]
  std::optional<Var<Scalar>> p_gen, q_gen;  // [N x 1]
  /// mixing weights (article, entity, vocabulary), each [N x 1]
  std::optional<Var<Scalar>> w_article, w_entity, w_vocab;
};

template <typename Scalar>
struct LayerStep {
  Var<Scalar> xa, image, article;
  std::optional<Var<Scalar>> entity;
  std::optional<Var<Scalar>> a_article, a_entity;
  Var<Scalar> out;
};

/// Causal self-AoA: position t attends to positions 1..t.
template <typename Scalar>
Var<Scalar> masked_self_aoa(Forward<Scalar>& f, const AoaIds& ids, Var<Scalar> x) {
  const auto mask = causal_mask(x.rows());
  return aoa(f, ids, x, x, x, &mask);
}

/// One decoder layer: masked self-AoA, three context AoA blocks, then
/// x' = LN(xa + C), x* = LN(x' + FFN(x')).
template <typename Scalar>
LayerStep<Scalar> decoder_layer(Forward<Scalar>& f, const DecoderLayerIds& ids,
                                const typename EncodedContexts<Scalar>::LayerKeys& keys, Var<Scalar> x,
                                bool keep_weights) {
  LayerStep<Scalar> s;
  s.xa = masked_self_aoa(f, ids.self, x);
  s.image = aoa(f, ids.image, s.xa, keys.image);
  AttentionResult<Scalar> att;
  s.article = aoa(f, ids.article, s.xa, keys.article, nullptr, &att);
  if (keep_weights) s.a_article = average_heads(att.weights);
  auto context = ops::add(s.image, s.article);
  if (keys.entities) {
    s.entity = aoa(f, ids.entity, s.xa, *keys.entities, nullptr, &att);
    if (keep_weights) s.a_entity = average_heads(att.weights);
    context = ops::add(context, *s.entity);
  }
  auto fused = norm(f, ids.context_norm, ops::add(s.xa, context));
  s.out = norm(f, ids.output_norm, ops::add(fused, feed_forward(f, ids.ffn, fused)));
  return s;
}

/// Mixing weights for (article copy, entity copy, vocabulary).
template <typename Scalar>
struct MixWeights {
  Var<Scalar> article;
  std::optional<Var<Scalar>> entity;
  Var<Scalar> vocab;
};

template <typename Scalar>
MixWeights<Scalar> mix_weights(Var<Scalar> p, std::optional<Var<Scalar>> q, PointerMixRule rule) {
  auto switches = q ? ops::add(p, *q) : p;
  auto rest = ops::affine(switches, Scalar{-1}, Scalar{1});
  if (rule == PointerMixRule::literal) return {p, q, rest};
  auto s = ops::relu(rest);
  auto total = ops::add(switches, s);
  MixWeights<Scalar> w{ops::div(p, total), std::nullopt, ops::div(s, total)};
  if (q) w.entity = ops::div(*q, total);
  return w;
}

/// P* = w_p scatter(a_V) + w_q scatter(a_E) + w_s P_s.
template <typename Scalar>
Var<Scalar> pointer_mix(const MixWeights<Scalar>& w, Var<Scalar> p_vocab, Var<Scalar> a_article,
                        std::span<const int> article_copy, std::optional<Var<Scalar>> a_entity,
                        std::span<const int> entity_copy) {
  const std::size_t v = p_vocab.cols();
  auto mixed = ops::add(ops::mul_col(p_vocab, w.vocab), ops::mul_col(ops::scatter_cols(a_article, article_copy, v), w.article));
  if (a_entity && w.entity) {
    mixed = ops::add(mixed, ops::mul_col(ops::scatter_cols(*a_entity, entity_copy, v), *w.entity));
  }
  return mixed;
}

/// Runs the decoder over a caption prefix (BOS + tokens) and returns all
/// distributions.
template <typename Scalar>
DecoderOutput<Scalar> decode_prefix(Forward<Scalar>& f, const EncodedContexts<Scalar>& c, std::span<const int> prefix) {
  auto x0 = embed_positions(f, prefix);
  Var<Scalar> x = x0;
  std::optional<LayerStep<Scalar>> last;
  for (std::size_t l = 0; l < f.ids.decoder.size(); ++l) {
    const bool is_last = l + 1 == f.ids.decoder.size();
    last = decoder_layer(f, f.ids.decoder[l], c.keys[l], x, is_last);
    x = last->out;
  }
  DecoderOutput<Scalar> out;
  out.p_vocab = ops::softmax_rows(ops::linear(x, f.p(f.ids.out_w), f.p(f.ids.out_b)));
  out.a_article = last->a_article;
  out.a_entity = last->a_entity;
  if (!f.config.use_pointer) {
    out.p_star = out.p_vocab;
    return out;
  }
  out.p_gen = ops::sigmoid(ops::linear(ops::concat_cols<Scalar>({x0, last->article, last->image}),
                                       f.p(f.ids.pointer_article_w), f.p(f.ids.pointer_article_b)));
  if (last->entity) {
    out.q_gen = ops::sigmoid(ops::linear(ops::concat_cols<Scalar>({x0, *last->entity, last->image}),
                                         f.p(f.ids.pointer_entity_w), f.p(f.ids.pointer_entity_b)));
  }
  auto w = mix_weights(*out.p_gen, out.q_gen, f.config.mix_rule);
  out.w_article = w.article;
  out.w_entity = w.entity;
  out.w_vocab = w.vocab;
  out.p_star = pointer_mix(w, out.p_vocab, *out.a_article, std::span<const int>(c.article_copy), out.a_entity,
                           std::span<const int>(c.entity_copy));
  return out;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// -sum_t log max(P*_t[target_t], 1e-12) as a [1 x 1] var.
template <typename Scalar>
Var<Scalar> nll_loss(Var<Scalar> p_star, std::span<const int> targets) {
  if (p_star.rows() != targets.size()) {
    throw std::invalid_argument("nll_loss: " + std::to_string(p_star.rows()) + " steps but " +
                                std::to_string(targets.size()) + " targets");
  }
  return ops::scale(ops::sum(ops::log_pick(p_star, targets, static_cast<Scalar>(kProbabilityFloor))), Scalar{-1});
}

template <typename Scalar>
struct TeacherForced {
  Var<Scalar> loss;        // summed over steps
  std::size_t tokens = 0;  // number of predicted targets
  DecoderOutput<Scalar> steps;
  double mean_loss() const { return loss.value()[0] / static_cast<double>(tokens); }
};

/// Encodes the sample, feeds caption_ids[:-1] and scores caption_ids[1:].
template <typename Scalar>
TeacherForced<Scalar> forward_teacher_forced(Forward<Scalar>& f, const SampleInputs& in) {
  if (in.caption_ids.size() < 2) throw std::invalid_argument("caption needs BOS and at least one target");
  if (in.caption_ids.size() - 1 > f.config.max_positions) {
    throw std::length_error("caption longer than the position table");
  }
  auto contexts = encode_contexts(f, in);
  std::span<const int> ids(in.caption_ids);
  auto steps = decode_prefix(f, contexts, ids.first(ids.size() - 1));
  auto loss = nll_loss(steps.p_star, ids.subspan(1));
  return {loss, ids.size() - 1, steps};
}

}  // namespace newscap::model
