#pragma once

#include <string>
#include <vector>

#include "newscap/core/params.hpp"
#include "newscap/model/config.hpp"

namespace newscap::model {

struct AttentionIds {
  ParamId w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
};

/// Multi-head attention plus the attention-on-attention gate (W_g) and
/// information projection (W_a), both over [attended ; query].
struct AoaIds {
  AttentionIds attention;
  ParamId w_gate, b_gate, w_info, b_info;
};

struct FfnIds {
  ParamId w_in, b_in, w_out, b_out;
};

struct NormIds {
  ParamId gain, bias;
};

struct EncoderLayerIds {
  AoaIds self;
  AoaIds visual;
  ParamId w_visual_gate;
  FfnIds ffn;
  NormIds norm;
};

struct DecoderLayerIds {
  AoaIds self;
  AoaIds image, article, entity;
  NormIds context_norm;
  FfnIds ffn;
  NormIds output_norm;
};

struct ModelIds {
  ParamId word_table, position_table;
  ParamId lstm_w_input, lstm_w_hidden, lstm_bias;
  ParamId image_w, image_b;
  ParamId decoder_image_w, decoder_image_b;
  std::vector<EncoderLayerIds> encoder;
  std::vector<DecoderLayerIds> decoder;
  ParamId out_w, out_b;
  ParamId pointer_article_w, pointer_article_b;
  ParamId pointer_entity_w, pointer_entity_b;
};

namespace detail {

// Registers (when `store` is non-const) or resolves every parameter in one
// fixed order so that paths, ids and checkpoint order always agree.
template <typename Scalar>
class LayoutBuilder {
 public:
  LayoutBuilder(ParamStore<Scalar>& store, Rng* rng) : store_(store), rng_(rng) {}

  ParamId matrix(const std::string& path, std::size_t in, std::size_t out) {
    return get(path, [&] { return init::xavier<Scalar>(in, out, *rng_); });
  }
  ParamId bias(const std::string& path, std::size_t n) {
    return get(path, [&] { return Tensor<Scalar>({1, n}); });
  }
  ParamId gain(const std::string& path, std::size_t n, Scalar value = Scalar{1}) {
    return get(path, [&] { return Tensor<Scalar>({1, n}, value); });
  }
  ParamId table(const std::string& path, std::size_t rows, std::size_t cols) {
    return get(path, [&] { return init::normal<Scalar>({rows, cols}, 0.02, *rng_); });
  }

 private:
  template <typename Make>
  ParamId get(const std::string& path, Make make) {
    if (rng_) return store_.add(path, make());
    return store_.id(path);
  }
  ParamStore<Scalar>& store_;
  Rng* rng_;
};

template <typename Scalar>
AoaIds aoa_layout(LayoutBuilder<Scalar>& b, const std::string& prefix, std::size_t h) {
  AoaIds ids;
  auto& a = ids.attention;
  a.w_query = b.matrix(prefix + "/w_query", h, h);
  a.b_query = b.bias(prefix + "/b_query", h);
  a.w_key = b.matrix(prefix + "/w_key", h, h);
  a.b_key = b.bias(prefix + "/b_key", h);
  a.w_value = b.matrix(prefix + "/w_value", h, h);
  a.b_value = b.bias(prefix + "/b_value", h);
  a.w_out = b.matrix(prefix + "/w_out", h, h);
  a.b_out = b.bias(prefix + "/b_out", h);
  ids.w_gate = b.matrix(prefix + "/w_gate", 2 * h, h);
  ids.b_gate = b.bias(prefix + "/b_gate", h);
  ids.w_info = b.matrix(prefix + "/w_info", 2 * h, h);
  ids.b_info = b.bias(prefix + "/b_info", h);
  return ids;
}

template <typename Scalar>
FfnIds ffn_layout(LayoutBuilder<Scalar>& b, const std::string& prefix, std::size_t h, std::size_t inner) {
  return {b.matrix(prefix + "/w_in", h, inner), b.bias(prefix + "/b_in", inner),
          b.matrix(prefix + "/w_out", inner, h), b.bias(prefix + "/b_out", h)};
}

template <typename Scalar>
NormIds norm_layout(LayoutBuilder<Scalar>& b, const std::string& prefix, std::size_t h) {
  return {b.gain(prefix + "/gain", h), b.bias(prefix + "/bias", h)};
}

template <typename Scalar>
ModelIds layout(LayoutBuilder<Scalar>& b, const ModelConfig& c) {
  const std::size_t h = c.hidden;
  const std::size_t inner = h * c.ffn_multiplier;
  ModelIds ids;
  ids.word_table = b.table("embed/words", c.vocab_size, h);
  ids.position_table = b.table("embed/positions", c.max_positions, h);
  ids.lstm_w_input = b.matrix("embed/lstm/w_input", h, 4 * h);
  ids.lstm_w_hidden = b.matrix("embed/lstm/w_hidden", h, 4 * h);
  ids.lstm_bias = b.bias("embed/lstm/bias", 4 * h);
  ids.image_w = b.matrix("image/w", c.feature_dim, h);
  ids.image_b = b.bias("image/b", h);
  if (c.share_image_projection) {
    ids.decoder_image_w = ids.image_w;
    ids.decoder_image_b = ids.image_b;
  } else {
    ids.decoder_image_w = b.matrix("decoder/image/w", c.feature_dim, h);
    ids.decoder_image_b = b.bias("decoder/image/b", h);
  }
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    const std::string p = "encoder/layer" + std::to_string(l);
    EncoderLayerIds e;
    e.self = aoa_layout(b, p + "/self_aoa", h);
    e.visual = aoa_layout(b, p + "/visual_aoa", h);
    e.w_visual_gate = b.matrix(p + "/w_visual_gate", h, h);
    e.ffn = ffn_layout(b, p + "/ffn", h, inner);
    e.norm = norm_layout(b, p + "/norm", h);
    ids.encoder.push_back(e);
  }
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    const std::string p = "decoder/layer" + std::to_string(l);
    DecoderLayerIds d;
    d.self = aoa_layout(b, p + "/self_aoa", h);
    d.image = aoa_layout(b, p + "/image_aoa", h);
    d.article = aoa_layout(b, p + "/article_aoa", h);
    d.entity = aoa_layout(b, p + "/entity_aoa", h);
    d.context_norm = norm_layout(b, p + "/context_norm", h);
    d.ffn = ffn_layout(b, p + "/ffn", h, inner);
    d.output_norm = norm_layout(b, p + "/output_norm", h);
    ids.decoder.push_back(d);
  }
  ids.out_w = b.matrix("decoder/out/w", h, c.vocab_size);
  ids.out_b = b.bias("decoder/out/b", c.vocab_size);
  ids.pointer_article_w = b.matrix("pointer/article/w", 3 * h, 1);
  // switches start near 0.27 so p + q < 1 and the generator keeps mass
  ids.pointer_article_b = b.gain("pointer/article/b", 1, Scalar{-1});
  ids.pointer_entity_w = b.matrix("pointer/entity/w", 3 * h, 1);
  ids.pointer_entity_b = b.gain("pointer/entity/b", 1, Scalar{-1});
  return ids;
}

}  // namespace detail

/// Freshly initialized parameters: uniform Xavier weights, zero biases (copy
/// switch biases -1), unit layer-norm gains, N(0, 0.02) embedding tables.
template <typename Scalar = float>
ParamStore<Scalar> init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ParamStore<Scalar> store;
  Rng rng(seed);
  detail::LayoutBuilder<Scalar> b(store, &rng);
  detail::layout(b, c);
  return store;
}

/// Resolves parameter ids by path in an existing store.
template <typename Scalar>
ModelIds resolve_ids(const ParamStore<Scalar>& store, const ModelConfig& c) {
  c.validate();
  auto& mutable_store = const_cast<ParamStore<Scalar>&>(store);  // lookups only
  detail::LayoutBuilder<Scalar> b(mutable_store, nullptr);
  return detail::layout(b, c);
}

}  // namespace newscap::model
