#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "newscap/core/ops.hpp"
#include "newscap/model/forward.hpp"

namespace newscap::model {

template <typename Scalar>
struct AttentionResult {
  /// attended vectors after the output projection, [Lq x H]
  Var<Scalar> output;
  /// one [Lq x Lk] weight matrix per head
  std::vector<Var<Scalar>> weights;
};

/// Keys/values already projected, so contexts shared across decoding steps
/// are projected once.
template <typename Scalar>
struct ProjectedKeys {
  Var<Scalar> keys;
  Var<Scalar> values;
};

template <typename Scalar>
ProjectedKeys<Scalar> project_keys(Forward<Scalar>& f, const AttentionIds& ids, Var<Scalar> k, Var<Scalar> v) {
  return {ops::linear(k, f.p(ids.w_key), f.p(ids.b_key)), ops::linear(v, f.p(ids.w_value), f.p(ids.b_value))};
}

/// Lower-triangular mask including the diagonal.
inline ops::Mask causal_mask(std::size_t n) {
  ops::Mask m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
  return m;
}

/// Scaled dot-product attention per head (scale 1/sqrt(H/heads)) followed by
/// the output projection.
template <typename Scalar>
AttentionResult<Scalar> mh_attention(Forward<Scalar>& f, const AttentionIds& ids, Var<Scalar> query,
                                     const ProjectedKeys<Scalar>& kv, const ops::Mask* mask = nullptr) {
  const std::size_t h = f.config.hidden;
  const std::size_t heads = f.config.heads;
  const std::size_t d = h / heads;
  ops::detail::check(query.cols() == h, "mh_attention", "query width must equal hidden size");
  const Scalar scale = Scalar{1} / std::sqrt(static_cast<Scalar>(d));
  Var<Scalar> q = ops::linear(query, f.p(ids.w_query), f.p(ids.b_query));
  AttentionResult<Scalar> r;
  std::vector<Var<Scalar>> per_head;
  per_head.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    auto qh = ops::slice_cols(q, i * d, (i + 1) * d);
    auto kh = ops::slice_cols(kv.keys, i * d, (i + 1) * d);
    auto vh = ops::slice_cols(kv.values, i * d, (i + 1) * d);
    auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), scale);
    auto w = ops::softmax_rows(scores, mask);
    r.weights.push_back(w);
    per_head.push_back(ops::matmul(f.dropout(w), vh));
  }
  auto joined = heads == 1 ? per_head.front() : ops::concat_cols(per_head);
  r.output = ops::linear(joined, f.p(ids.w_out), f.p(ids.b_out));
  return r;
}

template <typename Scalar>
AttentionResult<Scalar> mh_attention(Forward<Scalar>& f, const AttentionIds& ids, Var<Scalar> query,
                                     Var<Scalar> keys, Var<Scalar> values, const ops::Mask* mask = nullptr) {
  return mh_attention(f, ids, query, project_keys(f, ids, keys, values), mask);
}

/// Attention on attention: with v = MHAtt(q, K, V) and x_i = [v_i ; q_i],
/// output_i = sigmoid(W_g x_i + b_g) * (W_a x_i + b_a).
template <typename Scalar>
Var<Scalar> aoa(Forward<Scalar>& f, const AoaIds& ids, Var<Scalar> query, const ProjectedKeys<Scalar>& kv,
                const ops::Mask* mask = nullptr, AttentionResult<Scalar>* attention_out = nullptr) {
  auto att = mh_attention(f, ids.attention, query, kv, mask);
  auto joined = ops::concat_cols<Scalar>({att.output, query});
  auto gate = ops::sigmoid(ops::linear(joined, f.p(ids.w_gate), f.p(ids.b_gate)));
  auto info = ops::linear(joined, f.p(ids.w_info), f.p(ids.b_info));
  if (attention_out) *attention_out = att;
  return ops::mul(gate, info);
}

template <typename Scalar>
Var<Scalar> aoa(Forward<Scalar>& f, const AoaIds& ids, Var<Scalar> query, Var<Scalar> keys, Var<Scalar> values,
                const ops::Mask* mask = nullptr, AttentionResult<Scalar>* attention_out = nullptr) {
  return aoa(f, ids, query, project_keys(f, ids.attention, keys, values), mask, attention_out);
}

/// Head-averaged attention weights, [Lq x Lk].
template <typename Scalar>
Var<Scalar> average_heads(const std::vector<Var<Scalar>>& weights) {
  Var<Scalar> acc = weights.front();
  for (std::size_t i = 1; i < weights.size(); ++i) acc = ops::add(acc, weights[i]);
  if (weights.size() == 1) return acc;
  return ops::scale(acc, Scalar{1} / static_cast<Scalar>(weights.size()));
}

template <typename Scalar>
Var<Scalar> feed_forward(Forward<Scalar>& f, const FfnIds& ids, Var<Scalar> x) {
  auto hidden = ops::relu(ops::linear(x, f.p(ids.w_in), f.p(ids.b_in)));
  return f.dropout(ops::linear(hidden, f.p(ids.w_out), f.p(ids.b_out)));
}

template <typename Scalar>
Var<Scalar> norm(Forward<Scalar>& f, const NormIds& ids, Var<Scalar> x) {
  return ops::layer_norm(x, f.p(ids.gain), f.p(ids.bias));
}

}  // namespace newscap::model
