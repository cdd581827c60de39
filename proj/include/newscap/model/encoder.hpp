#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "newscap/model/attention.hpp"
#include "newscap/model/features.hpp"

namespace newscap::model {

/// Extends the position-LSTM output to at least `length` rows and returns
/// rows [0, length). Standard LSTM cell, gate order (input, forget, cell,
/// output), zero initial state.
template <typename Scalar>
Var<Scalar> position_states(Forward<Scalar>& f, std::size_t length) {
  const std::size_t h = f.config.hidden;
  if (length > f.config.max_positions) {
    throw std::length_error("sequence of " + std::to_string(length) + " tokens exceeds " +
                            std::to_string(f.config.max_positions) + " positions");
  }
  const std::size_t have = f.position_rows.size();
  if (length > have) {
    auto table = f.p(f.ids.position_table);
    auto inputs = ops::linear(ops::slice_rows(table, have, length), f.p(f.ids.lstm_w_input), f.p(f.ids.lstm_bias));
    auto w_hidden = f.p(f.ids.lstm_w_hidden);
    if (!f.lstm_h) {
      f.lstm_h = ops::zeros(f.tape, 1, h);
      f.lstm_c = ops::zeros(f.tape, 1, h);
    }
    for (std::size_t t = 0; t < length - have; ++t) {
      auto gates = ops::add(ops::slice_rows(inputs, t, t + 1), ops::matmul(*f.lstm_h, w_hidden));
      auto i = ops::sigmoid(ops::slice_cols(gates, 0, h));
      auto fg = ops::sigmoid(ops::slice_cols(gates, h, 2 * h));
      auto g = ops::tanh(ops::slice_cols(gates, 2 * h, 3 * h));
      auto o = ops::sigmoid(ops::slice_cols(gates, 3 * h, 4 * h));
      f.lstm_c = ops::add(ops::mul(fg, *f.lstm_c), ops::mul(i, g));
      f.lstm_h = ops::mul(o, ops::tanh(*f.lstm_c));
      f.position_rows.push_back(*f.lstm_h);
    }
  }
  if (length == 1) return f.position_rows.front();
  return ops::concat_rows(std::vector<Var<Scalar>>(f.position_rows.begin(), f.position_rows.begin() + length));
}

/// w'_i = w_i + LSTM(p_1..p_i)_i.
template <typename Scalar>
Var<Scalar> embed_positions(Forward<Scalar>& f, std::span<const int> ids) {
  if (ids.empty()) throw std::invalid_argument("embed_positions: empty token sequence");
  auto words = ops::embedding_lookup(f.p(f.ids.word_table), ids);
  return ops::add(words, position_states(f, ids.size()));
}

/// Per-patch affine map D -> H.
template <typename Scalar>
Var<Scalar> project_image(Forward<Scalar>& f, const Tensor<Scalar>& grid, ParamId w, ParamId b) {
  if (grid.cols() != f.params.value(w).rows()) {
    throw ShapeError("project_image: features have " + std::to_string(grid.cols()) + " channels, weights expect " +
                     std::to_string(f.params.value(w).rows()));
  }
  return ops::linear(f.tape.constant(grid), f.p(w), f.p(b));
}

/// Gate every text row by tanh(W_v aoa(mean(T), Vproj, Vproj)), then
/// residual FFN and layer norm.
template <typename Scalar>
Var<Scalar> visual_selective(Forward<Scalar>& f, const EncoderLayerIds& ids, Var<Scalar> text, Var<Scalar> image) {
  auto pooled = ops::avg_pool_rows(text);
  auto attended = aoa(f, ids.visual, pooled, image, image);
  auto gate = ops::tanh(ops::matmul(attended, f.p(ids.w_visual_gate)));
  auto gated = ops::mul_row(text, gate);
  return norm(f, ids.norm, ops::add(gated, feed_forward(f, ids.ffn, gated)));
}

/// Article (or entity) token ids -> contextual rows [L x H].
template <typename Scalar>
Var<Scalar> encode_text(Forward<Scalar>& f, std::span<const int> ids, Var<Scalar> image) {
  Var<Scalar> x = embed_positions(f, ids);
  for (const auto& layer : f.ids.encoder) {
    x = aoa(f, layer.self, x, x, x);
    if (f.config.use_visual_selective) {
      x = visual_selective(f, layer, x, image);
    } else {
      x = norm(f, layer.norm, ops::add(x, feed_forward(f, layer.ffn, x)));
    }
  }
  return x;
}

/// Half-open token range of one mention inside the concatenated entity
/// sequence.
struct MentionSpan {
  std::size_t begin = 0, end = 0;
};

/// Runs all mention tokens through encode_text as one sequence and mean-pools
/// each mention. Returns nullopt when there are no mentions.
template <typename Scalar>
std::optional<Var<Scalar>> encode_entities(Forward<Scalar>& f, std::span<const int> token_ids,
                                           std::span<const MentionSpan> mentions, Var<Scalar> image) {
  if (mentions.empty()) return std::nullopt;
  auto rows = encode_text(f, token_ids, image);
  std::vector<Var<Scalar>> pooled;
  pooled.reserve(mentions.size());
  for (const auto& m : mentions) {
    if (m.begin >= m.end || m.end > token_ids.size()) throw std::out_of_range("encode_entities: bad mention span");
    auto part = ops::slice_rows(rows, m.begin, m.end);
    pooled.push_back(m.end - m.begin == 1 ? part : ops::avg_pool_rows(part));
  }
  return pooled.size() == 1 ? pooled.front() : ops::concat_rows(pooled);
}

}  // namespace newscap::model
