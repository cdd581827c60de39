#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace newscap::model {

/// How the two copy switches and the generator share probability mass.
enum class PointerMixRule {
  /// (p, q, max(0, 1 - p - q)) renormalized to sum to one
  clamp_renormalize,
  /// (p, q, 1 - p - q) as written; may leave the simplex
  literal,
};

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 512;
  std::size_t heads = 8;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t patches = 49;
  std::size_t feature_dim = 2048;
  std::size_t max_positions = 512;
  std::size_t ffn_multiplier = 4;
  double dropout = 0.1;
  /// entity set as a third context and copy source
  bool use_entities = true;
  bool use_pointer = true;
  bool use_visual_selective = true;
  bool share_image_projection = true;
  PointerMixRule mix_rule = PointerMixRule::clamp_renormalize;

  void validate() const {
    if (vocab_size == 0 || hidden == 0 || heads == 0 || patches == 0 || feature_dim == 0 ||
        max_positions == 0 || encoder_layers == 0 || decoder_layers == 0) {
      throw std::invalid_argument("model config: all sizes must be positive");
    }
    if (hidden % heads != 0) throw std::invalid_argument("model config: heads must divide hidden");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model config: dropout in [0,1)");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"hidden", c.hidden},
          {"heads", c.heads},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"patches", c.patches},
          {"feature_dim", c.feature_dim},
          {"max_positions", c.max_positions},
          {"ffn_multiplier", c.ffn_multiplier},
          {"dropout", c.dropout},
          {"use_entities", c.use_entities},
          {"use_pointer", c.use_pointer},
          {"use_visual_selective", c.use_visual_selective},
          {"share_image_projection", c.share_image_projection},
          {"pointer_mix_rule", c.mix_rule == PointerMixRule::literal ? "literal" : "clamp_renormalize"}};
}

/// Fields absent from `j` keep the values already in `c`.
inline void update_from_json(ModelConfig& c, const nlohmann::json& j) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.patches = j.value("patches", c.patches);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
  c.dropout = j.value("dropout", c.dropout);
  c.use_entities = j.value("use_entities", c.use_entities);
  c.use_pointer = j.value("use_pointer", c.use_pointer);
  c.use_visual_selective = j.value("use_visual_selective", c.use_visual_selective);
  c.share_image_projection = j.value("share_image_projection", c.share_image_projection);
  if (j.contains("pointer_mix_rule")) {
    const auto rule = j.at("pointer_mix_rule").get<std::string>();
    if (rule == "literal") c.mix_rule = PointerMixRule::literal;
    else if (rule == "clamp_renormalize") c.mix_rule = PointerMixRule::clamp_renormalize;
    else throw std::invalid_argument("unknown pointer_mix_rule " + rule);
  }
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  update_from_json(c, j);
  return c;
}

}  // namespace newscap::model
