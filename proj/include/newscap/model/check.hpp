#pragma once

#include <map>
#include <random>
#include <string>

#include "newscap/core/gradcheck.hpp"
#include "newscap/model/model.hpp"

namespace newscap::model {

/// Parameter group a path belongs to, for per-group gradient reports.
inline std::string parameter_group(const std::string& path) {
  auto has = [&](const char* s) { return path.find(s) != std::string::npos; };
  if (has("embed/lstm")) return "position_lstm";
  if (has("embed/")) return "embeddings";
  if (has("image/")) return "image_projection";
  if (has("pointer/")) return "pointer_gates";
  if (has("decoder/out")) return "output_projection";
  if (has("encoder/") && (has("visual_aoa") || has("w_visual_gate") || has("/ffn/") || has("/norm/")))
    return "visual_selective";
  if (has("encoder/") && has("self_aoa")) return "encoder_aoa";
  if (has("decoder/") && has("self_aoa")) return "masked_self_aoa";
  if (has("image_aoa") || has("article_aoa") || has("entity_aoa")) return "multimodal_aoa";
  if (has("decoder/")) return "fusion_ffn";
  return "other";
}

/// BOS + 3 tokens + EOS against a 6-token article with two mentions (one of
/// them an OOV tag). Every id is below 30.
inline SampleInputs gradcheck_sample(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> tok(static_cast<int>(corpus::kReservedTokens),
                                         static_cast<int>(c.vocab_size) - 1);
  SampleInputs in;
  for (int i = 0; i < 6; ++i) in.article_ids.push_back(tok(rng));
  in.article_copy = in.article_ids;
  const int tag = corpus::Vocabulary::tag_id(corpus::EntityType::PERSON);
  in.article_copy[2] = tag;
  in.entity_token_ids = {in.article_ids[1], tag, in.article_ids[4]};
  in.mentions = {{0, 2}, {2, 3}};
  in.entity_copy = {tag, in.article_ids[4]};
  in.caption_ids = {corpus::kBosId, tok(rng), in.article_ids[4], tag, corpus::kEosId};
  in.features = synthetic_features(c.patches, c.feature_dim, seed + 1).grid;
  return in;
}

/// Redraws every parameter uniformly in [-range, range] so layer norms see
/// unit-scale inputs, and biases both copy switches to about 0.27 so the
/// clamp in the mixing rule stays away from its kink at p + q = 1.
template <typename Scalar>
void condition_for_gradcheck(ParamStore<Scalar>& params, std::uint64_t seed, double range = 0.5) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-range, range);
  for (const auto& path : params.paths())
    for (auto& v : params[path].data()) v = static_cast<Scalar>(u(rng));
  for (const char* p : {"pointer/article/b", "pointer/entity/b"})
    if (params.contains(p)) params[p].fill(Scalar{-1});
}

struct GroupResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_path;
};

struct ModelGradCheck {
  GradCheckReport report;
  std::map<std::string, GroupResult> groups;
  bool passed() const { return report.passed(); }
};

/// Finite-difference check of the full teacher-forced loss in 64-bit. The
/// relative-error floor equals the step size, so gradients smaller than eps
/// are judged by absolute error. The eps and eps/2 differences are
/// Richardson-combined to remove the O(eps^2) truncation term.
inline ModelGradCheck model_gradcheck(const ModelConfig& c, std::uint64_t seed, std::size_t coords_per_param = 8) {
  auto m = Model<double>::create(c, seed);
  m.config.dropout = 0.0;
  condition_for_gradcheck(m.params, seed + 17);
  const auto in = gradcheck_sample(m.config, seed + 29);
  LossBuilder<double> loss = [&](Tape<double>& tape, const ParamStore<double>& p) {
    Forward<double> f(tape, p, m.ids, m.config);
    return forward_teacher_forced(f, in).loss;
  };
  GradCheckOptions opt;
  opt.coords_per_param = coords_per_param;
  opt.abs_floor = opt.eps;
  opt.richardson = true;
  opt.seed = seed;
  ModelGradCheck out;
  out.report = finite_diff_check(loss, m.params, opt);
  for (const auto& e : out.report.entries) {
    auto& g = out.groups[parameter_group(e.path)];
    g.checked += e.checked;
    if (e.max_rel_error >= g.max_rel_error) {
      g.max_rel_error = e.max_rel_error;
      g.worst_path = e.path;
    }
  }
  return out;
}

/// The configuration the gradient checks run at: small enough for exhaustive
/// coordinates, every component enabled.
inline ModelConfig gradcheck_config() {
  ModelConfig c;
  c.vocab_size = 30;
  c.hidden = 8;
  c.heads = 2;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.patches = 3;
  c.feature_dim = 5;
  c.max_positions = 16;
  c.ffn_multiplier = 2;
  c.dropout = 0.0;
  return c;
}

}  // namespace newscap::model
