#include <gtest/gtest.h>

#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "model_oracle.hpp"
#include "newscap/core/gradcheck.hpp"
#include "newscap/model/check.hpp"

using namespace newscap;
using namespace newscap::model;

namespace {

ModelConfig small_config(std::size_t vocab = 30) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.hidden = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.patches = 3;
  c.feature_dim = 5;
  c.max_positions = 40;
  c.ffn_multiplier = 2;
  c.dropout = 0.0;
  return c;
}

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

Tensor<float> random_features(const ModelConfig& c, std::uint64_t seed) {
  return random_tensor({c.patches, c.feature_dim}, seed).cast<float>();
}

// Article "w5 w6 ... " with entity tokens and a caption; ids stay below 30.
SampleInputs toy_inputs(const ModelConfig& c, std::uint64_t seed, std::size_t caption_len = 5) {
  Rng rng(seed);
  std::uniform_int_distribution<int> tok(22, static_cast<int>(c.vocab_size) - 1);
  SampleInputs in;
  for (int i = 0; i < 6; ++i) in.article_ids.push_back(tok(rng));
  in.article_copy = in.article_ids;
  in.article_copy[2] = corpus::Vocabulary::tag_id(corpus::EntityType::PERSON);
  in.entity_token_ids = {in.article_ids[1], in.article_copy[2], in.article_ids[4]};
  in.mentions = {{0, 2}, {2, 3}};
  in.entity_copy = {in.article_copy[2], in.article_ids[4]};
  in.caption_ids.push_back(corpus::kBosId);
  for (std::size_t i = 0; i < caption_len; ++i) in.caption_ids.push_back(tok(rng));
  in.caption_ids.push_back(corpus::kEosId);
  in.features = random_features(c, seed + 99);
  return in;
}

oracle::Mat features_mat(const SampleInputs& in) { return oracle::from(in.features.cast<double>()); }

double max_abs_diff(const Tensor<double>& a, const oracle::Mat& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b[i][j]));
  return worst;
}

void set_param(Model<double>& m, const std::string& path, double v) {
  auto& t = const_cast<Tensor<double>&>(m.params[path]);
  t.fill(v);
}

void expect_rows_are_distributions(const Tensor<double>& t, double tol) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < t.cols(); ++j) {
      EXPECT_GE(t(i, j), 0.0);
      s += t(i, j);
    }
    EXPECT_NEAR(s, 1.0, tol);
  }
}

}  // namespace

// ---------------------------------------------------------------- embeddings

TEST(EmbedPositions, ZeroLstmGivesWordEmbeddings) {
  auto m = Model<double>::create(small_config(), 1);
  for (auto p : {"embed/lstm/w_input", "embed/lstm/w_hidden", "embed/lstm/bias"}) set_param(m, p, 0.0);
  Tape<double> tape;
  auto f = m.forward(tape);
  std::vector<int> ids = {5, 9, 22};
  auto out = embed_positions(f, std::span<const int>(ids)).value();
  const auto& table = m.params["embed/words"];
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(out(i, j), table(static_cast<std::size_t>(ids[i]), j));
}

TEST(EmbedPositions, SingleStepMatchesHandEvaluatedCell) {
  auto m = Model<double>::create(small_config(), 2);
  Tape<double> tape;
  auto f = m.forward(tape);
  std::vector<int> ids = {7};
  auto out = embed_positions(f, std::span<const int>(ids)).value();
  const auto& p = m.params["embed/positions"];
  const auto& wi = m.params["embed/lstm/w_input"];
  const auto& b = m.params["embed/lstm/bias"];
  const auto& words = m.params["embed/words"];
  const std::size_t h = 8;
  auto gate = [&](std::size_t col) {
    double s = b[col];
    for (std::size_t k = 0; k < h; ++k) s += p(0, k) * wi(k, col);
    return s;
  };
  for (std::size_t j = 0; j < h; ++j) {
    const double i = 1 / (1 + std::exp(-gate(j)));
    const double g = std::tanh(gate(2 * h + j));
    const double o = 1 / (1 + std::exp(-gate(3 * h + j)));
    EXPECT_NEAR(out(0, j), words(7, j) + o * std::tanh(i * g), 1e-12);
  }
}

TEST(EmbedPositions, PositionSensitiveAndBounded) {
  auto m = Model<double>::create(small_config(), 3);
  Tape<double> tape;
  auto f = m.forward(tape);
  std::vector<int> a = {5, 9, 11}, b = {9, 5, 11};
  auto oa = embed_positions(f, std::span<const int>(a)).value();
  auto ob = embed_positions(f, std::span<const int>(b)).value();
  double diff = 0;
  for (std::size_t j = 0; j < 8; ++j) diff += std::abs(oa(0, j) - ob(1, j));
  EXPECT_GT(diff, 1e-6);
  std::vector<int> too_long(41, 5);
  EXPECT_THROW(embed_positions(f, std::span<const int>(too_long)), std::length_error);
}

// ---------------------------------------------------------------- attention

TEST(Attention, SingleKeyGetsAllWeight) {
  auto m = Model<double>::create(small_config(), 4);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto q = tape.constant(random_tensor({3, 8}, 1));
  auto k = tape.constant(random_tensor({1, 8}, 2));
  const auto& ids = m.ids.encoder[0].self.attention;
  auto r = mh_attention(f, ids, q, k, k);
  for (const auto& w : r.weights)
    for (double v : w.value().data()) EXPECT_DOUBLE_EQ(v, 1.0);
  auto vproj = ops::linear(k, f.p(ids.w_value), f.p(ids.b_value));
  auto expected = ops::linear(vproj, f.p(ids.w_out), f.p(ids.b_out)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(r.output.value()(i, j), expected(0, j), 1e-12);
}

TEST(Attention, IdenticalKeysGiveUniformWeights) {
  auto m = Model<double>::create(small_config(), 5);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto row = random_tensor({1, 8}, 3);
  Tensor<double> keys({4, 8});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) keys(i, j) = row[j];
  auto k = tape.constant(keys);
  auto r = mh_attention(f, m.ids.encoder[0].self.attention, tape.constant(random_tensor({2, 8}, 4)), k, k);
  for (const auto& w : r.weights)
    for (double v : w.value().data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Attention, WeightRowsSumToOne) {
  auto m = Model<double>::create(small_config(), 6);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto k = tape.constant(random_tensor({4, 8}, 5));
  auto r = mh_attention(f, m.ids.encoder[0].self.attention, tape.constant(random_tensor({3, 8}, 6)), k, k);
  ASSERT_EQ(r.weights.size(), 2u);
  for (const auto& w : r.weights) expect_rows_are_distributions(w.value(), 1e-6);
}

TEST(Attention, FullyMaskedRowIsAnError) {
  auto m = Model<double>::create(small_config(), 7);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto k = tape.constant(random_tensor({2, 8}, 5));
  ops::Mask mask = {1, 1, 0, 0};
  EXPECT_THROW(mh_attention(f, m.ids.encoder[0].self.attention, k, k, k, &mask), std::domain_error);
}

TEST(Aoa, SaturatedClosedGateGivesZero) {
  auto m = Model<double>::create(small_config(), 8);
  set_param(m, "encoder/layer0/self_aoa/b_gate", -1e6);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto x = tape.constant(random_tensor({3, 8}, 7));
  auto out = aoa(f, m.ids.encoder[0].self, x, x, x).value();
  for (double v : out.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Aoa, ProjectorAndOpenGateReturnAttended) {
  auto m = Model<double>::create(small_config(), 9);
  set_param(m, "encoder/layer0/self_aoa/b_gate", 1e6);
  set_param(m, "encoder/layer0/self_aoa/b_info", 0.0);
  auto& wa = const_cast<Tensor<double>&>(m.params["encoder/layer0/self_aoa/w_info"]);
  wa.fill(0.0);
  for (std::size_t i = 0; i < 8; ++i) wa(i, i) = 1.0;
  Tape<double> tape;
  auto f = m.forward(tape);
  auto x = tape.constant(random_tensor({3, 8}, 8));
  auto out = aoa(f, m.ids.encoder[0].self, x, x, x).value();
  auto att = mh_attention(f, m.ids.encoder[0].self.attention, x, x, x).output.value();
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], att[i], 1e-12);
}

TEST(Aoa, MatchesStraightLineOracle) {
  auto m = Model<double>::create(small_config(), 10);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto qt = random_tensor({3, 8}, 9), kt = random_tensor({4, 8}, 10);
  auto q = tape.constant(qt), k = tape.constant(kt);
  auto out = aoa(f, m.ids.encoder[0].self, q, k, k).value();
  oracle::Net net{m.params, m.config};
  auto want = net.aoa(oracle::from(qt), oracle::from(kt), oracle::from(kt), "encoder/layer0/self_aoa");
  EXPECT_LT(max_abs_diff(out, want), 1e-6);
}

// ---------------------------------------------------------------- image and visual gate

TEST(ProjectImage, ZeroWeightsGiveBias) {
  auto m = Model<double>::create(small_config(), 11);
  set_param(m, "image/w", 0.0);
  set_param(m, "image/b", 0.25);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto out = project_image(f, random_tensor({3, 5}, 1), m.ids.image_w, m.ids.image_b).value();
  for (double v : out.data()) EXPECT_EQ(v, 0.25);
  auto one = project_image(f, random_tensor({1, 5}, 1), m.ids.image_w, m.ids.image_b);
  EXPECT_EQ(one.shape(), (Shape{1, 8}));
}

TEST(ProjectImage, MatchesLoopOracleAndChecksDims) {
  auto m = Model<double>::create(small_config(), 12);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto feats = random_tensor({3, 5}, 2);
  auto out = project_image(f, feats, m.ids.image_w, m.ids.image_b).value();
  oracle::Net net{m.params, m.config};
  EXPECT_LT(max_abs_diff(out, net.project(oracle::from(feats))), 1e-12);
  EXPECT_THROW(project_image(f, random_tensor({3, 6}, 2), m.ids.image_w, m.ids.image_b), ShapeError);
}

TEST(VisualSelective, ZeroGateIgnoresImage) {
  auto m = Model<double>::create(small_config(), 13);
  set_param(m, "encoder/layer0/w_visual_gate", 0.0);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto text = tape.constant(random_tensor({3, 8}, 3));
  auto out1 = visual_selective(f, m.ids.encoder[0], text, tape.constant(random_tensor({3, 8}, 4))).value();
  auto out2 = visual_selective(f, m.ids.encoder[0], text, tape.constant(random_tensor({3, 8}, 5))).value();
  EXPECT_EQ(out1, out2);
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(out1(i, j), out1(0, j));
}

TEST(VisualSelective, IdenticalPatchesMakeResultIndependentOfK) {
  auto m = Model<double>::create(small_config(), 14);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto text = tape.constant(random_tensor({3, 8}, 6));
  auto patch = random_tensor({1, 8}, 7);
  auto tiled = [&](std::size_t k) {
    Tensor<double> t({k, 8});
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < 8; ++j) t(i, j) = patch[j];
    return tape.constant(t);
  };
  auto a = visual_selective(f, m.ids.encoder[0], text, tiled(2)).value();
  auto b = visual_selective(f, m.ids.encoder[0], text, tiled(5)).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(VisualSelective, MatchesStraightLineOracle) {
  auto m = Model<double>::create(small_config(), 15);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto tt = random_tensor({4, 8}, 8), it = random_tensor({3, 8}, 9);
  auto out = visual_selective(f, m.ids.encoder[0], tape.constant(tt), tape.constant(it)).value();
  oracle::Net net{m.params, m.config};
  EXPECT_LT(max_abs_diff(out, net.visual_selective(oracle::from(tt), oracle::from(it), "encoder/layer0")), 1e-6);
}

// ---------------------------------------------------------------- text and entity encoding

TEST(EncodeText, ShapeOracleAndImageReach) {
  auto c = small_config();
  c.encoder_layers = 2;
  auto m = Model<double>::create(c, 16);
  Tape<double> tape;
  auto f = m.forward(tape);
  std::vector<int> ids = {4, 25, 26, 27, 3};
  auto img = random_tensor({3, 8}, 10);
  auto out = encode_text(f, std::span<const int>(ids), tape.constant(img)).value();
  EXPECT_EQ(out.shape(), (Shape{5, 8}));
  oracle::Net net{m.params, m.config};
  EXPECT_LT(max_abs_diff(out, net.encode_text(ids, oracle::from(img))), 1e-6);
  img(1, 3) += 0.5;
  auto moved = encode_text(f, std::span<const int>(ids), tape.constant(img)).value();
  EXPECT_FALSE(moved == out);
  std::vector<int> none;
  EXPECT_THROW(encode_text(f, std::span<const int>(none), tape.constant(img)), std::invalid_argument);
}

TEST(EncodeText, PermutationEquivariantWithoutPositions) {
  auto m = Model<double>::create(small_config(), 17);
  for (auto p : {"embed/positions", "embed/lstm/w_input", "embed/lstm/w_hidden", "embed/lstm/bias"}) set_param(m, p, 0.0);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto img = tape.constant(random_tensor({3, 8}, 11));
  std::vector<int> a = {23, 24, 25}, b = {25, 23, 24};
  auto oa = encode_text(f, std::span<const int>(a), img).value();
  auto ob = encode_text(f, std::span<const int>(b), img).value();
  const std::size_t perm[3] = {2, 0, 1};  // b[i] = a[perm[i]]
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(ob(i, j), oa(perm[i], j), 1e-12);
}

TEST(EncodeEntities, PoolsMentionsAndHandlesEmpty) {
  auto m = Model<double>::create(small_config(), 18);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto img = tape.constant(random_tensor({3, 8}, 12));
  std::vector<int> toks = {23, 24, 25};
  std::vector<MentionSpan> spans = {{0, 1}, {1, 3}};
  auto rows = encode_text(f, std::span<const int>(toks), img).value();
  auto e = encode_entities(f, std::span<const int>(toks), std::span<const MentionSpan>(spans), img);
  ASSERT_TRUE(e.has_value());
  const auto& ev = e->value();
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_EQ(ev(0, j), rows(0, j));
    EXPECT_NEAR(ev(1, j), 0.5 * (rows(1, j) + rows(2, j)), 1e-15);
  }
  std::vector<int> none;
  std::vector<MentionSpan> no_spans;
  EXPECT_FALSE(encode_entities(f, std::span<const int>(none), std::span<const MentionSpan>(no_spans), img));
}

// ---------------------------------------------------------------- decoder

TEST(Decoder, SingleStepAttendsToItself) {
  auto m = Model<double>::create(small_config(), 19);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto x = tape.constant(random_tensor({1, 8}, 13));
  auto masked = masked_self_aoa(f, m.ids.decoder[0].self, x).value();
  auto plain = aoa(f, m.ids.decoder[0].self, x, x, x).value();
  EXPECT_EQ(masked, plain);
}

TEST(Decoder, MaskedSelfAoaIsCausal) {
  auto m = Model<double>::create(small_config(), 20);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto xt = random_tensor({4, 8}, 14);
  auto before = masked_self_aoa(f, m.ids.decoder[0].self, tape.constant(xt)).value();
  for (std::size_t j = 0; j < 8; ++j) xt(2, j) += 1.0;
  auto after = masked_self_aoa(f, m.ids.decoder[0].self, tape.constant(xt)).value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(before(i, j), after(i, j));
}

TEST(Decoder, TeacherForcedMatchesStraightLineOracle) {
  for (bool literal : {false, true}) {
    auto c = small_config();
    c.encoder_layers = 2;
    c.decoder_layers = 2;
    if (literal) c.mix_rule = PointerMixRule::literal;
    auto m = Model<double>::create(c, 21);
    auto in = toy_inputs(c, 5);
    Tape<double> tape;
    auto f = m.forward(tape);
    auto tf = forward_teacher_forced(f, in);
    oracle::Net net{m.params, m.config};
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (auto s : in.mentions) spans.emplace_back(s.begin, s.end);
    std::vector<int> prefix(in.caption_ids.begin(), in.caption_ids.end() - 1);
    auto want = net.decode(features_mat(in), in.article_ids, in.entity_token_ids, spans, in.article_copy,
                           in.entity_copy, prefix);
    EXPECT_LT(max_abs_diff(tf.steps.p_vocab.value(), want.p_vocab), 1e-6);
    EXPECT_LT(max_abs_diff(tf.steps.a_article->value(), want.a_article), 1e-6);
    EXPECT_LT(max_abs_diff(tf.steps.a_entity->value(), want.a_entity), 1e-6);
    EXPECT_LT(max_abs_diff(tf.steps.p_star.value(), want.p_star), 1e-6);
    double loss = 0;
    for (std::size_t t = 0; t < prefix.size(); ++t)
      loss -= std::log(std::max(want.p_star[t][in.caption_ids[t + 1]], 1e-12));
    EXPECT_NEAR(tf.loss.value()[0], loss, 1e-6);
  }
}

TEST(Decoder, OutputsAreDistributions) {
  auto c = small_config();
  auto m = Model<double>::create(c, 22);
  auto in = toy_inputs(c, 6);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto tf = forward_teacher_forced(f, in);
  expect_rows_are_distributions(tf.steps.p_vocab.value(), 1e-6);
  expect_rows_are_distributions(tf.steps.p_star.value(), 1e-6);
  expect_rows_are_distributions(tf.steps.a_article->value(), 1e-6);
  expect_rows_are_distributions(tf.steps.a_entity->value(), 1e-6);
}

TEST(Decoder, SingleArticleRowGetsAllCopyMass) {
  auto c = small_config();
  auto m = Model<double>::create(c, 23);
  auto in = toy_inputs(c, 7);
  in.article_ids.resize(1);
  in.article_copy.resize(1);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto tf = forward_teacher_forced(f, in);
  for (double v : tf.steps.a_article->value().data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Decoder, EmptyEntitySetDropsEntitySwitch) {
  auto c = small_config();
  auto m = Model<double>::create(c, 24);
  auto in = toy_inputs(c, 8);
  in.entity_token_ids.clear();
  in.mentions.clear();
  in.entity_copy.clear();
  Tape<double> tape;
  auto f = m.forward(tape);
  auto tf = forward_teacher_forced(f, in);
  EXPECT_FALSE(tf.steps.a_entity.has_value());
  EXPECT_FALSE(tf.steps.q_gen.has_value());
  expect_rows_are_distributions(tf.steps.p_star.value(), 1e-6);
  oracle::Net net{m.params, m.config};
  std::vector<int> prefix(in.caption_ids.begin(), in.caption_ids.end() - 1);
  auto want = net.decode(features_mat(in), in.article_ids, {}, {}, in.article_copy, {}, prefix);
  EXPECT_LT(max_abs_diff(tf.steps.p_star.value(), want.p_star), 1e-6);
}

TEST(Decoder, ClosedSwitchesGiveVocabularyDistribution) {
  auto c = small_config();
  auto m = Model<double>::create(c, 25);
  set_param(m, "pointer/article/b", -1e6);
  set_param(m, "pointer/entity/b", -1e6);
  auto in = toy_inputs(c, 9);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto tf = forward_teacher_forced(f, in);
  const auto& ps = tf.steps.p_vocab.value();
  const auto& pst = tf.steps.p_star.value();
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_NEAR(pst[i], ps[i], 1e-15);
}

TEST(PointerMix, RenormalizesOversubscribedSwitches) {
  Tape<double> tape;
  auto p = tape.constant(Tensor<double>::matrix({{0.7}}));
  auto q = tape.constant(Tensor<double>::matrix({{0.6}}));
  auto w = mix_weights(p, std::optional(q), PointerMixRule::clamp_renormalize);
  EXPECT_NEAR(w.article.value()[0], 0.7 / 1.3, 1e-15);
  EXPECT_NEAR(w.entity->value()[0], 0.6 / 1.3, 1e-15);
  EXPECT_EQ(w.vocab.value()[0], 0.0);
  EXPECT_NEAR(w.article.value()[0], 0.538461538, 1e-9);

  auto p_vocab = tape.constant(Tensor<double>::matrix({{0.1, 0.2, 0.3, 0.4}}));
  auto a = tape.constant(Tensor<double>::matrix({{0.25, 0.75}}));
  auto e = tape.constant(Tensor<double>::matrix({{1.0}}));
  std::vector<int> acopy = {1, 3}, ecopy = {2};
  auto mixed = pointer_mix(w, p_vocab, a, std::span<const int>(acopy), std::optional(e), std::span<const int>(ecopy)).value();
  const double wp = 0.7 / 1.3, wq = 0.6 / 1.3;
  EXPECT_NEAR(mixed[0], 0.0, 1e-15);
  EXPECT_NEAR(mixed[1], wp * 0.25, 1e-15);
  EXPECT_NEAR(mixed[2], wq, 1e-15);
  EXPECT_NEAR(mixed[3], wp * 0.75, 1e-15);

  auto literal = mix_weights(p, std::optional(q), PointerMixRule::literal);
  EXPECT_NEAR(literal.vocab.value()[0], -0.3, 1e-15);
}

TEST(PointerMix, FullArticleSwitchOnlyCopies) {
  Tape<double> tape;
  auto one = tape.constant(Tensor<double>::matrix({{1.0}}));
  auto w = mix_weights(one, std::optional<Var<double>>{}, PointerMixRule::clamp_renormalize);
  auto p_vocab = tape.constant(Tensor<double>::matrix({{0.25, 0.25, 0.25, 0.25}}));
  auto a = tape.constant(Tensor<double>::matrix({{0.5, 0.5}}));
  std::vector<int> acopy = {0, 2};
  auto mixed = pointer_mix(w, p_vocab, a, std::span<const int>(acopy), std::optional<Var<double>>{}, std::span<const int>()).value();
  EXPECT_EQ(mixed[1], 0.0);
  EXPECT_EQ(mixed[3], 0.0);
  EXPECT_DOUBLE_EQ(mixed[0] + mixed[2], 1.0);
  std::vector<int> bad = {0, 9};
  EXPECT_THROW(pointer_mix(w, p_vocab, a, std::span<const int>(bad), std::optional<Var<double>>{}, std::span<const int>()),
               std::out_of_range);
}

TEST(Nll, ClosedForms) {
  Tape<double> tape;
  std::vector<int> targets = {1, 0};
  auto sure = tape.constant(Tensor<double>::matrix({{0.0, 1.0}, {1.0, 0.0}}));
  EXPECT_EQ(nll_loss(sure, std::span<const int>(targets)).value()[0], 0.0);

  Tensor<double> uniform({3, 22}, 1.0 / 22.0);
  std::vector<int> t3 = {4, 0, 21};
  const double per_token = nll_loss(tape.constant(uniform), std::span<const int>(t3)).value()[0] / 3.0;
  EXPECT_NEAR(per_token, std::log(22.0), 1e-12);
  EXPECT_NEAR(per_token, 3.091, 5e-4);

  auto tiny = tape.constant(Tensor<double>::matrix({{1e-20, 1.0 - 1e-20}}));
  std::vector<int> t0 = {0};
  EXPECT_NEAR(nll_loss(tiny, std::span<const int>(t0)).value()[0], -std::log(1e-12), 1e-9);
  EXPECT_THROW(nll_loss(sure, std::span<const int>(t0)), std::invalid_argument);
}

TEST(Decoder, CopyConsistencyThroughEntitySwitch) {
  // With the entity switch saturated open and the target reachable only via
  // the entity copy map, the loss is -log of a_E mass on that mention.
  auto c = small_config();
  auto m = Model<double>::create(c, 26);
  set_param(m, "pointer/article/b", -1e6);
  set_param(m, "pointer/entity/b", 1e6);
  SampleInputs in = toy_inputs(c, 10, 1);
  in.entity_copy = {28, 29};
  in.caption_ids = {corpus::kBosId, 28, 29};
  Tape<double> tape;
  auto f = m.forward(tape);
  auto tf = forward_teacher_forced(f, in);
  const auto& ae = tf.steps.a_entity->value();
  const double want = -std::log(ae(0, 0)) - std::log(ae(1, 1));
  EXPECT_NEAR(tf.loss.value()[0], want, 1e-9);
}

TEST(Decoder, CausalStepOutputs) {
  auto c = small_config();
  auto m = Model<double>::create(c, 27);
  auto in = toy_inputs(c, 11, 6);
  Tape<double> t1;
  auto f1 = m.forward(t1);
  auto base = forward_teacher_forced(f1, in);
  for (std::size_t tp = 1; tp + 1 < in.caption_ids.size(); ++tp) {
    auto pert = in;
    pert.caption_ids[tp] = pert.caption_ids[tp] == 25 ? 26 : 25;
    Tape<double> t2;
    auto f2 = m.forward(t2);
    auto out = forward_teacher_forced(f2, pert);
    const auto& a = base.steps.p_star.value();
    const auto& b = out.steps.p_star.value();
    for (std::size_t i = 0; i < tp; ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) ASSERT_EQ(a(i, j), b(i, j)) << "t'=" << tp << " step " << i;
  }
}

TEST(Decoder, RepeatedSampleGivesIdenticalLoss) {
  auto c = small_config();
  auto m = Model<double>::create(c, 28);
  auto in = toy_inputs(c, 12);
  Tape<double> t1, t2;
  auto f1 = m.forward(t1);
  auto f2 = m.forward(t2);
  EXPECT_EQ(forward_teacher_forced(f1, in).loss.value()[0], forward_teacher_forced(f2, in).loss.value()[0]);
}

TEST(Decoder, UnsharedImageProjectionAndNoPointer) {
  auto c = small_config();
  c.share_image_projection = false;
  c.use_pointer = false;
  auto m = Model<double>::create(c, 29);
  EXPECT_TRUE(m.params.contains("decoder/image/w"));
  auto in = toy_inputs(c, 13);
  Tape<double> tape;
  auto f = m.forward(tape);
  auto tf = forward_teacher_forced(f, in);
  EXPECT_EQ(tf.steps.p_star.value(), tf.steps.p_vocab.value());
}

// ---------------------------------------------------------------- gradients

TEST(ModelGradients, EveryParameterGroupPassesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto r = model_gradcheck(gradcheck_config(), seed, 6);
    EXPECT_TRUE(r.passed()) << "seed " << seed << ": " << r.report.worst_path << " rel " << r.report.max_rel_error
                            << " kinks " << r.report.kinks;
    for (const char* g : {"embeddings", "position_lstm", "encoder_aoa", "visual_selective", "masked_self_aoa",
                          "multimodal_aoa", "fusion_ffn", "pointer_gates", "image_projection", "output_projection"}) {
      ASSERT_TRUE(r.groups.count(g)) << g;
      EXPECT_GT(r.groups.at(g).checked, 0u) << g;
      EXPECT_LT(r.groups.at(g).max_rel_error, 1e-6) << g;
    }
  }
}

TEST(ModelGradients, ParameterGroupsCoverEveryPath) {
  auto m = Model<double>::create(gradcheck_config(), 1);
  for (const auto& p : m.params.paths()) EXPECT_NE(parameter_group(p), "other") << p;
}
