#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "newscap/runtime/synth_task.hpp"

using namespace newscap;
using namespace newscap::runtime;
using corpus::EntityMention;
using corpus::EntityType;

namespace {

constexpr int kEos = corpus::kEosId;

// Hand-set next-token tables over ids {0..4}; id 2 is EOS, 3 and 4 are words.
std::vector<double> logs(std::vector<double> p) {
  for (auto& v : p) v = std::log(v);
  return p;
}

StepFn table_model(std::map<std::vector<int>, std::vector<double>> table, std::vector<double> fallback) {
  return [table = std::move(table), fallback = logs(std::move(fallback))](const std::vector<int>& prefix) {
    auto it = table.find(prefix);
    return it == table.end() ? fallback : logs(it->second);
  };
}

// Distribution per prefix drawn from a generator seeded by the prefix.
StepFn random_model(std::size_t vocab, std::uint64_t seed) {
  return [vocab, seed](const std::vector<int>& prefix) {
    std::seed_seq seq(prefix.begin(), prefix.end());
    std::vector<std::uint32_t> mix(1);
    seq.generate(mix.begin(), mix.end());
    std::mt19937_64 rng(seed ^ mix[0]);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<double> p(vocab);
    double s = 0;
    for (auto& v : p) s += (v = u(rng));
    for (auto& v : p) v = std::log(v / s);
    return p;
  };
}

// Every sequence of at most max_len steps, ending at EOS or at the budget.
Decoded exhaustive_best(const StepFn& step, std::size_t vocab, std::size_t max_len) {
  Decoded best;
  double best_score = -INFINITY;
  std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double lp) {
    const auto next = step(prefix);
    for (std::size_t id = 0; id < vocab; ++id) {
      const double l = lp + next[id];
      prefix.push_back(static_cast<int>(id));
      const std::size_t steps = prefix.size() - 1;
      if (static_cast<int>(id) == kEos || steps == max_len) {
        const double s = normalized_score(l, steps);
        if (s > best_score) {
          best_score = s;
          best.tokens.assign(prefix.begin() + 1, prefix.end() - (static_cast<int>(id) == kEos ? 1 : 0));
          best.log_prob = l;
          best.steps = steps;
        }
      } else {
        walk(prefix, l);
      }
      prefix.pop_back();
    }
  };
  std::vector<int> prefix = {corpus::kBosId};
  walk(prefix, 0.0);
  return best;
}

corpus::SynthConfig tiny_synth(std::size_t samples = 6) {
  corpus::SynthConfig c;
  c.samples = samples;
  c.patches = 2;
  c.feature_dim = 4;
  c.filler = 0;
  return c;
}

TrainConfig tiny_train(const SynthTask& t) {
  auto c = desk_train_config(t);
  c.model.hidden = 16;
  c.model.heads = 2;
  c.model.encoder_layers = 1;
  c.model.decoder_layers = 1;
  c.batch_size = 4;
  c.max_epochs = 3;
  c.threads = 1;
  return c;
}

const SynthTask& tiny_task() {
  static const SynthTask t = make_synth_task(tiny_synth());
  return t;
}

EntityMention mention(std::string text, EntityType type, std::size_t start, std::size_t freq) {
  const auto n = corpus::tokenize(text).size();
  return {std::move(text), type, start, start + n, freq};
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- decoding

TEST(Greedy, FollowsArgmaxUntilEos) {
  auto step = table_model({{{1}, {0.0, 0.0, 0.1, 0.6, 0.3}}, {{1, 3}, {0.0, 0.0, 0.2, 0.1, 0.7}}},
                          {0.0, 0.0, 0.9, 0.05, 0.05});
  const auto d = greedy_decode(step, 10);
  EXPECT_EQ(d.tokens, (std::vector<int>{3, 4}));
  EXPECT_TRUE(d.finished);
  EXPECT_EQ(d.steps, 3u);
  EXPECT_NEAR(d.log_prob, std::log(0.6 * 0.7 * 0.9), 1e-12);
}

TEST(Greedy, TiesGoToLowestId) {
  auto step = table_model({}, {0.0, 0.0, 0.0, 0.5, 0.5});
  EXPECT_EQ(greedy_decode(step, 2).tokens, (std::vector<int>{3, 3}));
}

TEST(Greedy, MaxLenOneGivesOneToken) {
  const auto d = greedy_decode(random_model(6, 3), 1);
  EXPECT_EQ(d.steps, 1u);
  EXPECT_LE(d.tokens.size(), 1u);
}

TEST(Beam, EscapesTheGreedyTrap) {
  // greedy takes 3 (0.5) and then faces a flat tail; 4 then EOS is far better
  auto step = table_model({{{1}, {1e-9, 1e-9, 0.1, 0.5, 0.4}},
                           {{1, 3}, {1e-9, 1e-9, 0.34, 0.33, 0.33}},
                           {{1, 4}, {1e-9, 1e-9, 0.9, 0.05, 0.05}}},
                          {1e-9, 1e-9, 0.34, 0.33, 0.33});
  const auto g = greedy_decode(step, 3);
  const auto b = beam_decode(step, 2, 3);
  EXPECT_EQ(b.tokens, (std::vector<int>{4}));
  EXPECT_GT(normalized_score(b), normalized_score(g));
  const auto oracle = exhaustive_best(step, 5, 3);
  EXPECT_EQ(b.tokens, oracle.tokens);
}

TEST(Beam, WideBeamMatchesExhaustiveEnumeration) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto step = random_model(5, seed);
    const auto oracle = exhaustive_best(step, 5, 3);
    const auto b = beam_decode(step, 125, 3);
    EXPECT_EQ(b.tokens, oracle.tokens) << "seed " << seed;
    EXPECT_NEAR(b.log_prob, oracle.log_prob, 1e-12);
    EXPECT_EQ(b.steps, oracle.steps);
  }
}

TEST(Beam, WidthOneIsGreedy) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto step = random_model(7, seed);
    const auto g = greedy_decode(step, 6);
    const auto b = beam_decode(step, 1, 6);
    EXPECT_EQ(b.tokens, g.tokens);
    EXPECT_EQ(b.log_prob, g.log_prob);
  }
}

TEST(Beam, NeverScoresBelowGreedy) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto step = random_model(6, seed);
    EXPECT_GE(normalized_score(beam_decode(step, 5, 6)), normalized_score(greedy_decode(step, 6)));
  }
}

TEST(Beam, RejectsZeroWidth) { EXPECT_THROW(beam_decode(random_model(4, 1), 0, 3), std::invalid_argument); }

TEST(ModelDecode, StepperMatchesTeacherForcedDistribution) {
  const auto& t = tiny_task();
  const auto m = model::Model<float>::create(tiny_train(t).model, 5);
  const auto& in = t.train[0].inputs;
  Tape<float> tape(false);
  auto f = m.forward(tape);
  const auto tf = model::forward_teacher_forced(f, in);
  const auto& p = tf.steps.p_star.value();
  ModelStepper<float> stepper(m, in);
  for (std::size_t s = 1; s < in.caption_ids.size(); ++s) {
    const std::vector<int> prefix(in.caption_ids.begin(), in.caption_ids.begin() + static_cast<std::ptrdiff_t>(s));
    const auto lp = stepper(prefix);
    for (std::size_t j = 0; j < lp.size(); ++j)
      ASSERT_NEAR(lp[j], std::log(std::max(static_cast<double>(p(s - 1, j)), model::kProbabilityFloor)), 1e-5);
  }
}

TEST(ModelDecode, BeamOneEqualsGreedyAndRunsAreRepeatable) {
  const auto& t = tiny_task();
  const auto m = model::Model<float>::create(tiny_train(t).model, 9);
  for (const auto& ex : t.train) {
    const auto g = decode(m, ex.inputs, {DecodeMode::greedy, 1, 8});
    const auto b = decode(m, ex.inputs, {DecodeMode::beam, 1, 8});
    EXPECT_EQ(g.tokens, b.tokens);
    EXPECT_EQ(g.tokens, decode(m, ex.inputs, {DecodeMode::greedy, 1, 8}).tokens);
    EXPECT_LE(decode(m, ex.inputs, {DecodeMode::greedy, 1, 1}).steps, 1u);
  }
}

// ---------------------------------------------------------------- tag cleaning

TEST(TagClean, PicksTheMostFrequentEntity) {
  const std::vector<EntityMention> set = {mention("Mary", EntityType::PERSON, 0, 1),
                                          mention("John Smith", EntityType::PERSON, 4, 3)};
  const auto r = tag_clean(words("PERSON_ speaks today ."), set);
  EXPECT_EQ(r.tokens, words("John Smith speaks today ."));
  EXPECT_EQ(r.replaced, 1u);
  EXPECT_EQ(r.unresolved, 0u);
}

TEST(TagClean, NoTagsIsIdentity) {
  const std::vector<EntityMention> set = {mention("Mary", EntityType::PERSON, 0, 1)};
  EXPECT_EQ(tag_clean(words("a quiet day in town ."), set).tokens, words("a quiet day in town ."));
}

TEST(TagClean, FrequencyTieGoesToEarlierMention) {
  const std::vector<EntityMention> set = {mention("Bob", EntityType::PERSON, 9, 2),
                                          mention("Ann", EntityType::PERSON, 3, 2)};
  EXPECT_EQ(tag_clean(words("PERSON_ waves"), set).tokens, words("Ann waves"));
}

TEST(TagClean, MissingCategoryLeavesTagAndCounts) {
  const std::vector<EntityMention> set = {mention("Paris", EntityType::GPE, 0, 2)};
  const auto r = tag_clean(words("PERSON_ in GPE_"), set);
  EXPECT_EQ(r.tokens, words("PERSON_ in Paris"));
  EXPECT_EQ(r.replaced, 1u);
  EXPECT_EQ(r.unresolved, 1u);
}

// ---------------------------------------------------------------- checkpoints

namespace {

Checkpoint sample_checkpoint() {
  const auto& t = tiny_task();
  auto cfg = tiny_train(t);
  cfg.max_epochs = 1;
  return train(cfg, t.train, {}, t.vocab).last;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("newscap_" + name)).string();
}

}  // namespace

TEST(Checkpoint, RoundTripForwardIsBitIdentical) {
  const auto& t = tiny_task();
  const auto c = sample_checkpoint();
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, c);
  const auto back = load_checkpoint(path, t.vocab.hash());
  EXPECT_EQ(back.step, c.step);
  EXPECT_EQ(back.rng_state, c.rng_state);
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(back.optimizer->step, c.optimizer->step);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(c));

  const auto before = model_from_checkpoint(c);
  const auto after = model_from_checkpoint(back);
  for (const auto& ex : t.train) {
    Tape<float> ta(false), tb(false);
    auto fa = before.forward(ta);
    auto fb = after.forward(tb);
    const auto a = model::forward_teacher_forced(fa, ex.inputs);
    const auto b = model::forward_teacher_forced(fb, ex.inputs);
    const auto da = a.steps.p_star.value().data();
    const auto db = b.steps.p_star.value().data();
    ASSERT_TRUE(std::equal(da.begin(), da.end(), db.begin(), db.end()));
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptedBlobIsRejected) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  bytes[bytes.size() - 3] ^= 0x5a;
  EXPECT_THROW(deserialize_checkpoint(bytes), CheckpointError);
  auto header = serialize_checkpoint(sample_checkpoint());
  header[30] ^= 0x01;
  EXPECT_THROW(deserialize_checkpoint(header), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), CheckpointError);
}

TEST(Checkpoint, VocabularyHashMismatchIsExplicit) {
  const auto c = sample_checkpoint();
  try {
    deserialize_checkpoint(serialize_checkpoint(c), c.vocab_hash + 1);
    FAIL() << "expected a vocabulary mismatch";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("vocabulary"), std::string::npos);
  }
}

TEST(Checkpoint, VersionIsChecked) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  bytes[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(bytes), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint("garbage"), CheckpointError);
}

TEST(Checkpoint, FailedLoadLeavesNoPartialFile) {
  EXPECT_THROW(load_checkpoint(temp_path("does_not_exist.ckpt")), CheckpointError);
}

// ---------------------------------------------------------------- training

TEST(Train, SameSeedSameRun) {
  const auto& t = tiny_task();
  const auto cfg = tiny_train(t);
  std::ostringstream log_a, log_b;
  const auto a = train(cfg, t.train, t.train, t.vocab, &log_a);
  const auto b = train(cfg, t.train, t.train, t.vocab, &log_b);
  EXPECT_EQ(log_a.str(), log_b.str());
  EXPECT_EQ(serialize_checkpoint(a.last), serialize_checkpoint(b.last));
  EXPECT_EQ(serialize_checkpoint(a.best), serialize_checkpoint(b.best));
}

TEST(Train, WorkerCountDoesNotChangeTheResult) {
  const auto& t = tiny_task();
  auto one = tiny_train(t);
  auto three = one;
  three.threads = 3;
  EXPECT_EQ(serialize_checkpoint(train(one, t.train, {}, t.vocab).last),
            serialize_checkpoint(train(three, t.train, {}, t.vocab).last));
}

TEST(Train, LogHasOneRecordPerEpoch) {
  const auto& t = tiny_task();
  std::ostringstream log;
  const auto r = train(tiny_train(t), t.train, t.train, t.vocab, &log);
  std::istringstream in(log.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"epoch", "step", "loss", "val_cider", "lr"}) EXPECT_TRUE(j.contains(k)) << k;
    ++n;
  }
  EXPECT_EQ(n, r.history.size());
  EXPECT_EQ(r.history.size(), 3u);
}

TEST(Train, PatienceZeroStopsAtFirstNonImprovingEpoch) {
  const auto& t = tiny_task();
  auto cfg = tiny_train(t);
  cfg.patience = 0;
  cfg.max_epochs = 20;
  cfg.adam.base_lr = 1e-9;  // captions cannot change, so epoch 2 cannot improve
  const auto r = train(cfg, t.train, t.train, t.vocab);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.best.epoch, 1u);
}

TEST(Train, BestCheckpointCarriesTheBestValidationScore) {
  const auto& t = tiny_task();
  auto cfg = tiny_train(t);
  cfg.max_epochs = 6;
  const auto r = train(cfg, t.train, t.train, t.vocab);
  double best = 0;
  for (const auto& e : r.history) best = std::max(best, *e.val_cider);
  EXPECT_EQ(r.best.best_val_cider, best);
  const auto& at = r.history.at(r.best.epoch - 1);
  EXPECT_EQ(*at.val_cider, best);
}

TEST(Train, OverfitsOneSampleAndEmitsItsCaption) {
  auto task = make_synth_task(tiny_synth(1));
  auto cfg = tiny_train(task);
  cfg.max_epochs = 300;
  cfg.stop_loss = 0.05;
  const auto r = train(cfg, task.train, {}, task.vocab);
  EXPECT_TRUE(r.reached_stop_loss) << r.history.back().loss;
  const auto m = model_from_checkpoint(r.last);
  const auto cap = caption_example(m, task.vocab, task.train[0]);
  const auto& ids = task.train[0].inputs.caption_ids;
  EXPECT_EQ(cap.ids, std::vector<int>(ids.begin() + 1, ids.end() - 1));
}

TEST(Train, RejectsBadConfigs) {
  const auto& t = tiny_task();
  auto cfg = tiny_train(t);
  cfg.batch_size = 0;
  EXPECT_THROW(train(cfg, t.train, {}, t.vocab), std::invalid_argument);
  EXPECT_THROW(train(tiny_train(t), {}, {}, t.vocab), std::invalid_argument);
}

TEST(Train, ConfigJsonRoundTrip) {
  TrainConfig c;
  c.batch_size = 7;
  c.model.hidden = 32;
  c.adam.warmup_steps = 12;
  TrainConfig d;
  update_from_json(d, to_json(c));
  EXPECT_EQ(to_json(d), to_json(c));
}

// ---------------------------------------------------------------- evaluation

TEST(Evaluate, EchoCaptionsScorePerfectly) {
  const auto& t = tiny_task();
  std::vector<CaptionResult> caps;
  for (const auto& ex : t.train) caps.push_back({ex.id, {}, ex.reference, ex.reference, 0, 0, 0.0});
  const auto r = score_captions(t.train, caps, "greedy");
  EXPECT_EQ(r.post_tc.bleu4, 1.0);
  EXPECT_EQ(r.post_tc.entities.precision, 1.0);
  EXPECT_EQ(r.post_tc.entities.recall, 1.0);
  EXPECT_EQ(r.exact_matches, t.train.size());
}

TEST(Evaluate, EmptyOutputsScoreZeroWithoutCrashing) {
  const auto& t = tiny_task();
  std::vector<CaptionResult> caps(t.train.size());
  const auto r = score_captions(t.train, caps, "greedy");
  EXPECT_EQ(r.post_tc.bleu4, 0.0);
  EXPECT_EQ(r.post_tc.rouge_l, 0.0);
  EXPECT_EQ(r.post_tc.cider, 0.0);
  EXPECT_EQ(r.post_tc.entities.recall, 0.0);
  EXPECT_FALSE(r.post_tc.entities.precision_defined);
  EXPECT_NO_THROW(report_table(r));
  EXPECT_EQ(report_json(r).at("n"), t.train.size());
}

TEST(Evaluate, TagFreePredictionsScoreTheSameBeforeAndAfterCleaning) {
  const auto& t = tiny_task();
  const auto m = model::Model<float>::create(tiny_train(t).model, 4);
  std::vector<CaptionResult> caps;
  const auto r = evaluate(m, t.vocab, t.train, {DecodeMode::greedy, 1, 8}, 1, &caps);
  bool tags = false;
  for (const auto& c : caps)
    for (const auto& w : c.pre_tc) tags = tags || corpus::tag_entity_type(w).has_value();
  if (!tags) {
    EXPECT_EQ(metrics_json(r.pre_tc), metrics_json(r.post_tc));
  }
  EXPECT_EQ(r.n, t.train.size());
}

// ---------------------------------------------------------------- synthetic corpus

TEST(Synth, FixedSeedGivesByteIdenticalFiles) {
  auto cfg = tiny_synth(10);
  cfg.heldout = 4;
  const auto a = temp_path("synth_a"), b = temp_path("synth_b");
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
  const auto fa = corpus::write_synth(a, corpus::generate_synth(cfg));
  const auto fb = corpus::write_synth(b, corpus::generate_synth(cfg));
  ASSERT_EQ(fa.size(), fb.size());
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_EQ(slurp(fa[i]), slurp(fb[i])) << fa[i];
  cfg.seed += 1;
  const auto other = corpus::generate_synth(cfg);
  EXPECT_NE(other.train[0].raw.article, corpus::generate_synth(tiny_synth(10)).train[0].raw.article);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Synth, EveryCaptionPassesTheFilters) {
  auto cfg = tiny_synth(40);
  cfg.heldout = 20;
  const auto c = corpus::generate_synth(cfg);
  for (const auto* split : {&c.train, &c.heldout}) {
    for (const auto& s : *split) {
      EXPECT_EQ(corpus::classify_sample(s.raw), corpus::FilterVerdict::keep) << s.raw.id;
    }
  }
}

TEST(Synth, PlantedEntityIsInArticleAndCaption) {
  auto cfg = tiny_synth(40);
  cfg.heldout = 20;
  const auto c = corpus::generate_synth(cfg);
  std::size_t hits = 0, total = 0;
  for (const auto* split : {&c.train, &c.heldout})
    for (const auto& s : *split) {
      ++total;
      const auto a = corpus::tokenize(s.raw.article), cap = corpus::tokenize(s.raw.caption);
      hits += std::count(a.begin(), a.end(), s.planted) > 0 && std::count(cap.begin(), cap.end(), s.planted) > 0;
    }
  EXPECT_GE(static_cast<double>(hits), 0.9 * static_cast<double>(total));
}

TEST(Synth, HeldOutNamesNeverAppearAsTrainingTargets) {
  corpus::SynthConfig cfg = tiny_synth(30);
  cfg.heldout = 30;
  cfg.heldout_oov = 1.0;
  const auto t = make_synth_task(cfg);
  ASSERT_EQ(t.heldout.size(), 30u);
  for (const auto& ex : t.heldout) {
    // the planted person opens the article and is out of vocabulary
    EXPECT_EQ(ex.inputs.article_ids[0], corpus::kUnkId);
    EXPECT_EQ(ex.inputs.article_copy[0], corpus::Vocabulary::tag_id(EntityType::PERSON));
    EXPECT_EQ(ex.inputs.caption_ids[1], corpus::Vocabulary::tag_id(EntityType::PERSON));
  }
}
