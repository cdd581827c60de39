#pragma once

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "newscap/corpus/corpus.hpp"
#include "newscap/model/features.hpp"

namespace newscap::corpus {

/// Knobs of the synthetic copy-task corpus. Captions are a function of the
/// image's scene pattern and of entities planted in the article.
struct SynthConfig {
  std::size_t samples = 32;
  /// extra samples whose planted names never appear in a training caption.
  /// Each planted name is brand new (out of vocabulary) with probability
  /// `heldout_oov`; otherwise it occurs in training articles only as a distractor.
  std::size_t heldout = 0;
  double heldout_oov = 0.5;
  std::uint64_t seed = 7;
  std::size_t patches = 4;
  std::size_t feature_dim = 16;
  float noise = 0.3f;
  /// maximum number of filler sentences appended to each article
  std::size_t filler = 3;
};

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"samples", c.samples}, {"heldout", c.heldout},   {"heldout_oov", c.heldout_oov},
          {"seed", c.seed},       {"patches", c.patches},   {"feature_dim", c.feature_dim},
          {"noise", c.noise},     {"filler", c.filler}};
}

inline void update_from_json(SynthConfig& c, const nlohmann::json& j) {
  c.samples = j.value("samples", c.samples);
  c.heldout = j.value("heldout", c.heldout);
  c.heldout_oov = j.value("heldout_oov", c.heldout_oov);
  c.seed = j.value("seed", c.seed);
  c.patches = j.value("patches", c.patches);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.noise = j.value("noise", c.noise);
  c.filler = j.value("filler", c.filler);
}

struct SynthSample {
  RawSample raw;
  model::ImageFeatures features;
  /// the planted caption person, for generator contract checks
  std::string planted;
};

struct SynthCorpus {
  std::vector<SynthSample> train;
  std::vector<SynthSample> heldout;
};

namespace synth_detail {

inline const std::vector<std::string>& syllables() {
  static const std::vector<std::string> s = {"ka", "lo", "mi", "ren", "tor", "va", "zel", "bri", "dun", "fa",
                                             "gor", "hel", "ix", "jo", "quen", "sar", "ul", "wes", "yor", "nim",
                                             "pa", "ost", "ter", "ba", "cel", "dro", "ek", "fin", "ga", "lum"};
  return s;
}

/// Distinct capitalized pseudo-words not in `taken`.
inline std::vector<std::string> names(std::size_t n, std::mt19937_64& rng, std::set<std::string>& taken) {
  std::vector<std::string> out;
  std::uniform_int_distribution<std::size_t> pick(0, syllables().size() - 1);
  std::uniform_int_distribution<int> len(2, 3);
  while (out.size() < n) {
    std::string w;
    for (int i = len(rng); i > 0; --i) w += syllables()[pick(rng)];
    w[0] = static_cast<char>(w[0] - 'a' + 'A');
    if (taken.insert(w).second) out.push_back(w);
  }
  return out;
}

inline const std::vector<std::string>& scene_phrases() {
  static const std::vector<std::string> s = {"speaks at a rally in", "attends a meeting in", "watches a match in",
                                             "visits a market in"};
  return s;
}

inline const std::vector<std::string>& fillers() {
  static const std::vector<std::string> s = {
      "The event drew many visitors from nearby towns .", "Officials expect more talks next week .",
      "Security was tight around the main square .",      "Several groups shared their views with the press .",
      "The weather stayed calm for most of the day .",     "Analysts said the outcome remains uncertain .",
      "Traffic moved slowly along the river road .",       "A small band played near the old station .",
      "Students waited outside the library for hours .",   "Prices at the harbor stalls rose again this month .",
      "Volunteers handed out water and printed leaflets .", "Observers described the mood as hopeful but tense .",
      "Television crews filmed from a rooftop nearby .",   "Few details about the budget were released .",
      "The council plans a public hearing in spring .",    "Farmers from the valley also joined the crowd ."};
  return s;
}

inline const std::vector<std::string>& days() {
  static const std::vector<std::string> d = {"Monday", "Tuesday", "Wednesday", "Thursday", "Friday"};
  return d;
}

struct Builder {
  std::vector<std::string> tokens;
  std::vector<EntityMention> mentions;

  void words(const std::string& text) {
    for (auto& t : tokenize(text)) tokens.push_back(std::move(t));
  }
  void entity(const std::string& text, EntityType type) {
    const std::size_t start = tokens.size();
    words(text);
    mentions.push_back({text, type, start, tokens.size(), 0});
  }
  std::string text() const { return join(tokens); }
};

template <typename T>
const T& choose(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

}  // namespace synth_detail

/// Deterministic corpus: equal seeds give identical samples and features.
inline SynthCorpus generate_synth(const SynthConfig& cfg) {
  using namespace synth_detail;
  std::mt19937_64 rng(cfg.seed);
  std::set<std::string> taken;
  const std::size_t per = std::max<std::size_t>(4, cfg.samples / 3);
  const auto target_people = names(per, rng, taken);
  const auto distractor_people = names(std::max<std::size_t>(4, cfg.samples / 4), rng, taken);
  const auto new_people = names(std::max<std::size_t>(4, cfg.heldout), rng, taken);
  const auto target_places = names(per, rng, taken);
  const auto distractor_places = names(std::max<std::size_t>(4, cfg.samples / 4), rng, taken);
  const auto new_places = names(std::max<std::size_t>(4, cfg.heldout), rng, taken);
  const auto orgs = names(6, rng, taken);

  std::vector<std::vector<float>> patterns;
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  for (std::size_t s = 0; s < scene_phrases().size(); ++s) {
    std::vector<float> p(cfg.feature_dim);
    for (auto& v : p) v = gauss(rng);
    patterns.push_back(std::move(p));
  }

  auto make = [&](const std::string& id, bool heldout) {
    std::string person, place;
    if (!heldout) {
      person = choose(target_people, rng);
      place = choose(target_places, rng);
    } else {
      std::bernoulli_distribution fresh(cfg.heldout_oov);
      person = fresh(rng) ? choose(new_people, rng) : choose(distractor_people, rng);
      place = fresh(rng) ? choose(new_places, rng) : choose(distractor_places, rng);
    }
    std::string other = person, other_place = place;
    while (other == person) other = choose(distractor_people, rng);
    while (other_place == place) other_place = choose(distractor_places, rng);
    const std::string& org = choose(orgs, rng);
    const std::string& day = choose(days(), rng);
    const std::size_t scene = std::uniform_int_distribution<std::size_t>(0, scene_phrases().size() - 1)(rng);

    Builder a;
    a.entity(person, EntityType::PERSON);
    a.words(", a senior official of");
    a.entity(org, EntityType::ORG);
    a.words(", arrived in");
    a.entity(place, EntityType::GPE);
    a.words("on");
    a.entity(day, EntityType::DATE);
    a.words(".");
    a.entity(person, EntityType::PERSON);
    a.words("said the visit to");
    a.entity(place, EntityType::GPE);
    a.words("was important .");
    a.words("Local reporters asked");
    a.entity(person, EntityType::PERSON);
    a.words("about");
    a.entity(other, EntityType::PERSON);
    a.words("and the plans of");
    a.entity(org, EntityType::ORG);
    a.words(".");
    a.entity(other, EntityType::PERSON);
    a.words("did not comment while crowds gathered in");
    a.entity(other_place, EntityType::GPE);
    a.words(".");
    const std::size_t n_fill = std::uniform_int_distribution<std::size_t>(0, cfg.filler)(rng);
    for (std::size_t i = 0; i < n_fill; ++i) a.words(choose(fillers(), rng));

    Builder c;
    c.entity(person, EntityType::PERSON);
    c.words(scene_phrases()[scene]);
    c.entity(place, EntityType::GPE);
    c.words(".");

    SynthSample s;
    s.raw.id = id;
    s.raw.article = a.text();
    s.raw.caption = c.text();
    s.raw.image_width = 400;
    s.raw.image_height = 300;
    s.raw.source = "synth";
    s.raw.feature_path = "features/" + id + ".f32";
    s.raw.entities = EntityAnnotations{a.mentions, c.mentions};
    s.features = model::synthetic_features(cfg.patches, cfg.feature_dim, rng(), &patterns[scene], cfg.noise);
    s.planted = person;
    return s;
  };

  SynthCorpus out;
  char id[64];
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    std::snprintf(id, sizeof id, "synth-train-%04zu", i);
    out.train.push_back(make(id, false));
  }
  for (std::size_t i = 0; i < cfg.heldout; ++i) {
    std::snprintf(id, sizeof id, "synth-heldout-%04zu", i);
    out.heldout.push_back(make(id, true));
  }
  return out;
}

/// Writes train.jsonl (+ heldout.jsonl) and features/ under `dir`.
inline std::vector<std::string> write_synth(const std::string& dir, const SynthCorpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "features");
  std::vector<std::string> written;
  auto dump = [&](const std::string& name, const std::vector<SynthSample>& samples) {
    std::vector<RawSample> raw;
    for (const auto& s : samples) {
      raw.push_back(s.raw);
      const auto fpath = (fs::path(dir) / s.raw.feature_path).string();
      model::save_features(fpath, s.features);
      written.push_back(fpath);
      written.push_back(model::sidecar_path(fpath));
    }
    const auto path = (fs::path(dir) / name).string();
    save_raw_corpus(path, raw);
    written.push_back(path);
  };
  dump("train.jsonl", corpus.train);
  if (!corpus.heldout.empty()) dump("heldout.jsonl", corpus.heldout);
  return written;
}

}  // namespace newscap::corpus
