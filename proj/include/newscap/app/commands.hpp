#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "newscap/corpus/corpus.hpp"
#include "newscap/corpus/stats.hpp"
#include "newscap/corpus/synth.hpp"
#include "newscap/model/check.hpp"
#include "newscap/runtime/train.hpp"

namespace newscap::app {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kSuccess = 0, kInternalError = 1, kInputError = 2, kCheckFailed = 3 };

/// Bad user input: missing files, invalid config, corpora that filter to nothing.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Arguments shared by every subcommand. `overrides` holds the config keys set
/// by command-line flags; they win over the config file, which wins over the
/// built-in defaults.
struct CommandArgs {
  std::vector<std::string> inputs;
  std::string out = ".";
  std::string config_path;
  std::string checkpoint;
  std::string vocab;
  std::string val;
  json overrides = json::object();
};

// ---------------------------------------------------------------- config

inline json default_config() {
  corpus::FilterBounds b;
  runtime::TrainConfig t;
  runtime::DecodeOptions d;
  return {{"seed", 1},
          {"threads", 0},
          {"limit", 0},
          {"preprocess",
           {{"min_freq", 2}, {"min_side", b.min_side}, {"min_words", b.min_words}, {"max_words", b.max_words}}},
          {"stats", {{"overlap_sample", 0}, {"expected_sources", json::array()}}},
          {"train", runtime::to_json(t)},
          {"decode", {{"mode", "greedy"}, {"beam", d.beam}, {"max_len", d.max_len}}},
          {"synth", corpus::to_json(corpus::SynthConfig{})},
          {"gradcheck", {{"seeds", {1, 2, 3, 4, 5}}, {"coords_per_param", 8}, {"tolerance", 1e-6}, {"fp64", true}}}};
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

/// defaults <- config file <- flags; the top-level seed is copied into the
/// training and synthesis sections so one flag controls every stream.
inline json resolve_config(const CommandArgs& a) {
  json c = default_config();
  if (!a.config_path.empty()) {
    const json file = read_json_file(a.config_path);
    if (!file.is_object()) throw InputError(a.config_path + ": config must be a JSON object");
    for (const auto& [k, _] : file.items())
      if (!c.contains(k)) throw InputError(a.config_path + ": unknown config key '" + k + "'");
    c.merge_patch(file);
  }
  c.merge_patch(a.overrides);
  c["train"]["seed"] = c["seed"];
  c["synth"]["seed"] = c["seed"];
  c["train"]["threads"] = c["threads"];
  return c;
}

inline runtime::TrainConfig train_config(const json& c) {
  runtime::TrainConfig t;
  try {
    runtime::update_from_json(t, c.at("train"));
    if (c.at("train").contains("model") && c["train"]["model"].contains("pointer_mix_rule"))
      t.model.mix_rule = c["train"]["model"]["pointer_mix_rule"] == "literal" ? model::PointerMixRule::literal
                                                                             : model::PointerMixRule::clamp_renormalize;
  } catch (const json::exception& e) {
    throw InputError(std::string("train config: ") + e.what());
  }
  return t;
}

inline runtime::DecodeOptions decode_options(const json& c) {
  runtime::DecodeOptions d;
  const auto& j = c.at("decode");
  const auto mode = j.value("mode", std::string("greedy"));
  if (mode != "greedy" && mode != "beam") throw InputError("decode mode must be greedy or beam, got " + mode);
  d.mode = mode == "greedy" ? runtime::DecodeMode::greedy : runtime::DecodeMode::beam;
  d.beam = j.value("beam", d.beam);
  d.max_len = j.value("max_len", d.max_len);
  if (d.beam == 0 || d.max_len == 0) throw InputError("decode: beam and max_len must be positive");
  return d;
}

// ---------------------------------------------------------------- manifest

/// Git blob id: sha1("blob <size>\0" + content).
inline std::string git_hash_bytes(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::string git_hash_file(const std::string& path) { return git_hash_bytes(slurp(path)); }

/// Collects what a run read and wrote, then records it in manifest.json.
class Manifest {
 public:
  Manifest(std::string command, std::string out_dir, json config)
      : command_(std::move(command)), out_(std::move(out_dir)), config_(std::move(config)) {}

  void input(const std::string& path) { inputs_.push_back(path); }
  /// Path of an output file inside the output directory.
  std::string output(const std::string& name) {
    outputs_.push_back(name);
    return (fs::path(out_) / name).string();
  }

  json finish() const {
    json j = {{"command", command_}, {"config", config_}, {"inputs", json::array()}, {"outputs", json::array()}};
    for (const auto& p : inputs_) j["inputs"].push_back({{"path", p}, {"git_hash", git_hash_file(p)}});
    for (const auto& p : outputs_)
      j["outputs"].push_back({{"path", p}, {"git_hash", git_hash_file((fs::path(out_) / p).string())}});
    std::ofstream(fs::path(out_) / "config.json") << config_.dump(2) << '\n';
    std::ofstream(fs::path(out_) / "manifest.json") << j.dump(2) << '\n';
    return j;
  }

 private:
  std::string command_, out_;
  json config_;
  std::vector<std::string> inputs_, outputs_;
};

// ---------------------------------------------------------------- helpers

inline void need_inputs(const CommandArgs& a, std::size_t n, const char* what) {
  if (a.inputs.size() != n) throw InputError(std::string("expected ") + what);
}

inline void prepare_out(const std::string& out) { fs::create_directories(out); }

template <typename T>
void apply_limit(std::vector<T>& v, const json& c) {
  const auto limit = c.value("limit", std::size_t{0});
  if (limit && v.size() > limit) v.resize(limit);
}

inline std::vector<corpus::ProcessedSample> load_processed_input(const std::string& path, const json& c) {
  if (!fs::exists(path)) throw InputError("no such file: " + path);
  try {
    auto s = corpus::load_processed(path);
    apply_limit(s, c);
    return s;
  } catch (const json::exception& e) {
    throw InputError(path + ": not a processed corpus (run preprocess first): " + e.what());
  }
}

inline corpus::Vocabulary load_vocab_input(const std::string& path) {
  if (path.empty()) throw InputError("--vocab is required");
  if (!fs::exists(path)) throw InputError("no such file: " + path);
  return corpus::Vocabulary::load(path);
}

/// Feature references in processed files are relative to that file's directory.
inline std::vector<runtime::Example> load_examples(const std::vector<corpus::ProcessedSample>& samples,
                                                   const corpus::Vocabulary& vocab, const std::string& processed_path,
                                                   std::size_t k, std::size_t d) {
  model::FeatureStore store(fs::path(processed_path).parent_path().string(), k, d);
  std::vector<runtime::Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(runtime::make_example(s, vocab, store));
  return out;
}

inline std::string joined(const std::vector<std::string>& t) { return corpus::join(t); }

// ---------------------------------------------------------------- commands

/// raw.jsonl -> processed.jsonl, vocab.json, preprocess_report.json
inline int cmd_preprocess(const CommandArgs& a, std::ostream& log = std::cout) {
  need_inputs(a, 1, "one raw corpus file");
  const json c = resolve_config(a);
  prepare_out(a.out);
  Manifest m("preprocess", a.out, c);
  const auto& raw_path = a.inputs[0];
  if (!fs::exists(raw_path)) throw InputError("no such file: " + raw_path);
  auto load = corpus::load_corpus(raw_path);
  apply_limit(load.samples, c);
  m.input(raw_path);

  corpus::PreprocessOptions opt;
  const auto& p = c.at("preprocess");
  opt.min_freq = p.value("min_freq", opt.min_freq);
  opt.bounds.min_side = p.value("min_side", opt.bounds.min_side);
  opt.bounds.min_words = p.value("min_words", opt.bounds.min_words);
  opt.bounds.max_words = p.value("max_words", opt.bounds.max_words);
  std::optional<corpus::Vocabulary> fixed;
  if (!a.vocab.empty()) {
    fixed = load_vocab_input(a.vocab);
    m.input(a.vocab);
  }

  // feature paths become relative to the output directory
  const auto raw_dir = fs::absolute(fs::path(raw_path)).parent_path();
  const auto out_dir = fs::absolute(fs::path(a.out));
  for (auto& s : load.samples) {
    if (s.feature_path.empty()) continue;
    fs::path f(s.feature_path);
    if (f.is_relative()) f = raw_dir / f;
    s.feature_path = fs::relative(f.lexically_normal(), out_dir).generic_string();
  }

  auto r = corpus::preprocess(load.samples, opt, fixed ? &*fixed : nullptr);
  json report = {{"read", load.samples.size()},
                 {"kept", r.kept},
                 {"skipped_lines", load.skipped.size()},
                 {"rejections", r.rejections},
                 {"vocab_size", r.vocab.size()}};
  if (r.samples.empty()) {
    std::ofstream(m.output("preprocess_report.json")) << report.dump(2) << '\n';
    m.finish();
    throw InputError("every sample was rejected: " + json(r.rejections).dump());
  }
  corpus::save_processed(m.output("processed.jsonl"), r.samples);
  r.vocab.save(m.output("vocab.json"));
  std::ofstream(m.output("preprocess_report.json")) << report.dump(2) << '\n';
  m.finish();
  log << "kept " << r.kept << " of " << load.samples.size() << " samples, vocabulary " << r.vocab.size() << "\n";
  for (const auto& [reason, n] : r.rejections) log << "  rejected " << reason << ": " << n << "\n";
  return kSuccess;
}

/// processed.jsonl -> stats.json
inline int cmd_stats(const CommandArgs& a, std::ostream& log = std::cout) {
  need_inputs(a, 1, "one processed corpus file");
  const json c = resolve_config(a);
  prepare_out(a.out);
  Manifest m("stats", a.out, c);
  const auto samples = load_processed_input(a.inputs[0], c);
  m.input(a.inputs[0]);
  corpus::StatsOptions opt;
  opt.overlap_sample = c["stats"].value("overlap_sample", std::size_t{0});
  opt.expected_sources = c["stats"].value("expected_sources", std::vector<std::string>{});
  opt.seed = c.value("seed", std::uint64_t{1});
  const auto r = corpus::dataset_stats(samples, opt);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::ofstream(m.output("stats.json")) << corpus::stats_to_json(r).dump(1) << '\n';
  m.finish();
  log << "stats over " << r.total.images << " samples, " << r.per_source.size() << " sources\n";
  return kSuccess;
}

/// Model dimensions that the data determines: vocabulary size and feature grid.
inline void fit_model_to_data(runtime::TrainConfig& t, const corpus::Vocabulary& vocab,
                              const std::vector<corpus::ProcessedSample>& samples, const std::string& processed_path) {
  t.model.vocab_size = vocab.size();
  for (const auto& s : samples) {
    if (s.feature_ref.empty()) continue;
    fs::path p(s.feature_ref);
    if (p.is_relative()) p = fs::path(processed_path).parent_path() / p;
    const auto f = model::load_features(p.string());
    t.model.patches = f.patches();
    t.model.feature_dim = f.dim();
    return;
  }
}

/// processed.jsonl (+ --val) -> best.ckpt, last.ckpt, train_log.jsonl
inline int cmd_train(const CommandArgs& a, std::ostream& log = std::cout) {
  need_inputs(a, 1, "one processed training file");
  json c = resolve_config(a);
  prepare_out(a.out);
  const auto vocab = load_vocab_input(a.vocab);
  const auto train_samples = load_processed_input(a.inputs[0], c);
  if (train_samples.empty()) throw InputError("training set is empty");
  auto t = train_config(c);
  fit_model_to_data(t, vocab, train_samples, a.inputs[0]);
  c["train"] = runtime::to_json(t);
  c["train"]["threads"] = t.threads;
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  Manifest m("train", a.out, c);
  m.input(a.inputs[0]);
  m.input(a.vocab);

  const auto train_set = load_examples(train_samples, vocab, a.inputs[0], t.model.patches, t.model.feature_dim);
  std::vector<runtime::Example> val_set;
  if (!a.val.empty()) {
    const auto val_samples = load_processed_input(a.val, c);
    val_set = load_examples(val_samples, vocab, a.val, t.model.patches, t.model.feature_dim);
    m.input(a.val);
  }
  std::ofstream train_log(m.output("train_log.jsonl"));
  const auto r = runtime::train(t, train_set, val_set, vocab, &train_log);
  train_log.close();
  runtime::save_checkpoint(m.output("best.ckpt"), r.best);
  runtime::save_checkpoint(m.output("last.ckpt"), r.last);
  m.finish();
  const auto& last = r.history.back();
  log << "trained " << r.history.size() << " epochs, " << last.step << " steps, final loss " << last.loss;
  if (r.best.best_val_cider > 0 || !val_set.empty()) log << ", best val CIDEr " << r.best.best_val_cider;
  log << (r.early_stopped ? " (early stop)" : "") << (r.reached_stop_loss ? " (loss target reached)" : "") << "\n";
  return kSuccess;
}

struct LoadedModel {
  corpus::Vocabulary vocab;
  runtime::Checkpoint checkpoint;
  model::Model<float> model;
};

inline LoadedModel load_model(const CommandArgs& a) {
  if (a.checkpoint.empty()) throw InputError("--checkpoint is required");
  if (!fs::exists(a.checkpoint)) throw InputError("no such file: " + a.checkpoint);
  auto vocab = load_vocab_input(a.vocab);
  auto ckpt = runtime::load_checkpoint(a.checkpoint, vocab.hash());
  auto m = runtime::model_from_checkpoint(ckpt);
  return {std::move(vocab), std::move(ckpt), std::move(m)};
}

/// Prints pre- and post-Tag-Cleaning captions; writes captions.jsonl.
inline int cmd_caption(const CommandArgs& a, std::ostream& log = std::cout) {
  need_inputs(a, 1, "one processed corpus file");
  const json c = resolve_config(a);
  prepare_out(a.out);
  const auto lm = load_model(a);
  const auto samples = load_processed_input(a.inputs[0], c);
  const auto opt = decode_options(c);
  Manifest m("caption", a.out, c);
  m.input(a.inputs[0]);
  m.input(a.checkpoint);
  m.input(a.vocab);
  const auto examples = load_examples(samples, lm.vocab, a.inputs[0], lm.model.config.patches,
                                      lm.model.config.feature_dim);
  const auto caps = runtime::caption_all(lm.model, lm.vocab, examples, opt, worker_count(c.value("threads", 0u)));
  std::ofstream out(m.output("captions.jsonl"));
  for (std::size_t i = 0; i < caps.size(); ++i) {
    const auto& r = caps[i];
    out << json{{"id", r.id},
                {"pre_tc", joined(r.pre_tc)},
                {"post_tc", joined(r.post_tc)},
                {"reference", joined(examples[i].reference)},
                {"log_prob", r.log_prob}}
               .dump()
        << '\n';
    log << r.id << "\n  pre-TC:  " << joined(r.pre_tc) << "\n  post-TC: " << joined(r.post_tc) << "\n";
  }
  out.close();
  m.finish();
  return kSuccess;
}

/// Decodes, tag-cleans and scores; writes report.json and report.txt.
inline int cmd_evaluate(const CommandArgs& a, std::ostream& log = std::cout) {
  need_inputs(a, 1, "one processed corpus file");
  const json c = resolve_config(a);
  prepare_out(a.out);
  const auto lm = load_model(a);
  const auto samples = load_processed_input(a.inputs[0], c);
  if (samples.empty()) throw InputError("evaluation set is empty");
  const auto opt = decode_options(c);
  Manifest m("evaluate", a.out, c);
  m.input(a.inputs[0]);
  m.input(a.checkpoint);
  m.input(a.vocab);
  const auto examples = load_examples(samples, lm.vocab, a.inputs[0], lm.model.config.patches,
                                      lm.model.config.feature_dim);
  const auto r = runtime::evaluate(lm.model, lm.vocab, examples, opt, worker_count(c.value("threads", 0u)));
  std::ofstream(m.output("report.json")) << runtime::report_json(r).dump(2) << '\n';
  std::ofstream(m.output("report.txt")) << runtime::report_table(r);
  m.finish();
  log << runtime::report_table(r);
  return kSuccess;
}

/// Finite-difference check of every parameter group; exit 3 on failure.
inline int cmd_gradcheck(const CommandArgs& a, std::ostream& log = std::cout) {
  const json c = resolve_config(a);
  const auto& g = c.at("gradcheck");
  if (!g.value("fp64", true))
    throw InputError("gradient checks run in 64-bit only; 32-bit central differences cannot reach the tolerance");
  prepare_out(a.out);
  Manifest m("gradcheck", a.out, c);
  const double tol = g.value("tolerance", 1e-6);
  const auto coords = g.value("coords_per_param", std::size_t{8});
  json report = json::array();
  bool ok = true;
  char line[160];
  for (const auto seed : g.at("seeds").get<std::vector<std::uint64_t>>()) {
    const auto r = model::model_gradcheck(model::gradcheck_config(), seed, coords);
    const bool pass = r.passed() && r.report.max_rel_error < tol;
    ok = ok && pass;
    json groups = json::object();
    log << "seed " << seed << ": " << (pass ? "ok" : "FAILED") << " (" << r.report.checked << " coordinates, "
        << r.report.kinks << " skipped at kinks)\n";
    for (const auto& [name, gr] : r.groups) {
      std::snprintf(line, sizeof line, "  %-20s max rel error %.3e over %zu coords\n", name.c_str(), gr.max_rel_error,
                    gr.checked);
      log << line;
      groups[name] = {{"max_rel_error", gr.max_rel_error}, {"checked", gr.checked}, {"worst", gr.worst_path}};
    }
    report.push_back({{"seed", seed},
                      {"passed", pass},
                      {"max_rel_error", r.report.max_rel_error},
                      {"max_abs_error", r.report.max_abs_error},
                      {"kinks", r.report.kinks},
                      {"groups", groups}});
  }
  std::ofstream(m.output("gradcheck.json")) << json{{"tolerance", tol}, {"runs", report}}.dump(2) << '\n';
  m.finish();
  return ok ? kSuccess : kCheckFailed;
}

/// Writes the synthetic copy-task corpus and its feature files.
inline int cmd_synth(const CommandArgs& a, std::ostream& log = std::cout) {
  const json c = resolve_config(a);
  prepare_out(a.out);
  corpus::SynthConfig s;
  try {
    corpus::update_from_json(s, c.at("synth"));
  } catch (const json::exception& e) {
    throw InputError(std::string("synth config: ") + e.what());
  }
  if (s.samples == 0 || s.patches == 0 || s.feature_dim == 0) throw InputError("synth: sizes must be positive");
  Manifest m("synth", a.out, c);
  const auto corpus = corpus::generate_synth(s);
  const auto files = corpus::write_synth(a.out, corpus);
  for (const auto& f : files) m.output(fs::relative(f, a.out).generic_string());
  m.finish();
  log << "wrote " << corpus.train.size() << " training and " << corpus.heldout.size() << " held-out samples to "
      << a.out << "\n";
  return kSuccess;
}

}  // namespace newscap::app
