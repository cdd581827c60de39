// newscap: preprocess, stats, train, caption, evaluate, gradcheck, synth.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <map>

#include "newscap/app/commands.hpp"

using namespace newscap;
using app::CommandArgs;

namespace {

struct Flags {
  std::string config, out = ".", checkpoint, vocab, val, decode;
  std::uint64_t seed = 0;
  std::size_t beam = 0, limit = 0;
  bool fp64 = true;
};

// Only flags the user actually passed become overrides.
CommandArgs to_args(const std::multimap<std::string, CLI::Option*>& opts, const Flags& f,
                    std::vector<std::string> inputs) {
  CommandArgs a;
  a.inputs = std::move(inputs);
  a.out = f.out;
  a.config_path = f.config;
  a.checkpoint = f.checkpoint;
  a.vocab = f.vocab;
  a.val = f.val;
  auto given = [&](const char* name) {
    auto [lo, hi] = opts.equal_range(name);
    return std::any_of(lo, hi, [](const auto& kv) { return kv.second->count() > 0; });
  };
  if (given("--seed")) a.overrides["seed"] = f.seed;
  if (given("--limit")) a.overrides["limit"] = f.limit;
  if (given("--decode")) a.overrides["decode"]["mode"] = f.decode;
  if (given("--beam")) a.overrides["decode"]["beam"] = f.beam;
  if (given("--fp64")) a.overrides["gradcheck"]["fp64"] = f.fp64;
  if (const char* env = std::getenv("NEWSCAP_THREADS")) a.overrides["threads"] = std::strtoull(env, nullptr, 10);
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"News image captioning with entity-aware copying"};
  cli.require_subcommand(1);
  cli.fallthrough();
  Flags f;
  std::multimap<std::string, CLI::Option*> opts;
  cli.add_option("--config", f.config, "JSON config file (flags override it)");
  opts.emplace("--seed", cli.add_option("--seed", f.seed, "Random seed for training and synthesis"));
  cli.add_option("--out", f.out, "Output directory");
  opts.emplace("--limit", cli.add_option("--limit", f.limit, "Use at most N samples"));

  std::vector<std::string> inputs;
  std::function<int(const CommandArgs&, std::ostream&)> run;
  auto sub = [&](const char* name, const char* help, auto fn) {
    auto* s = cli.add_subcommand(name, help);
    s->callback([&run, fn] { run = fn; });
    return s;
  };

  auto* pre = sub("preprocess", "Filter, tokenize and encode a raw corpus", app::cmd_preprocess);
  pre->add_option("raw", inputs, "raw corpus (.jsonl)")->required();
  pre->add_option("--vocab", f.vocab, "Encode against an existing vocabulary");

  auto* stats = sub("stats", "Entity statistics of a processed corpus", app::cmd_stats);
  stats->add_option("processed", inputs, "processed corpus (.jsonl)")->required();

  auto* train = sub("train", "Train a model", app::cmd_train);
  train->add_option("processed", inputs, "processed training corpus")->required();
  train->add_option("--vocab", f.vocab, "vocab.json from preprocess")->required();
  train->add_option("--val", f.val, "processed validation corpus (early stopping on CIDEr)");

  for (auto* s : {sub("caption", "Caption samples, before and after Tag-Cleaning", app::cmd_caption),
                  sub("evaluate", "Decode, Tag-Clean and score", app::cmd_evaluate)}) {
    s->add_option("processed", inputs, "processed corpus")->required();
    s->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
    s->add_option("--vocab", f.vocab, "vocab.json the model was trained with")->required();
    opts.emplace("--decode", s->add_option("--decode", f.decode, "greedy or beam")
                                 ->check(CLI::IsMember({"greedy", "beam"})));
    opts.emplace("--beam", s->add_option("--beam", f.beam, "beam width")->check(CLI::PositiveNumber));
  }

  auto* grad = sub("gradcheck", "Finite-difference gradient check of every parameter group", app::cmd_gradcheck);
  opts.emplace("--fp64", grad->add_flag("--fp64,!--no-fp64", f.fp64, "Run in 64-bit (required)"));

  sub("synth", "Write the synthetic copy-task corpus", app::cmd_synth);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return app::kInputError;
  }

  try {
    return run(to_args(opts, f, inputs), std::cout);
  } catch (const app::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::kInputError;
  } catch (const corpus::CorpusError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::kInputError;
  } catch (const model::FeatureError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::kInputError;
  } catch (const runtime::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::kInputError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return app::kInternalError;
  }
}
