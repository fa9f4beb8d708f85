#include "mmrl/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Kind { text, path, integer, real, flag, paths };

struct Spec {
  std::string flag;
  Kind kind;
  std::string help;
};

struct Bound {
  Kind kind;
  std::string text;
  std::vector<std::string> list;
  bool on = false;
  CLI::Option* option = nullptr;
};

std::string key_of(const std::string& flag) {
  std::string k = flag;
  for (auto& c : k) {
    if (c == '-') c = '_';
  }
  return k;
}

struct Sub {
  mmrl::Command command;
  CLI::App* app;
  std::map<std::string, Bound> bound;

  json args() const {
    json a = json::object();
    for (const auto& [flag, b] : bound) {
      if (b.option->count() == 0) continue;
      const auto key = key_of(flag);
      switch (b.kind) {
        case Kind::text: a[key] = b.text; break;
        case Kind::path: a[key] = fs::absolute(b.text).lexically_normal().string(); break;
        case Kind::integer: a[key] = std::stoll(b.text); break;
        case Kind::real: a[key] = std::stod(b.text); break;
        case Kind::flag: a[key] = b.on; break;
        case Kind::paths: {
          json list = json::array();
          for (const auto& p : b.list) list.push_back(fs::absolute(p).lexically_normal().string());
          a[key] = list;
          break;
        }
      }
    }
    return a;
  }
};

void bind(Sub& sub, const std::vector<Spec>& specs) {
  for (const auto& s : specs) {
    auto& b = sub.bound[s.flag];
    b.kind = s.kind;
    const std::string name = "--" + s.flag;
    switch (s.kind) {
      case Kind::flag: b.option = sub.app->add_flag(name, b.on, s.help); break;
      case Kind::paths: b.option = sub.app->add_option(name, b.list, s.help); break;
      case Kind::integer: b.option = sub.app->add_option(name, b.text, s.help)->check(CLI::Number); break;
      case Kind::real: b.option = sub.app->add_option(name, b.text, s.help)->check(CLI::Number); break;
      default: b.option = sub.app->add_option(name, b.text, s.help); break;
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal article analysis pipeline"};
  app.require_subcommand(1);
  std::string config_file;
  std::vector<std::string> overrides;
  std::string output;
  app.add_option("--config", config_file, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Config override key.path=value (repeatable)");
  app.add_option("--out", output, "Root directory for run directories");

  using mmrl::Command;
  const std::vector<std::tuple<Command, std::string, std::vector<Spec>>> table{
      {Command::synth,
       "Generate a synthetic corpus (and optionally raw ingest fixtures)",
       {{"kind", Kind::text, "multitask | paired"},
        {"articles", Kind::integer, "articles (per domain for paired)"},
        {"image-size", Kind::integer, "image side in pixels"},
        {"excluded-fraction", Kind::real, "share of yellow/satire articles"},
        {"red-background", Kind::text, "plain | random-tint | paired-tint"},
        {"green-background", Kind::text, "plain | random-tint | paired-tint"},
        {"fixtures", Kind::flag, "also write tweets.jsonl, domains.txt and a page cache"}}},
      {Command::ingest,
       "Group tweets into articles and resolve preview cards",
       {{"tweets", Kind::path, "tweet dump (JSONL)"},
        {"domains", Kind::path, "domain coding table"},
        {"html-cache", Kind::path, "page/image cache directory (default $MMRL_CACHE_DIR)"},
        {"offline", Kind::flag, "never touch the network (default)"},
        {"online", Kind::flag, "fetch cache misses over HTTP"}}},
      {Command::build_dataset, "Score, label, balance and split a corpus", {{"corpus", Kind::path, "articles.jsonl"}}},
      {Command::train,
       "Train the multi-task classifier",
       {{"dataset", Kind::path, "dataset.jsonl"},
        {"pad-to-longest", Kind::flag, "pad text to the longest training sequence"}}},
      {Command::eval,
       "Evaluate a trained classifier",
       {{"ckpt", Kind::path, "model.ckpt"},
        {"split", Kind::text, "train | val | test"},
        {"modalities", Kind::text, "comma list of image,title,tweet"},
        {"dataset", Kind::path, "dataset override"}}},
      {Command::extract_features,
       "Per-domain feature samples for MMD",
       {{"corpus", Kind::path, "articles.jsonl"},
        {"dataset", Kind::path, "dataset.jsonl"},
        {"kind", Kind::text, "image | title | tweet"},
        {"domain", Kind::text, "red | green (default both)"}}},
      {Command::embed_train,
       "Train a cross-modal embedder on one domain",
       {{"domain", Kind::text, "red | green"},
        {"corpus", Kind::path, "articles.jsonl"},
        {"pad-to-longest", Kind::flag, "pad text to the longest training sequence"}}},
      {Command::retrieve,
       "K-way retrieval accuracy of an embedder on a domain's test split",
       {{"ckpt", Kind::path, "embedder.ckpt"},
        {"test-domain", Kind::text, "red | green"},
        {"k", Kind::text, "comma list, e.g. 3,5,10"},
        {"corpus", Kind::path, "corpus override"}}},
      {Command::saliency,
       "Grad-CAM and SmoothGrad maps for one article",
       {{"ckpt", Kind::path, "model.ckpt"},
        {"input", Kind::text, "article id"},
        {"task", Kind::text, "popularity | reliability"},
        {"class", Kind::text, "popular | unpopular | reliable | unreliable | positive | negative"},
        {"kind", Kind::text, "image | title | tweet (default all enabled)"},
        {"dataset", Kind::path, "dataset override"}}},
      {Command::token_report,
       "Top tokens by average attention per class",
       {{"ckpt", Kind::path, "model.ckpt"},
        {"split", Kind::text, "train | val | test"},
        {"field", Kind::text, "tweet | title"},
        {"min-count", Kind::integer, "minimum occurrences"},
        {"dataset", Kind::path, "dataset override"}}},
      {Command::mmd,
       "Within-domain MMD^2 protocol and t-tests",
       {{"features", Kind::paths, "feature sample files"},
        {"domain", Kind::text, "red | green"},
        {"kind", Kind::text, "image | title | tweet"},
        {"n", Kind::text, "comma list of N"},
        {"repeats", Kind::integer, "resamples per N"}}},
      {Command::report, "Markdown report over run directories", {{"runs", Kind::paths, "run directories or their root"}}},
  };

  std::vector<Sub> subs;
  subs.reserve(table.size());
  for (const auto& [command, help, specs] : table) {
    subs.push_back({command, app.add_subcommand(std::string(mmrl::to_string(command)), help), {}});
    bind(subs.back(), specs);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(mmrl::ExitCode::usage);
  }

  try {
    json config = mmrl::default_config_json();
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      json user;
      try {
        user = json::parse(in);
      } catch (const json::parse_error& e) {
        throw mmrl::ConfigError(config_file + ": " + e.what());
      }
      config = mmrl::merge_config(config, user);
    }
    for (const auto& o : overrides) mmrl::apply_override(config, o);
    if (!output.empty()) config["paths"]["output"] = output;
    config["paths"]["output"] = fs::absolute(config["paths"]["output"].get<std::string>()).lexically_normal().string();

    for (const auto& sub : subs) {
      if (!sub.app->parsed()) continue;
      json args = sub.args();
      if (sub.command == Command::ingest) {
        args["offline"] = !args.value("online", false);
        args.erase("online");
      }
      if (args.value("pad_to_longest", false)) config["text"]["pad_to_longest"] = true;
      args.erase("pad_to_longest");
      if (sub.command == Command::report && !args.contains("runs")) {
        args["runs"] = json::array({config["paths"]["output"]});
      }
      config["args"] = args;
      const auto outcome = mmrl::run(sub.command, config);
      std::cout << outcome.dir.string() << '\n';
    }
  } catch (const mmrl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(mmrl::ExitCode::data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(mmrl::ExitCode::data);
  }
  return 0;
}
