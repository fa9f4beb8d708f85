#include "mmrl/pipeline.hpp"

#include "mmrl/container.hpp"
#include "mmrl/hash.hpp"
#include "mmrl/ingest.hpp"
#include "mmrl/records.hpp"
#include "mmrl/synth.hpp"

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

namespace mmrl {

namespace fs = std::filesystem;
using nlohmann::json;

TextContext build_text_context(std::span<const Article> articles, const Word2VecConfig& config, bool pad_to_longest) {
  if (articles.empty()) throw InsufficientData("no articles to fit text embeddings on");
  std::vector<Tokens> titles, tweets;
  std::vector<Index> title_lengths, tweet_lengths;
  for (const auto& a : articles) {
    titles.push_back(title_tokens(a));
    tweets.push_back(tweet_tokens(a));
    title_lengths.push_back(static_cast<Index>(titles.back().size()));
    tweet_lengths.push_back(static_cast<Index>(tweets.back().size()));
  }
  Word2VecConfig tweet_config = config;
  tweet_config.seed = derive_seed(config.seed, 1);
  TextContext ctx{train_word_embeddings(titles, SpaceTag::title, config),
                  train_word_embeddings(tweets, SpaceTag::tweet, tweet_config), 0, 0};
  ctx.title_length = std::max<Index>(1, choose_max_length(title_lengths, pad_to_longest));
  ctx.tweet_length = std::max<Index>(1, choose_max_length(tweet_lengths, pad_to_longest));
  return ctx;
}

void save_text_context(const fs::path& dir, const TextContext& text) {
  fs::create_directories(dir);
  text.title_table.save(dir / "title.emb");
  text.tweet_table.save(dir / "tweet.emb");
  std::ofstream(dir / "text.json") << json{{"title_length", text.title_length}, {"tweet_length", text.tweet_length}}.dump(2);
}

TextContext load_text_context(const fs::path& dir) {
  std::ifstream in(dir / "text.json");
  if (!in) throw LookupError("no text context in " + dir.string());
  const auto j = json::parse(in);
  return TextContext{EmbeddingTable::load(dir / "title.emb"), EmbeddingTable::load(dir / "tweet.emb"),
                     j.at("title_length").get<Index>(), j.at("tweet_length").get<Index>()};
}

json to_json(const Word2VecConfig& c) {
  return {{"dim", c.dim},           {"window", c.window},
          {"min_count", c.min_count}, {"epochs", c.epochs},
          {"negative", c.negative},   {"learning_rate", c.learning_rate},
          {"seed", c.seed}};
}

Word2VecConfig word2vec_config_from_json(const json& j) {
  Word2VecConfig c;
  c.dim = j.value("dim", c.dim);
  c.window = j.value("window", c.window);
  c.min_count = j.value("min_count", c.min_count);
  c.epochs = j.value("epochs", c.epochs);
  c.negative = j.value("negative", c.negative);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  if (c.dim != kEmbeddingDim) throw ConfigError("word2vec.dim must be " + std::to_string(kEmbeddingDim));
  if (c.window < 1 || c.min_count < 1 || c.epochs < 1 || c.negative < 1 || !(c.learning_rate > 0.0)) {
    throw ConfigError("word2vec window, min_count, epochs, negative and learning_rate must be positive");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Configuration

json to_json(const ExperimentConfig& c) {
  json sigma = nullptr;
  if (c.smoothgrad.sigma) sigma = *c.smoothgrad.sigma;
  return {
      {"experiment", c.experiment},
      {"seed", c.seed},
      {"paths",
       {{"corpus", c.paths.corpus.string()},
        {"dataset", c.paths.dataset.string()},
        {"output", c.paths.output.string()},
        {"tweets", c.paths.tweets.string()},
        {"domains", c.paths.domains.string()},
        {"html_cache", c.paths.html_cache.string()}}},
      {"dataset", {{"lambda", c.lambda}, {"quantile", c.quantile}, {"lambda_candidates", c.lambda_candidates}}},
      {"word2vec", to_json(c.word2vec)},
      {"text", {{"pad_to_longest", c.pad_to_longest}}},
      {"model", to_json(c.model)},
      {"train", to_json(c.train)},
      {"crossmodal", to_json(c.crossmodal)},
      {"embed_train", to_json(c.embed_train)},
      {"retrieval", {{"ks", c.ks}, {"rounds", c.retrieval_rounds}}},
      {"saliency",
       {{"samples", c.smoothgrad.n},
        {"sigma", sigma},
        {"seed", c.smoothgrad.seed},
        {"top_k", c.top_k},
        {"min_count", c.min_count}}},
      {"mmd", {{"n", c.mmd_n}, {"repeats", c.mmd_repeats}}},
  };
}

json default_config_json() { return to_json(ExperimentConfig{}); }

namespace {

bool compatible(const json& base, const json& value) {
  if (base.is_null()) return true;
  if (base.is_number()) return value.is_number();
  if (base.is_boolean()) return value.is_boolean();
  if (base.is_string()) return value.is_string();
  if (base.is_array()) return value.is_array();
  return base.type() == value.type();
}

json merge_at(json base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("'" + (where.empty() ? std::string("config") : where) + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string field = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown field '" + field + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      slot = merge_at(slot, it.value(), field);
    } else if (!compatible(slot, it.value())) {
      throw ConfigError("field '" + field + "' expects " + std::string(slot.type_name()) + ", got " +
                        std::string(it.value().type_name()));
    } else {
      slot = it.value();
    }
  }
  return base;
}

template <typename Fn>
auto section(const json& j, const char* name, Fn&& fn) {
  try {
    return fn(j.at(name));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  }
}

}  // namespace

json merge_config(json base, const json& patch) { return merge_at(std::move(base), patch, ""); }

void apply_override(json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  config = merge_config(config, patch);
}

ExperimentConfig experiment_config_from_json(const json& raw) {
  const json j = merge_config(default_config_json(), raw);
  ExperimentConfig c;
  c.experiment = j.at("experiment").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto& p = j.at("paths");
  c.paths.corpus = p.at("corpus").get<std::string>();
  c.paths.dataset = p.at("dataset").get<std::string>();
  c.paths.output = p.at("output").get<std::string>();
  c.paths.tweets = p.at("tweets").get<std::string>();
  c.paths.domains = p.at("domains").get<std::string>();
  c.paths.html_cache = p.at("html_cache").get<std::string>();
  const auto& d = j.at("dataset");
  c.lambda = d.at("lambda").get<double>();
  c.quantile = d.at("quantile").get<double>();
  c.lambda_candidates = d.at("lambda_candidates").get<std::vector<double>>();
  if (!(c.lambda > 0.0)) throw ConfigError("dataset.lambda must be positive");
  if (!(c.quantile > 0.0 && c.quantile <= 0.5)) throw ConfigError("dataset.quantile must lie in (0, 0.5]");
  c.word2vec = section(j, "word2vec", word2vec_config_from_json);
  c.pad_to_longest = j.at("text").at("pad_to_longest").get<bool>();
  c.model = section(j, "model", multitask_config_from_json);
  c.train = section(j, "train", train_config_from_json);
  c.crossmodal = section(j, "crossmodal", crossmodal_config_from_json);
  c.embed_train = section(j, "embed_train", train_config_from_json);
  const auto& r = j.at("retrieval");
  c.ks = r.at("ks").get<std::vector<int>>();
  c.retrieval_rounds = r.at("rounds").get<int>();
  if (c.ks.empty() || std::any_of(c.ks.begin(), c.ks.end(), [](int k) { return k < 2; })) {
    throw ConfigError("retrieval.ks must be a non-empty list of values >= 2");
  }
  if (c.retrieval_rounds < 1) throw ConfigError("retrieval.rounds must be positive");
  const auto& s = j.at("saliency");
  c.smoothgrad.n = s.at("samples").get<int>();
  if (!s.at("sigma").is_null()) c.smoothgrad.sigma = s.at("sigma").get<double>();
  c.smoothgrad.seed = s.at("seed").get<std::uint64_t>();
  c.top_k = s.at("top_k").get<std::size_t>();
  c.min_count = s.at("min_count").get<std::size_t>();
  if (c.smoothgrad.n < 1) throw ConfigError("saliency.samples must be positive");
  if (c.smoothgrad.sigma && *c.smoothgrad.sigma < 0.0) throw ConfigError("saliency.sigma must be non-negative");
  const auto& m = j.at("mmd");
  c.mmd_n = m.at("n").get<std::vector<Index>>();
  c.mmd_repeats = m.at("repeats").get<int>();
  if (c.mmd_n.empty() || std::any_of(c.mmd_n.begin(), c.mmd_n.end(), [](Index n) { return n < 2; })) {
    throw ConfigError("mmd.n must be a non-empty list of values >= 2");
  }
  if (c.mmd_repeats < 2) throw ConfigError("mmd.repeats must be at least 2");
  return c;
}

std::string config_hash(const json& config) { return sha256_hex(config.dump()).substr(0, 16); }

namespace {

constexpr std::array<std::pair<Command, std::string_view>, 12> kCommands{{
    {Command::synth, "synth"},
    {Command::ingest, "ingest"},
    {Command::build_dataset, "build-dataset"},
    {Command::train, "train"},
    {Command::eval, "eval"},
    {Command::extract_features, "extract-features"},
    {Command::embed_train, "embed-train"},
    {Command::retrieve, "retrieve"},
    {Command::saliency, "saliency"},
    {Command::token_report, "token-report"},
    {Command::mmd, "mmd"},
    {Command::report, "report"},
}};

}  // namespace

std::string_view to_string(Command c) {
  for (const auto& [cmd, name] : kCommands) {
    if (cmd == c) return name;
  }
  return "?";
}

Command parse_command(std::string_view s) {
  for (const auto& [cmd, name] : kCommands) {
    if (name == s) return cmd;
  }
  throw ConfigError("unknown command '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Run directories

RunDirectory RunDirectory::create(const fs::path& root, Command command, const json& resolved) {
  RunDirectory r;
  r.hash_ = config_hash(resolved);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  const std::string base = std::string(stamp) + "-" + std::string(to_string(command)) + "-" + r.hash_.substr(0, 8);
  fs::create_directories(root);
  for (int attempt = 0;; ++attempt) {
    r.path_ = root / (attempt == 0 ? base : base + "-" + std::to_string(attempt));
    if (fs::create_directory(r.path_)) break;
  }
  const auto lock = r.path_ / "run.lock";
  r.lock_fd_ = ::open(lock.c_str(), O_CREAT | O_RDWR, 0644);
  if (r.lock_fd_ < 0 || ::flock(r.lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    throw InvalidInput("run directory " + r.path_.string() + " is locked by another process");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::write(r.lock_fd_, pid.data(), pid.size()) < 0) throw InvalidInput("cannot write lock file");

  auto file_sink = std::make_shared<spdlog::sinks::basic_file_sink_mt>((r.path_ / "run.log").string());
  auto err_sink = std::make_shared<spdlog::sinks::stderr_sink_mt>();
  r.logger_ = std::make_shared<spdlog::logger>("run", spdlog::sinks_init_list{file_sink, err_sink});
  r.logger_->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
  r.logger_->flush_on(spdlog::level::info);
  return r;
}

RunDirectory::RunDirectory(RunDirectory&& o) noexcept
    : path_(std::move(o.path_)), hash_(std::move(o.hash_)), lock_fd_(o.lock_fd_), logger_(std::move(o.logger_)) {
  o.lock_fd_ = -1;
}

RunDirectory& RunDirectory::operator=(RunDirectory&& o) noexcept {
  std::swap(path_, o.path_);
  std::swap(hash_, o.hash_);
  std::swap(lock_fd_, o.lock_fd_);
  std::swap(logger_, o.logger_);
  return *this;
}

RunDirectory::~RunDirectory() {
  if (logger_) logger_->flush();
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

void RunDirectory::write_json(const std::string& name, const json& j) const {
  std::ofstream out(path_ / name);
  out << j.dump(2) << '\n';
  if (!out) throw InvalidInput("cannot write " + (path_ / name).string());
}

void RunDirectory::write_text(const std::string& name, const std::string& text) const {
  std::ofstream out(path_ / name);
  out << text;
  if (!out) throw InvalidInput("cannot write " + (path_ / name).string());
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

fs::path path_arg(const json& args, const char* name, const fs::path& fallback = {}) {
  if (args.contains(name) && args.at(name).is_string() && !args.at(name).get<std::string>().empty()) {
    return args.at(name).get<std::string>();
  }
  if (!fallback.empty()) return fallback;
  throw ConfigError("missing --" + std::string(name));
}

template <typename T>
T arg_or(const json& args, const char* name, T fallback) {
  if (!args.contains(name) || args.at(name).is_null()) return fallback;
  try {
    return args.at(name).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("argument --" + std::string(name) + " has the wrong type");
  }
}

bool in_domain(const Article& a, DomainTag d) {
  const auto r = reliability_for(a.domain_coding);
  return d == DomainTag::red ? r == ReliabilityLabel::unreliable : r == ReliabilityLabel::reliable;
}

const std::vector<Article>& split_of(const LabeledDataset& ds, Split s) {
  return s == Split::train ? ds.train : s == Split::val ? ds.val : ds.test;
}

json split_summary(const std::vector<Article>& v) {
  std::size_t popular = 0, reliable = 0;
  for (const auto& a : v) {
    popular += a.popularity_label == PopularityLabel::popular;
    reliable += a.reliability_label == ReliabilityLabel::reliable;
  }
  return {{"articles", v.size()}, {"popular", popular}, {"reliable", reliable}};
}

struct TrainedMultiTask {
  MultiTaskModel<float> model;
  TextContext text;
  LabeledDataset dataset;
  fs::path image_root;
};

TrainedMultiTask load_trained(const json& args) {
  const fs::path ckpt = path_arg(args, "ckpt");
  json meta;
  auto model = load_checkpoint(ckpt, &meta);
  auto text = load_text_context(ckpt.parent_path());
  const fs::path dataset = path_arg(args, "dataset", meta.at("extra").value("dataset", std::string()));
  return {std::move(model), std::move(text), read_dataset_jsonl(dataset), dataset.parent_path()};
}

std::vector<int> parse_int_list(const json& v, std::vector<int> fallback) {
  if (v.is_null()) return fallback;
  if (v.is_array()) return v.get<std::vector<int>>();
  std::vector<int> out;
  std::stringstream ss(v.get<std::string>());
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ConfigError("'" + part + "' is not an integer");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

json cmd_synth(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  const auto kind = arg_or<std::string>(args, "kind", "multitask");
  const auto articles = arg_or<std::size_t>(args, "articles", 2000);
  const auto size = arg_or<int>(args, "image_size", 32);
  const fs::path corpus_dir = run.path() / "corpus";
  std::vector<Article> out;
  if (kind == "multitask") {
    synth::CorpusOptions o;
    o.articles = articles;
    o.image_size = size;
    o.seed = cfg.seed;
    o.excluded_fraction = arg_or<double>(args, "excluded_fraction", 0.0);
    out = synth::multitask_corpus(o, corpus_dir);
  } else if (kind == "paired") {
    using Bg = synth::PairedOptions::Background;
    auto background = [](const std::string& s) {
      if (s == "plain") return Bg::plain;
      if (s == "random-tint") return Bg::random_tint;
      if (s == "paired-tint") return Bg::paired_tint;
      throw ConfigError("unknown background '" + s + "'");
    };
    synth::PairedOptions red;
    red.articles = articles;
    red.image_size = size;
    red.seed = derive_seed(cfg.seed, 11);
    red.coding = DomainCoding::red;
    red.background = background(arg_or<std::string>(args, "red_background", "paired-tint"));
    synth::PairedOptions green = red;
    green.seed = derive_seed(cfg.seed, 13);
    green.coding = DomainCoding::green;
    green.background = background(arg_or<std::string>(args, "green_background", "random-tint"));
    out = synth::paired_corpus(red, corpus_dir);
    auto g = synth::paired_corpus(green, corpus_dir);
    out.insert(out.end(), g.begin(), g.end());
  } else {
    throw ConfigError("unknown synthetic corpus kind '" + kind + "'");
  }
  write_articles_jsonl(corpus_dir / "articles.jsonl", out);
  run.log().info("wrote {} synthetic articles to {}", out.size(), corpus_dir.string());
  json m{{"kind", kind}, {"articles", out.size()}, {"corpus", "corpus/articles.jsonl"}};
  if (arg_or<bool>(args, "fixtures", false)) {
    synth::write_raw_fixtures(out, corpus_dir, run.path() / "raw");
    m["fixtures"] = "raw";
    run.log().info("wrote raw ingest fixtures to {}", (run.path() / "raw").string());
  }
  return m;
}

json cmd_ingest(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  IngestOptions o;
  o.tweets = path_arg(args, "tweets", cfg.paths.tweets);
  o.domains = path_arg(args, "domains", cfg.paths.domains);
  fs::path cache = cfg.paths.html_cache;
  if (cache.empty()) {
    if (const char* env = std::getenv("MMRL_CACHE_DIR")) cache = env;
  }
  o.html_cache = path_arg(args, "html_cache", cache);
  o.offline = arg_or<bool>(args, "offline", true);
  o.out = run.path();
  auto cached = std::make_shared<CacheBlobSource>(o.html_cache);
  std::shared_ptr<BlobSource> source = cached;
  if (!o.offline) {
    source = std::make_shared<ChainBlobSource>(std::vector<std::shared_ptr<BlobSource>>{
        cached, std::make_shared<RetryingBlobSource>(std::make_shared<CurlBlobSource>())});
  }
  const auto r = ingest(o, *source, *source);
  run.log().info("ingested {} articles from {} tweets", r.written, r.tweets_read);
  return {{"tweets_read", r.tweets_read},   {"tweets_kept", r.tweets_kept},   {"articles", r.articles},
          {"missing_html", r.missing_html}, {"missing_title", r.missing_title}, {"missing_image", r.missing_image},
          {"written", r.written},           {"corpus", "articles.jsonl"}};
}

json cmd_build_dataset(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  const fs::path corpus = path_arg(args, "corpus", cfg.paths.corpus);
  auto articles = read_articles_jsonl(corpus);
  const fs::path root = fs::absolute(corpus).parent_path();
  for (auto& a : articles) {
    if (!a.image_ref.empty() && fs::path(a.image_ref).is_relative()) a.image_ref = (root / a.image_ref).string();
  }
  double lambda = cfg.lambda;
  if (!cfg.lambda_candidates.empty()) {
    lambda = tune_lambda(cfg.lambda_candidates, articles, cfg.quantile);
    run.log().info("tuned lambda = {}", lambda);
  }
  BuildReport report;
  const auto ds = build_dataset(std::move(articles), lambda, cfg.quantile, cfg.seed, &report);
  write_dataset_jsonl(run.path() / "dataset.jsonl", ds);
  run.log().info("dataset train/val/test = {}/{}/{}", ds.train.size(), ds.val.size(), ds.test.size());
  return {{"lambda", ds.lambda_used},
          {"quantile", cfg.quantile},
          {"train", split_summary(ds.train)},
          {"val", split_summary(ds.val)},
          {"test", split_summary(ds.test)},
          {"filtered",
           {{"input", report.input},
            {"missing_title_or_image", report.missing_title_or_image},
            {"middle", report.middle},
            {"excluded", report.excluded},
            {"undersampled", report.undersampled}}},
          {"dataset", "dataset.jsonl"}};
}

json cmd_train(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  const fs::path dataset = fs::absolute(path_arg(args, "dataset", cfg.paths.dataset));
  const auto ds = read_dataset_jsonl(dataset);
  const auto text = build_text_context(ds.train, cfg.word2vec, cfg.pad_to_longest);
  MultiTaskConfig mc = cfg.model;
  mc.title_length = text.title_length;
  mc.tweet_length = text.tweet_length;
  MultiTaskModel<float> model(mc);
  model.init(derive_seed(cfg.seed, 100));
  const auto root = dataset.parent_path();
  const auto train = encode_articles(ds.train, text, model.image_encoder(), root);
  const auto val = encode_articles(ds.val, text, model.image_encoder(), root);
  run.log().info("training on {} articles, validating on {}", train.size(), val.size());
  const auto result = train_multitask(model, train, val, cfg.train);
  for (const auto& e : result.history) {
    run.log().info("epoch {} lr {:.2e} train {:.5f} val {:.5f} acc pop {:.4f} rel {:.4f}", e.epoch, e.lr, e.train_loss,
                   e.val_loss, e.val_acc_pop, e.val_acc_rel);
  }
  save_checkpoint(run.path() / "model.ckpt", model, {{"dataset", dataset.string()}, {"config_hash", run.hash()}});
  save_text_context(run.path(), text);
  return {{"training", to_json(result)}, {"val", to_json(evaluate(model, val))}, {"ckpt", "model.ckpt"},
          {"modalities", to_string(mc.modalities)}};
}

json cmd_eval(const ExperimentConfig&, const json& args, RunDirectory& run) {
  auto t = load_trained(args);
  if (args.contains("modalities") && args.at("modalities").is_string()) {
    t.model.modalities() = parse_modalities(args.at("modalities").get<std::string>());
  }
  const auto split = parse_split(arg_or<std::string>(args, "split", "test"));
  const auto inputs = encode_articles(split_of(t.dataset, split), t.text, t.model.image_encoder(), t.image_root);
  const auto r = evaluate(t.model, inputs);
  run.log().info("{} accuracy: popularity {:.4f} +/- {:.4f}, reliability {:.4f} +/- {:.4f}", to_string(split),
                 r.popularity.accuracy, r.popularity.standard_error, r.reliability.accuracy,
                 r.reliability.standard_error);
  return {{"split", to_string(split)}, {"modalities", to_string(t.model.config().modalities)}, {"result", to_json(r)}};
}

std::vector<Article> load_articles_arg(const ExperimentConfig& cfg, const json& args, fs::path* root) {
  if (args.contains("dataset") || (!cfg.paths.dataset.empty() && !args.contains("corpus"))) {
    const fs::path p = fs::absolute(path_arg(args, "dataset", cfg.paths.dataset));
    *root = p.parent_path();
    auto ds = read_dataset_jsonl(p);
    std::vector<Article> all = std::move(ds.train);
    all.insert(all.end(), ds.val.begin(), ds.val.end());
    all.insert(all.end(), ds.test.begin(), ds.test.end());
    return all;
  }
  const fs::path p = fs::absolute(path_arg(args, "corpus", cfg.paths.corpus));
  *root = p.parent_path();
  return read_articles_jsonl(p);
}

json cmd_extract_features(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  fs::path root;
  const auto articles = load_articles_arg(cfg, args, &root);
  const auto kind = parse_input_kind(arg_or<std::string>(args, "kind", "image"));
  json files = json::object();
  for (auto domain : {DomainTag::red, DomainTag::green}) {
    if (args.contains("domain") && parse_domain_tag(args.at("domain").get<std::string>()) != domain) continue;
    const auto sample = extract_features(articles, kind, domain, cfg, root);
    const std::string name = std::string(to_string(kind)) + "-" + std::string(to_string(domain)) + ".fea";
    save_feature_sample(run.path() / name, sample);
    run.log().info("{} {} features: {} x {}", to_string(domain), to_string(kind), sample.vectors.rows(),
                   sample.vectors.cols());
    files[std::string(to_string(domain))] = {{"file", name}, {"rows", sample.vectors.rows()}};
  }
  return {{"kind", to_string(kind)}, {"features", files}};
}

struct CrossModalData {
  TextContext text;
  std::array<std::array<std::vector<Article>, 3>, 2> splits;  // [red, green][train, val, test]
  fs::path root;
};

CrossModalData crossmodal_data(const fs::path& corpus, const Word2VecConfig& w2v, bool pad_to_longest,
                               std::uint64_t seed, const TextContext* existing) {
  const auto articles = read_articles_jsonl(corpus);
  std::array<std::array<std::vector<Article>, 3>, 2> splits{domain_splits(articles, DomainTag::red, seed),
                                                            domain_splits(articles, DomainTag::green, seed)};
  if (existing) return {*existing, std::move(splits), fs::absolute(corpus).parent_path()};
  std::vector<Article> both = splits[0][0];
  both.insert(both.end(), splits[1][0].begin(), splits[1][0].end());
  auto text = build_text_context(both, w2v, pad_to_longest);
  return {std::move(text), std::move(splits), fs::absolute(corpus).parent_path()};
}

std::size_t domain_index(DomainTag d) { return d == DomainTag::red ? 0 : 1; }

json retrieval_grid(const CrossModalEmbedder<float>& model, const std::vector<ArticleInputs>& test,
                    const std::vector<Article>& articles, const std::vector<int>& ks, int rounds, std::uint64_t seed) {
  std::vector<std::string> urls;
  for (const auto& a : articles) urls.push_back(a.url);
  const auto set = embed_all(model, test, urls);
  json acc = json::array(), se = json::array();
  const double trials = static_cast<double>(test.size()) * rounds;
  for (int k : ks) {
    const double p = kway_accuracy(set, k, rounds, seed);
    acc.push_back(p);
    se.push_back(std::sqrt(p * (1 - p) / trials));
  }
  return {{"ks", ks}, {"accuracy", acc}, {"standard_error", se}, {"queries", test.size()}, {"rounds", rounds}};
}

json cmd_embed_train(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  const auto domain = parse_domain_tag(arg_or<std::string>(args, "domain", "green"));
  const fs::path corpus = fs::absolute(path_arg(args, "corpus", cfg.paths.corpus));
  const auto data = crossmodal_data(corpus, cfg.word2vec, cfg.pad_to_longest, cfg.seed, nullptr);
  const auto& sp = data.splits[domain_index(domain)];
  CrossModalConfig cc = cfg.crossmodal;
  cc.title_length = data.text.title_length;
  cc.tweet_length = data.text.tweet_length;
  CrossModalEmbedder<float> model(cc);
  model.init(derive_seed(cfg.seed, 100));
  const auto train = encode_articles(sp[0], data.text, model.image_encoder(), data.root);
  const auto val = encode_articles(sp[1], data.text, model.image_encoder(), data.root);
  const auto test = encode_articles(sp[2], data.text, model.image_encoder(), data.root);
  run.log().info("training {} embedder on {} pairs", to_string(domain), train.size());
  const auto result = train_embedding(model, train, val, cfg.embed_train);
  for (const auto& e : result.history) {
    run.log().info("epoch {} lr {:.2e} train {:.5f} val {:.5f}", e.epoch, e.lr, e.train_loss, e.val_loss);
  }
  save_embedder(run.path() / "embedder.ckpt", model,
                {{"domain", to_string(domain)}, {"corpus", corpus.string()}, {"split_seed", cfg.seed},
                 {"config_hash", run.hash()}});
  save_text_context(run.path(), data.text);
  return {{"domain", to_string(domain)},
          {"training", to_json(result)},
          {"test", retrieval_grid(model, test, sp[2], cfg.ks, cfg.retrieval_rounds, cfg.seed)},
          {"ckpt", "embedder.ckpt"}};
}

json cmd_retrieve(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  const fs::path ckpt = path_arg(args, "ckpt");
  json meta;
  auto model = load_embedder(ckpt, &meta);
  const auto& extra = meta.at("extra");
  const auto text = load_text_context(ckpt.parent_path());
  const fs::path corpus = path_arg(args, "corpus", extra.at("corpus").get<std::string>());
  const auto data = crossmodal_data(corpus, cfg.word2vec, false, extra.at("split_seed").get<std::uint64_t>(), &text);
  const auto test_domain = parse_domain_tag(arg_or<std::string>(args, "test_domain", "green"));
  const auto& articles = data.splits[domain_index(test_domain)][2];
  const auto test = encode_articles(articles, text, model.image_encoder(), data.root);
  const auto ks = parse_int_list(args.value("k", json()), cfg.ks);
  auto grid = retrieval_grid(model, test, articles, ks, cfg.retrieval_rounds, cfg.seed);
  run.log().info("{}-trained embedder on {} test: {}", extra.at("domain").get<std::string>(), to_string(test_domain),
                 grid.at("accuracy").dump());
  return {{"train_domain", extra.at("domain")}, {"test_domain", to_string(test_domain)}, {"result", grid}};
}

json cmd_saliency(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  auto t = load_trained(args);
  const auto id = arg_or<std::string>(args, "input", "");
  const Article* article = nullptr;
  for (auto s : {Split::train, Split::val, Split::test}) {
    for (const auto& a : split_of(t.dataset, s)) {
      if (a.article_id == id) article = &a;
    }
  }
  if (!article) throw LookupError("article '" + id + "' is not in the dataset");
  const auto target =
      parse_target(arg_or<std::string>(args, "task", "reliability"), arg_or<std::string>(args, "class", "positive"));
  auto in = encode_article(*article, t.text, t.model.image_encoder(), t.image_root);
  std::vector<SaliencyInput> kinds;
  if (args.contains("kind") && args.at("kind").is_string()) {
    kinds.push_back(parse_saliency_input(args.at("kind").get<std::string>()));
  } else {
    const auto& m = t.model.config().modalities;
    if (m.image && t.model.image_encoder().has_cnn()) kinds.push_back(SaliencyInput::image);
    if (m.title) kinds.push_back(SaliencyInput::title);
    if (m.tweet) kinds.push_back(SaliencyInput::tweet);
  }
  SmoothGradOptions sg = cfg.smoothgrad;
  sg.seed = derive_seed(cfg.smoothgrad.seed, hash_string(id));
  json maps = json::array();
  for (auto kind : kinds) {
    if (kind == SaliencyInput::image && !in.image) in.image = t.model.image_encoder().prepare(t.image_root / article->image_ref);
    for (const char* method : {"gradcam", "smoothgrad"}) {
      const auto m = std::string(method) == "gradcam" ? gradcam(t.model, in, kind, target)
                                                      : smoothgrad_gradcam(t.model, in, kind, target, sg);
      const std::string stem = std::string(to_string(kind)) + "-" + method;
      run.write_json(stem + ".json", to_json(m));
      json entry{{"input", to_string(kind)}, {"method", method}, {"raw_max", m.raw_max}, {"map", stem + ".json"}};
      if (kind == SaliencyInput::image) {
        write_overlay_png(run.path() / (stem + ".png"), *in.image, m.grid);
        entry["overlay"] = stem + ".png";
      } else {
        run.write_text(stem + ".html", token_strip_html(m));
        entry["overlay"] = stem + ".html";
      }
      maps.push_back(entry);
    }
  }
  run.log().info("wrote {} saliency maps for {}", maps.size(), id);
  return {{"article_id", id},
          {"task", to_string(target.task)},
          {"class", class_name(target)},
          {"maps", maps}};
}

json cmd_token_report(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  auto t = load_trained(args);
  const auto split = parse_split(arg_or<std::string>(args, "split", "test"));
  const auto field = parse_saliency_input(arg_or<std::string>(args, "field", "tweet"));
  const auto inputs = encode_articles(split_of(t.dataset, split), t.text, t.model.image_encoder(), t.image_root);
  const auto report = top_tokens_report(t.model, inputs, cfg.top_k, arg_or<std::size_t>(args, "min_count", cfg.min_count), field);
  const auto table = format_table(report);
  run.write_text("token_report.txt", table);
  run.log().info("token report over {} {} articles", inputs.size(), to_string(split));
  return {{"split", to_string(split)}, {"report", to_json(report)}, {"table", "token_report.txt"}};
}

json cmd_mmd(const ExperimentConfig& cfg, const json& args, RunDirectory& run) {
  std::vector<fs::path> files;
  if (args.contains("features")) {
    for (const auto& f : args.at("features")) files.emplace_back(f.get<std::string>());
  }
  if (files.empty()) throw ConfigError("missing --features");
  std::vector<FeatureSample> samples;
  for (const auto& f : files) {
    auto s = load_feature_sample(f);
    if (args.contains("domain") && args.at("domain").is_string() &&
        parse_domain_tag(args.at("domain").get<std::string>()) != s.domain && files.size() == 1) {
      throw InvalidInput(f.string() + " holds " + std::string(to_string(s.domain)) + " features");
    }
    if (args.contains("kind") && args.at("kind").is_string() &&
        parse_input_kind(args.at("kind").get<std::string>()) != s.kind) {
      throw InvalidInput(f.string() + " holds " + std::string(to_string(s.kind)) + " features");
    }
    samples.push_back(std::move(s));
  }
  std::vector<Index> ns;
  for (int n : parse_int_list(args.value("n", json()), std::vector<int>(cfg.mmd_n.begin(), cfg.mmd_n.end()))) ns.push_back(n);
  const int repeats = arg_or<int>(args, "repeats", cfg.mmd_repeats);

  std::ostringstream csv;
  csv << "n,domain,input_kind,mean_mmd2,stderr\n";
  json results = json::array();
  std::map<std::string, std::vector<CurveSeries>> curves;
  std::vector<std::vector<MmdProtocolResult>> per_sample(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    CurveSeries series{std::string(to_string(s.domain)), {}};
    for (Index n : ns) {
      if (s.vectors.rows() < 2 * n) {
        run.log().warn("skipping N={} for {} {}: only {} rows", n, to_string(s.domain), to_string(s.kind), s.vectors.rows());
        per_sample[i].push_back({});
        continue;
      }
      auto r = within_domain_protocol(s, n, repeats, cfg.seed);
      csv << n << ',' << to_string(s.domain) << ',' << to_string(s.kind) << ',' << r.mean << ',' << r.standard_error() << '\n';
      series.points.push_back({static_cast<double>(n), r.mean, r.standard_error()});
      results.push_back({{"domain", to_string(s.domain)}, {"kind", to_string(s.kind)}, {"protocol", to_json(r)}});
      run.log().info("{} {} N={}: mean MMD^2 {:.6f} +/- {:.6f}", to_string(s.domain), to_string(s.kind), n, r.mean,
                     r.standard_error());
      per_sample[i].push_back(std::move(r));
    }
    curves[std::string(to_string(s.kind))].push_back(std::move(series));
  }
  json tests = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      if (samples[i].kind != samples[j].kind || samples[i].domain == samples[j].domain) continue;
      for (std::size_t k = 0; k < ns.size(); ++k) {
        if (per_sample[i][k].values.empty() || per_sample[j][k].values.empty()) continue;
        const auto t = compare_protocols(per_sample[i][k], per_sample[j][k]);
        tests.push_back({{"kind", to_string(samples[i].kind)},
                         {"a", to_string(samples[i].domain)},
                         {"b", to_string(samples[j].domain)},
                         {"n", ns[k]},
                         {"t", t.t},
                         {"p", t.p},
                         {"df", t.df}});
      }
    }
  }
  run.write_text("fig5.csv", csv.str());
  json plots = json::array();
  for (const auto& [kind, series] : curves) {
    run.write_text("fig5-" + kind + ".svg", mmd_curve_svg(kind, series));
    plots.push_back("fig5-" + kind + ".svg");
  }
  return {{"results", results}, {"t_tests", tests}, {"csv", "fig5.csv"}, {"plots", plots}};
}

json cmd_report(const ExperimentConfig&, const json& args, RunDirectory& run) {
  std::vector<fs::path> runs;
  if (args.contains("runs")) {
    for (const auto& r : args.at("runs")) {
      const fs::path p = r.get<std::string>();
      if (fs::exists(p / "metrics.json")) {
        runs.push_back(p);
      } else if (fs::is_directory(p)) {
        for (const auto& e : fs::directory_iterator(p)) {
          if (fs::exists(e.path() / "metrics.json") && e.path() != run.path()) runs.push_back(e.path());
        }
      } else {
        throw LookupError("no run directory at " + p.string());
      }
    }
  }
  std::sort(runs.begin(), runs.end());
  const auto md = build_report(runs, run.path());
  run.write_text("report.md", md);
  run.log().info("report over {} runs", runs.size());
  return {{"runs", runs.size()}, {"report", "report.md"}};
}

}  // namespace

// ---------------------------------------------------------------------------

std::array<std::vector<Article>, 3> domain_splits(std::span<const Article> articles, DomainTag domain,
                                                   std::uint64_t seed) {
  std::vector<Article> pool;
  for (const auto& a : articles) {
    if (in_domain(a, domain)) pool.push_back(a);
  }
  std::sort(pool.begin(), pool.end(), [](const Article& a, const Article& b) { return a.article_id < b.article_id; });
  std::mt19937_64 rng(derive_seed(seed, domain == DomainTag::red ? 1 : 2));
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto counts = split_counts(pool.size());
  std::array<std::vector<Article>, 3> out;
  std::size_t at = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    out[s].assign(pool.begin() + static_cast<std::ptrdiff_t>(at), pool.begin() + static_cast<std::ptrdiff_t>(at + counts[s]));
    at += counts[s];
  }
  return out;
}

FeatureSample extract_features(std::span<const Article> articles, InputKind kind, DomainTag domain,
                               const ExperimentConfig& config, const fs::path& image_root) {
  std::vector<const Article*> rows;
  for (const auto& a : articles) {
    if (in_domain(a, domain)) rows.push_back(&a);
  }
  if (rows.size() < 2) throw InsufficientData("fewer than two " + std::string(to_string(domain)) + " articles");
  Mat<double> v(static_cast<Index>(rows.size()), expected_dim(kind));
  if (kind == InputKind::image) {
    ImageEncoder<float> enc("image", config.model.image);
    std::mt19937_64 rng(derive_seed(config.seed, 100));
    enc.init(rng);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      v.row(static_cast<Index>(i)) = enc.features(image_root / rows[i]->image_ref).cast<double>().transpose();
    }
  } else {
    const bool tweet = kind == InputKind::tweet;
    std::vector<Tokens> docs;
    for (const auto& a : articles) docs.push_back(tweet ? tweet_tokens(a) : title_tokens(a));
    Word2VecConfig w2v = config.word2vec;
    if (tweet) w2v.seed = derive_seed(w2v.seed, 1);
    const auto table = train_word_embeddings(docs, tweet ? SpaceTag::tweet : SpaceTag::title, w2v);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto tokens = tweet ? tweet_tokens(*rows[i]) : title_tokens(*rows[i]);
      v.row(static_cast<Index>(i)) = document_embedding(tokens, table).transpose();
    }
  }
  return make_feature_sample(std::move(v), domain, kind);
}

void save_feature_sample(const fs::path& path, const FeatureSample& s) {
  TensorFile f;
  f.meta = {{"sample", {{"domain", to_string(s.domain)}, {"kind", to_string(s.kind)}}}};
  f.tensors.push_back(NamedTensor::from("vectors", s.vectors));
  write_tensor_file(path, kFeatureMagic, f);
}

FeatureSample load_feature_sample(const fs::path& path) {
  const auto f = read_tensor_file(path, kFeatureMagic);
  if (!f.meta.contains("sample")) throw ParseError(path.string() + " is a feature store, not a feature sample");
  const auto& m = f.meta.at("sample");
  return make_feature_sample(f.at("vectors").as<double>(), parse_domain_tag(m.at("domain").get<std::string>()),
                             parse_input_kind(m.at("kind").get<std::string>()));
}

RunOutcome run(Command command, const json& resolved_in) {
  json cfg_json = resolved_in;
  json args = json::object();
  if (cfg_json.contains("args")) {
    args = cfg_json.at("args");
    cfg_json.erase("args");
  }
  cfg_json.erase("command");
  cfg_json.erase("config_hash");
  const auto config = experiment_config_from_json(cfg_json);
  json resolved = to_json(config);
  resolved["command"] = to_string(command);
  resolved["args"] = args;
  json hashed = resolved;
  hashed["paths"].erase("output");
  const auto hash = config_hash(hashed);

  auto dir = RunDirectory::create(config.paths.output, command, hashed);
  json stored = resolved;
  stored["config_hash"] = hash;
  dir.write_json("config.json", stored);
  dir.log().info("{} run {} (config {})", to_string(command), dir.path().filename().string(), hash);

  json metrics;
  try {
    switch (command) {
      case Command::synth: metrics = cmd_synth(config, args, dir); break;
      case Command::ingest: metrics = cmd_ingest(config, args, dir); break;
      case Command::build_dataset: metrics = cmd_build_dataset(config, args, dir); break;
      case Command::train: metrics = cmd_train(config, args, dir); break;
      case Command::eval: metrics = cmd_eval(config, args, dir); break;
      case Command::extract_features: metrics = cmd_extract_features(config, args, dir); break;
      case Command::embed_train: metrics = cmd_embed_train(config, args, dir); break;
      case Command::retrieve: metrics = cmd_retrieve(config, args, dir); break;
      case Command::saliency: metrics = cmd_saliency(config, args, dir); break;
      case Command::token_report: metrics = cmd_token_report(config, args, dir); break;
      case Command::mmd: metrics = cmd_mmd(config, args, dir); break;
      case Command::report: metrics = cmd_report(config, args, dir); break;
    }
  } catch (const std::exception& e) {
    dir.log().error("{}", e.what());
    dir.write_json("error.json", {{"command", to_string(command)}, {"config_hash", hash}, {"error", e.what()}});
    throw;
  }
  metrics["command"] = to_string(command);
  metrics["config_hash"] = hash;
  dir.write_json("metrics.json", metrics);
  dir.log().info("done");
  return {dir.path(), metrics};
}

}  // namespace mmrl
