#pragma once

#include "mmrl/corpus.hpp"
#include "mmrl/crossmodal.hpp"
#include "mmrl/homogeneity.hpp"
#include "mmrl/multitask.hpp"
#include "mmrl/saliency.hpp"
#include "mmrl/textenc.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spdlog {
class logger;
}

namespace mmrl {

/// Word embeddings for both text spaces fitted on the given articles, and
/// sequence lengths from their token counts.
TextContext build_text_context(std::span<const Article> articles, const Word2VecConfig& config,
                               bool pad_to_longest = false);

void save_text_context(const std::filesystem::path& dir, const TextContext& text);
TextContext load_text_context(const std::filesystem::path& dir);

nlohmann::json to_json(const Word2VecConfig& c);
Word2VecConfig word2vec_config_from_json(const nlohmann::json& j);

struct ExperimentConfig {
  std::string experiment = "default";
  std::uint64_t seed = 1;
  struct Paths {
    std::filesystem::path corpus;
    std::filesystem::path dataset;
    std::filesystem::path output = "runs";
    std::filesystem::path tweets;
    std::filesystem::path domains;
    std::filesystem::path html_cache;
  } paths;
  double lambda = 1e4;
  double quantile = kDefaultQuantile;
  std::vector<double> lambda_candidates;  // tuned when non-empty
  Word2VecConfig word2vec;
  bool pad_to_longest = false;  // else the 99th-percentile length
  MultiTaskConfig model;
  TrainConfig train;
  CrossModalConfig crossmodal;
  TrainConfig embed_train;
  std::vector<int> ks{3, 5, 10};
  int retrieval_rounds = 10;
  SmoothGradOptions smoothgrad;
  std::size_t top_k = 10;
  std::size_t min_count = 20;
  std::vector<Index> mmd_n{250, 500, 1000};
  int mmd_repeats = 250;
};

/// The full default configuration; every accepted key appears here.
nlohmann::json default_config_json();
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

/// Recursively overlays `patch` on `base`. Keys and value types must already
/// exist in `base`; violations raise ConfigError naming the field.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& patch);

/// Applies "a.b.c=value"; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& config, std::string_view assignment);

/// First 16 hex digits of the SHA-256 of the canonical JSON dump.
std::string config_hash(const nlohmann::json& config);

enum class Command {
  synth,
  ingest,
  build_dataset,
  train,
  eval,
  extract_features,
  embed_train,
  retrieve,
  saliency,
  token_report,
  mmd,
  report
};
std::string_view to_string(Command c);
Command parse_command(std::string_view s);

/// Timestamped, lock-protected output directory of one command invocation.
class RunDirectory {
 public:
  static RunDirectory create(const std::filesystem::path& root, Command command, const nlohmann::json& resolved);
  RunDirectory(RunDirectory&&) noexcept;
  RunDirectory& operator=(RunDirectory&&) noexcept;
  ~RunDirectory();

  const std::filesystem::path& path() const { return path_; }
  const std::string& hash() const { return hash_; }
  spdlog::logger& log() { return *logger_; }
  void write_json(const std::string& name, const nlohmann::json& j) const;
  void write_text(const std::string& name, const std::string& text) const;

 private:
  RunDirectory() = default;
  std::filesystem::path path_;
  std::string hash_;
  int lock_fd_ = -1;
  std::shared_ptr<spdlog::logger> logger_;
};

struct RunOutcome {
  std::filesystem::path dir;
  nlohmann::json metrics;
};

/// `resolved` holds the experiment config plus an "args" object with the
/// command's own flags. Writes config.json, metrics.json and run.log.
RunOutcome run(Command command, const nlohmann::json& resolved);

/// Articles of one reliability side split 70/10/20 after a seeded shuffle.
std::array<std::vector<Article>, 3> domain_splits(std::span<const Article> articles, DomainTag domain,
                                                   std::uint64_t seed);

/// Document vectors (text) or backbone features (image) for a set of articles.
FeatureSample extract_features(std::span<const Article> articles, InputKind kind, DomainTag domain,
                               const ExperimentConfig& config, const std::filesystem::path& image_root);

void save_feature_sample(const std::filesystem::path& path, const FeatureSample& s);
FeatureSample load_feature_sample(const std::filesystem::path& path);

struct CurvePoint {
  double n = 0.0;
  double mean = 0.0;
  double standard_error = 0.0;
};
struct CurveSeries {
  std::string label;
  std::vector<CurvePoint> points;
};

/// Mean MMD^2 against N with standard-error bars, one line per series.
std::string mmd_curve_svg(const std::string& title, const std::vector<CurveSeries>& series);

/// Markdown report over finished run directories.
std::string build_report(std::span<const std::filesystem::path> runs, const std::filesystem::path& out_dir);

}  // namespace mmrl
