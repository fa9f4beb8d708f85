#pragma once

#include "mmrl/multitask.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmrl {

/// (task, class) pair a map explains. The positive class is popular for
/// the popularity task and reliable for the reliability task.
struct SaliencyTarget {
  Task task = Task::reliability;
  bool positive = true;
};

std::string class_name(const SaliencyTarget& t);
/// Accepts positive/negative or the class names (popular, unreliable, ...).
SaliencyTarget parse_target(std::string_view task, std::string_view cls);

enum class SaliencyInput { image, title, tweet };
std::string_view to_string(SaliencyInput s);
SaliencyInput parse_saliency_input(std::string_view s);

struct SaliencyMap {
  SaliencyTarget target;
  SaliencyInput input = SaliencyInput::image;
  Mat<double> grid;                 // conv resolution for images, 1 x L for text
  std::vector<std::string> tokens;  // text only, one per grid column
  Index length = 0;                 // non-padded tokens
  double raw_max = 0.0;             // before normalization
};

nlohmann::json to_json(const SaliencyMap& m);

/// Unnormalized rectified map.
Mat<double> gradcam_raw(const MultiTaskModel<float>& model, const ArticleInputs& in, SaliencyInput kind,
                        const SaliencyTarget& target);

/// Rescales so the maximum is 1 (all-zero maps are left alone).
void max_normalize(SaliencyMap& m);

SaliencyMap gradcam(const MultiTaskModel<float>& model, const ArticleInputs& in, SaliencyInput kind,
                    const SaliencyTarget& target);

struct SmoothGradOptions {
  int n = 25;
  std::optional<double> sigma;  // default: 0.1 x input dynamic range
  std::uint64_t seed = 1;
};

SaliencyMap smoothgrad_gradcam(const MultiTaskModel<float>& model, const ArticleInputs& in, SaliencyInput kind,
                               const SaliencyTarget& target, const SmoothGradOptions& options);

/// Per-token max-normalized scores over the padded sequence; padded
/// positions are exactly zero.
std::vector<double> token_attention(const MultiTaskModel<float>& model, const ArticleInputs& in, SaliencyInput field,
                                    const SaliencyTarget& target);

struct TokenScore {
  std::string token;
  double mean = 0.0;
  std::size_t count = 0;
};

struct TokenReport {
  SaliencyInput field = SaliencyInput::tweet;
  std::size_t min_count = 20;
  std::vector<std::pair<SaliencyTarget, std::vector<TokenScore>>> classes;
};

/// Mean attention per token over examples of each class, top k per class.
TokenReport top_tokens_report(const MultiTaskModel<float>& model, std::span<const ArticleInputs> split,
                              std::size_t k = 10, std::size_t min_count = 20,
                              SaliencyInput field = SaliencyInput::tweet);

nlohmann::json to_json(const TokenReport& r);
std::string format_table(const TokenReport& r);

/// Heatmap upsampled bilinearly to the image size and alpha-blended over it.
void write_overlay_png(const std::filesystem::path& path, const nn::Tensor3<float>& image, const Mat<double>& grid,
                       double alpha = 0.5);

/// Color-scaled token strip.
std::string token_strip_html(const SaliencyMap& m);

}  // namespace mmrl
