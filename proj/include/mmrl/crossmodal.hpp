#pragma once

#include "mmrl/encoders.hpp"
#include "mmrl/multitask.hpp"
#include "mmrl/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mmrl {

inline constexpr Index kJointDim = 512;
inline constexpr double kDefaultMargin = 0.5;

struct CrossModalConfig {
  TextCnnConfig text;
  ImageEncoderConfig image;
  Index embed_dim = kJointDim;
  double margin = kDefaultMargin;
  /// Adds the text-anchored mirror term; not part of the image-anchored objective.
  bool symmetric = false;
  Index title_length = 32;
  Index tweet_length = 96;
};

nlohmann::json to_json(const CrossModalConfig& c);
CrossModalConfig crossmodal_config_from_json(const nlohmann::json& j);

/// Row-wise L2 normalization; throws on a zero row.
template <typename Derived>
Mat<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    const Scalar n = v.row(i).norm();
    if (!(n > Scalar(0))) throw DegenerateEmbedding("zero vector cannot be projected onto the sphere");
    out.row(i) = v.row(i) / n;
  }
  return out;
}

/// Gradient through u = v / |v| for one vector.
template <typename Scalar>
Vec<Scalar> normalize_backward(const Vec<Scalar>& v, const Vec<Scalar>& grad_u) {
  const Scalar n = v.norm();
  const Vec<Scalar> u = v / n;
  return (grad_u - u * u.dot(grad_u)) / n;
}

/// Image-anchored N-pairs margin loss summed over anchors:
/// sum_i sum_{j != i} [ |f_i - g_i|^2 - |f_i - g_j|^2 + margin ]_+.
/// Rows of `images` and `texts` are paired embeddings.
template <typename DF, typename DG>
double npairs_loss(const Eigen::MatrixBase<DF>& images, const Eigen::MatrixBase<DG>& texts, double margin,
                   Mat<typename DF::Scalar>* grad_images = nullptr, Mat<typename DF::Scalar>* grad_texts = nullptr,
                   bool symmetric = false) {
  using Scalar = typename DF::Scalar;
  const Index B = images.rows();
  if (B < 2) throw InvalidInput("N-pairs loss needs a batch of at least two pairs");
  if (texts.rows() != B || texts.cols() != images.cols()) throw InvalidInput("image/text embedding shapes differ");
  // Squared distances between every image and every text.
  Mat<Scalar> d2(B, B);
  for (Index i = 0; i < B; ++i) {
    for (Index j = 0; j < B; ++j) d2(i, j) = (images.row(i) - texts.row(j)).squaredNorm();
  }
  if (grad_images) *grad_images = Mat<Scalar>::Zero(B, images.cols());
  if (grad_texts) *grad_texts = Mat<Scalar>::Zero(B, texts.cols());
  double loss = 0.0;
  for (Index i = 0; i < B; ++i) {
    for (Index j = 0; j < B; ++j) {
      if (j == i) continue;
      const double term = static_cast<double>(d2(i, i) - d2(i, j)) + margin;
      if (term > 0.0) {
        loss += term;
        if (grad_images) grad_images->row(i) += Scalar(2) * (texts.row(j) - texts.row(i));
        if (grad_texts) {
          grad_texts->row(i) += Scalar(2) * (texts.row(i) - images.row(i));
          grad_texts->row(j) += Scalar(2) * (images.row(i) - texts.row(j));
        }
      }
      if (symmetric) {
        const double mirror = static_cast<double>(d2(i, i) - d2(j, i)) + margin;
        if (mirror > 0.0) {
          loss += mirror;
          if (grad_texts) grad_texts->row(i) += Scalar(2) * (images.row(j) - images.row(i));
          if (grad_images) {
            grad_images->row(i) += Scalar(2) * (images.row(i) - texts.row(i));
            grad_images->row(j) += Scalar(2) * (texts.row(i) - images.row(j));
          }
        }
      }
    }
  }
  return loss;
}

/// Image branch: backbone + linear to the joint space. Text branch: title and
/// tweet Text-CNNs, concatenation, linear to the joint space. Both outputs
/// are L2-normalized.
template <typename Scalar>
class CrossModalEmbedder {
 public:
  struct ImageCache {
    typename SmallCnn<Scalar>::Cache cnn;
    bool cnn_ran = false;
    Vec<Scalar> features;
    Vec<Scalar> projected;
  };
  struct TextCache {
    typename TextCnn<Scalar>::Cache title, tweet;
    Vec<Scalar> concat;
    Vec<Scalar> projected;
  };

  CrossModalEmbedder() = default;
  explicit CrossModalEmbedder(CrossModalConfig config)
      : config_(std::move(config)),
        image_("image", config_.image),
        title_("title_cnn", config_.text),
        tweet_("tweet_cnn", config_.text),
        image_proj_("image_proj", kImageFeatureDim, config_.embed_dim),
        text_proj_("text_proj", 2 * config_.text.output_dim(), config_.embed_dim) {}

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    image_.init(rng);
    title_.init(rng);
    tweet_.init(rng);
    image_proj_.init(rng);
    text_proj_.init(rng);
  }

  const CrossModalConfig& config() const { return config_; }
  ImageEncoder<Scalar>& image_encoder() { return image_; }
  const ImageEncoder<Scalar>& image_encoder() const { return image_; }

  Vec<Scalar> embed_image(const ArticleInputs& in, ImageCache* cache = nullptr) const {
    ImageCache local;
    ImageCache& c = cache ? *cache : local;
    if (in.image_features.size() == kImageFeatureDim && !image_.trainable()) {
      c.features = in.image_features.cast<Scalar>();
    } else {
      if (!in.image || !image_.has_cnn()) throw ConfigError("example '" + in.article_id + "' has no usable image input");
      nn::Tensor3<Scalar> t(in.image->channels, in.image->height, in.image->width);
      t.data = in.image->data.template cast<Scalar>();
      c.features = image_.cnn().forward(t, &c.cnn);
      c.cnn_ran = true;
    }
    c.projected = image_proj_.forward(c.features);
    return normalize_rows(c.projected.transpose()).transpose();
  }

  Vec<Scalar> embed_text(const ArticleInputs& in, TextCache* cache = nullptr) const {
    TextCache local;
    TextCache& c = cache ? *cache : local;
    const Index T = config_.text.output_dim();
    c.concat.resize(2 * T);
    c.concat.head(T) = title_.forward(in.title.rows.template cast<Scalar>(), &c.title);
    c.concat.tail(T) = tweet_.forward(in.tweet.rows.template cast<Scalar>(), &c.tweet);
    c.projected = text_proj_.forward(c.concat);
    return normalize_rows(c.projected.transpose()).transpose();
  }

  void backward_image(const ImageCache& c, const Vec<Scalar>& grad_unit) {
    const Vec<Scalar> g = normalize_backward(c.projected, grad_unit);
    const Vec<Scalar> g_feat = image_proj_.backward(c.features, g);
    if (c.cnn_ran && image_.trainable()) image_.cnn().backward(c.cnn, g_feat, true, false);
  }

  void backward_text(const TextCache& c, const Vec<Scalar>& grad_unit) {
    const Vec<Scalar> g = normalize_backward(c.projected, grad_unit);
    const Vec<Scalar> g_concat = text_proj_.backward(c.concat, g);
    const Index T = config_.text.output_dim();
    title_.backward(c.title, g_concat.head(T), false);
    tweet_.backward(c.tweet, g_concat.tail(T), false);
  }

  nn::ParamList<Scalar> params() {
    nn::ParamList<Scalar> out = image_.params();
    for (auto* p : image_proj_.params()) out.push_back(p);
    for (auto* p : title_.params()) out.push_back(p);
    for (auto* p : tweet_.params()) out.push_back(p);
    for (auto* p : text_proj_.params()) out.push_back(p);
    return out;
  }

  nn::ParamList<Scalar> trainable_params() {
    nn::ParamList<Scalar> out;
    if (image_.trainable()) out = image_.params();
    for (auto* p : image_proj_.params()) out.push_back(p);
    for (auto* p : title_.params()) out.push_back(p);
    for (auto* p : tweet_.params()) out.push_back(p);
    for (auto* p : text_proj_.params()) out.push_back(p);
    return out;
  }

 private:
  CrossModalConfig config_;
  ImageEncoder<Scalar> image_;
  TextCnn<Scalar> title_;
  TextCnn<Scalar> tweet_;
  nn::Linear<Scalar> image_proj_;
  nn::Linear<Scalar> text_proj_;
};

/// Paired unit embeddings for a set of articles.
struct EmbeddingSet {
  Mat<double> images;  // n x d
  Mat<double> texts;   // n x d
  std::vector<std::string> ids;
  std::vector<std::string> urls;
};

EmbeddingSet embed_all(const CrossModalEmbedder<float>& model, std::span<const ArticleInputs> inputs,
                       std::span<const std::string> urls = {});

/// Mean N-pairs loss per anchor over consecutive batches.
double npairs_validation_loss(const CrossModalEmbedder<float>& model, std::span<const ArticleInputs> inputs,
                              std::size_t batch_size);

TrainResult train_embedding(CrossModalEmbedder<float>& model, std::span<const ArticleInputs> train,
                            std::span<const ArticleInputs> val, const TrainConfig& config);

/// Fraction of trials where the paired text is strictly nearest to the
/// query image among it and K-1 sampled negatives. Negatives depend only on
/// (seed, round, query id), never on the embeddings.
double kway_accuracy(const EmbeddingSet& set, int k, int rounds, std::uint64_t seed);

/// The K-1 negative indices drawn for one query.
std::vector<std::size_t> sample_negatives(const EmbeddingSet& set, std::size_t query, int k, int round,
                                          std::uint64_t seed);

struct DomainSplits {
  std::vector<ArticleInputs> train, val, test;
  std::vector<std::string> test_urls;
};

struct CrossDomainCell {
  double mean = 0.0;
  double standard_error = 0.0;
};

struct CrossDomainResult {
  std::vector<int> ks;
  // accuracy[train][test][k-index], domains ordered {red, green}
  std::array<std::array<std::vector<CrossDomainCell>, 2>, 2> accuracy;
  std::array<TrainResult, 2> training;

  /// (other - same) / same for a training domain at a K index.
  double relative_diff(std::size_t train_domain, std::size_t k_index) const;
  double absolute_diff(std::size_t train_domain, std::size_t k_index) const;
};

nlohmann::json to_json(const CrossDomainResult& r);
/// Aligned-text table in the train-domain x test-domain layout.
std::string format_table(const CrossDomainResult& r);

/// Trains one embedder per domain (green undersampled to the red training
/// size) and evaluates both on both test sets with shared negatives,
/// averaging over `eval_seeds` negative draws.
CrossDomainResult cross_domain_experiment(const DomainSplits& red, const DomainSplits& green,
                                          const CrossModalConfig& model_config, const TrainConfig& train_config,
                                          const std::vector<int>& ks = {3, 5, 10}, std::uint64_t seed = 1,
                                          int eval_seeds = 5);

void save_embedder(const std::filesystem::path& path, CrossModalEmbedder<float>& model, const nlohmann::json& extra = {});
CrossModalEmbedder<float> load_embedder(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace mmrl
