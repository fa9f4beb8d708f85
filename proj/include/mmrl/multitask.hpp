#pragma once

#include "mmrl/corpus.hpp"
#include "mmrl/encoders.hpp"
#include "mmrl/nn.hpp"
#include "mmrl/textenc.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mmrl {

inline constexpr Index kFusedDim = kImageFeatureDim + 2 * kTextFeatureDim;  // 2816
inline constexpr double kProbabilityEpsilon = 1e-7;

struct Modalities {
  bool image = true;
  bool title = true;
  bool tweet = true;
};
Modalities parse_modalities(std::string_view list);  // "image,title,tweet"
std::string to_string(const Modalities& m);

struct MultiTaskConfig {
  TextCnnConfig text;
  ImageEncoderConfig image;
  Index head_width = 256;
  double dropout = 0.5;
  Modalities modalities;
  Index title_length = 32;
  Index tweet_length = 96;
};

nlohmann::json to_json(const MultiTaskConfig& c);
MultiTaskConfig multitask_config_from_json(const nlohmann::json& j);

struct TrainConfig {
  double initial_lr = 1e-4;
  double lr_decay_factor = 0.1;
  int lr_patience = 4;
  int early_stop_patience = 6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 64;
  int max_epochs = 100;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Prediction {
  double p_pop = 0.5;
  double p_rel = 0.5;
};

/// Encoded model inputs for one article.
struct ArticleInputs {
  std::string article_id;
  EncodedSequence title;
  EncodedSequence tweet;
  Tokens title_tokens;
  Tokens tweet_tokens;
  std::optional<nn::Tensor3<float>> image;  // set when the backbone runs per example
  Vec<float> image_features;                // set for frozen/precomputed backbones
  int y_pop = 0;                            // 1 = popular
  int y_rel = 0;                            // 1 = reliable
};

enum class Task { popularity, reliability };
std::string_view to_string(Task t);
Task parse_task(std::string_view s);

/// Binary cross-entropy on probabilities clamped to [eps, 1 - eps].
double binary_cross_entropy(double p, int y);

/// Summed popularity + reliability BCE over the batch.
double multitask_loss(std::span<const Prediction> preds, std::span<const int> y_pop, std::span<const int> y_rel);
double task_loss(std::span<const Prediction> preds, std::span<const int> y, Task task);

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// dL/dlogit for clamped BCE through a sigmoid.
inline double bce_logit_grad(double logit, int y) {
  const double p = sigmoid(logit);
  if (p < kProbabilityEpsilon || p > 1.0 - kProbabilityEpsilon) return 0.0;
  return p - static_cast<double>(y);
}

/// Image ‖ title ‖ tweet fusion followed by one head per task
/// (linear, rectifier, linear, sigmoid).
template <typename Scalar>
class MultiTaskModel {
 public:
  struct Cache {
    typename TextCnn<Scalar>::Cache title, tweet;
    typename SmallCnn<Scalar>::Cache image;
    bool image_ran = false;
    Vec<Scalar> fused;   // after dropout
    Vec<Scalar> mask;    // dropout scale per fused entry
    std::array<Vec<Scalar>, 2> hidden_pre;
    std::array<double, 2> logits{};
  };

  MultiTaskModel() = default;
  explicit MultiTaskModel(MultiTaskConfig config)
      : config_(std::move(config)),
        title_("title_cnn", config_.text),
        tweet_("tweet_cnn", config_.text),
        image_("image", config_.image),
        hidden_{nn::Linear<Scalar>("pop.fc1", kFusedDim, config_.head_width),
                nn::Linear<Scalar>("rel.fc1", kFusedDim, config_.head_width)},
        out_{nn::Linear<Scalar>("pop.fc2", config_.head_width, 1), nn::Linear<Scalar>("rel.fc2", config_.head_width, 1)} {
    if (config_.text.output_dim() != kTextFeatureDim) throw ConfigError("text features must be 384-D");
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    title_.init(rng);
    tweet_.init(rng);
    image_.init(rng);
    for (auto& l : hidden_) l.init(rng);
    for (auto& l : out_) l.init(rng);
  }

  const MultiTaskConfig& config() const { return config_; }
  Modalities& modalities() { return config_.modalities; }
  ImageEncoder<Scalar>& image_encoder() { return image_; }
  const ImageEncoder<Scalar>& image_encoder() const { return image_; }
  TextCnn<Scalar>& title_cnn() { return title_; }
  TextCnn<Scalar>& tweet_cnn() { return tweet_; }
  const TextCnn<Scalar>& text_cnn(bool tweet) const { return tweet ? tweet_ : title_; }

  /// Image features for an example: cached when present, else a forward pass.
  Vec<Scalar> image_block(const ArticleInputs& in, Cache* cache) const {
    if (in.image_features.size() == kImageFeatureDim && !image_.trainable()) return in.image_features.cast<Scalar>();
    if (!in.image) throw ConfigError("example '" + in.article_id + "' has neither image features nor pixels");
    if (!image_.has_cnn()) throw ConfigError("backbone cannot run on pixels");
    nn::Tensor3<Scalar> t(in.image->channels, in.image->height, in.image->width);
    t.data = in.image->data.template cast<Scalar>();
    if (cache) cache->image_ran = true;
    return image_.cnn().forward(t, cache ? &cache->image : nullptr);
  }

  /// Fused 2816-D vector with disabled modalities zeroed.
  Vec<Scalar> fuse(const ArticleInputs& in, Cache* cache) const {
    Vec<Scalar> fused = Vec<Scalar>::Zero(kFusedDim);
    if (config_.modalities.image) fused.head(kImageFeatureDim) = image_block(in, cache);
    if (config_.modalities.title) {
      fused.segment(kImageFeatureDim, kTextFeatureDim) =
          title_.forward(in.title.rows.template cast<Scalar>(), cache ? &cache->title : nullptr);
    }
    if (config_.modalities.tweet) {
      fused.tail(kTextFeatureDim) = tweet_.forward(in.tweet.rows.template cast<Scalar>(), cache ? &cache->tweet : nullptr);
    }
    return fused;
  }

  /// Logits from a fused vector (dropout applied when rng is given).
  std::array<double, 2> head_logits(const Vec<Scalar>& fused_in, Cache* cache, std::mt19937_64* dropout_rng) const {
    Vec<Scalar> fused = fused_in;
    Vec<Scalar> mask = Vec<Scalar>::Ones(kFusedDim);
    if (dropout_rng && config_.dropout > 0.0) {
      std::bernoulli_distribution keep(1.0 - config_.dropout);
      const auto scale = static_cast<Scalar>(1.0 / (1.0 - config_.dropout));
      for (Index i = 0; i < kFusedDim; ++i) mask(i) = keep(*dropout_rng) ? scale : Scalar(0);
      fused = fused.cwiseProduct(mask);
    }
    std::array<double, 2> logits{};
    for (std::size_t t = 0; t < 2; ++t) {
      Vec<Scalar> pre = hidden_[t].forward(fused);
      logits[t] = static_cast<double>(out_[t].forward(nn::relu(pre))(0, 0));
      if (cache) cache->hidden_pre[t] = std::move(pre);
    }
    if (cache) {
      cache->fused = std::move(fused);
      cache->mask = std::move(mask);
      cache->logits = logits;
    }
    return logits;
  }

  std::array<double, 2> logits(const ArticleInputs& in, Cache* cache = nullptr, std::mt19937_64* dropout_rng = nullptr) const {
    return head_logits(fuse(in, cache), cache, dropout_rng);
  }

  Prediction forward(const ArticleInputs& in) const {
    const auto z = logits(in);
    return {sigmoid(z[0]), sigmoid(z[1])};
  }

  /// Gradient of the weighted logits w.r.t. the fused vector (pre-dropout),
  /// accumulating head parameter gradients when `train` is set.
  Vec<Scalar> backward_heads(const Cache& c, const std::array<double, 2>& grad_logits, bool train) {
    Vec<Scalar> grad_fused = Vec<Scalar>::Zero(kFusedDim);
    for (std::size_t t = 0; t < 2; ++t) {
      if (grad_logits[t] == 0.0) continue;
      Vec<Scalar> g(1);
      g(0) = static_cast<Scalar>(grad_logits[t]);
      const Vec<Scalar> hidden = nn::relu(c.hidden_pre[t]);
      Vec<Scalar> g_hidden = train ? Vec<Scalar>(out_[t].backward(hidden, g)) : Vec<Scalar>(out_[t].input_grad(g));
      g_hidden = (c.hidden_pre[t].array() > Scalar(0)).select(g_hidden, Scalar(0));
      grad_fused += train ? Vec<Scalar>(hidden_[t].backward(c.fused, g_hidden)) : Vec<Scalar>(hidden_[t].input_grad(g_hidden));
    }
    return grad_fused.cwiseProduct(c.mask);
  }

  /// Gradient of the weighted logits w.r.t. the fused vector without
  /// touching parameter gradients.
  Vec<Scalar> fused_grad(const Cache& c, const std::array<double, 2>& grad_logits) const {
    Vec<Scalar> grad_fused = Vec<Scalar>::Zero(kFusedDim);
    for (std::size_t t = 0; t < 2; ++t) {
      if (grad_logits[t] == 0.0) continue;
      Vec<Scalar> g(1);
      g(0) = static_cast<Scalar>(grad_logits[t]);
      Vec<Scalar> g_hidden = out_[t].input_grad(g);
      g_hidden = (c.hidden_pre[t].array() > Scalar(0)).select(g_hidden, Scalar(0));
      grad_fused += hidden_[t].input_grad(g_hidden);
    }
    return grad_fused.cwiseProduct(c.mask);
  }

  /// Full backward pass for training; feature extractors receive gradients
  /// only for enabled modalities (and a trainable backbone).
  void backward(const Cache& c, const std::array<double, 2>& grad_logits) {
    const Vec<Scalar> g = backward_heads(c, grad_logits, true);
    if (config_.modalities.title) title_.backward(c.title, g.segment(kImageFeatureDim, kTextFeatureDim), false);
    if (config_.modalities.tweet) tweet_.backward(c.tweet, g.tail(kTextFeatureDim), false);
    if (config_.modalities.image && c.image_ran && image_.trainable()) {
      image_.cnn().backward(c.image, g.head(kImageFeatureDim), true, false);
    }
  }

  nn::ParamList<Scalar> head_params() {
    nn::ParamList<Scalar> out;
    for (std::size_t t = 0; t < 2; ++t) {
      for (auto* p : hidden_[t].params()) out.push_back(p);
      for (auto* p : out_[t].params()) out.push_back(p);
    }
    return out;
  }

  /// All persisted parameters.
  nn::ParamList<Scalar> params() {
    nn::ParamList<Scalar> out = title_.params();
    for (auto* p : tweet_.params()) out.push_back(p);
    for (auto* p : image_.params()) out.push_back(p);
    for (auto* p : head_params()) out.push_back(p);
    return out;
  }

  /// Parameters updated by training.
  nn::ParamList<Scalar> trainable_params() {
    nn::ParamList<Scalar> out = title_.params();
    for (auto* p : tweet_.params()) out.push_back(p);
    if (image_.trainable()) {
      for (auto* p : image_.params()) out.push_back(p);
    }
    for (auto* p : head_params()) out.push_back(p);
    return out;
  }

 private:
  MultiTaskConfig config_;
  TextCnn<Scalar> title_;
  TextCnn<Scalar> tweet_;
  ImageEncoder<Scalar> image_;
  std::array<nn::Linear<Scalar>, 2> hidden_;
  std::array<nn::Linear<Scalar>, 2> out_;
};

/// Validation-loss plateau tracking: multiplicative LR decay after
/// `lr_patience` epochs without improvement, stop after `stop_patience`.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor, int lr_patience, int stop_patience)
      : lr_(lr), factor_(factor), lr_patience_(lr_patience), stop_patience_(stop_patience) {}

  struct Step {
    bool improved = false;
    bool decayed = false;
    bool stop = false;
  };

  Step update(double val_loss);
  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_;
  double factor_;
  int lr_patience_;
  int stop_patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
  int since_change_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc_pop = 0.0;
  double val_acc_rel = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

nlohmann::json to_json(const TrainResult& r);

/// Mean-over-batch training with Adam and plateau scheduling; restores the
/// best-validation weights before returning.
TrainResult train_multitask(MultiTaskModel<float>& model, std::span<const ArticleInputs> train,
                            std::span<const ArticleInputs> val, const TrainConfig& config);

struct TaskMetrics {
  double accuracy = 0.0;
  double standard_error = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct EvalResult {
  TaskMetrics popularity;
  TaskMetrics reliability;
  double loss = 0.0;
  std::size_t n = 0;
};

nlohmann::json to_json(const EvalResult& r);

/// Accuracy at threshold 0.5 with binomial standard error.
TaskMetrics task_metrics(std::span<const double> probabilities, std::span<const int> labels);
EvalResult evaluate(const MultiTaskModel<float>& model, std::span<const ArticleInputs> split);

void save_checkpoint(const std::filesystem::path& path, MultiTaskModel<float>& model, const nlohmann::json& extra = {});
MultiTaskModel<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace mmrl

namespace mmrl {

/// Everything needed to turn an Article into model inputs.
struct TextContext {
  EmbeddingTable title_table;
  EmbeddingTable tweet_table;
  Index title_length = 32;
  Index tweet_length = 96;
};

/// Encodes text fields and resolves the image relative to `image_root`.
/// Pixels are kept when the backbone trains, features otherwise.
ArticleInputs encode_article(const Article& article, const TextContext& text, const ImageEncoder<float>& image,
                             const std::filesystem::path& image_root);

std::vector<ArticleInputs> encode_articles(std::span<const Article> articles, const TextContext& text,
                                           const ImageEncoder<float>& image, const std::filesystem::path& image_root);

}  // namespace mmrl
