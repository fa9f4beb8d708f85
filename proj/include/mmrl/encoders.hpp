#pragma once

#include "mmrl/common.hpp"
#include "mmrl/nn.hpp"
#include "mmrl/textenc.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mmrl {

inline constexpr Index kTextFeatureDim = 384;
inline constexpr Index kImageFeatureDim = 2048;

struct TextCnnConfig {
  std::vector<Index> filter_sizes{3, 5, 7};
  Index filters_per_size = 128;
  nn::Activation activation = nn::Activation::relu;

  Index output_dim() const { return static_cast<Index>(filter_sizes.size()) * filters_per_size; }
};

nlohmann::json to_json(const TextCnnConfig& c);
TextCnnConfig text_cnn_config_from_json(const nlohmann::json& j);

/// Text-CNN feature extractor: one conv block per filter width, outputs
/// concatenated in filter-size order.
template <typename Scalar>
class TextCnn {
 public:
  using Cache = std::vector<typename nn::TextConv<Scalar>::Cache>;

  TextCnn() = default;
  TextCnn(const std::string& name, const TextCnnConfig& config, Index embed_dim = kEmbeddingDim) : config_(config) {
    for (auto w : config.filter_sizes) {
      blocks_.emplace_back(name + ".conv" + std::to_string(w), w, embed_dim, config.filters_per_size, config.activation);
    }
  }

  void init(std::mt19937_64& rng) {
    for (auto& b : blocks_) b.init(rng);
  }

  const TextCnnConfig& config() const { return config_; }
  Index output_dim() const { return config_.output_dim(); }
  std::size_t num_blocks() const { return blocks_.size(); }
  const nn::TextConv<Scalar>& block(std::size_t i) const { return blocks_[i]; }

  template <typename Derived>
  Vec<Scalar> forward(const Eigen::MatrixBase<Derived>& seq, Cache* cache = nullptr) const {
    Vec<Scalar> out(output_dim());
    Cache local;
    Cache& c = cache ? *cache : local;
    c.clear();
    Index offset = 0;
    for (const auto& b : blocks_) {
      c.push_back(b.forward(seq));
      out.segment(offset, b.filters()) = c.back().pooled;
      offset += b.filters();
    }
    return out;
  }

  /// Accumulates gradients; returns dL/dseq when requested.
  RowMat<Scalar> backward(const Cache& cache, const Vec<Scalar>& grad_out, bool want_input_grad) {
    RowMat<Scalar> grad_seq;
    Index offset = 0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const Index F = blocks_[i].filters();
      auto g = blocks_[i].backward(cache[i], grad_out.segment(offset, F), want_input_grad);
      if (want_input_grad) {
        if (grad_seq.size() == 0) {
          grad_seq = g;
        } else {
          grad_seq += g;
        }
      }
      offset += F;
    }
    return grad_seq;
  }

  nn::ParamList<Scalar> params() {
    nn::ParamList<Scalar> out;
    for (auto& b : blocks_) {
      for (auto* p : b.params()) out.push_back(p);
    }
    return out;
  }

 private:
  TextCnnConfig config_;
  std::vector<nn::TextConv<Scalar>> blocks_;
};

enum class Backbone { pretrained_resnet50, small_cnn, precomputed };
std::string_view to_string(Backbone b);
Backbone parse_backbone(std::string_view s);

struct ImageEncoderConfig {
  Backbone backbone = Backbone::small_cnn;
  Index output_dim = kImageFeatureDim;
  bool frozen = true;
  Index resize_shorter = 256;
  Index crop = 224;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
  std::array<Index, 3> channels{16, 32, 64};
  std::filesystem::path feature_store;
};

nlohmann::json to_json(const ImageEncoderConfig& c);
ImageEncoderConfig image_encoder_config_from_json(const nlohmann::json& j);

/// Decoded RGB image, values in [0, 1].
using Image = nn::Tensor3<float>;

/// Decodes PNG, JPEG or binary/ASCII PPM/PGM bytes into 3-channel RGB.
Image decode_image(const std::string& bytes);
Image load_image(const std::filesystem::path& path);

/// Resize shorter side (bilinear), center-crop, per-channel standardize.
Image preprocess(const Image& image, const ImageEncoderConfig& config);

/// Three conv blocks (3x3 conv, rectifier, 2x2 pool on the first two),
/// global average pool, linear projection to the feature dimension.
template <typename Scalar>
class SmallCnn {
 public:
  struct Cache {
    std::array<Mat<Scalar>, 3> cols;
    std::array<Mat<Scalar>, 3> pre;
    std::array<std::vector<Index>, 2> pool_argmax;
    std::array<Index, 3> height{};
    std::array<Index, 3> width{};
    Mat<Scalar> last;  // final conv activation, channels x pixels
    Vec<Scalar> pooled;
  };

  SmallCnn() = default;
  SmallCnn(const std::string& name, const std::array<Index, 3>& channels, Index output_dim)
      : conv_{nn::Conv2d<Scalar>(name + ".conv1", 3, channels[0]),
              nn::Conv2d<Scalar>(name + ".conv2", channels[0], channels[1]),
              nn::Conv2d<Scalar>(name + ".conv3", channels[1], channels[2])},
        proj_(name + ".proj", channels[2], output_dim) {}

  void init(std::mt19937_64& rng) {
    for (auto& c : conv_) c.init(rng);
    proj_.init(rng);
  }

  Index output_dim() const { return proj_.out_dim(); }
  Index last_channels() const { return conv_[2].out_channels(); }

  Vec<Scalar> forward(const nn::Tensor3<Scalar>& image, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    nn::Tensor3<Scalar> x = image;
    for (std::size_t i = 0; i < 3; ++i) {
      c.height[i] = x.height;
      c.width[i] = x.width;
      auto y = conv_[i].forward(x, c.cols[i]);
      c.pre[i] = y.data;
      y.data = nn::relu(y.data);
      if (i < 2) {
        x = nn::max_pool2(y, c.pool_argmax[i]);
      } else {
        x = std::move(y);
      }
    }
    c.last = x.data;
    c.pooled = c.last.rowwise().mean();
    return proj_.forward(c.pooled);
  }

  /// dL/d(last conv activation) for a gradient at the output features.
  Mat<Scalar> last_activation_grad(const Cache& c, const Vec<Scalar>& grad_out) const {
    const Vec<Scalar> g_pooled = proj_.input_grad(grad_out);
    const auto pixels = static_cast<Scalar>(c.last.cols());
    return (g_pooled / pixels).replicate(1, c.last.cols());
  }

  /// Backpropagates; accumulates parameter gradients when `train` is set and
  /// returns the input gradient when requested.
  nn::Tensor3<Scalar> backward(const Cache& c, const Vec<Scalar>& grad_out, bool train, bool want_input_grad) {
    Mat<Scalar> g;
    if (train) {
      g = proj_.backward(c.pooled, grad_out);
      g = (g / static_cast<Scalar>(c.last.cols())).replicate(1, c.last.cols());
    } else {
      g = last_activation_grad(c, grad_out);
    }
    nn::Tensor3<Scalar> gx;
    for (int i = 2; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      if (i < 2) g = nn::max_pool2_backward<Scalar>(g, c.pool_argmax[ui], conv_[ui].out_channels(), c.height[ui] * c.width[ui]);
      g = (c.pre[ui].array() > Scalar(0)).select(g, Scalar(0));
      const bool need_input = i > 0 || want_input_grad;
      gx = conv_[ui].backward(c.cols[ui], g, c.height[ui], c.width[ui], train, need_input);
      if (i > 0) g = gx.data;
    }
    return want_input_grad ? gx : nn::Tensor3<Scalar>{};
  }

  nn::ParamList<Scalar> params() {
    nn::ParamList<Scalar> out;
    for (auto& c : conv_) {
      for (auto* p : c.params()) out.push_back(p);
    }
    for (auto* p : proj_.params()) out.push_back(p);
    return out;
  }

 private:
  std::array<nn::Conv2d<Scalar>, 3> conv_;
  nn::Linear<Scalar> proj_;
};

/// Content-hash -> feature vector records in an MMRL-FEA1 container.
class FeatureStore {
 public:
  void put(const std::string& content_hash, const Vec<float>& features);
  const Vec<float>& get(const std::string& content_hash) const;
  bool contains(const std::string& content_hash) const { return features_.count(content_hash) > 0; }
  std::size_t size() const { return features_.size(); }

  void save(const std::filesystem::path& path) const;
  static FeatureStore load(const std::filesystem::path& path);

 private:
  std::map<std::string, Vec<float>> features_;
};

/// Image feature extractor over all backbone modes.
template <typename Scalar>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const std::string& name, ImageEncoderConfig config) : config_(std::move(config)) {
    if (config_.output_dim != kImageFeatureDim) throw ConfigError("image features must be 2048-D");
    if (config_.backbone == Backbone::small_cnn) {
      cnn_ = SmallCnn<Scalar>(name, config_.channels, config_.output_dim);
    } else if (!config_.feature_store.empty()) {
      store_ = FeatureStore::load(config_.feature_store);
    }
  }

  void init(std::mt19937_64& rng) {
    if (cnn_) cnn_->init(rng);
  }

  const ImageEncoderConfig& config() const { return config_; }
  bool has_cnn() const { return cnn_.has_value(); }
  bool trainable() const { return cnn_.has_value() && !config_.frozen; }
  SmallCnn<Scalar>& cnn() { return *cnn_; }
  const SmallCnn<Scalar>& cnn() const { return *cnn_; }
  void set_store(FeatureStore store) { store_ = std::move(store); }

  /// Preprocessed network input for an image file.
  nn::Tensor3<Scalar> prepare(const std::filesystem::path& path) const {
    const auto img = preprocess(load_image(path), config_);
    nn::Tensor3<Scalar> t(img.channels, img.height, img.width);
    t.data = img.data.cast<Scalar>();
    return t;
  }

  /// Features for an image file: forward pass or content-hash lookup.
  Vec<Scalar> features(const std::filesystem::path& path) const;

  nn::ParamList<Scalar> params() { return cnn_ ? cnn_->params() : nn::ParamList<Scalar>{}; }

 private:
  ImageEncoderConfig config_;
  std::optional<SmallCnn<Scalar>> cnn_;
  FeatureStore store_;
};

std::string file_content_hash(const std::filesystem::path& path);

template <typename Scalar>
Vec<Scalar> ImageEncoder<Scalar>::features(const std::filesystem::path& path) const {
  if (cnn_) return cnn_->forward(prepare(path));
  return store_.get(file_content_hash(path)).template cast<Scalar>();
}

}  // namespace mmrl
