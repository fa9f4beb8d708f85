#include "mmrl/common.hpp"
#include "mmrl/saliency.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace mmrl;

namespace {

nn::Param<float>& param(MultiTaskModel<float>& m, const std::string& name) {
  for (auto* p : m.params()) {
    if (p->name == name) return *p;
  }
  throw std::runtime_error("no parameter " + name);
}

MultiTaskConfig image_only() {
  MultiTaskConfig c;
  c.modalities = parse_modalities("image");
  c.image.frozen = false;
  c.image.channels = {2, 3, 4};
  c.head_width = 8;
  c.dropout = 0.0;
  return c;
}

ArticleInputs noise_image(std::uint64_t seed, Index size = 16) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  ArticleInputs in;
  in.article_id = "img" + std::to_string(seed);
  nn::Tensor3<float> t(3, size, size);
  for (Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = n(rng);
  in.image = t;
  in.title.rows = RowMat<float>::Zero(4, kEmbeddingDim);
  in.tweet.rows = RowMat<float>::Zero(4, kEmbeddingDim);
  return in;
}

// Popularity logit = mean of one conv3 channel (+1); reliability logit constant.
MultiTaskModel<float> single_channel_model(Index channel) {
  MultiTaskModel<float> m(image_only());
  m.init(4);
  auto& proj = param(m, "image.proj.weight");
  proj.value.setZero();
  proj.value(0, channel) = 1.0f;
  param(m, "image.proj.bias").value.setZero();
  for (const char* head : {"pop", "rel"}) {
    param(m, std::string(head) + ".fc1.weight").value.setZero();
    param(m, std::string(head) + ".fc1.bias").value.setZero();
    param(m, std::string(head) + ".fc2.weight").value.setZero();
  }
  param(m, "pop.fc1.weight").value(0, 0) = 1.0f;
  param(m, "pop.fc1.bias").value(0) = 1.0f;
  param(m, "pop.fc2.weight").value(0, 0) = 1.0f;
  return m;
}

}  // namespace

TEST(GradCam, SingleChannelGapIsProportionalToActivation) {
  auto model = single_channel_model(1);
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto in = noise_image(s);
    const auto map = gradcam(model, in, SaliencyInput::image, {Task::popularity, true});
    SmallCnn<float>::Cache cache;
    nn::Tensor3<float> t = *in.image;
    model.image_encoder().cnn().forward(t, &cache);
    const Vec<double> act = cache.last.row(1).transpose().cast<double>().cwiseMax(0.0);
    Vec<double> flat(map.grid.size());
    for (Index y = 0; y < map.grid.rows(); ++y) {
      for (Index x = 0; x < map.grid.cols(); ++x) flat(y * map.grid.cols() + x) = map.grid(y, x);
    }
    ASSERT_GT(act.norm(), 0.0);
    EXPECT_GE(flat.dot(act) / (flat.norm() * act.norm()), 0.999);
    EXPECT_DOUBLE_EQ(map.grid.maxCoeff(), 1.0);
    EXPECT_GE(map.grid.minCoeff(), 0.0);
  }
}

TEST(GradCam, ZeroGradientGivesZeroMap) {
  auto model = single_channel_model(0);
  const auto map = gradcam(model, noise_image(2), SaliencyInput::image, {Task::reliability, true});
  EXPECT_TRUE(map.grid.isZero());
  EXPECT_EQ(map.raw_max, 0.0);
}

TEST(GradCam, ScaleInvariance) {
  auto model = single_channel_model(2);
  const auto in = noise_image(3);
  const auto a = gradcam(model, in, SaliencyInput::image, {Task::popularity, true});
  param(model, "pop.fc2.weight").value *= 3.0f;
  const auto b = gradcam(model, in, SaliencyInput::image, {Task::popularity, true});
  EXPECT_NEAR(b.raw_max, 3.0 * a.raw_max, 1e-5 * b.raw_max);
  EXPECT_TRUE(a.grid.isApprox(b.grid, 1e-5));
}

TEST(GradCam, MissingLayerIsConfigError) {
  auto cfg = image_only();
  cfg.modalities = parse_modalities("title,tweet");
  MultiTaskModel<float> model(cfg);
  model.init(1);
  EXPECT_THROW(gradcam(model, noise_image(1), SaliencyInput::image, {Task::popularity, true}), ConfigError);
}

TEST(SmoothGrad, ZeroSigmaIsBitIdentical) {
  MultiTaskModel<float> model(image_only());
  model.init(6);
  const auto in = noise_image(4);
  const auto cam = gradcam(model, in, SaliencyInput::image, {Task::reliability, false});
  SmoothGradOptions o;
  o.sigma = 0.0;
  for (int n : {1, 25}) {
    o.n = n;
    const auto sg = smoothgrad_gradcam(model, in, SaliencyInput::image, {Task::reliability, false}, o);
    EXPECT_TRUE(sg.grid == cam.grid);
  }
}

TEST(SmoothGrad, SeededAndValidated) {
  MultiTaskModel<float> model(image_only());
  model.init(6);
  const auto in = noise_image(5);
  SmoothGradOptions o;
  o.n = 5;
  o.sigma = 0.2;
  o.seed = 3;
  const auto a = smoothgrad_gradcam(model, in, SaliencyInput::image, {Task::popularity, true}, o);
  const auto b = smoothgrad_gradcam(model, in, SaliencyInput::image, {Task::popularity, true}, o);
  EXPECT_TRUE(a.grid == b.grid);
  o.n = 0;
  EXPECT_THROW(smoothgrad_gradcam(model, in, SaliencyInput::image, {Task::popularity, true}, o), InvalidInput);
  o.n = 2;
  o.sigma = -1.0;
  EXPECT_THROW(smoothgrad_gradcam(model, in, SaliencyInput::image, {Task::popularity, true}, o), InvalidInput);
}

TEST(SmoothGrad, VarianceShrinksWithSamples) {
  MultiTaskModel<float> model(image_only());
  model.init(8);
  const auto in = noise_image(6);
  auto spread = [&](int n) {
    std::vector<Mat<double>> maps;
    for (std::uint64_t s = 0; s < 12; ++s) {
      SmoothGradOptions o;
      o.n = n;
      o.sigma = 0.5;
      o.seed = 100 + s;
      auto m = smoothgrad_gradcam(model, in, SaliencyInput::image, {Task::popularity, true}, o);
      maps.push_back(m.grid * m.raw_max);
    }
    Mat<double> mean = Mat<double>::Zero(maps[0].rows(), maps[0].cols());
    for (const auto& m : maps) mean += m / 12.0;
    double var = 0.0;
    for (const auto& m : maps) var += (m - mean).squaredNorm();
    return var;
  };
  EXPECT_LT(spread(8), 0.5 * spread(1));
}

TEST(TokenAttention, SingleTokenAndPadding) {
  MultiTaskConfig cfg;
  cfg.modalities = parse_modalities("title,tweet");
  cfg.dropout = 0.0;
  MultiTaskModel<float> model(cfg);
  model.init(3);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> n(0.0f, 1.0f);
  ArticleInputs in;
  in.article_id = "t";
  in.title.rows = RowMat<float>::Zero(6, kEmbeddingDim);
  in.tweet.rows = RowMat<float>::Zero(6, kEmbeddingDim);
  in.title.length = 1;
  in.tweet.length = 3;
  for (Index c = 0; c < kEmbeddingDim; ++c) {
    in.title.rows(0, c) = n(rng);
    for (Index r = 0; r < 3; ++r) in.tweet.rows(r, c) = n(rng);
  }
  in.title_tokens = {"only"};
  in.tweet_tokens = {"a", "b", "c"};
  for (bool positive : {true, false}) {
    const auto title = token_attention(model, in, SaliencyInput::title, {Task::popularity, positive});
    const auto tweet = token_attention(model, in, SaliencyInput::tweet, {Task::reliability, positive});
    if (title[0] > 0.0) EXPECT_DOUBLE_EQ(title[0], 1.0);
    for (std::size_t i = 1; i < title.size(); ++i) EXPECT_EQ(title[i], 0.0);
    for (std::size_t i = 3; i < tweet.size(); ++i) EXPECT_EQ(tweet[i], 0.0);
  }
  in.title.length = 0;
  EXPECT_THROW(token_attention(model, in, SaliencyInput::title, {Task::popularity, true}), InvalidInput);
}

TEST(TokenReport, OccurrenceThreshold) {
  MultiTaskConfig cfg;
  cfg.modalities = parse_modalities("tweet");
  cfg.dropout = 0.0;
  MultiTaskModel<float> model(cfg);
  model.init(3);
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<ArticleInputs> split;
  for (int i = 0; i < 30; ++i) {
    ArticleInputs in;
    in.article_id = std::to_string(i);
    in.title.rows = RowMat<float>::Zero(2, kEmbeddingDim);
    in.tweet.rows = RowMat<float>::Zero(3, kEmbeddingDim);
    in.tweet.length = i == 0 ? 3 : 2;
    for (Index r = 0; r < in.tweet.length; ++r) {
      for (Index c = 0; c < kEmbeddingDim; ++c) in.tweet.rows(r, c) = n(rng);
    }
    in.tweet_tokens = {"common", "frequent"};
    if (i == 0) in.tweet_tokens.push_back("rare");
    in.y_pop = 1;
    in.y_rel = 1;
    split.push_back(in);
  }
  const auto report = top_tokens_report(model, split, 10, 20);
  for (const auto& [target, tokens] : report.classes) {
    for (const auto& t : tokens) {
      EXPECT_NE(t.token, "rare");
      EXPECT_GE(t.count, 20u);
    }
  }
  const auto loose = top_tokens_report(model, split, 10, 1);
  bool seen_rare = false;
  for (const auto& [target, tokens] : loose.classes) {
    for (const auto& t : tokens) seen_rare |= t.token == "rare";
  }
  EXPECT_TRUE(seen_rare);
  EXPECT_FALSE(format_table(report).empty());
}

TEST(Overlay, WritesPng) {
  const auto in = noise_image(1, 12);
  Mat<double> grid = Mat<double>::Zero(3, 3);
  grid(0, 0) = 1.0;
  const auto path = std::filesystem::temp_directory_path() / "mmrl_overlay_test.png";
  write_overlay_png(path, *in.image, grid);
  const auto img = load_image(path);
  EXPECT_EQ(img.width, 12);
  EXPECT_EQ(img.height, 12);
  std::filesystem::remove(path);
}

TEST(Targets, Parsing) {
  EXPECT_FALSE(parse_target("reliability", "unreliable").positive);
  EXPECT_TRUE(parse_target("popularity", "popular").positive);
  EXPECT_TRUE(parse_target("popularity", "positive").positive);
  EXPECT_THROW(parse_target("popularity", "reliable"), ConfigError);
}
