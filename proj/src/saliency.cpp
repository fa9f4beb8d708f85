#include "mmrl/saliency.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>
#include <unordered_map>

namespace mmrl {

std::string class_name(const SaliencyTarget& t) {
  if (t.task == Task::popularity) return t.positive ? "popular" : "unpopular";
  return t.positive ? "reliable" : "unreliable";
}

SaliencyTarget parse_target(std::string_view task, std::string_view cls) {
  SaliencyTarget t;
  t.task = parse_task(task);
  if (cls == "positive" || cls == "1") {
    t.positive = true;
  } else if (cls == "negative" || cls == "0") {
    t.positive = false;
  } else if (t.task == Task::popularity && (cls == "popular" || cls == "unpopular")) {
    t.positive = cls == "popular";
  } else if (t.task == Task::reliability && (cls == "reliable" || cls == "unreliable")) {
    t.positive = cls == "reliable";
  } else {
    throw ConfigError("unknown class '" + std::string(cls) + "' for task " + std::string(task));
  }
  return t;
}

std::string_view to_string(SaliencyInput s) {
  switch (s) {
    case SaliencyInput::image: return "image";
    case SaliencyInput::title: return "title";
    case SaliencyInput::tweet: return "tweet";
  }
  return "image";
}

SaliencyInput parse_saliency_input(std::string_view s) {
  if (s == "image") return SaliencyInput::image;
  if (s == "title") return SaliencyInput::title;
  if (s == "tweet") return SaliencyInput::tweet;
  throw ConfigError("unknown saliency input '" + std::string(s) + "'");
}

nlohmann::json to_json(const SaliencyMap& m) {
  nlohmann::json grid = nlohmann::json::array();
  for (Index r = 0; r < m.grid.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.grid.cols()));
    for (Index c = 0; c < m.grid.cols(); ++c) row[static_cast<std::size_t>(c)] = m.grid(r, c);
    grid.push_back(row);
  }
  nlohmann::json j{{"task", to_string(m.target.task)},
                   {"class", class_name(m.target)},
                   {"input", to_string(m.input)},
                   {"grid", grid},
                   {"raw_max", m.raw_max}};
  if (m.input != SaliencyInput::image) {
    j["tokens"] = m.tokens;
    j["length"] = m.length;
  }
  return j;
}

namespace {

std::array<double, 2> target_grad(const SaliencyTarget& t) {
  std::array<double, 2> g{0.0, 0.0};
  g[t.task == Task::popularity ? 0 : 1] = t.positive ? 1.0 : -1.0;
  return g;
}

ArticleInputs pixel_inputs(const MultiTaskModel<float>& model, const ArticleInputs& in) {
  if (!model.config().modalities.image) throw ConfigError("image modality is disabled; no image layer to explain");
  if (!model.image_encoder().has_cnn()) throw ConfigError("image Grad-CAM needs a convolutional backbone");
  if (!in.image) throw ConfigError("example '" + in.article_id + "' has no pixels loaded");
  ArticleInputs copy = in;
  copy.image_features.resize(0);
  return copy;
}

Mat<double> image_cam(const MultiTaskModel<float>& model, const ArticleInputs& in, const SaliencyTarget& target) {
  MultiTaskModel<float>::Cache cache;
  model.logits(in, &cache);
  const Vec<float> g = model.fused_grad(cache, target_grad(target));
  const auto& cnn = model.image_encoder().cnn();
  const Mat<float> dA = cnn.last_activation_grad(cache.image, g.head(kImageFeatureDim));
  const Vec<double> weights = dA.cast<double>().rowwise().mean();
  const Eigen::RowVectorXd cam = (weights.transpose() * cache.image.last.cast<double>()).cwiseMax(0.0);
  const Index H = cache.image.height[2], W = cache.image.width[2];
  Mat<double> grid(H, W);
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x) grid(y, x) = cam(y * W + x);
  }
  return grid;
}

Mat<double> text_cam(const MultiTaskModel<float>& model, const ArticleInputs& in, bool tweet,
                     const SaliencyTarget& target) {
  const bool enabled = tweet ? model.config().modalities.tweet : model.config().modalities.title;
  if (!enabled) throw ConfigError(std::string(tweet ? "tweet" : "title") + " modality is disabled");
  const auto& seq = tweet ? in.tweet : in.title;
  MultiTaskModel<float>::Cache cache;
  model.logits(in, &cache);
  const Vec<float> g = model.fused_grad(cache, target_grad(target));
  const Vec<double> g_text = (tweet ? g.tail(kTextFeatureDim) : g.segment(kImageFeatureDim, kTextFeatureDim)).cast<double>();
  const auto& cnn = model.text_cnn(tweet);
  const auto& blocks = tweet ? cache.tweet : cache.title;
  const Index L = seq.rows.rows();
  Mat<double> scores = Mat<double>::Zero(1, L);
  Index offset = 0;
  for (std::size_t b = 0; b < cnn.num_blocks(); ++b) {
    const auto& conv = cnn.block(b);
    const Index F = conv.filters();
    const Mat<double> A = blocks[b].activation.cast<double>();
    const Mat<double> dA = conv.activation_grad(blocks[b], g_text.segment(offset, F).cast<float>()).cast<double>();
    const Vec<double> weights = dA.colwise().mean().transpose();
    const Vec<double> position = (A * weights).cwiseMax(0.0);
    const Index half = conv.width() / 2;
    for (Index p = 0; p < L; ++p) {
      const Index lo = std::max<Index>(0, p - half), hi = std::min<Index>(L - 1, p + half);
      for (Index t = lo; t <= hi; ++t) scores(0, t) += position(p);
    }
    offset += F;
  }
  for (Index t = seq.length; t < L; ++t) scores(0, t) = 0.0;
  return scores;
}

SaliencyMap make_map(const ArticleInputs& in, SaliencyInput kind, const SaliencyTarget& target, Mat<double> grid) {
  SaliencyMap m;
  m.target = target;
  m.input = kind;
  m.grid = std::move(grid);
  if (kind != SaliencyInput::image) {
    const auto& seq = kind == SaliencyInput::tweet ? in.tweet : in.title;
    const auto& tokens = kind == SaliencyInput::tweet ? in.tweet_tokens : in.title_tokens;
    m.length = seq.length;
    m.tokens.assign(static_cast<std::size_t>(m.grid.cols()), "");
    for (std::size_t i = 0; i < m.tokens.size() && i < tokens.size() && static_cast<Index>(i) < seq.length; ++i) {
      m.tokens[i] = tokens[i];
    }
  }
  return m;
}

}  // namespace

Mat<double> gradcam_raw(const MultiTaskModel<float>& model, const ArticleInputs& in, SaliencyInput kind,
                        const SaliencyTarget& target) {
  if (kind == SaliencyInput::image) return image_cam(model, pixel_inputs(model, in), target);
  return text_cam(model, in, kind == SaliencyInput::tweet, target);
}

void max_normalize(SaliencyMap& m) {
  m.raw_max = m.grid.size() ? m.grid.maxCoeff() : 0.0;
  if (m.raw_max > 0.0) m.grid /= m.raw_max;
}

SaliencyMap gradcam(const MultiTaskModel<float>& model, const ArticleInputs& in, SaliencyInput kind,
                    const SaliencyTarget& target) {
  auto m = make_map(in, kind, target, gradcam_raw(model, in, kind, target));
  max_normalize(m);
  return m;
}

SaliencyMap smoothgrad_gradcam(const MultiTaskModel<float>& model, const ArticleInputs& in, SaliencyInput kind,
                               const SaliencyTarget& target, const SmoothGradOptions& options) {
  if (options.n < 1) throw InvalidInput("SmoothGrad needs n >= 1");
  if (options.sigma && !(*options.sigma >= 0.0)) throw InvalidInput("SmoothGrad sigma must be non-negative");
  if (options.sigma && *options.sigma == 0.0) return gradcam(model, in, kind, target);

  ArticleInputs base = kind == SaliencyInput::image ? pixel_inputs(model, in) : in;
  auto& seq = kind == SaliencyInput::tweet ? base.tweet : base.title;
  Mat<float>* pixels = kind == SaliencyInput::image ? &base.image->data : nullptr;
  double sigma = 0.0;
  if (options.sigma) {
    sigma = *options.sigma;
  } else if (pixels) {
    sigma = 0.1 * static_cast<double>(pixels->maxCoeff() - pixels->minCoeff());
  } else if (seq.length > 0) {
    const auto rows = seq.rows.topRows(seq.length);
    sigma = 0.1 * static_cast<double>(rows.maxCoeff() - rows.minCoeff());
  }
  if (sigma == 0.0) return gradcam(model, in, kind, target);

  std::mt19937_64 rng(derive_seed(options.seed, hash_string(in.article_id)));
  std::normal_distribution<double> noise(0.0, sigma);
  Mat<double> sum;
  for (int s = 0; s < options.n; ++s) {
    ArticleInputs noisy = base;
    if (pixels) {
      auto& data = noisy.image->data;
      for (Index i = 0; i < data.size(); ++i) data.data()[i] += static_cast<float>(noise(rng));
    } else {
      auto& rows = kind == SaliencyInput::tweet ? noisy.tweet.rows : noisy.title.rows;
      for (Index r = 0; r < seq.length; ++r) {
        for (Index c = 0; c < rows.cols(); ++c) rows(r, c) += static_cast<float>(noise(rng));
      }
    }
    Mat<double> cam = gradcam_raw(model, noisy, kind, target);
    if (s == 0) {
      sum = std::move(cam);
    } else {
      sum += cam;
    }
  }
  auto m = make_map(in, kind, target, sum / static_cast<double>(options.n));
  max_normalize(m);
  return m;
}

std::vector<double> token_attention(const MultiTaskModel<float>& model, const ArticleInputs& in, SaliencyInput field,
                                    const SaliencyTarget& target) {
  if (field == SaliencyInput::image) throw InvalidInput("token attention needs a text field");
  const auto& seq = field == SaliencyInput::tweet ? in.tweet : in.title;
  if (seq.length == 0 || seq.rows.rows() == 0) throw InvalidInput("empty token list for '" + in.article_id + "'");
  const auto m = gradcam(model, in, field, target);
  return {m.grid.data(), m.grid.data() + m.grid.size()};
}

TokenReport top_tokens_report(const MultiTaskModel<float>& model, std::span<const ArticleInputs> split,
                              std::size_t k, std::size_t min_count, SaliencyInput field) {
  TokenReport report;
  report.field = field;
  report.min_count = min_count;
  for (Task task : {Task::reliability, Task::popularity}) {
    for (bool positive : {true, false}) {
      const SaliencyTarget target{task, positive};
      std::unordered_map<std::string, std::pair<double, std::size_t>> acc;
      for (const auto& in : split) {
        const int label = task == Task::popularity ? in.y_pop : in.y_rel;
        if ((label == 1) != positive) continue;
        const auto& seq = field == SaliencyInput::tweet ? in.tweet : in.title;
        if (seq.length == 0) continue;
        const auto& tokens = field == SaliencyInput::tweet ? in.tweet_tokens : in.title_tokens;
        const auto scores = token_attention(model, in, field, target);
        for (std::size_t i = 0; i < tokens.size() && static_cast<Index>(i) < seq.length; ++i) {
          if (tokens[i] == kTweetSeparator) continue;
          auto& slot = acc[tokens[i]];
          slot.first += scores[i];
          ++slot.second;
        }
      }
      std::vector<TokenScore> ranked;
      for (const auto& [token, s] : acc) {
        if (s.second >= min_count) ranked.push_back({token, s.first / static_cast<double>(s.second), s.second});
      }
      std::sort(ranked.begin(), ranked.end(), [](const TokenScore& a, const TokenScore& b) {
        if (a.mean != b.mean) return a.mean > b.mean;
        if (a.count != b.count) return a.count > b.count;
        return a.token < b.token;
      });
      if (ranked.size() > k) ranked.resize(k);
      report.classes.emplace_back(target, std::move(ranked));
    }
  }
  return report;
}

nlohmann::json to_json(const TokenReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [target, tokens] : r.classes) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& t : tokens) list.push_back({{"token", t.token}, {"mean", t.mean}, {"count", t.count}});
    classes.push_back({{"task", to_string(target.task)}, {"class", class_name(target)}, {"tokens", list}});
  }
  return {{"field", to_string(r.field)}, {"min_count", r.min_count}, {"classes", classes}};
}

std::string format_table(const TokenReport& r) {
  std::ostringstream out;
  for (std::size_t i = 0; i + 1 < r.classes.size(); i += 2) {
    const auto& [a, ta] = r.classes[i];
    const auto& [b, tb] = r.classes[i + 1];
    out << std::left << std::setw(4) << "#" << std::setw(24) << class_name(a) << class_name(b) << "\n";
    for (std::size_t row = 0; row < std::max(ta.size(), tb.size()); ++row) {
      out << std::setw(4) << row + 1 << std::setw(24) << (row < ta.size() ? ta[row].token : "")
          << (row < tb.size() ? tb[row].token : "") << "\n";
    }
    out << "\n";
  }
  return out.str();
}

namespace {

double bilinear(const Mat<double>& grid, double y, double x) {
  const double gy = std::clamp(y, 0.0, static_cast<double>(grid.rows() - 1));
  const double gx = std::clamp(x, 0.0, static_cast<double>(grid.cols() - 1));
  const auto y0 = static_cast<Index>(gy), x0 = static_cast<Index>(gx);
  const Index y1 = std::min<Index>(y0 + 1, grid.rows() - 1), x1 = std::min<Index>(x0 + 1, grid.cols() - 1);
  const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * grid(y0, x0) + fx * grid(y0, x1)) + fy * ((1 - fx) * grid(y1, x0) + fx * grid(y1, x1));
}

// Blue -> cyan -> yellow -> red.
std::array<double, 3> heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  if (v < 1.0 / 3) return {0.0, 3 * v, 1.0};
  if (v < 2.0 / 3) return {3 * (v - 1.0 / 3), 1.0, 1.0 - 3 * (v - 1.0 / 3)};
  return {1.0, 1.0 - 3 * (v - 2.0 / 3), 0.0};
}

}  // namespace

void write_overlay_png(const std::filesystem::path& path, const nn::Tensor3<float>& image, const Mat<double>& grid,
                       double alpha) {
  if (grid.size() == 0) throw InvalidInput("empty saliency grid");
  const Index H = image.height, W = image.width;
  std::vector<unsigned char> rgb(static_cast<std::size_t>(H * W * 3));
  std::array<float, 3> lo{}, hi{};
  for (Index c = 0; c < 3; ++c) {
    const auto ch = std::min<Index>(c, image.channels - 1);
    lo[static_cast<std::size_t>(c)] = image.data.row(ch).minCoeff();
    hi[static_cast<std::size_t>(c)] = image.data.row(ch).maxCoeff();
  }
  const double sy = static_cast<double>(grid.rows()) / static_cast<double>(H);
  const double sx = static_cast<double>(grid.cols()) / static_cast<double>(W);
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x) {
      const double v = bilinear(grid, (static_cast<double>(y) + 0.5) * sy - 0.5, (static_cast<double>(x) + 0.5) * sx - 0.5);
      const auto heat = heat_color(v);
      for (Index c = 0; c < 3; ++c) {
        const auto uc = static_cast<std::size_t>(c);
        const double range = hi[uc] > lo[uc] ? hi[uc] - lo[uc] : 1.0;
        const double base = (image.at(std::min<Index>(c, image.channels - 1), y, x) - lo[uc]) / range;
        const double mixed = (1 - alpha) * base + alpha * heat[uc];
        rgb[static_cast<std::size_t>((y * W + x) * 3 + c)] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(mixed, 0.0, 1.0)));
      }
    }
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(W);
  png.height = static_cast<png_uint_32>(H);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    throw InvalidInput("cannot write " + path.string() + ": " + png.message);
  }
}

std::string token_strip_html(const SaliencyMap& m) {
  std::ostringstream out;
  out << "<p class=\"tokens\">";
  for (Index i = 0; i < m.length && static_cast<std::size_t>(i) < m.tokens.size(); ++i) {
    std::string text;
    for (char ch : m.tokens[static_cast<std::size_t>(i)]) {
      if (ch == '<') text += "&lt;";
      else if (ch == '>') text += "&gt;";
      else if (ch == '&') text += "&amp;";
      else text += ch;
    }
    out << "<span style=\"background: rgba(255,0,0," << std::setprecision(3) << m.grid(0, i) << ")\">" << text
        << "</span> ";
  }
  out << "</p>\n";
  return out.str();
}

}  // namespace mmrl
