#include "mmrl/multitask.hpp"

#include "mmrl/container.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace mmrl {

Modalities parse_modalities(std::string_view list) {
  Modalities m{false, false, false};
  std::stringstream ss{std::string(list)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "image") {
      m.image = true;
    } else if (item == "title") {
      m.title = true;
    } else if (item == "tweet") {
      m.tweet = true;
    } else if (!item.empty()) {
      throw ConfigError("unknown modality '" + item + "'");
    }
  }
  if (!m.image && !m.title && !m.tweet) throw ConfigError("at least one modality must be enabled");
  return m;
}

std::string to_string(const Modalities& m) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ",";
    out += name;
  };
  add(m.image, "image");
  add(m.title, "title");
  add(m.tweet, "tweet");
  return out;
}

nlohmann::json to_json(const MultiTaskConfig& c) {
  return {{"text", to_json(c.text)},
          {"image", to_json(c.image)},
          {"head_width", c.head_width},
          {"dropout", c.dropout},
          {"modalities", to_string(c.modalities)},
          {"title_length", c.title_length},
          {"tweet_length", c.tweet_length}};
}

MultiTaskConfig multitask_config_from_json(const nlohmann::json& j) {
  MultiTaskConfig c;
  if (j.contains("text")) c.text = text_cnn_config_from_json(j.at("text"));
  if (j.contains("image")) c.image = image_encoder_config_from_json(j.at("image"));
  c.head_width = j.value("head_width", c.head_width);
  c.dropout = j.value("dropout", c.dropout);
  if (j.contains("modalities")) c.modalities = parse_modalities(j.at("modalities").get<std::string>());
  c.title_length = j.value("title_length", c.title_length);
  c.tweet_length = j.value("tweet_length", c.tweet_length);
  if (c.head_width < 1) throw ConfigError("head_width must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"initial_lr", c.initial_lr},   {"lr_decay_factor", c.lr_decay_factor},
          {"lr_patience", c.lr_patience}, {"early_stop_patience", c.early_stop_patience},
          {"beta1", c.beta1},             {"beta2", c.beta2},
          {"batch_size", c.batch_size},   {"max_epochs", c.max_epochs},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.lr_patience = j.value("lr_patience", c.lr_patience);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  if (!(c.initial_lr > 0.0) || c.batch_size == 0 || c.max_epochs < 1) {
    throw ConfigError("train config needs positive initial_lr, batch_size and max_epochs");
  }
  return c;
}

std::string_view to_string(Task t) { return t == Task::popularity ? "popularity" : "reliability"; }

Task parse_task(std::string_view s) {
  if (s == "popularity") return Task::popularity;
  if (s == "reliability") return Task::reliability;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

double binary_cross_entropy(double p, int y) {
  if (y != 0 && y != 1) throw InvalidInput("labels must be 0 or 1");
  p = std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double task_loss(std::span<const Prediction> preds, std::span<const int> y, Task task) {
  if (preds.size() != y.size()) throw InvalidInput("prediction/label count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    total += binary_cross_entropy(task == Task::popularity ? preds[i].p_pop : preds[i].p_rel, y[i]);
  }
  return total;
}

double multitask_loss(std::span<const Prediction> preds, std::span<const int> y_pop, std::span<const int> y_rel) {
  return task_loss(preds, y_pop, Task::popularity) + task_loss(preds, y_rel, Task::reliability);
}

PlateauSchedule::Step PlateauSchedule::update(double val_loss) {
  Step s;
  if (val_loss < best_) {
    best_ = val_loss;
    since_best_ = 0;
    since_change_ = 0;
    s.improved = true;
    return s;
  }
  ++since_best_;
  ++since_change_;
  if (since_change_ >= lr_patience_) {
    lr_ *= factor_;
    since_change_ = 0;
    s.decayed = true;
  }
  s.stop = since_best_ >= stop_patience_;
  return s;
}

nlohmann::json to_json(const TrainResult& r) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : r.history) {
    hist.push_back({{"epoch", e.epoch},
                    {"lr", e.lr},
                    {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss},
                    {"val_acc_popularity", e.val_acc_pop},
                    {"val_acc_reliability", e.val_acc_rel}});
  }
  return {{"history", hist}, {"best_epoch", r.best_epoch}, {"best_val_loss", r.best_val_loss}};
}

TaskMetrics task_metrics(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.empty()) throw InvalidInput("cannot evaluate an empty split");
  TaskMetrics m;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const bool predicted = probabilities[i] >= 0.5;
    const bool actual = labels[i] == 1;
    if (predicted && actual) ++m.tp;
    if (predicted && !actual) ++m.fp;
    if (!predicted && !actual) ++m.tn;
    if (!predicted && actual) ++m.fn;
  }
  const auto n = static_cast<double>(probabilities.size());
  m.accuracy = static_cast<double>(m.tp + m.tn) / n;
  m.standard_error = std::sqrt(m.accuracy * (1.0 - m.accuracy) / n);
  return m;
}

EvalResult evaluate(const MultiTaskModel<float>& model, std::span<const ArticleInputs> split) {
  if (split.empty()) throw InvalidInput("cannot evaluate an empty split");
  std::vector<double> pp, pr;
  std::vector<int> yp, yr;
  std::vector<Prediction> preds;
  for (const auto& in : split) {
    const auto p = model.forward(in);
    preds.push_back(p);
    pp.push_back(p.p_pop);
    pr.push_back(p.p_rel);
    yp.push_back(in.y_pop);
    yr.push_back(in.y_rel);
  }
  EvalResult r;
  r.popularity = task_metrics(pp, yp);
  r.reliability = task_metrics(pr, yr);
  r.n = split.size();
  r.loss = multitask_loss(preds, yp, yr) / static_cast<double>(split.size());
  return r;
}

nlohmann::json to_json(const EvalResult& r) {
  auto task = [](const TaskMetrics& m) {
    return nlohmann::json{{"accuracy", m.accuracy}, {"standard_error", m.standard_error},
                          {"tp", m.tp},             {"fp", m.fp},
                          {"tn", m.tn},             {"fn", m.fn}};
  };
  return {{"popularity", task(r.popularity)}, {"reliability", task(r.reliability)}, {"loss", r.loss}, {"n", r.n}};
}

TrainResult train_multitask(MultiTaskModel<float>& model, std::span<const ArticleInputs> train,
                            std::span<const ArticleInputs> val, const TrainConfig& config) {
  if (train.empty() || val.empty()) throw InvalidInput("training needs non-empty train and val splits");
  auto params = model.trainable_params();
  nn::Adam<float> adam(params, config.beta1, config.beta2);
  PlateauSchedule schedule(config.initial_lr, config.lr_decay_factor, config.lr_patience, config.early_stop_patience);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  auto all = model.params();
  std::vector<Mat<float>> best_weights;
  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = schedule.lr();
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_id) {
      const auto end = std::min(order.size(), start + config.batch_size);
      const auto scale = 1.0 / static_cast<double>(end - start);
      nn::zero_grad(params);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& in = train[order[k]];
        MultiTaskModel<float>::Cache cache;
        const auto z = model.logits(in, &cache, &rng);
        batch_loss += binary_cross_entropy(sigmoid(z[0]), in.y_pop) + binary_cross_entropy(sigmoid(z[1]), in.y_rel);
        model.backward(cache, {bce_logit_grad(z[0], in.y_pop) * scale, bce_logit_grad(z[1], in.y_rel) * scale});
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << batch_id << ", lr " << lr;
        throw NumericFailure(msg.str());
      }
      adam.step(lr);
      epoch_loss += batch_loss;
    }

    const auto eval = evaluate(model, val);
    if (!std::isfinite(eval.loss)) {
      std::ostringstream msg;
      msg << "non-finite validation loss at epoch " << epoch << ", lr " << lr;
      throw NumericFailure(msg.str());
    }
    result.history.push_back({epoch, lr, epoch_loss / static_cast<double>(train.size()), eval.loss,
                              eval.popularity.accuracy, eval.reliability.accuracy});
    const auto step = schedule.update(eval.loss);
    if (step.improved) {
      result.best_epoch = epoch;
      result.best_val_loss = eval.loss;
      best_weights.clear();
      for (auto* p : all) best_weights.push_back(p->value);
    }
    if (step.stop) break;
  }
  for (std::size_t i = 0; i < best_weights.size(); ++i) all[i]->value = best_weights[i];
  return result;
}

void save_checkpoint(const std::filesystem::path& path, MultiTaskModel<float>& model, const nlohmann::json& extra) {
  TensorFile file;
  file.meta = {{"kind", "multitask"}, {"config", to_json(model.config())}, {"extra", extra}};
  file.tensors = nn::export_params(model.params(), "");
  write_tensor_file(path, kCheckpointMagic, file);
}

MultiTaskModel<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  const auto file = read_tensor_file(path, kCheckpointMagic);
  if (file.meta.value("kind", std::string{}) != "multitask") throw ConfigError(path.string() + " is not a multitask checkpoint");
  MultiTaskModel<float> model(multitask_config_from_json(file.meta.at("config")));
  nn::import_params(model.params(), file, "");
  if (meta) *meta = file.meta;
  return model;
}

ArticleInputs encode_article(const Article& article, const TextContext& text, const ImageEncoder<float>& image,
                             const std::filesystem::path& image_root) {
  ArticleInputs in;
  in.article_id = article.article_id;
  in.title_tokens = title_tokens(article);
  in.title = encode_sequence(in.title_tokens, text.title_table, text.title_length);
  in.tweet_tokens = tweet_tokens(article);
  in.tweet = encode_sequence(in.tweet_tokens, text.tweet_table, text.tweet_length);
  in.y_pop = article.popularity_label == PopularityLabel::popular ? 1 : 0;
  in.y_rel = article.reliability_label == ReliabilityLabel::reliable ? 1 : 0;
  const auto path = image_root / article.image_ref;
  if (image.trainable()) {
    in.image = image.prepare(path);
  } else {
    in.image_features = image.features(path);
  }
  return in;
}

std::vector<ArticleInputs> encode_articles(std::span<const Article> articles, const TextContext& text,
                                           const ImageEncoder<float>& image, const std::filesystem::path& image_root) {
  std::vector<ArticleInputs> out;
  out.reserve(articles.size());
  for (const auto& a : articles) out.push_back(encode_article(a, text, image, image_root));
  return out;
}

}  // namespace mmrl
