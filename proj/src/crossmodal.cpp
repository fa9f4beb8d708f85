#include "mmrl/crossmodal.hpp"

#include "mmrl/container.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace mmrl {

nlohmann::json to_json(const CrossModalConfig& c) {
  return {{"text", to_json(c.text)},     {"image", to_json(c.image)},
          {"embed_dim", c.embed_dim},    {"margin", c.margin},
          {"symmetric", c.symmetric},    {"title_length", c.title_length},
          {"tweet_length", c.tweet_length}};
}

CrossModalConfig crossmodal_config_from_json(const nlohmann::json& j) {
  CrossModalConfig c;
  if (j.contains("text")) c.text = text_cnn_config_from_json(j.at("text"));
  if (j.contains("image")) c.image = image_encoder_config_from_json(j.at("image"));
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.margin = j.value("margin", c.margin);
  c.symmetric = j.value("symmetric", c.symmetric);
  c.title_length = j.value("title_length", c.title_length);
  c.tweet_length = j.value("tweet_length", c.tweet_length);
  if (c.embed_dim < 1 || c.margin < 0.0) throw ConfigError("embed_dim must be positive and margin non-negative");
  return c;
}

EmbeddingSet embed_all(const CrossModalEmbedder<float>& model, std::span<const ArticleInputs> inputs,
                       std::span<const std::string> urls) {
  const auto n = static_cast<Index>(inputs.size());
  EmbeddingSet set;
  set.images.resize(n, model.config().embed_dim);
  set.texts.resize(n, model.config().embed_dim);
  for (Index i = 0; i < n; ++i) {
    const auto& in = inputs[static_cast<std::size_t>(i)];
    set.images.row(i) = model.embed_image(in).cast<double>().transpose();
    set.texts.row(i) = model.embed_text(in).cast<double>().transpose();
    set.ids.push_back(in.article_id);
    set.urls.push_back(urls.empty() ? in.article_id : urls[static_cast<std::size_t>(i)]);
  }
  return set;
}

double npairs_validation_loss(const CrossModalEmbedder<float>& model, std::span<const ArticleInputs> inputs,
                              std::size_t batch_size) {
  double total = 0.0;
  std::size_t anchors = 0;
  for (std::size_t start = 0; start < inputs.size(); start += batch_size) {
    const auto end = std::min(inputs.size(), start + batch_size);
    if (end - start < 2) break;
    const auto set = embed_all(model, inputs.subspan(start, end - start));
    total += npairs_loss(set.images, set.texts, model.config().margin, nullptr, nullptr, model.config().symmetric);
    anchors += end - start;
  }
  if (anchors == 0) throw InvalidInput("validation split needs at least two articles");
  return total / static_cast<double>(anchors);
}

TrainResult train_embedding(CrossModalEmbedder<float>& model, std::span<const ArticleInputs> train,
                            std::span<const ArticleInputs> val, const TrainConfig& config) {
  if (train.size() < 2) throw InvalidInput("embedding training needs at least two articles");
  if (val.size() < 2) throw InvalidInput("embedding validation needs at least two articles");
  if (config.batch_size < 2) throw ConfigError("N-pairs training needs batch_size >= 2");
  auto params = model.trainable_params();
  nn::Adam<float> adam(params, config.beta1, config.beta2);
  PlateauSchedule schedule(config.initial_lr, config.lr_decay_factor, config.lr_patience, config.early_stop_patience);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto all = model.params();
  std::vector<Mat<float>> best;
  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  const double margin = model.config().margin;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = schedule.lr();
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_id) {
      const auto end = std::min(order.size(), start + config.batch_size);
      const auto B = static_cast<Index>(end - start);
      if (B < 2) continue;
      std::vector<CrossModalEmbedder<float>::ImageCache> icache(static_cast<std::size_t>(B));
      std::vector<CrossModalEmbedder<float>::TextCache> tcache(static_cast<std::size_t>(B));
      Mat<float> F(B, model.config().embed_dim), G(B, model.config().embed_dim);
      for (Index b = 0; b < B; ++b) {
        const auto& in = train[order[start + static_cast<std::size_t>(b)]];
        F.row(b) = model.embed_image(in, &icache[static_cast<std::size_t>(b)]).transpose();
        G.row(b) = model.embed_text(in, &tcache[static_cast<std::size_t>(b)]).transpose();
      }
      Mat<float> gF, gG;
      const double loss = npairs_loss(F, G, margin, &gF, &gG, model.config().symmetric);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite N-pairs loss at epoch " << epoch << ", batch " << batch_id << ", lr " << lr;
        throw NumericFailure(msg.str());
      }
      const auto scale = 1.0f / static_cast<float>(B);
      nn::zero_grad(params);
      for (Index b = 0; b < B; ++b) {
        model.backward_image(icache[static_cast<std::size_t>(b)], (gF.row(b) * scale).transpose());
        model.backward_text(tcache[static_cast<std::size_t>(b)], (gG.row(b) * scale).transpose());
      }
      adam.step(lr);
      epoch_loss += loss;
    }
    const double val_loss = npairs_validation_loss(model, val, config.batch_size);
    if (!std::isfinite(val_loss)) throw NumericFailure("non-finite validation loss at epoch " + std::to_string(epoch));
    result.history.push_back({epoch, lr, epoch_loss / static_cast<double>(train.size()), val_loss, 0.0, 0.0});
    const auto step = schedule.update(val_loss);
    if (step.improved) {
      result.best_epoch = epoch;
      result.best_val_loss = val_loss;
      best.clear();
      for (auto* p : all) best.push_back(p->value);
    }
    if (step.stop) break;
  }
  for (std::size_t i = 0; i < best.size(); ++i) all[i]->value = best[i];
  return result;
}

std::vector<std::size_t> sample_negatives(const EmbeddingSet& set, std::size_t query, int k, int round,
                                          std::uint64_t seed) {
  std::vector<std::size_t> pool;
  for (std::size_t j = 0; j < set.ids.size(); ++j) {
    if (j != query && set.urls[j] != set.urls[query]) pool.push_back(j);
  }
  const auto need = static_cast<std::size_t>(k - 1);
  if (pool.size() < need) throw InvalidInput("not enough distinct texts for a " + std::to_string(k) + "-way trial");
  std::mt19937_64 rng(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(round)), hash_string(set.ids[query])));
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < need; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(need);
  return pool;
}

double kway_accuracy(const EmbeddingSet& set, int k, int rounds, std::uint64_t seed) {
  if (k < 2) throw InvalidInput("K-way retrieval needs K >= 2");
  if (rounds < 1) throw InvalidInput("need at least one trial round");
  const auto n = set.ids.size();
  if (n < static_cast<std::size_t>(k)) throw InvalidInput("test set smaller than K");
  std::size_t hits = 0, trials = 0;
  for (int r = 0; r < rounds; ++r) {
    for (std::size_t q = 0; q < n; ++q) {
      const auto negatives = sample_negatives(set, q, k, r, seed);
      const auto qi = static_cast<Index>(q);
      const double pos = (set.images.row(qi) - set.texts.row(qi)).squaredNorm();
      bool hit = true;
      for (auto j : negatives) {
        if ((set.images.row(qi) - set.texts.row(static_cast<Index>(j))).squaredNorm() <= pos) {
          hit = false;
          break;
        }
      }
      hits += hit ? 1 : 0;
      ++trials;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(trials);
}

double CrossDomainResult::relative_diff(std::size_t train_domain, std::size_t k_index) const {
  const double same = accuracy[train_domain][train_domain][k_index].mean;
  const double other = accuracy[train_domain][1 - train_domain][k_index].mean;
  return same > 0.0 ? (other - same) / same : 0.0;
}

double CrossDomainResult::absolute_diff(std::size_t train_domain, std::size_t k_index) const {
  return accuracy[train_domain][1 - train_domain][k_index].mean - accuracy[train_domain][train_domain][k_index].mean;
}

namespace {
constexpr std::array<const char*, 2> kDomainNames{"red", "green"};
}

nlohmann::json to_json(const CrossDomainResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t tr = 0; tr < 2; ++tr) {
    for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
      rows.push_back({{"train_domain", kDomainNames[tr]},
                      {"k", r.ks[ki]},
                      {"test_red", r.accuracy[tr][0][ki].mean},
                      {"test_red_se", r.accuracy[tr][0][ki].standard_error},
                      {"test_green", r.accuracy[tr][1][ki].mean},
                      {"test_green_se", r.accuracy[tr][1][ki].standard_error},
                      {"cross_domain_diff", r.absolute_diff(tr, ki)},
                      {"cross_domain_relative", r.relative_diff(tr, ki)}});
    }
  }
  return {{"ks", r.ks},
          {"grid", rows},
          {"training", {{"red", to_json(r.training[0])}, {"green", to_json(r.training[1])}}}};
}

std::string format_table(const CrossDomainResult& r) {
  std::ostringstream out;
  out << std::fixed;
  out << std::left << std::setw(8) << "Train" << std::setw(8) << "K" << std::setw(12) << "Test red" << std::setw(12)
      << "Test green" << "Cross-domain diff.\n";
  for (std::size_t tr = 0; tr < 2; ++tr) {
    for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
      std::ostringstream k;
      k << r.ks[ki] << "-way";
      out << std::left << std::setw(8) << (ki == 0 ? kDomainNames[tr] : "") << std::setw(8) << k.str()
          << std::setprecision(3) << std::setw(12) << r.accuracy[tr][0][ki].mean << std::setw(12)
          << r.accuracy[tr][1][ki].mean << std::showpos << r.absolute_diff(tr, ki) << " (" << std::setprecision(2)
          << 100.0 * r.relative_diff(tr, ki) << "%)" << std::noshowpos << "\n";
    }
  }
  return out.str();
}

CrossDomainResult cross_domain_experiment(const DomainSplits& red, const DomainSplits& green,
                                          const CrossModalConfig& model_config, const TrainConfig& train_config,
                                          const std::vector<int>& ks, std::uint64_t seed, int eval_seeds) {
  if (eval_seeds < 1) throw InvalidInput("need at least one evaluation seed");
  CrossDomainResult result;
  result.ks = ks;

  // Green training data is undersampled to the red training size.
  std::vector<ArticleInputs> green_train = green.train;
  if (green_train.size() > red.train.size()) {
    std::mt19937_64 rng(derive_seed(seed, 17));
    std::shuffle(green_train.begin(), green_train.end(), rng);
    green_train.resize(red.train.size());
  }

  const std::array<const DomainSplits*, 2> domains{&red, &green};
  std::array<std::array<EmbeddingSet, 2>, 2> sets;
  for (std::size_t tr = 0; tr < 2; ++tr) {
    CrossModalEmbedder<float> model(model_config);
    model.init(derive_seed(seed, 100 + tr));
    TrainConfig tc = train_config;
    tc.seed = derive_seed(seed, 200 + tr);
    const auto& train = tr == 0 ? red.train : green_train;
    result.training[tr] = train_embedding(model, train, domains[tr]->val, tc);
    for (std::size_t te = 0; te < 2; ++te) sets[tr][te] = embed_all(model, domains[te]->test, domains[te]->test_urls);
  }

  for (std::size_t tr = 0; tr < 2; ++tr) {
    for (std::size_t te = 0; te < 2; ++te) {
      for (int k : ks) {
        std::vector<double> accs;
        for (int s = 0; s < eval_seeds; ++s) {
          accs.push_back(kway_accuracy(sets[tr][te], k, 1, derive_seed(seed, 1000 + static_cast<std::uint64_t>(s))));
        }
        const double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        const double se = accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1) /
                                                      static_cast<double>(accs.size()))
                                          : 0.0;
        result.accuracy[tr][te].push_back({mean, se});
      }
    }
  }
  return result;
}

void save_embedder(const std::filesystem::path& path, CrossModalEmbedder<float>& model, const nlohmann::json& extra) {
  TensorFile file;
  file.meta = {{"kind", "crossmodal"}, {"config", to_json(model.config())}, {"extra", extra}};
  file.tensors = nn::export_params(model.params(), "");
  write_tensor_file(path, kCheckpointMagic, file);
}

CrossModalEmbedder<float> load_embedder(const std::filesystem::path& path, nlohmann::json* meta) {
  const auto file = read_tensor_file(path, kCheckpointMagic);
  if (file.meta.value("kind", std::string{}) != "crossmodal") throw ConfigError(path.string() + " is not a cross-modal checkpoint");
  CrossModalEmbedder<float> model(crossmodal_config_from_json(file.meta.at("config")));
  nn::import_params(model.params(), file, "");
  if (meta) *meta = file.meta;
  return model;
}

}  // namespace mmrl
