// Acceptance run: one PASS/FAIL line per criterion, mirrored to a text file.

#include "mmrl/common.hpp"
#include "mmrl/crossmodal.hpp"
#include "mmrl/homogeneity.hpp"
#include "mmrl/multitask.hpp"
#include "mmrl/pipeline.hpp"
#include "mmrl/records.hpp"
#include "mmrl/saliency.hpp"
#include "mmrl/synth.hpp"
#include "support.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <sys/wait.h>

using namespace mmrl;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int precision = 3) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

class Verdict {
 public:
  void expect(bool ok, const std::string& what) {
    ok_ = ok_ && ok;
    notes_.push_back((ok ? "" : "FAILED ") + what);
  }
  bool ok() const { return ok_; }
  std::string summary() const {
    std::string s;
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    return s;
  }

 private:
  bool ok_ = true;
  std::vector<std::string> notes_;
};

struct Context {
  fs::path work;
  fs::path cli;
};

// ---------------------------------------------------------------------------
// 1. Popularity math

Verdict popularity_math(const Context&) {
  Verdict v;
  const std::vector<TweetRecord> silent{{"t", "", 0, 0, 500, ""}};
  v.expect(popularity_score(silent, 1e4) == 0.0, "zero engagement gives 0");
  const std::vector<TweetRecord> three{
      {"a", "", 10, 20, 1000, ""}, {"b", "", 0, 5, 500, ""}, {"c", "", 3, 2, 100000, ""}};
  const double hand = 40.0 / 111500.0;
  v.expect(popularity_score(three, 1e4) == hand, "hand value 40/111500 exact");

  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> count(1, 6);
  std::uniform_int_distribution<std::int64_t> small(0, 500), followers(0, 200000), bump(1, 50);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TweetRecord> tweets(static_cast<std::size_t>(count(rng)));
    for (auto& t : tweets) {
      t.retweet_count = small(rng);
      t.like_count = small(rng);
      t.author_followers = followers(rng);
    }
    tweets[0].like_count += 1;  // keep engagement positive
    const double lambda = std::uniform_real_distribution<double>(1.0, 1e5)(rng);
    const double base = popularity_score(tweets, lambda);
    std::uniform_int_distribution<std::size_t> pick(0, tweets.size() - 1);

    auto more_engaged = tweets;
    (trial % 2 ? more_engaged[pick(rng)].retweet_count : more_engaged[pick(rng)].like_count) += bump(rng);
    if (!(popularity_score(more_engaged, lambda) > base)) ++violations;

    auto larger_audience = tweets;
    larger_audience[pick(rng)].author_followers += bump(rng) * 100;
    if (!(popularity_score(larger_audience, lambda) < base)) ++violations;

    if (!(popularity_score(tweets, lambda * 2.0) < base)) ++violations;
    if (!(base >= 0.0)) ++violations;
  }
  v.expect(violations == 0, "monotonicity violations over 1000 perturbations: " + std::to_string(violations));
  return v;
}

// ---------------------------------------------------------------------------
// 2. Labels and splits

std::map<std::string, PopularityLabel> sort_oracle(const std::vector<Article>& articles, double q) {
  std::vector<const Article*> order;
  for (const auto& a : articles) order.push_back(&a);
  std::sort(order.begin(), order.end(), [](const Article* x, const Article* y) {
    if (*x->popularity_score != *y->popularity_score) return *x->popularity_score > *y->popularity_score;
    return x->article_id < y->article_id;
  });
  const std::size_t n = order.size();
  const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(n) + 1e-9));
  std::map<std::string, PopularityLabel> out;
  for (std::size_t r = 0; r < n; ++r) {
    out[order[r]->article_id] =
        r < k ? PopularityLabel::popular : (r >= n - k ? PopularityLabel::unpopular : PopularityLabel::middle);
  }
  return out;
}

std::vector<Article> random_corpus(std::mt19937_64& rng, std::size_t n) {
  const std::array<DomainCoding, 5> codings{DomainCoding::red, DomainCoding::orange, DomainCoding::yellow,
                                            DomainCoding::green, DomainCoding::satire};
  std::discrete_distribution<int> coding({3, 1, 1, 4, 1});
  std::uniform_int_distribution<std::int64_t> engagement(0, 300), audience(0, 50000);
  std::vector<Article> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& a = out[i];
    a.article_id = "art" + std::to_string(rng() % 1000000000);
    a.url = "https://example.org/" + a.article_id;
    a.title = "title " + std::to_string(i);
    a.image_ref = "images/" + a.article_id + ".png";
    a.domain_coding = codings[static_cast<std::size_t>(coding(rng))];
    const int tweets = 1 + static_cast<int>(rng() % 4);
    for (int t = 0; t < tweets; ++t) {
      a.tweets.push_back({a.article_id + "-" + std::to_string(t), "text", engagement(rng), engagement(rng),
                          audience(rng), a.url});
    }
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict labels_and_splits(const Context& ctx) {
  Verdict v;
  std::mt19937_64 rng(77);
  int mismatched = 0;
  for (int set = 0; set < 10000; ++set) {
    const std::array<double, 5> quantiles{0.1, 0.2, 0.25, 0.5, std::uniform_real_distribution<double>(0.05, 0.5)(rng)};
    const double q = quantiles[static_cast<std::size_t>(set % 5)];
    const auto min_n = static_cast<std::size_t>(std::ceil(2.0 / q));
    const std::size_t n = min_n + rng() % 150;
    const bool ties = rng() % 3 == 0;
    std::vector<Article> articles(n);
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      articles[i].article_id = "id" + std::to_string(ids[i]);
      articles[i].popularity_score =
          ties ? static_cast<double>(rng() % 6) / 7.0 : std::uniform_real_distribution<double>(0, 1)(rng);
    }
    const auto oracle = sort_oracle(articles, q);
    for (const auto& a : assign_popularity_labels(articles, q)) {
      if (!a.popularity_label || *a.popularity_label != oracle.at(a.article_id)) {
        ++mismatched;
        break;
      }
    }
  }
  v.expect(mismatched == 0, "label sets disagreeing with sort oracle: " + std::to_string(mismatched) + "/10000");

  int ratio_bad = 0, balance_bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto corpus = random_corpus(rng, 100 + rng() % 900);
    const auto ds = build_dataset(corpus, 1e4, 0.2, 1000 + static_cast<std::uint64_t>(trial));
    const double total = static_cast<double>(ds.size());
    const std::array<double, 3> ideal{0.7 * total, 0.1 * total, 0.2 * total};
    for (Split s : {Split::train, Split::val, Split::test}) {
      const auto& part = ds.split(s);
      if (std::abs(static_cast<double>(part.size()) - ideal[static_cast<std::size_t>(s)]) > 1.0) ++ratio_bad;
      long reliable = 0;
      for (const auto& a : part) reliable += a.reliability_label == ReliabilityLabel::reliable ? 1 : 0;
      if (std::abs(2 * reliable - static_cast<long>(part.size())) > 1) ++balance_bad;
    }
  }
  v.expect(ratio_bad == 0, "splits off 70/10/20 by more than 1: " + std::to_string(ratio_bad));
  v.expect(balance_bad == 0, "splits with reliability imbalance above 1: " + std::to_string(balance_bad));

  const auto corpus = random_corpus(rng, 600);
  fs::create_directories(ctx.work / "c2");
  write_dataset_jsonl(ctx.work / "c2" / "a.jsonl", build_dataset(corpus, 1e4, 0.2, 42));
  write_dataset_jsonl(ctx.work / "c2" / "b.jsonl", build_dataset(corpus, 1e4, 0.2, 42));
  const auto a = slurp(ctx.work / "c2" / "a.jsonl");
  v.expect(!a.empty() && a == slurp(ctx.work / "c2" / "b.jsonl"), "dataset byte-identical under a fixed seed");
  return v;
}

// ---------------------------------------------------------------------------
// 3. Multi-task learning (the trained model is reused by criterion 9)

struct MultitaskFixture {
  fs::path dir;
  LabeledDataset dataset;
  std::optional<MultiTaskModel<float>> model;
  std::vector<ArticleInputs> train, val, test;
  TrainResult result;
};

std::unique_ptr<MultitaskFixture> g_multitask;

MultitaskFixture& multitask_fixture(const Context& ctx) {
  if (g_multitask) return *g_multitask;
  auto f = std::make_unique<MultitaskFixture>();
  f->dir = ctx.work / "c3";
  fs::remove_all(f->dir);
  synth::CorpusOptions o;
  o.articles = 2000;
  o.image_size = 32;
  f->dataset = build_dataset(synth::multitask_corpus(o, f->dir), 1e4, 0.5, 7);
  const auto text = build_text_context(f->dataset.train, {});
  MultiTaskConfig mc;
  mc.image.resize_shorter = 32;
  mc.image.crop = 32;
  mc.title_length = text.title_length;
  mc.tweet_length = text.tweet_length;
  f->model.emplace(mc);
  f->model->init(3);
  f->train = encode_articles(f->dataset.train, text, f->model->image_encoder(), f->dir);
  f->val = encode_articles(f->dataset.val, text, f->model->image_encoder(), f->dir);
  f->test = encode_articles(f->dataset.test, text, f->model->image_encoder(), f->dir);
  TrainConfig tc;  // lr 1e-4, decay 0.1 / patience 4, stop patience 6, Adam (0.9, 0.999)
  tc.max_epochs = 20;
  tc.seed = 5;
  f->result = train_multitask(*f->model, f->train, f->val, tc);
  g_multitask = std::move(f);
  return *g_multitask;
}

Verdict multitask_learning(const Context& ctx) {
  Verdict v;
  auto& f = multitask_fixture(ctx);
  std::optional<EpochRecord> reached;
  double best_pop = 0.0, best_rel = 0.0;
  for (const auto& h : f.result.history) {
    best_pop = std::max(best_pop, h.val_acc_pop);
    best_rel = std::max(best_rel, h.val_acc_rel);
    if (!reached && h.val_acc_pop >= 0.95 && h.val_acc_rel >= 0.95) reached = h;
  }
  v.expect(reached.has_value() && reached->epoch <= 20,
           reached ? "val acc pop " + fmt(reached->val_acc_pop) + " rel " + fmt(reached->val_acc_rel) + " at epoch " +
                         std::to_string(reached->epoch)
                   : "best val acc pop " + fmt(best_pop) + " rel " + fmt(best_rel) + " within 20 epochs");

  std::vector<Prediction> preds;
  std::vector<int> y_pop, y_rel;
  for (const auto& in : f.test) {
    preds.push_back(f.model->forward(in));
    y_pop.push_back(in.y_pop);
    y_rel.push_back(in.y_rel);
  }
  const double joint = multitask_loss(preds, y_pop, y_rel);
  const double parts = task_loss(preds, y_pop, Task::popularity) + task_loss(preds, y_rel, Task::reliability);
  v.expect(std::abs(joint - parts) <= 1e-6, "|L_multi - (L_pop + L_rel)| = " + fmt(std::abs(joint - parts), 2));
  return v;
}

// ---------------------------------------------------------------------------
// 4. Gradient integrity

EncodedSequence random_sequence(Index L, Index length, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  EncodedSequence s;
  s.rows = RowMat<float>::Zero(L, kEmbeddingDim);
  s.length = length;
  for (Index r = 0; r < length; ++r) {
    for (Index c = 0; c < kEmbeddingDim; ++c) s.rows(r, c) = n(rng);
  }
  return s;
}

ArticleInputs random_inputs(std::mt19937_64& rng, int y_pop, int y_rel, Index image_size = 8) {
  ArticleInputs in;
  in.article_id = "a" + std::to_string(rng() % 100000);
  in.title = random_sequence(4, 3, rng);
  in.tweet = random_sequence(5, 5, rng);
  std::normal_distribution<float> n(0.0f, 1.0f);
  nn::Tensor3<float> img(3, image_size, image_size);
  for (Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = n(rng);
  in.image = img;
  in.y_pop = y_pop;
  in.y_rel = y_rel;
  return in;
}

double multitask_gradient_error(std::uint64_t seed) {
  MultiTaskConfig c;
  c.head_width = 8;
  c.dropout = 0.0;
  c.image.frozen = false;
  c.image.channels = {2, 3, 4};
  c.image.resize_shorter = 8;
  c.image.crop = 8;
  c.title_length = 4;
  c.tweet_length = 5;
  MultiTaskModel<double> model(c);
  model.init(seed);
  std::mt19937_64 rng(seed + 100);
  std::vector<ArticleInputs> batch{random_inputs(rng, 1, 0), random_inputs(rng, 0, 1), random_inputs(rng, 1, 1)};
  const double B = static_cast<double>(batch.size());
  auto loss = [&] {
    double total = 0.0;
    for (const auto& in : batch) {
      const auto z = model.logits(in);
      total += binary_cross_entropy(sigmoid(z[0]), in.y_pop) + binary_cross_entropy(sigmoid(z[1]), in.y_rel);
    }
    return total / B;
  };
  auto params = model.trainable_params();
  nn::zero_grad(params);
  for (const auto& in : batch) {
    MultiTaskModel<double>::Cache cache;
    const auto z = model.logits(in, &cache);
    model.backward(cache, {bce_logit_grad(z[0], in.y_pop) / B, bce_logit_grad(z[1], in.y_rel) / B});
  }
  return testing::max_relative_gradient_error(params, loss, 6, seed, 3e-5);
}

double npairs_gradient_error(bool symmetric, std::uint64_t seed) {
  CrossModalConfig c;
  c.text.filters_per_size = 4;
  c.image.frozen = false;
  c.image.channels = {2, 3, 4};
  c.embed_dim = 16;
  c.symmetric = symmetric;
  CrossModalEmbedder<double> model(c);
  model.init(seed);
  std::mt19937_64 rng(seed + 200);
  constexpr std::size_t B = 4;
  std::vector<ArticleInputs> batch;
  for (std::size_t i = 0; i < B; ++i) batch.push_back(random_inputs(rng, 0, 0));
  std::vector<CrossModalEmbedder<double>::ImageCache> ic(B);
  std::vector<CrossModalEmbedder<double>::TextCache> tc(B);
  auto embed = [&](Mat<double>& F, Mat<double>& G, bool keep) {
    F.resize(B, c.embed_dim);
    G.resize(B, c.embed_dim);
    for (std::size_t b = 0; b < B; ++b) {
      F.row(static_cast<Index>(b)) = model.embed_image(batch[b], keep ? &ic[b] : nullptr).transpose();
      G.row(static_cast<Index>(b)) = model.embed_text(batch[b], keep ? &tc[b] : nullptr).transpose();
    }
  };
  auto loss = [&] {
    Mat<double> F, G;
    embed(F, G, false);
    return npairs_loss(F, G, c.margin, nullptr, nullptr, symmetric);
  };
  auto params = model.trainable_params();
  nn::zero_grad(params);
  Mat<double> F, G, gF, gG;
  embed(F, G, true);
  npairs_loss(F, G, c.margin, &gF, &gG, symmetric);
  for (std::size_t b = 0; b < B; ++b) {
    model.backward_image(ic[b], gF.row(static_cast<Index>(b)).transpose());
    model.backward_text(tc[b], gG.row(static_cast<Index>(b)).transpose());
  }
  return testing::max_relative_gradient_error(params, loss, 6, seed, 3e-5);
}

Verdict gradient_integrity(const Context&) {
  Verdict v;
  double bce = 0.0, asym = 0.0, sym = 0.0;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    bce = std::max(bce, multitask_gradient_error(s));
    asym = std::max(asym, npairs_gradient_error(false, s));
    sym = std::max(sym, npairs_gradient_error(true, s));
  }
  v.expect(bce < 1e-4, "multitask BCE max rel err " + fmt(bce, 2));
  v.expect(asym < 1e-4, "N-pairs max rel err " + fmt(asym, 2));
  v.expect(sym < 1e-4, "symmetric N-pairs max rel err " + fmt(sym, 2));
  return v;
}

// ---------------------------------------------------------------------------
// 5. Embedding geometry

double npairs_oracle(const Mat<double>& F, const Mat<double>& G, double margin) {
  double total = 0.0;
  for (Index i = 0; i < F.rows(); ++i) {
    for (Index j = 0; j < F.rows(); ++j) {
      if (i == j) continue;
      double pos = 0.0, neg = 0.0;
      for (Index d = 0; d < F.cols(); ++d) {
        pos += (F(i, d) - G(i, d)) * (F(i, d) - G(i, d));
        neg += (F(i, d) - G(j, d)) * (F(i, d) - G(j, d));
      }
      total += std::max(0.0, pos - neg + margin);
    }
  }
  return total;
}

Verdict embedding_geometry(const Context&) {
  Verdict v;
  CrossModalConfig c;
  c.text.filters_per_size = 16;
  c.image.frozen = false;
  c.image.channels = {4, 8, 8};
  c.image.resize_shorter = 16;
  c.image.crop = 16;
  CrossModalEmbedder<float> model(c);
  model.init(9);
  std::mt19937_64 rng(5);
  std::vector<ArticleInputs> inputs;
  for (int i = 0; i < 64; ++i) {
    auto in = random_inputs(rng, 0, 0, 16);
    in.article_id = "e" + std::to_string(i);
    in.image->data *= static_cast<float>(std::pow(10.0, i % 5 - 2));  // widely varying input scales
    inputs.push_back(std::move(in));
  }
  const auto set = embed_all(model, inputs);
  double worst = 0.0;
  for (const auto* m : {&set.images, &set.texts}) {
    for (Index i = 0; i < m->rows(); ++i) worst = std::max(worst, std::abs(m->row(i).norm() - 1.0));
  }
  v.expect(set.images.cols() == kJointDim && worst <= 1e-5, "max |norm - 1| = " + fmt(worst, 2));

  double oracle_err = 0.0;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int batch = 0; batch < 100; ++batch) {
    const Index B = 2 + static_cast<Index>(rng() % 15);
    Mat<double> F(B, kJointDim), G(B, kJointDim);
    for (Index i = 0; i < F.size(); ++i) {
      F.data()[i] = n(rng);
      G.data()[i] = n(rng);
    }
    F = normalize_rows(F);
    // Half the batches put texts near their images so both hinge branches occur.
    G = batch % 2 ? normalize_rows(Mat<double>(F + 0.3 * G)) : normalize_rows(G);
    for (const double margin : {0.5, 2.0}) {
      oracle_err = std::max(oracle_err, std::abs(npairs_loss(F, G, margin) - npairs_oracle(F, G, margin)));
    }
  }
  v.expect(oracle_err <= 1e-8, "brute-force oracle max err " + fmt(oracle_err, 2) + " over 100 batches");

  Mat<double> eye = Mat<double>::Identity(3, 3);
  Mat<double> same(2, 3);
  same << 0, 1, 0, 0, 1, 0;
  Mat<double> one(1, 3);
  one << 1, 0, 0;
  v.expect(npairs_loss(eye, eye, 0.5) == 0.0, "satisfied margin gives exactly 0");
  v.expect(npairs_loss(same, same, 0.5) == 2 * 0.5, "equidistant pairs give alpha per term");
  bool threw = false;
  try {
    npairs_loss(one, one, 0.5);
  } catch (const InvalidInput&) {
    threw = true;
  }
  v.expect(threw, "batch of one rejected");
  return v;
}

// ---------------------------------------------------------------------------
// 6. Retrieval protocol

struct PairedData {
  DomainSplits splits;
  CrossModalConfig config;
};

PairedData paired_data(const fs::path& dir, std::size_t articles, synth::PairedOptions::Background background,
                       std::uint64_t seed) {
  synth::PairedOptions o;
  o.articles = articles;
  o.background = background;
  o.coding = DomainCoding::green;
  o.seed = seed;
  const auto corpus = synth::paired_corpus(o, dir);
  const auto parts = domain_splits(corpus, DomainTag::green, seed);
  const auto text = build_text_context(parts[0], {});
  PairedData out;
  out.config.image.resize_shorter = 32;
  out.config.image.crop = 32;
  out.config.title_length = text.title_length;
  out.config.tweet_length = text.tweet_length;
  CrossModalEmbedder<float> probe(out.config);
  probe.init(derive_seed(seed, 100));
  auto enc = [&](const std::vector<Article>& v) { return encode_articles(v, text, probe.image_encoder(), dir); };
  out.splits = {enc(parts[0]), enc(parts[1]), enc(parts[2]), {}};
  for (const auto& a : parts[2]) out.splits.test_urls.push_back(a.url);
  return out;
}

Verdict retrieval_protocol(const Context& ctx) {
  Verdict v;
  const fs::path dir = ctx.work / "c6";
  fs::remove_all(dir);
  const auto data = paired_data(dir, 1000, synth::PairedOptions::Background::plain, 21);

  CrossModalEmbedder<float> untrained(data.config);
  untrained.init(4);
  const auto raw = embed_all(untrained, data.splits.test, data.splits.test_urls);
  const int rounds = static_cast<int>((1000 + raw.ids.size() - 1) / raw.ids.size()) * 5;
  std::string chance;
  bool at_chance = true;
  for (int k : {3, 5, 10}) {
    const double acc = kway_accuracy(raw, k, rounds, 17);
    at_chance = at_chance && std::abs(acc - 1.0 / k) <= 0.03;
    chance += (chance.empty() ? "" : ", ") + std::to_string(k) + "-way " + fmt(acc);
  }
  v.expect(at_chance, "untrained " + chance + " over " + std::to_string(raw.ids.size() * rounds) + " trials");

  CrossModalEmbedder<float> model(data.config);
  model.init(4);
  TrainConfig tc;
  tc.max_epochs = 60;
  tc.seed = 4;
  train_embedding(model, data.splits.train, data.splits.val, tc);
  const double acc = kway_accuracy(embed_all(model, data.splits.test, data.splits.test_urls), 10, 5, 17);
  v.expect(acc >= 0.9, "trained 10-way held-out accuracy " + fmt(acc));
  return v;
}

// ---------------------------------------------------------------------------
// 7. Cross-domain bias detection

Verdict cross_domain_bias(const Context& ctx) {
  Verdict v;
  using Bg = synth::PairedOptions::Background;
  int agree = 0;
  std::string drops;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const fs::path dir = ctx.work / ("c7-" + std::to_string(seed));
    fs::remove_all(dir);
    synth::PairedOptions a, b;
    a.articles = b.articles = 800;
    a.background = Bg::paired_tint;
    a.coding = DomainCoding::red;
    a.seed = derive_seed(seed, 11);
    b.background = Bg::random_tint;
    b.coding = DomainCoding::green;
    b.seed = derive_seed(seed, 13);
    const auto red_corpus = synth::paired_corpus(a, dir);
    const auto green_corpus = synth::paired_corpus(b, dir);
    const auto red = domain_splits(red_corpus, DomainTag::red, seed);
    const auto green = domain_splits(green_corpus, DomainTag::green, seed);
    std::vector<Article> pooled = red[0];
    pooled.insert(pooled.end(), green[0].begin(), green[0].end());
    const auto text = build_text_context(pooled, {});

    CrossModalConfig cc;
    cc.image.resize_shorter = 32;
    cc.image.crop = 32;
    cc.title_length = text.title_length;
    cc.tweet_length = text.tweet_length;
    CrossModalEmbedder<float> probe(cc);
    probe.init(derive_seed(seed, 100));
    auto side = [&](const std::array<std::vector<Article>, 3>& parts) {
      auto enc = [&](const std::vector<Article>& x) { return encode_articles(x, text, probe.image_encoder(), dir); };
      DomainSplits s{enc(parts[0]), enc(parts[1]), enc(parts[2]), {}};
      for (const auto& art : parts[2]) s.test_urls.push_back(art.url);
      return s;
    };
    TrainConfig tc;
    tc.max_epochs = 30;
    tc.seed = seed;
    const auto r = cross_domain_experiment(side(red), side(green), cc, tc, {3, 5, 10}, seed, 5);
    const double drop_a = -r.relative_diff(0, 2);
    const double drop_b = -r.relative_diff(1, 2);
    agree += drop_a - drop_b >= 0.05 ? 1 : 0;
    drops += (drops.empty() ? "" : ", ") + fmt(100 * drop_a, 3) + "%/" + fmt(100 * drop_b, 3) + "%";
  }
  v.expect(agree == 5, std::to_string(agree) + "/5 seeds with A drop >= B drop + 5pp (A/B: " + drops + ")");
  return v;
}

// ---------------------------------------------------------------------------
// 8. MMD

double mmd_oracle(const Mat<double>& X, const Mat<double>& Y, double alpha) {
  auto k = [&](const auto& a, const auto& b) { return std::exp(-alpha * (a - b).norm()); };
  const double n = static_cast<double>(X.rows()), m = static_cast<double>(Y.rows());
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (Index i = 0; i < X.rows(); ++i) {
    for (Index j = 0; j < X.rows(); ++j) {
      if (i != j) xx += k(X.row(i), X.row(j));
    }
  }
  for (Index i = 0; i < Y.rows(); ++i) {
    for (Index j = 0; j < Y.rows(); ++j) {
      if (i != j) yy += k(Y.row(i), Y.row(j));
    }
  }
  for (Index i = 0; i < X.rows(); ++i) {
    for (Index j = 0; j < Y.rows(); ++j) xy += k(X.row(i), Y.row(j));
  }
  return xx / (n * (n - 1)) + yy / (m * (m - 1)) - 2.0 * xy / (n * m);
}

Mat<double> gaussian(std::mt19937_64& rng, Index rows, Index cols, double shift) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat<double> out(rows, cols);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = n(rng) + shift;
  return out;
}

Verdict mmd_checks(const Context&) {
  Verdict v;
  std::mt19937_64 rng(8);
  double err = 0.0;
  bool symmetric = true;
  for (int instance = 0; instance < 100; ++instance) {
    const Index d = 1 + static_cast<Index>(rng() % 20);
    const auto X = gaussian(rng, 2 + static_cast<Index>(rng() % 30), d, 0.0);
    const auto Y = gaussian(rng, 2 + static_cast<Index>(rng() % 30), d, 0.5 * (instance % 3));
    const double alpha = std::uniform_real_distribution<double>(0.05, 2.0)(rng);
    err = std::max(err, std::abs(mmd_squared(X, Y, alpha) - mmd_oracle(X, Y, alpha)));
    symmetric = symmetric && mmd_squared(X, Y, alpha) == mmd_squared(Y, X, alpha);
  }
  v.expect(err <= 1e-10, "double-loop oracle max err " + fmt(err, 2));
  v.expect(symmetric, "exact symmetry");

  const auto null_sample = make_feature_sample(gaussian(rng, 1000, kEmbeddingDim, 0.0), DomainTag::green,
                                               InputKind::title);
  const auto same = within_domain_protocol(null_sample, 100, 250, 3);
  v.expect(std::abs(same.mean) <= 2.0 * same.standard_error(),
           "same distribution mean " + fmt(same.mean, 3) + " vs 2 SE " + fmt(2.0 * same.standard_error(), 3));

  const auto other = make_feature_sample(gaussian(rng, 1000, kEmbeddingDim, 0.3), DomainTag::red, InputKind::title);
  const auto between = between_domain_protocol(null_sample, other, 100, 250, 3);
  v.expect(between.mean > 5.0 * between.standard_error(),
           "shifted mean " + fmt(between.mean, 3) + " vs 5 SE " + fmt(5.0 * between.standard_error(), 3));

  MmdProtocolResult a, b;
  a.values = {1, 2, 3, 4};
  b.values = {2, 3, 4, 5};
  const auto t = compare_protocols(a, b);
  v.expect(std::abs(t.t - -1.549) <= 1e-3 && t.df == 6.0,
           "hand t-test: t = " + fmt(t.t, 5) + ", df = " + fmt(t.df) + " (expected t = -1.549, df = 6)");
  return v;
}

// ---------------------------------------------------------------------------
// 9. Saliency

nn::Param<float>& param(MultiTaskModel<float>& m, const std::string& name) {
  for (auto* p : m.params()) {
    if (p->name == name) return *p;
  }
  throw std::runtime_error("no parameter " + name);
}

double quadrant_mass(const Mat<double>& grid, int quadrant) {
  const Index H = grid.rows(), W = grid.cols();
  const double total = grid.sum();
  if (!(total > 0.0)) return 0.0;
  return grid.block(quadrant >= 2 ? H / 2 : 0, quadrant % 2 ? W / 2 : 0, H / 2, W / 2).sum() / total;
}

Verdict saliency_checks(const Context& ctx) {
  Verdict v;
  MultiTaskConfig tiny;
  tiny.modalities = parse_modalities("image");
  tiny.image.frozen = false;
  tiny.image.channels = {2, 3, 4};
  tiny.head_width = 8;
  tiny.dropout = 0.0;

  std::mt19937_64 rng(12);
  bool identical = true;
  {
    MultiTaskModel<float> model(tiny);
    model.init(6);
    for (int i = 0; i < 5; ++i) {
      const auto in = random_inputs(rng, 0, 0, 16);
      for (bool positive : {true, false}) {
        const SaliencyTarget target{i % 2 ? Task::popularity : Task::reliability, positive};
        const auto cam = gradcam(model, in, SaliencyInput::image, target);
        SmoothGradOptions o;
        o.sigma = 0.0;
        o.n = 1 + i * 6;
        identical = identical && smoothgrad_gradcam(model, in, SaliencyInput::image, target, o).grid == cam.grid;
      }
    }
  }
  v.expect(identical, "sigma=0 SmoothGrad bit-identical to Grad-CAM");

  double worst_cos = 1.0;
  for (Index channel = 0; channel < 4; ++channel) {
    MultiTaskModel<float> m(tiny);
    m.init(4);
    param(m, "image.proj.weight").value.setZero();
    param(m, "image.proj.weight").value(0, channel) = 1.0f;
    param(m, "image.proj.bias").value.setZero();
    for (const char* head : {"pop", "rel"}) {
      param(m, std::string(head) + ".fc1.weight").value.setZero();
      param(m, std::string(head) + ".fc1.bias").value.setZero();
      param(m, std::string(head) + ".fc2.weight").value.setZero();
    }
    param(m, "pop.fc1.weight").value(0, 0) = 1.0f;
    param(m, "pop.fc1.bias").value(0) = 1.0f;
    param(m, "pop.fc2.weight").value(0, 0) = 1.0f;
    for (int i = 0; i < 5; ++i) {
      const auto in = random_inputs(rng, 0, 0, 16);
      const auto map = gradcam(m, in, SaliencyInput::image, {Task::popularity, true});
      SmallCnn<float>::Cache cache;
      m.image_encoder().cnn().forward(*in.image, &cache);
      const Vec<double> act = cache.last.row(channel).transpose().cast<double>().cwiseMax(0.0);
      Vec<double> flat(map.grid.size());
      for (Index y = 0; y < map.grid.rows(); ++y) {
        for (Index x = 0; x < map.grid.cols(); ++x) flat(y * map.grid.cols() + x) = map.grid(y, x);
      }
      const double denom = flat.norm() * act.norm();
      worst_cos = std::min(worst_cos, denom > 0.0 ? flat.dot(act) / denom : 0.0);
    }
  }
  v.expect(worst_cos >= 0.999, "single-channel GAP cosine min " + fmt(worst_cos, 6));

  // Quadrant localization on an image-only model with a trainable backbone.
  {
    const fs::path dir = ctx.work / "c9";
    fs::remove_all(dir);
    synth::CorpusOptions o;
    o.articles = 2000;
    o.image_size = 48;
    const auto ds = build_dataset(synth::multitask_corpus(o, dir), 1e4, 0.5, 7);
    const auto text = build_text_context(ds.train, {});
    MultiTaskConfig mc;
    mc.modalities = parse_modalities("image");
    mc.image.frozen = false;
    mc.image.resize_shorter = 48;
    mc.image.crop = 48;
    mc.title_length = text.title_length;
    mc.tweet_length = text.tweet_length;
    MultiTaskModel<float> model(mc);
    model.init(3);
    const auto train = encode_articles(ds.train, text, model.image_encoder(), dir);
    const auto val = encode_articles(ds.val, text, model.image_encoder(), dir);
    const auto test = encode_articles(ds.test, text, model.image_encoder(), dir);
    TrainConfig tc;
    tc.max_epochs = 20;
    tc.seed = 5;
    train_multitask(model, train, val, tc);
    std::array<std::size_t, 2> localized{}, total{};
    for (const auto& in : test) {
      for (Task task : {Task::popularity, Task::reliability}) {
        const bool positive = (task == Task::popularity ? in.y_pop : in.y_rel) == 1;
        const int quadrant = task == Task::popularity
                                 ? (positive ? synth::kPopularQuadrant : synth::kUnpopularQuadrant)
                                 : (positive ? synth::kReliableQuadrant : synth::kUnreliableQuadrant);
        const auto map = gradcam(model, in, SaliencyInput::image, {task, positive});
        const auto t = static_cast<std::size_t>(task);
        localized[t] += quadrant_mass(map.grid, quadrant) >= 0.6 ? 1 : 0;
        ++total[t];
      }
    }
    for (Task task : {Task::popularity, Task::reliability}) {
      const auto t = static_cast<std::size_t>(task);
      const double share = static_cast<double>(localized[t]) / static_cast<double>(total[t]);
      v.expect(share >= 0.8, std::string(to_string(task)) + " maps with >=60% mass in class quadrant: " + fmt(share));
    }
  }

  // Planted trigger tokens. The multimodal model can answer popularity from
  // the image patch alone, so text attention is read off a text-only model
  // trained on the same split.
  {
    auto& f = multitask_fixture(ctx);
    MultiTaskConfig tc_text = f.model->config();
    tc_text.modalities = parse_modalities("title,tweet");
    MultiTaskModel<float> text_model(tc_text);
    text_model.init(3);
    TrainConfig tc;
    tc.max_epochs = 20;
    tc.seed = 5;
    train_multitask(text_model, f.train, f.val, tc);
    const std::map<std::pair<int, bool>, std::string> planted{
        {{static_cast<int>(Task::reliability), true}, synth::kReliableTrigger},
        {{static_cast<int>(Task::reliability), false}, synth::kUnreliableTrigger},
        {{static_cast<int>(Task::popularity), true}, synth::kPopularTrigger},
        {{static_cast<int>(Task::popularity), false}, synth::kUnpopularTrigger}};
    for (auto field : {SaliencyInput::title, SaliencyInput::tweet}) {
      const auto report = top_tokens_report(text_model, f.test, 3, 20, field);
      for (const auto& [target, tokens] : report.classes) {
        // Reliability is planted in titles, popularity in tweets.
        if ((target.task == Task::reliability) != (field == SaliencyInput::title)) continue;
        const auto& trigger = planted.at({static_cast<int>(target.task), target.positive});
        std::string top;
        bool found = false;
        for (const auto& t : tokens) {
          top += (top.empty() ? "" : " ") + t.token;
          found = found || t.token == trigger;
        }
        v.expect(found, "'" + trigger + "' in top-3 " + std::string(to_string(field)) + " tokens for " +
                            class_name(target) + " [" + top + "]");
      }
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// 10. End-to-end CLI run

struct CliResult {
  int status = -1;
  std::string dir;
};

CliResult cli(const Context& ctx, const fs::path& log, const std::string& args) {
  const std::string command = "\"" + ctx.cli.string() + "\" " + args + " 2>>\"" + log.string() + "\"";
  CliResult r;
  FILE* pipe = popen(command.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::string out;
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe)) out += buf.data();
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  r.dir = out.substr(out.find_last_of('\n') == std::string::npos ? 0 : out.find_last_of('\n') + 1);
  return r;
}

Verdict end_to_end(const Context& ctx) {
  Verdict v;
  const fs::path root = ctx.work / "c10";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path log = root / "cli.log";
  const fs::path config = root / "config.json";
  {
    std::ofstream c(config);
    c << R"({"experiment": "acceptance-e2e", "dataset": {"quantile": 0.5},
  "model": {"image": {"resize_shorter": 32, "crop": 32}}, "train": {"max_epochs": 3},
  "saliency": {"samples": 5, "min_count": 5}, "mmd": {"n": [50, 100], "repeats": 50}})";
  }
  const std::string global = "--config \"" + config.string() + "\" --out \"" + (root / "runs").string() + "\" ";
  std::vector<std::string> failed;
  auto step = [&](const std::string& name, const std::string& args) {
    const auto r = cli(ctx, log, global + args);
    if (r.status != 0) failed.push_back(name + " (exit " + std::to_string(r.status) + ")");
    return fs::path(r.dir);
  };

  const auto synth = step("synth", "synth --kind multitask --articles 400 --fixtures");
  const auto raw = synth / "raw";
  const auto ingest = step("ingest", "ingest --offline --tweets \"" + (raw / "tweets.jsonl").string() +
                                         "\" --domains \"" + (raw / "domains.txt").string() + "\" --html-cache \"" +
                                         (raw / "cache").string() + "\"");
  const auto built = step("build-dataset", "build-dataset --corpus \"" + (ingest / "articles.jsonl").string() + "\"");
  const auto dataset = built / "dataset.jsonl";
  const auto trained = step("train", "train --dataset \"" + dataset.string() + "\"");
  const auto ckpt = "\"" + (trained / "model.ckpt").string() + "\"";
  step("eval", "eval --ckpt " + ckpt);
  step("eval tweet-only", "eval --ckpt " + ckpt + " --modalities tweet");

  std::string article;
  {
    std::ifstream in(dataset);
    std::string line;
    while (article.empty() && std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_object() && j.value("split", "") == "test") article = j.value("article_id", "");
    }
  }
  step("saliency", "saliency --ckpt " + ckpt + " --input " + article + " --task reliability --class reliable");
  step("token-report", "token-report --ckpt " + ckpt + " --field tweet");
  const auto features = step("extract-features", "extract-features --dataset \"" + dataset.string() + "\" --kind image");
  step("mmd", "mmd --features \"" + (features / "image-red.fea").string() + "\" \"" +
                  (features / "image-green.fea").string() + "\"");
  const auto paired = step("synth paired", "synth --kind paired --articles 200");
  const auto pairs = "\"" + (paired / "corpus" / "articles.jsonl").string() + "\"";
  const auto red = step("embed-train red", "embed-train --domain red --corpus " + pairs);
  const auto green = step("embed-train green", "embed-train --domain green --corpus " + pairs);
  for (const auto& [name, dir] : {std::pair{"red", red}, std::pair{"green", green}}) {
    for (const char* test : {"red", "green"}) {
      step(std::string("retrieve ") + name + "->" + test,
           "retrieve --ckpt \"" + (dir / "embedder.ckpt").string() + "\" --test-domain " + test);
    }
  }
  const auto report = step("report", "report --runs \"" + (root / "runs").string() + "\"");
  v.expect(failed.empty(), failed.empty() ? "all 18 commands exited 0" : "non-zero exits: " + [&] {
    std::string s;
    for (const auto& f : failed) s += (s.empty() ? "" : ", ") + f;
    return s;
  }());

  const auto md = slurp(report / "report.md");
  std::vector<std::string> missing;
  for (const char* section : {"## Dataset", "## Table 1", "## Table 3", "## Table 4", "## Table 5", "## Figure 5",
                              "## Saliency maps"}) {
    if (md.find(section) == std::string::npos) missing.push_back(section);
  }
  std::size_t placeholders = 0;
  for (auto at = md.find("_No "); at != std::string::npos; at = md.find("_No ", at + 1)) ++placeholders;
  v.expect(placeholders == 0, std::to_string(placeholders) + " empty sections");
  std::string m;
  for (const auto& s : missing) m += (m.empty() ? "" : ", ") + s;
  v.expect(!md.empty() && missing.empty(), md.empty() ? "report.md missing" : missing.empty() ? "report has all sections" : "missing " + m);
  return v;
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Verdict(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  bool strict = false;
  std::string work = (fs::temp_directory_path() / "mmrl-acceptance").string();
  std::string out_file = MMRL_ACCEPTANCE_OUT;
  std::string cli_path = MMRL_CLI_PATH;
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_flag("--strict", strict, "exit non-zero when any criterion fails");
  app.add_option("--work", work, "scratch directory");
  app.add_option("--out", out_file, "file receiving the result lines");
  app.add_option("--cli", cli_path, "mmrl executable for the end-to-end run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "popularity math", 60, popularity_math},
      {2, "label/split correctness", 60, labels_and_splits},
      {3, "multi-task learning", 300, multitask_learning},
      {4, "gradient integrity", 60, gradient_integrity},
      {5, "embedding geometry", 60, embedding_geometry},
      {6, "retrieval protocol", 600, retrieval_protocol},
      {7, "cross-domain bias detection", 900, cross_domain_bias},
      {8, "MMD", 120, mmd_checks},
      {9, "saliency", 600, saliency_checks},
      {10, "end-to-end smoke", 600, end_to_end},
  };

  Context ctx{fs::absolute(work), fs::absolute(cli_path)};
  fs::create_directories(ctx.work);
  std::ofstream out(out_file);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run(ctx);
    } catch (const std::exception& e) {
      v.expect(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (seconds > c.budget_seconds) v.expect(false, "runtime over " + fmt(c.budget_seconds, 4) + " s budget");
    std::ostringstream line;
    line << (v.ok() ? "PASS" : "FAIL") << "  " << std::setw(2) << c.id << ". " << c.name << " (" << std::fixed
         << std::setprecision(1) << seconds << " s): " << v.summary();
    std::cout << line.str() << std::endl;
    out << line.str() << '\n' << std::flush;
    failures += v.ok() ? 0 : 1;
  }
  return strict && failures > 0 ? 1 : 0;
}
