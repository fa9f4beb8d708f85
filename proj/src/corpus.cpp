#include "mmrl/corpus.hpp"

#include "mmrl/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace mmrl {

std::string_view to_string(DomainCoding c) {
  switch (c) {
    case DomainCoding::red: return "red";
    case DomainCoding::orange: return "orange";
    case DomainCoding::yellow: return "yellow";
    case DomainCoding::green: return "green";
    case DomainCoding::satire: return "satire";
  }
  return "?";
}

std::string_view to_string(PopularityLabel l) {
  switch (l) {
    case PopularityLabel::popular: return "popular";
    case PopularityLabel::unpopular: return "unpopular";
    case PopularityLabel::middle: return "middle";
  }
  return "?";
}

std::string_view to_string(ReliabilityLabel l) {
  switch (l) {
    case ReliabilityLabel::reliable: return "reliable";
    case ReliabilityLabel::unreliable: return "unreliable";
    case ReliabilityLabel::excluded: return "excluded";
  }
  return "?";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

DomainCoding parse_domain_coding(std::string_view s) {
  for (auto c : {DomainCoding::red, DomainCoding::orange, DomainCoding::yellow, DomainCoding::green,
                 DomainCoding::satire}) {
    if (to_string(c) == s) return c;
  }
  throw InvalidInput("unknown domain coding '" + std::string(s) + "'");
}

PopularityLabel parse_popularity_label(std::string_view s) {
  for (auto l : {PopularityLabel::popular, PopularityLabel::unpopular, PopularityLabel::middle}) {
    if (to_string(l) == s) return l;
  }
  throw InvalidInput("unknown popularity label '" + std::string(s) + "'");
}

ReliabilityLabel parse_reliability_label(std::string_view s) {
  for (auto l : {ReliabilityLabel::reliable, ReliabilityLabel::unreliable, ReliabilityLabel::excluded}) {
    if (to_string(l) == s) return l;
  }
  throw InvalidInput("unknown reliability label '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  for (auto v : {Split::train, Split::val, Split::test}) {
    if (to_string(v) == s) return v;
  }
  throw InvalidInput("unknown split '" + std::string(s) + "'");
}

const std::vector<Article>& LabeledDataset::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return test;
}

ReliabilityLabel reliability_for(DomainCoding coding) {
  switch (coding) {
    case DomainCoding::green: return ReliabilityLabel::reliable;
    case DomainCoding::red:
    case DomainCoding::orange: return ReliabilityLabel::unreliable;
    default: return ReliabilityLabel::excluded;
  }
}

double popularity_score(std::span<const TweetRecord> tweets, double lambda) {
  if (tweets.empty()) throw InvalidInput("popularity_score needs at least one tweet");
  if (!(lambda > 0.0)) throw InvalidInput("lambda must be positive");
  double engagement = 0.0;
  double audience = 0.0;
  for (const auto& t : tweets) {
    if (t.retweet_count < 0 || t.like_count < 0 || t.author_followers < 0) {
      throw InvalidInput("negative count in tweet '" + t.tweet_id + "'");
    }
    engagement += static_cast<double>(t.retweet_count) + static_cast<double>(t.like_count);
    audience += static_cast<double>(t.author_followers);
  }
  return engagement / (audience + lambda);
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidInput("ks_statistic needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double audience_size(const Article& article) {
  double total = 0.0;
  for (const auto& t : article.tweets) total += static_cast<double>(t.author_followers);
  return total;
}

namespace {

// Indices ordered by (score desc, article_id asc).
std::vector<std::size_t> rank_order(std::span<const Article> articles, std::span<const double> scores) {
  std::vector<std::size_t> order(articles.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (scores[x] != scores[y]) return scores[x] > scores[y];
    return articles[x].article_id < articles[y].article_id;
  });
  return order;
}

}  // namespace

double tune_lambda(std::span<const double> candidates, std::span<const Article> articles,
                   double quantile) {
  if (candidates.size() < 2) {
    if (candidates.size() == 1 && candidates[0] > 0.0) return candidates[0];
    throw InvalidInput("tune_lambda needs at least two candidates");
  }
  std::vector<double> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());

  std::vector<double> log_audience(articles.size());
  for (std::size_t i = 0; i < articles.size(); ++i) {
    log_audience[i] = std::log1p(audience_size(articles[i]));
  }

  std::optional<double> best;
  double best_d = 0.0;
  for (double lambda : sorted) {
    if (!(lambda > 0.0)) throw InvalidInput("lambda candidates must be positive");
    std::vector<double> scores(articles.size());
    for (std::size_t i = 0; i < articles.size(); ++i) {
      scores[i] = popularity_score(articles[i].tweets, lambda);
    }
    std::vector<double> engaged;
    for (std::size_t i = 0; i < articles.size(); ++i) {
      if (scores[i] > 0.0) engaged.push_back(log_audience[i]);
    }
    const auto top_n = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(articles.size())));
    if (engaged.empty() || top_n == 0) continue;
    const auto order = rank_order(articles, scores);
    std::vector<double> top;
    for (std::size_t k = 0; k < top_n; ++k) top.push_back(log_audience[order[k]]);
    const double d = ks_statistic(top, engaged);
    if (!best || d < best_d) {
      best = lambda;
      best_d = d;
    }
  }
  if (!best) throw NoValidCandidate("no lambda candidate yields an article with positive score");
  return *best;
}

std::vector<Article> assign_popularity_labels(std::vector<Article> articles, double quantile) {
  if (!(quantile > 0.0 && quantile <= 0.5)) throw InvalidInput("quantile must lie in (0, 0.5]");
  const auto n = articles.size();
  if (static_cast<double>(n) < 2.0 / quantile - 1e-9) {
    throw InsufficientData("need at least 2/q articles for quantile labeling");
  }
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!articles[i].popularity_score) {
      throw InvalidInput("article '" + articles[i].article_id + "' has no popularity score");
    }
    scores[i] = *articles[i].popularity_score;
  }
  const auto order = rank_order(articles, scores);
  const auto k = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(n) + 1e-9));
  for (std::size_t r = 0; r < n; ++r) {
    auto& a = articles[order[r]];
    if (r < k) {
      a.popularity_label = PopularityLabel::popular;
    } else if (r >= n - k) {
      a.popularity_label = PopularityLabel::unpopular;
    } else {
      a.popularity_label = PopularityLabel::middle;
    }
  }
  return articles;
}

std::array<std::size_t, 3> split_counts(std::size_t n, double train, double val) {
  const std::array<double, 3> frac{train, val, 1.0 - train - val};
  std::array<std::size_t, 3> count{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double ideal = frac[s] * static_cast<double>(n);
    count[s] = static_cast<std::size_t>(std::floor(ideal + 1e-9));
    rem[s] = ideal - static_cast<double>(count[s]);
    assigned += count[s];
  }
  while (assigned < n) {
    const auto s = static_cast<std::size_t>(std::max_element(rem.begin(), rem.end()) - rem.begin());
    ++count[s];
    rem[s] = -1.0;
    ++assigned;
  }
  return count;
}

std::vector<Split> split_pattern(const std::array<std::size_t, 3>& counts) {
  const std::size_t n = counts[0] + counts[1] + counts[2];
  std::array<std::size_t, 3> used{0, 0, 0};
  std::vector<Split> out;
  out.reserve(n);
  for (std::size_t k = 1; k <= n; ++k) {
    std::size_t pick = 3;
    double best = -1e300;
    for (std::size_t s = 0; s < 3; ++s) {
      if (used[s] == counts[s]) continue;
      const double deficit = static_cast<double>(counts[s]) * static_cast<double>(k) / static_cast<double>(n) -
                             static_cast<double>(used[s]);
      if (deficit > best + 1e-12) {
        best = deficit;
        pick = s;
      }
    }
    ++used[pick];
    out.push_back(static_cast<Split>(pick));
  }
  return out;
}

LabeledDataset build_dataset(std::vector<Article> articles, double lambda, double quantile,
                             std::uint64_t seed, BuildReport* report) {
  BuildReport local;
  local.input = articles.size();

  std::vector<Article> usable;
  usable.reserve(articles.size());
  for (auto& a : articles) {
    if (a.title.empty() || a.image_ref.empty()) {
      ++local.missing_title_or_image;
      continue;
    }
    a.popularity_score = popularity_score(a.tweets, lambda);
    usable.push_back(std::move(a));
  }

  // Quantiles are taken before reliability filtering.
  auto labeled = assign_popularity_labels(std::move(usable), quantile);

  std::vector<Article> reliable, unreliable;
  for (auto& a : labeled) {
    a.reliability_label = reliability_for(a.domain_coding);
    if (a.popularity_label == PopularityLabel::middle) {
      ++local.middle;
      continue;
    }
    if (a.reliability_label == ReliabilityLabel::excluded) {
      ++local.excluded;
      continue;
    }
    (a.reliability_label == ReliabilityLabel::reliable ? reliable : unreliable).push_back(std::move(a));
  }
  if (reliable.empty() || unreliable.empty()) {
    throw InsufficientData("a reliability class is empty after filtering");
  }

  auto by_id = [](const Article& x, const Article& y) { return x.article_id < y.article_id; };
  std::sort(reliable.begin(), reliable.end(), by_id);
  std::sort(unreliable.begin(), unreliable.end(), by_id);

  std::mt19937_64 rng(seed);
  auto& majority = reliable.size() >= unreliable.size() ? reliable : unreliable;
  const auto minority_size = std::min(reliable.size(), unreliable.size());
  std::shuffle(majority.begin(), majority.end(), rng);
  local.undersampled = majority.size() - minority_size;
  majority.resize(minority_size);

  // Global split sizes are apportioned over both classes, then halved per
  // class so every split is balanced on reliability within one article.
  const auto total = split_counts(2 * minority_size);
  std::array<std::size_t, 3> reliable_counts{};
  std::array<std::size_t, 3> unreliable_counts{};
  bool extra_to_reliable = true;
  for (std::size_t s = 0; s < 3; ++s) {
    reliable_counts[s] = total[s] / 2;
    if (total[s] % 2 == 1) {
      if (extra_to_reliable) ++reliable_counts[s];
      extra_to_reliable = !extra_to_reliable;
    }
    unreliable_counts[s] = total[s] - reliable_counts[s];
  }

  std::size_t popular_count = 0;
  for (const auto* group : {&reliable, &unreliable}) {
    for (const auto& a : *group) popular_count += a.popularity_label == PopularityLabel::popular ? 1 : 0;
  }
  if (popular_count == 0 || popular_count == 2 * minority_size) {
    throw InsufficientData("a popularity class is empty after filtering");
  }

  LabeledDataset ds;
  ds.seed = seed;
  ds.lambda_used = lambda;
  for (auto* group : {&reliable, &unreliable}) {
    // Popularity strata laid out back to back so the pattern stratifies them.
    std::vector<Article> popular, unpopular;
    for (auto& a : *group) {
      (a.popularity_label == PopularityLabel::popular ? popular : unpopular).push_back(std::move(a));
    }
    std::vector<Article> ordered;
    for (auto* s : {&popular, &unpopular}) {
      std::sort(s->begin(), s->end(), by_id);
      std::shuffle(s->begin(), s->end(), rng);
      for (auto& a : *s) ordered.push_back(std::move(a));
    }
    const auto pattern = split_pattern(group == &reliable ? reliable_counts : unreliable_counts);
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      switch (pattern[i]) {
        case Split::train: ds.train.push_back(std::move(ordered[i])); break;
        case Split::val: ds.val.push_back(std::move(ordered[i])); break;
        case Split::test: ds.test.push_back(std::move(ordered[i])); break;
      }
    }
  }
  if (report) *report = local;
  return ds;
}

}  // namespace mmrl
