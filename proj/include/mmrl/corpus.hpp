#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmrl {

struct TweetRecord {
  std::string tweet_id;
  std::string text;
  std::int64_t retweet_count = 0;
  std::int64_t like_count = 0;
  std::int64_t author_followers = 0;
  std::string linked_url;
};

enum class DomainCoding { red, orange, yellow, green, satire };
enum class PopularityLabel { popular, unpopular, middle };
enum class ReliabilityLabel { reliable, unreliable, excluded };
enum class Split { train, val, test };

std::string_view to_string(DomainCoding c);
std::string_view to_string(PopularityLabel l);
std::string_view to_string(ReliabilityLabel l);
std::string_view to_string(Split s);
DomainCoding parse_domain_coding(std::string_view s);
PopularityLabel parse_popularity_label(std::string_view s);
ReliabilityLabel parse_reliability_label(std::string_view s);
Split parse_split(std::string_view s);

struct Article {
  std::string article_id;
  std::string url;
  std::string title;
  std::string image_ref;
  std::vector<TweetRecord> tweets;
  DomainCoding domain_coding = DomainCoding::green;
  std::optional<double> popularity_score;
  std::optional<PopularityLabel> popularity_label;
  std::optional<ReliabilityLabel> reliability_label;
};

struct LabeledDataset {
  std::vector<Article> train;
  std::vector<Article> val;
  std::vector<Article> test;
  std::uint64_t seed = 0;
  double lambda_used = 1e4;

  const std::vector<Article>& split(Split s) const;
  std::size_t size() const { return train.size() + val.size() + test.size(); }
};

/// green -> reliable, red/orange -> unreliable, yellow/satire -> excluded.
ReliabilityLabel reliability_for(DomainCoding coding);

inline constexpr double kDefaultLambda = 1e4;
inline constexpr double kDefaultQuantile = 0.2;

/// Engagement (retweets + likes) over smoothed audience size (followers + lambda).
double popularity_score(std::span<const TweetRecord> tweets, double lambda);

/// Two-sample Kolmogorov-Smirnov statistic sup|F_a - F_b|.
double ks_statistic(std::vector<double> a, std::vector<double> b);

/// Sum of author followers over an article's tweets.
double audience_size(const Article& article);

/// Picks the candidate whose top-quantile audience distribution is closest
/// (KS on log1p audience) to that of all articles with positive score.
/// Ties go to the smaller lambda.
double tune_lambda(std::span<const double> candidates, std::span<const Article> articles,
                   double quantile = kDefaultQuantile);

/// Labels the top floor(q*n) articles popular and the bottom floor(q*n)
/// unpopular, ranking by (score desc, article_id asc).
std::vector<Article> assign_popularity_labels(std::vector<Article> articles, double quantile);

struct BuildReport {
  std::size_t input = 0;
  std::size_t missing_title_or_image = 0;
  std::size_t middle = 0;
  std::size_t excluded = 0;
  std::size_t undersampled = 0;
};

LabeledDataset build_dataset(std::vector<Article> articles, double lambda, double quantile,
                             std::uint64_t seed, BuildReport* report = nullptr);

/// Largest-remainder apportionment of n items into train/val/test.
std::array<std::size_t, 3> split_counts(std::size_t n, double train = 0.7, double val = 0.1);

/// Low-discrepancy sequence of splits with exactly the given counts; every
/// prefix stays proportional, so contiguous strata are split proportionally.
std::vector<Split> split_pattern(const std::array<std::size_t, 3>& counts);

}  // namespace mmrl
