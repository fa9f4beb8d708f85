#include "mmrl/common.hpp"
#include "mmrl/corpus.hpp"
#include "mmrl/records.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace mmrl;

namespace {

Article scored(const std::string& id, double score, DomainCoding coding = DomainCoding::green) {
  Article a;
  a.article_id = id;
  a.url = "https://x.example/" + id;
  a.title = "t";
  a.image_ref = "i.png";
  a.domain_coding = coding;
  a.tweets.push_back({id + "-0", "text", 0, 0, 10, a.url});
  a.popularity_score = score;
  return a;
}

// Article whose score under lambda = 1e4 is engagement / (1000 + 1e4).
Article with_engagement(const std::string& id, std::int64_t engagement, DomainCoding coding) {
  Article a = scored(id, 0.0, coding);
  a.popularity_score.reset();
  a.tweets[0].like_count = engagement;
  a.tweets[0].author_followers = 1000;
  return a;
}

}  // namespace

TEST(Popularity, ZeroEngagement) {
  std::vector<TweetRecord> t{{"1", "", 0, 0, 500, ""}};
  EXPECT_EQ(popularity_score(t, 1e4), 0.0);
}

TEST(Popularity, HandExample) {
  std::vector<TweetRecord> t{{"1", "", 10, 20, 1000, ""}, {"2", "", 0, 5, 500, ""}, {"3", "", 3, 2, 100000, ""}};
  EXPECT_DOUBLE_EQ(popularity_score(t, 1e4), 40.0 / 111500.0);
  EXPECT_NEAR(popularity_score(t, 1e4), 3.587e-4, 1e-7);
}

TEST(Popularity, RejectsBadInput) {
  std::vector<TweetRecord> none;
  EXPECT_THROW(popularity_score(none, 1e4), InvalidInput);
  std::vector<TweetRecord> t{{"1", "", 1, 1, 1, ""}};
  EXPECT_THROW(popularity_score(t, 0.0), InvalidInput);
}

TEST(Popularity, Monotone) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int64_t> count(0, 1000);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TweetRecord> t(3);
    for (auto& r : t) r = {"x", "", count(rng), count(rng), count(rng), ""};
    const double base = popularity_score(t, 1e4);
    auto more = t;
    more[0].like_count += 1 + count(rng);
    EXPECT_GT(popularity_score(more, 1e4), base);
    auto bigger = t;
    bigger[1].author_followers += 1 + count(rng);
    EXPECT_LE(popularity_score(bigger, 1e4), base);
  }
}

TEST(Lambda, SingleCandidate) {
  std::vector<Article> arts{scored("a", 0.1)};
  std::vector<double> c{1e4};
  EXPECT_EQ(tune_lambda(c, arts), 1e4);
}

TEST(Lambda, SelectsKsMinimiser) {
  std::mt19937_64 rng(5);
  std::lognormal_distribution<double> followers(8.0, 2.0);
  std::uniform_int_distribution<std::int64_t> engagement(0, 200);
  std::vector<Article> arts;
  for (int i = 0; i < 500; ++i) {
    Article a = scored("a" + std::to_string(i), 0.0);
    a.tweets[0].author_followers = static_cast<std::int64_t>(followers(rng));
    a.tweets[0].like_count = engagement(rng);
    arts.push_back(a);
  }
  auto ks_at = [&](double lambda) {
    std::vector<std::pair<double, std::size_t>> ranked;
    std::vector<double> engaged;
    for (std::size_t i = 0; i < arts.size(); ++i) {
      const double p = popularity_score(arts[i].tweets, lambda);
      ranked.emplace_back(-p, i);
      if (p > 0.0) engaged.push_back(std::log1p(audience_size(arts[i])));
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<double> top;
    for (std::size_t k = 0; k < arts.size() / 5; ++k) top.push_back(std::log1p(audience_size(arts[ranked[k].second])));
    return ks_statistic(top, engaged);
  };
  std::vector<double> candidates{1e2, 1e3, 1e4, 1e5, 1e6};
  const double chosen = tune_lambda(candidates, arts);
  EXPECT_LT(ks_at(chosen), ks_at(1.0));
  for (double c : candidates) EXPECT_LE(ks_at(chosen), ks_at(c));
}

TEST(Labels, SortOracleSmall) {
  std::vector<Article> arts;
  for (int i = 0; i < 10; ++i) arts.push_back(scored("id" + std::to_string(i), i));
  const auto out = assign_popularity_labels(arts, 0.2);
  std::set<std::string> popular, unpopular;
  for (const auto& a : out) {
    if (a.popularity_label == PopularityLabel::popular) popular.insert(a.article_id);
    if (a.popularity_label == PopularityLabel::unpopular) unpopular.insert(a.article_id);
  }
  EXPECT_EQ(popular, (std::set<std::string>{"id9", "id8"}));
  EXPECT_EQ(unpopular, (std::set<std::string>{"id0", "id1"}));
}

TEST(Labels, TiesBrokenById) {
  std::vector<Article> arts;
  for (int i = 0; i < 10; ++i) arts.push_back(scored("id" + std::to_string(i), 1.0));
  const auto out = assign_popularity_labels(arts, 0.2);
  std::map<std::string, PopularityLabel> by_id;
  for (const auto& a : out) by_id[a.article_id] = *a.popularity_label;
  EXPECT_EQ(by_id["id0"], PopularityLabel::popular);
  EXPECT_EQ(by_id["id1"], PopularityLabel::popular);
  EXPECT_EQ(by_id["id8"], PopularityLabel::unpopular);
  EXPECT_EQ(by_id["id9"], PopularityLabel::unpopular);
}

TEST(Labels, TooFewArticles) {
  std::vector<Article> arts{scored("a", 1.0), scored("b", 2.0), scored("c", 3.0)};
  EXPECT_THROW(assign_popularity_labels(arts, 0.2), InsufficientData);
}

TEST(Dataset, HundredArticleExample) {
  std::vector<Article> arts;
  for (int i = 0; i < 100; ++i) {
    const auto coding = i % 2 == 0 ? DomainCoding::green : DomainCoding::red;
    arts.push_back(with_engagement("a" + std::to_string(1000 + i), i % 4 < 2 ? 5000 : 0, coding));
  }
  BuildReport report;
  const auto ds = build_dataset(arts, 1e4, 0.2, 11, &report);
  EXPECT_EQ(ds.train.size(), 28u);
  EXPECT_EQ(ds.val.size(), 4u);
  EXPECT_EQ(ds.test.size(), 8u);
  EXPECT_EQ(report.middle, 60u);
}

TEST(Dataset, AllGreenIsInsufficient) {
  std::vector<Article> arts;
  for (int i = 0; i < 50; ++i) arts.push_back(with_engagement("g" + std::to_string(i), i, DomainCoding::green));
  EXPECT_THROW(build_dataset(arts, 1e4, 0.2, 1), InsufficientData);
}

TEST(Dataset, ExcludedAndBalanced) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::int64_t> eng(0, 3000);
  std::vector<Article> arts;
  const std::array<DomainCoding, 5> codings{DomainCoding::green, DomainCoding::green, DomainCoding::red,
                                            DomainCoding::yellow, DomainCoding::satire};
  for (int i = 0; i < 1000; ++i) arts.push_back(with_engagement("a" + std::to_string(i), eng(rng), codings[i % 5]));
  const auto ds = build_dataset(arts, 1e4, 0.2, 2);
  for (auto s : {Split::train, Split::val, Split::test}) {
    int rel = 0, unrel = 0;
    for (const auto& a : ds.split(s)) {
      ASSERT_TRUE(a.popularity_label && a.reliability_label);
      EXPECT_NE(*a.popularity_label, PopularityLabel::middle);
      EXPECT_NE(*a.reliability_label, ReliabilityLabel::excluded);
      (*a.reliability_label == ReliabilityLabel::reliable ? rel : unrel)++;
    }
    EXPECT_LE(std::abs(rel - unrel), 1);
  }
  const auto total = ds.size();
  const auto expected = split_counts(total);
  EXPECT_LE(std::abs(static_cast<long>(ds.train.size()) - static_cast<long>(expected[0])), 1);
  EXPECT_LE(std::abs(static_cast<long>(ds.val.size()) - static_cast<long>(expected[1])), 1);
  EXPECT_LE(std::abs(static_cast<long>(ds.test.size()) - static_cast<long>(expected[2])), 1);
}

TEST(Dataset, ByteIdenticalUnderSeed) {
  std::vector<Article> arts;
  for (int i = 0; i < 200; ++i) {
    arts.push_back(with_engagement("a" + std::to_string(i), (i * 37) % 101, i % 3 ? DomainCoding::red : DomainCoding::green));
  }
  const auto dir = std::filesystem::temp_directory_path() / "mmrl_ds_test";
  std::filesystem::create_directories(dir);
  write_dataset_jsonl(dir / "a.jsonl", build_dataset(arts, 1e4, 0.2, 5));
  auto shuffled = arts;
  std::reverse(shuffled.begin(), shuffled.end());
  write_dataset_jsonl(dir / "b.jsonl", build_dataset(shuffled, 1e4, 0.2, 5));
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  const auto back = read_dataset_jsonl(dir / "a.jsonl");
  EXPECT_EQ(back.size(), build_dataset(arts, 1e4, 0.2, 5).size());
  std::filesystem::remove_all(dir);
}

TEST(Dataset, SplitCountsLargestRemainder) {
  const auto c = split_counts(40);
  EXPECT_EQ(c, (std::array<std::size_t, 3>{28, 4, 8}));
  const auto d = split_counts(11);
  EXPECT_EQ(d[0] + d[1] + d[2], 11u);
}

TEST(Ks, Statistic) {
  EXPECT_DOUBLE_EQ(ks_statistic({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(ks_statistic({1, 2}, {3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(ks_statistic({1, 2, 3, 4}, {3, 4, 5, 6}), 0.5);
}

TEST(Reliability, Mapping) {
  EXPECT_EQ(reliability_for(DomainCoding::green), ReliabilityLabel::reliable);
  EXPECT_EQ(reliability_for(DomainCoding::red), ReliabilityLabel::unreliable);
  EXPECT_EQ(reliability_for(DomainCoding::orange), ReliabilityLabel::unreliable);
  EXPECT_EQ(reliability_for(DomainCoding::yellow), ReliabilityLabel::excluded);
  EXPECT_EQ(reliability_for(DomainCoding::satire), ReliabilityLabel::excluded);
}

TEST(Records, RoundTrip) {
  Article a = scored("abc", 0.25, DomainCoding::orange);
  a.popularity_label = PopularityLabel::popular;
  a.reliability_label = ReliabilityLabel::unreliable;
  std::optional<Split> split;
  const auto back = article_from_json(to_json(a, Split::val), &split);
  EXPECT_EQ(back.article_id, "abc");
  EXPECT_EQ(back.domain_coding, DomainCoding::orange);
  EXPECT_EQ(back.popularity_label, PopularityLabel::popular);
  EXPECT_EQ(split, Split::val);
  auto bad = to_json(a);
  bad["tweets"][0]["like_count"] = -1;
  EXPECT_THROW(article_from_json(bad), InvalidInput);
}
