#include "mmrl/records.hpp"

#include "mmrl/common.hpp"

#include <fstream>

namespace mmrl {

using nlohmann::json;

namespace {

std::int64_t count_field(const json& j, const char* key) {
  if (!j.contains(key)) return 0;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw InvalidInput(std::string("field '") + key + "' must be an integer");
  const auto n = v.get<std::int64_t>();
  if (n < 0) throw InvalidInput(std::string("field '") + key + "' is negative");
  return n;
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    f(j);
  }
}

}  // namespace

json to_json(const TweetRecord& t) {
  json j{{"tweet_id", t.tweet_id},
         {"text", t.text},
         {"retweet_count", t.retweet_count},
         {"like_count", t.like_count},
         {"author_followers", t.author_followers}};
  if (!t.linked_url.empty()) j["linked_url"] = t.linked_url;
  return j;
}

TweetRecord tweet_from_json(const json& j) {
  TweetRecord t;
  t.tweet_id = j.value("tweet_id", std::string{});
  t.text = j.value("text", std::string{});
  t.retweet_count = count_field(j, "retweet_count");
  t.like_count = count_field(j, "like_count");
  t.author_followers = count_field(j, "author_followers");
  t.linked_url = j.value("linked_url", std::string{});
  return t;
}

json to_json(const Article& a, std::optional<Split> split) {
  json tweets = json::array();
  for (const auto& t : a.tweets) {
    auto tj = to_json(t);
    tj.erase("linked_url");
    tweets.push_back(std::move(tj));
  }
  json j{{"article_id", a.article_id},
         {"url", a.url},
         {"title", a.title},
         {"image_ref", a.image_ref},
         {"domain_coding", std::string(to_string(a.domain_coding))},
         {"tweets", std::move(tweets)}};
  if (a.popularity_score) j["popularity_score"] = *a.popularity_score;
  if (a.popularity_label) j["popularity_label"] = std::string(to_string(*a.popularity_label));
  if (a.reliability_label) j["reliability_label"] = std::string(to_string(*a.reliability_label));
  if (split) j["split"] = std::string(to_string(*split));
  return j;
}

Article article_from_json(const json& j, std::optional<Split>* split) {
  Article a;
  a.article_id = j.at("article_id").get<std::string>();
  a.url = j.value("url", std::string{});
  a.title = j.value("title", std::string{});
  a.image_ref = j.value("image_ref", std::string{});
  a.domain_coding = parse_domain_coding(j.at("domain_coding").get<std::string>());
  for (const auto& tj : j.at("tweets")) {
    auto t = tweet_from_json(tj);
    t.linked_url = a.url;
    a.tweets.push_back(std::move(t));
  }
  if (a.tweets.empty()) throw InvalidInput("article '" + a.article_id + "' has no tweets");
  if (j.contains("popularity_score")) a.popularity_score = j.at("popularity_score").get<double>();
  if (j.contains("popularity_label")) {
    a.popularity_label = parse_popularity_label(j.at("popularity_label").get<std::string>());
  }
  if (j.contains("reliability_label")) {
    a.reliability_label = parse_reliability_label(j.at("reliability_label").get<std::string>());
  }
  if (split) {
    *split = j.contains("split") ? std::optional<Split>(parse_split(j.at("split").get<std::string>()))
                                 : std::nullopt;
  }
  return a;
}

std::vector<TweetRecord> read_tweets_jsonl(const std::filesystem::path& path) {
  std::vector<TweetRecord> out;
  for_each_line(path, [&](const json& j) { out.push_back(tweet_from_json(j)); });
  return out;
}

std::vector<Article> read_articles_jsonl(const std::filesystem::path& path) {
  std::vector<Article> out;
  for_each_line(path, [&](const json& j) { out.push_back(article_from_json(j)); });
  return out;
}

void write_articles_jsonl(const std::filesystem::path& path, const std::vector<Article>& articles) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  for (const auto& a : articles) out << to_json(a).dump() << '\n';
}

void write_dataset_jsonl(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  for (auto s : {Split::train, Split::val, Split::test}) {
    for (const auto& a : ds.split(s)) out << to_json(a, s).dump() << '\n';
  }
}

LabeledDataset read_dataset_jsonl(const std::filesystem::path& path) {
  LabeledDataset ds;
  for_each_line(path, [&](const json& j) {
    std::optional<Split> split;
    auto a = article_from_json(j, &split);
    if (!split) throw InvalidInput("dataset record '" + a.article_id + "' has no split");
    switch (*split) {
      case Split::train: ds.train.push_back(std::move(a)); break;
      case Split::val: ds.val.push_back(std::move(a)); break;
      case Split::test: ds.test.push_back(std::move(a)); break;
    }
  });
  return ds;
}

}  // namespace mmrl
