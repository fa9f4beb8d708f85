#pragma once

#include "mmrl/corpus.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <vector>

namespace mmrl {

nlohmann::json to_json(const TweetRecord& t);
TweetRecord tweet_from_json(const nlohmann::json& j);

/// Corpus-format record; labeled fields are emitted only when set, plus the
/// split when given.
nlohmann::json to_json(const Article& a, std::optional<Split> split = std::nullopt);
Article article_from_json(const nlohmann::json& j, std::optional<Split>* split = nullptr);

std::vector<TweetRecord> read_tweets_jsonl(const std::filesystem::path& path);
std::vector<Article> read_articles_jsonl(const std::filesystem::path& path);
void write_articles_jsonl(const std::filesystem::path& path, const std::vector<Article>& articles);

void write_dataset_jsonl(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset read_dataset_jsonl(const std::filesystem::path& path);

}  // namespace mmrl
