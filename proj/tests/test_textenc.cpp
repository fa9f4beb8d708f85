#include "mmrl/common.hpp"
#include "mmrl/textenc.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace mmrl;

TEST(Tokenize, Example) {
  EXPECT_EQ(tokenize("Stay home! #COVID19"), (Tokens{"stay", "home", "!", "#covid19"}));
  EXPECT_TRUE(tokenize("").empty());
}

TEST(Tokenize, UrlsMentionsEmoji) {
  const auto t = tokenize("Read https://x.co/AbC now @Someone \xF0\x9F\x98\xB7\xF0\x9F\x87\xBA\xF0\x9F\x87\xB8");
  EXPECT_EQ(t, (Tokens{"read", "https://x.co/abc", "now", "@someone", "\xF0\x9F\x98\xB7", "\xF0\x9F\x87\xBA\xF0\x9F\x87\xB8"}));
}

TEST(Tokenize, ZwjSequenceIsOneToken) {
  const std::string family = "\xF0\x9F\x91\xA8\xE2\x80\x8D\xF0\x9F\x91\xA9\xE2\x80\x8D\xF0\x9F\x91\xA7";
  EXPECT_EQ(tokenize("hi " + family), (Tokens{"hi", family}));
}

TEST(TweetTokens, SeparatorBetweenTweets) {
  Article a;
  a.tweets = {{"1", "One two", 5, 0, 1, ""}, {"2", "three", 1, 0, 1, ""}};
  const auto t = tweet_tokens(a, 2);
  EXPECT_EQ(t, (Tokens{"one", "two", std::string(kTweetSeparator), "three"}));
}

TEST(Word2Vec, Shape) {
  std::vector<Tokens> corpus{{"solo", "solo"}, {"solo"}};
  const auto table = train_word_embeddings(corpus, SpaceTag::title);
  EXPECT_EQ(table.size(), 2);
  EXPECT_EQ(table.dim(), 128);
  EXPECT_TRUE(table.vectors().row(0).isZero());
  EXPECT_EQ(table.index_of("unknown"), 0);
  EXPECT_EQ(table.index_of("solo"), 1);
}

TEST(Word2Vec, SharedContextGeometry) {
  std::vector<Tokens> corpus;
  const Tokens left{"the", "of", "and", "to", "in", "on"};
  const Tokens right{"red", "blue", "green", "pink", "gray", "teal"};
  const char* centre[] = {"cat", "dog", "car"};
  for (int i = 0; i < 600; ++i) {
    const int w = i % 3;
    const Tokens& ctx = w == 2 ? right : left;
    Tokens s;
    for (int j = 0; j < 6; ++j) s.push_back(ctx[static_cast<std::size_t>((i * 5 + j) % 6)]);
    s.insert(s.begin() + 3, centre[w]);
    corpus.push_back(s);
  }
  const auto table = train_word_embeddings(corpus, SpaceTag::tweet);
  auto cosine = [&](const char* a, const char* b) {
    const auto va = table.row(table.index_of(a));
    const auto vb = table.row(table.index_of(b));
    return va.dot(vb) / (va.norm() * vb.norm());
  };
  EXPECT_GT(cosine("cat", "dog"), cosine("cat", "car") + 0.2);
}

TEST(Word2Vec, Deterministic) {
  std::vector<Tokens> corpus{{"a", "b", "c", "a"}, {"b", "c", "a", "b"}};
  const auto t1 = train_word_embeddings(corpus, SpaceTag::title);
  const auto t2 = train_word_embeddings(corpus, SpaceTag::title);
  EXPECT_TRUE(t1.vectors() == t2.vectors());
}

TEST(Encode, LookupAndPadding) {
  std::vector<Tokens> corpus{{"a", "b", "c"}, {"a", "b", "c"}};
  const auto table = train_word_embeddings(corpus, SpaceTag::title);
  const auto seq = encode_sequence({"a", "b", "c"}, table, 5);
  EXPECT_EQ(seq.length, 3);
  ASSERT_EQ(seq.rows.rows(), 5);
  EXPECT_TRUE(seq.rows.row(0) == table.row(table.index_of("a")));
  EXPECT_TRUE(seq.rows.row(2) == table.row(table.index_of("c")));
  EXPECT_TRUE(seq.rows.bottomRows(2).isZero());
  const auto swapped = encode_sequence({"b", "a"}, table, 5);
  EXPECT_TRUE(swapped.rows.row(0) == seq.rows.row(1));
  const auto empty = encode_sequence({}, table, 4);
  EXPECT_EQ(empty.length, 0);
  EXPECT_TRUE(empty.rows.isZero());
}

TEST(Encode, MaxLength) {
  std::vector<Index> lengths;
  for (Index i = 1; i <= 100; ++i) lengths.push_back(i);
  EXPECT_EQ(choose_max_length(lengths, true), 100);
  EXPECT_LE(choose_max_length(lengths), 100);
  EXPECT_GE(choose_max_length(lengths), 99);
}

TEST(Embedding, SaveLoad) {
  std::vector<Tokens> corpus{{"x", "y"}, {"x", "y"}};
  const auto table = train_word_embeddings(corpus, SpaceTag::tweet);
  const auto path = std::filesystem::temp_directory_path() / "mmrl_emb_test.emb";
  table.save(path);
  const auto back = EmbeddingTable::load(path);
  EXPECT_EQ(back.tokens(), table.tokens());
  EXPECT_TRUE(back.vectors() == table.vectors());
  EXPECT_EQ(back.space(), SpaceTag::tweet);
  std::filesystem::remove(path);
}

TEST(Embedding, DocumentMean) {
  std::vector<Tokens> corpus{{"x", "y"}, {"x", "y"}};
  const auto table = train_word_embeddings(corpus, SpaceTag::tweet);
  const auto doc = document_embedding({"x", "y", "zzz"}, table);
  const Vec<double> expect = 0.5 * (table.row(1) + table.row(2)).transpose().cast<double>();
  EXPECT_TRUE(doc.isApprox(expect, 1e-6));
}
