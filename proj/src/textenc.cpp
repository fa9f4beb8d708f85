#include "mmrl/textenc.hpp"

#include "mmrl/container.hpp"
#include "mmrl/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace mmrl {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t bytes;
};

CodePoint decode_utf8(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> char32_t {
    if (i + k >= s.size()) return 0xFFFD;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : 0xFFFD;
  };
  if (c < 0x80) return {c, 1};
  if ((c & 0xE0) == 0xC0 && i + 1 < s.size()) return {((c & 0x1Fu) << 6) | cont(1), 2};
  if ((c & 0xF0) == 0xE0 && i + 2 < s.size()) return {((c & 0x0Fu) << 12) | (cont(1) << 6) | cont(2), 3};
  if ((c & 0xF8) == 0xF0 && i + 3 < s.size()) {
    return {((c & 0x07u) << 18) | (cont(1) << 12) | (cont(2) << 6) | cont(3), 4};
  }
  return {0xFFFD, 1};
}

bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' || c == 0xA0 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x202F || c == 0x205F || c == 0x3000;
}

bool is_emoji(char32_t c) {
  return (c >= 0x1F000 && c <= 0x1FAFF) || (c >= 0x2600 && c <= 0x27BF) || (c >= 0x2B00 && c <= 0x2BFF) ||
         (c >= 0x2300 && c <= 0x23FF) || c == 0x3030 || c == 0x303D || c == 0x00A9 || c == 0x00AE;
}

bool is_emoji_modifier(char32_t c) {
  return c == 0xFE0F || c == 0x20E3 || (c >= 0x1F3FB && c <= 0x1F3FF) || (c >= 0xE0020 && c <= 0xE007F);
}

bool is_regional_indicator(char32_t c) { return c >= 0x1F1E6 && c <= 0x1F1FF; }

bool is_punct(char32_t c) {
  if (c < 0x80) return std::ispunct(static_cast<int>(c)) != 0;
  return (c >= 0x2010 && c <= 0x206F) || (c >= 0x00A1 && c <= 0x00BF) || c == 0x00D7 || c == 0x00F7 ||
         (c >= 0x3001 && c <= 0x303F) || (c >= 0xFF01 && c <= 0xFF0F);
}

bool is_word(char32_t c) { return !is_space(c) && !is_emoji(c) && !is_punct(c) && !is_emoji_modifier(c); }

bool starts_with_icase(std::string_view s, std::size_t i, std::string_view prefix) {
  if (s.size() - i < prefix.size()) return false;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    if (std::tolower(static_cast<unsigned char>(s[i + k])) != prefix[k]) return false;
  }
  return true;
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return out;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  const auto n = text.size();
  while (i < n) {
    const auto cp = decode_utf8(text, i);
    if (is_space(cp.value)) {
      i += cp.bytes;
      continue;
    }
    // URLs run to the next whitespace, minus trailing punctuation.
    if (starts_with_icase(text, i, "http://") || starts_with_icase(text, i, "https://") ||
        starts_with_icase(text, i, "www.")) {
      std::size_t j = i;
      while (j < n) {
        const auto c = decode_utf8(text, j);
        if (is_space(c.value)) break;
        j += c.bytes;
      }
      std::size_t end = j;
      while (end > i && std::string_view(".,;:!?)]}'\"").find(text[end - 1]) != std::string_view::npos) --end;
      out.push_back(ascii_lower(text.substr(i, end - i)));
      for (std::size_t k = end; k < j; ++k) out.emplace_back(1, text[k]);
      i = j;
      continue;
    }
    if ((cp.value == '#' || cp.value == '@') && i + 1 < n) {
      const auto next = decode_utf8(text, i + 1);
      if (is_word(next.value)) {
        std::size_t j = i + 1;
        while (j < n) {
          const auto c = decode_utf8(text, j);
          if (!is_word(c.value)) break;
          j += c.bytes;
        }
        out.push_back(ascii_lower(text.substr(i, j - i)));
        i = j;
        continue;
      }
    }
    if (is_emoji(cp.value) || is_regional_indicator(cp.value)) {
      std::size_t j = i + cp.bytes;
      if (is_regional_indicator(cp.value) && j < n && is_regional_indicator(decode_utf8(text, j).value)) {
        j += decode_utf8(text, j).bytes;
      }
      // Absorb modifiers and zero-width-joined continuations.
      while (j < n) {
        const auto c = decode_utf8(text, j);
        if (is_emoji_modifier(c.value)) {
          j += c.bytes;
        } else if (c.value == 0x200D && j + c.bytes < n && is_emoji(decode_utf8(text, j + c.bytes).value)) {
          j += c.bytes + decode_utf8(text, j + c.bytes).bytes;
        } else {
          break;
        }
      }
      out.emplace_back(text.substr(i, j - i));
      i = j;
      continue;
    }
    if (is_punct(cp.value) || is_emoji_modifier(cp.value) || cp.value == 0x200D) {
      if (!is_emoji_modifier(cp.value) && cp.value != 0x200D) out.emplace_back(text.substr(i, cp.bytes));
      i += cp.bytes;
      continue;
    }
    std::size_t j = i;
    while (j < n) {
      const auto c = decode_utf8(text, j);
      if (!is_word(c.value)) break;
      j += c.bytes;
    }
    out.push_back(ascii_lower(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

Tokens title_tokens(const Article& article) { return tokenize(article.title); }

Tokens tweet_tokens(const Article& article, std::size_t k) {
  Tokens out;
  bool first = true;
  for (const auto& text : select_top_tweets(article, k)) {
    if (!first) out.emplace_back(kTweetSeparator);
    first = false;
    auto toks = tokenize(text);
    out.insert(out.end(), toks.begin(), toks.end());
  }
  return out;
}

std::string_view to_string(SpaceTag tag) { return tag == SpaceTag::title ? "title" : "tweet"; }

EmbeddingTable::EmbeddingTable(std::vector<std::string> tokens, RowMat<float> vectors, SpaceTag tag)
    : tokens_(std::move(tokens)), vectors_(std::move(vectors)), tag_(tag) {
  if (static_cast<Index>(tokens_.size()) != vectors_.rows()) {
    throw InvalidInput("embedding table vocab/row count mismatch");
  }
  if (tokens_.empty() || tokens_[0] != kOovToken) throw InvalidInput("embedding table must start with the OOV token");
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<Index>(i));
  vectors_.row(0).setZero();
}

Index EmbeddingTable::index_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : it->second;
}

void EmbeddingTable::save(const std::filesystem::path& path) const {
  TensorFile file;
  file.meta = {{"space_tag", std::string(to_string(tag_))}, {"dim", dim()}, {"vocab", tokens_}};
  file.tensors.push_back(NamedTensor::from("vectors", vectors_));
  write_tensor_file(path, kEmbeddingMagic, file);
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  const auto file = read_tensor_file(path, kEmbeddingMagic);
  const auto& t = file.at("vectors");
  RowMat<float> vectors = Eigen::Map<const RowMat<float>>(t.data.data(), t.rows, t.cols);
  const auto tag = file.meta.at("space_tag").get<std::string>() == "title" ? SpaceTag::title : SpaceTag::tweet;
  return EmbeddingTable(file.meta.at("vocab").get<std::vector<std::string>>(), std::move(vectors), tag);
}

EmbeddingTable train_word_embeddings(const std::vector<Tokens>& corpus, SpaceTag tag, const Word2VecConfig& config) {
  if (corpus.empty()) throw InvalidInput("empty training corpus");
  std::map<std::string, std::int64_t> counts;
  std::int64_t total_tokens = 0;
  for (const auto& doc : corpus) {
    for (const auto& t : doc) {
      ++counts[t];
      ++total_tokens;
    }
  }
  if (total_tokens == 0) throw InvalidInput("training corpus has no tokens");

  // Vocabulary ordered by (count desc, token asc); row 0 is OOV.
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (auto& [tok, c] : counts) {
    if (c >= config.min_count && tok != kOovToken) kept.emplace_back(tok, c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> vocab{std::string(kOovToken)};
  std::unordered_map<std::string, Index> index;
  for (auto& [tok, c] : kept) {
    index.emplace(tok, static_cast<Index>(vocab.size()));
    vocab.push_back(tok);
  }
  const Index V = static_cast<Index>(vocab.size());
  const Index D = config.dim;

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<float> init(-0.5f / static_cast<float>(D), 0.5f / static_cast<float>(D));
  RowMat<float> input(V, D), output = RowMat<float>::Zero(V, D);
  for (Index i = 0; i < input.size(); ++i) input.data()[i] = init(rng);

  // Negative-sampling distribution: unigram^0.75 over in-vocabulary tokens.
  std::vector<double> weights(static_cast<std::size_t>(V), 0.0);
  for (Index v = 1; v < V; ++v) weights[static_cast<std::size_t>(v)] = std::pow(static_cast<double>(kept[static_cast<std::size_t>(v - 1)].second), 0.75);
  const bool can_sample = V > 1;
  std::discrete_distribution<Index> noise(can_sample ? weights.begin() : weights.end(),
                                          can_sample ? weights.end() : weights.end());

  std::vector<std::vector<Index>> docs;
  std::int64_t train_words = 0;
  for (const auto& doc : corpus) {
    std::vector<Index> ids;
    for (const auto& t : doc) {
      auto it = index.find(t);
      if (it != index.end()) ids.push_back(it->second);
    }
    train_words += static_cast<std::int64_t>(ids.size());
    docs.push_back(std::move(ids));
  }

  const double total_steps = static_cast<double>(std::max<std::int64_t>(1, train_words * config.epochs));
  std::int64_t step = 0;
  Vec<float> grad_in(D);
  std::uniform_int_distribution<int> shrink(0, std::max(0, config.window - 1));
  auto sigmoid = [](float x) { return x > 8.f ? 1.f : (x < -8.f ? 0.f : 1.f / (1.f + std::exp(-x))); };

  for (int epoch = 0; epoch < config.epochs && can_sample; ++epoch) {
    for (const auto& ids : docs) {
      const auto len = static_cast<int>(ids.size());
      for (int pos = 0; pos < len; ++pos, ++step) {
        const float lr = static_cast<float>(
            std::max(config.learning_rate * 1e-4, config.learning_rate * (1.0 - static_cast<double>(step) / total_steps)));
        const int b = shrink(rng);
        const Index center = ids[static_cast<std::size_t>(pos)];
        for (int off = -config.window + b; off <= config.window - b; ++off) {
          const int ctx_pos = pos + off;
          if (off == 0 || ctx_pos < 0 || ctx_pos >= len) continue;
          const Index context = ids[static_cast<std::size_t>(ctx_pos)];
          // The context word's input vector predicts the center word.
          grad_in.setZero();
          for (int d = 0; d <= config.negative; ++d) {
            Index target;
            float label;
            if (d == 0) {
              target = center;
              label = 1.f;
            } else {
              target = noise(rng);
              if (target == center) continue;
              label = 0.f;
            }
            const float f = input.row(context).dot(output.row(target));
            const float g = (label - sigmoid(f)) * lr;
            grad_in.noalias() += g * output.row(target).transpose();
            output.row(target).noalias() += g * input.row(context);
          }
          input.row(context).noalias() += grad_in.transpose();
        }
      }
    }
  }
  return EmbeddingTable(std::move(vocab), std::move(input), tag);
}

EncodedSequence encode_sequence(const Tokens& tokens, const EmbeddingTable& table, Index max_length) {
  if (max_length < 1) throw InvalidInput("max_length must be at least 1");
  EncodedSequence seq;
  seq.rows = RowMat<float>::Zero(max_length, table.dim());
  seq.length = std::min<Index>(max_length, static_cast<Index>(tokens.size()));
  for (Index i = 0; i < seq.length; ++i) {
    seq.rows.row(i) = table.row(table.index_of(tokens[static_cast<std::size_t>(i)]));
  }
  return seq;
}

Index choose_max_length(std::vector<Index> lengths, bool pad_to_longest) {
  if (lengths.empty()) return 1;
  std::sort(lengths.begin(), lengths.end());
  if (pad_to_longest) return std::max<Index>(1, lengths.back());
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(lengths.size()))) - 1;
  return std::max<Index>(1, lengths[std::min(rank, lengths.size() - 1)]);
}

Vec<double> document_embedding(const Tokens& tokens, const EmbeddingTable& table) {
  Vec<double> sum = Vec<double>::Zero(table.dim());
  int known = 0;
  for (const auto& t : tokens) {
    const auto i = table.index_of(t);
    if (i == 0) continue;
    sum += table.row(i).cast<double>().transpose();
    ++known;
  }
  if (known > 0) sum /= known;
  return sum;
}

}  // namespace mmrl
