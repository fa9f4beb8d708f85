#pragma once

#include "mmrl/common.hpp"
#include "mmrl/corpus.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace mmrl::synth {

inline constexpr const char* kReliableTrigger = "verified";
inline constexpr const char* kUnreliableTrigger = "hoax";
inline constexpr const char* kPopularTrigger = "viral";
inline constexpr const char* kUnpopularTrigger = "fyi";

struct Rgb {
  unsigned char r, g, b;
};

/// Quadrant index: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
enum Quadrant { top_left = 0, top_right = 1, bottom_left = 2, bottom_right = 3 };

inline constexpr Quadrant kReliableQuadrant = top_left;
inline constexpr Quadrant kUnreliableQuadrant = bottom_right;
inline constexpr Quadrant kPopularQuadrant = top_right;
inline constexpr Quadrant kUnpopularQuadrant = bottom_left;

struct CorpusOptions {
  std::size_t articles = 2000;
  int image_size = 32;
  std::uint64_t seed = 1;
  double excluded_fraction = 0.0;  // yellow/satire articles
  std::size_t min_tweets = 2;
  std::size_t max_tweets = 5;
};

/// Class-conditional corpus: reliability is planted in the title and a
/// colored patch, popularity in the tweets, the engagement counts and a
/// second patch. Half of the articles are highly engaged, half barely.
/// Images are written to `<dir>/images/` and referenced relative to `dir`.
std::vector<Article> multitask_corpus(const CorpusOptions& options, const std::filesystem::path& dir);

struct PairedOptions {
  std::size_t articles = 1000;
  int image_size = 32;
  std::uint64_t seed = 1;
  /// plain: gray canvas. random_tint: tinted canvas, tint never named.
  /// paired_tint: the tint word also appears in the text, a shortcut that
  /// only exists in this domain.
  enum class Background { plain, random_tint, paired_tint } background = Background::plain;
  DomainCoding coding = DomainCoding::green;
};

/// Image/text pairs: three colored patches per image, the matching color
/// words in the title and tweets.
std::vector<Article> paired_corpus(const PairedOptions& options, const std::filesystem::path& dir);

/// Raw ingest inputs for a corpus: tweets.jsonl (with linked URLs),
/// domains.txt, and a blob cache holding each page and its og:image.
void write_raw_fixtures(const std::vector<Article>& articles, const std::filesystem::path& image_root,
                        const std::filesystem::path& out);

void write_ppm(const std::filesystem::path& path, int width, int height, const std::vector<Rgb>& pixels);

}  // namespace mmrl::synth
