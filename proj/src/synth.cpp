#include "mmrl/synth.hpp"

#include "mmrl/ingest.hpp"
#include "mmrl/records.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

namespace fs = std::filesystem;

namespace mmrl::synth {

namespace {

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words{
      "the",    "a",      "of",     "and",    "to",     "in",     "new",    "says",   "report", "after",
      "over",   "city",   "state",  "people", "week",   "year",   "plan",   "call",   "public", "local",
      "health", "school", "market", "price",  "water",  "road",   "power",  "court",  "team",   "game",
      "house",  "policy", "vote",   "bill",   "change", "study",  "rise",   "fall",   "claim",  "talks",
      "leader", "group",  "news",   "update", "today",  "night",  "early",  "late",   "season", "data",
      "office", "county", "board",  "review", "event",  "story",  "photo",  "video",  "watch",  "read",
      "share",  "more",   "here",   "what",   "why",    "how",    "who",    "when",   "this",   "that",
      "big",    "small",  "long",   "short",  "open",   "close",  "back",   "front",  "north",  "south",
      "east",   "west",   "river",  "forest", "field",  "train",  "bus",    "plane",  "ship",   "bridge",
      "store",  "farm",   "crop",   "rain",   "storm",  "sun",    "snow",   "wind",   "fire",   "air"};
  return words;
}

struct NamedColor {
  const char* name;
  Rgb rgb;
};

const std::array<NamedColor, 12>& palette() {
  static const std::array<NamedColor, 12> colors{{{"crimson", {220, 20, 30}},
                                                  {"orange", {250, 140, 0}},
                                                  {"gold", {240, 220, 20}},
                                                  {"lime", {120, 240, 30}},
                                                  {"emerald", {0, 160, 60}},
                                                  {"teal", {0, 130, 130}},
                                                  {"cyan", {40, 230, 240}},
                                                  {"azure", {30, 110, 250}},
                                                  {"navy", {10, 20, 120}},
                                                  {"violet", {140, 40, 220}},
                                                  {"magenta", {240, 30, 200}},
                                                  {"brown", {120, 70, 20}}}};
  return colors;
}

const std::array<NamedColor, 12>& tints() {
  static const std::array<NamedColor, 12> colors{{{"dawn", {255, 200, 200}},
                                                  {"dusk", {90, 60, 110}},
                                                  {"frost", {200, 230, 255}},
                                                  {"ember", {170, 60, 30}},
                                                  {"moss", {90, 120, 60}},
                                                  {"sand", {220, 200, 150}},
                                                  {"slate", {100, 110, 125}},
                                                  {"rose", {230, 120, 160}},
                                                  {"ocean", {30, 80, 140}},
                                                  {"meadow", {160, 220, 120}},
                                                  {"coal", {30, 30, 30}},
                                                  {"ivory", {250, 250, 235}}}};
  return colors;
}

constexpr Rgb kReliableColor{0, 200, 0};
constexpr Rgb kUnreliableColor{0, 0, 230};
constexpr Rgb kPopularColor{230, 0, 0};
constexpr Rgb kUnpopularColor{0, 0, 0};

unsigned char clamp_byte(int v) { return static_cast<unsigned char>(std::clamp(v, 0, 255)); }

struct Canvas {
  int size;
  std::vector<Rgb> pixels;

  Canvas(int s, Rgb base, int noise, std::mt19937_64& rng) : size(s), pixels(static_cast<std::size_t>(s * s)) {
    std::uniform_int_distribution<int> jitter(-noise, noise);
    for (auto& p : pixels) {
      p = {clamp_byte(base.r + jitter(rng)), clamp_byte(base.g + jitter(rng)), clamp_byte(base.b + jitter(rng))};
    }
  }

  // Solid patch with a little noise at a random place inside the quadrant.
  void patch(Quadrant q, Rgb color, std::mt19937_64& rng) {
    const int half = size / 2;
    const int side = std::max(2, size * 7 / 16);
    std::uniform_int_distribution<int> offset(0, half - side);
    const int y0 = (q >= 2 ? half : 0) + offset(rng);
    const int x0 = (q % 2 == 1 ? half : 0) + offset(rng);
    std::uniform_int_distribution<int> jitter(-10, 10);
    for (int y = y0; y < y0 + side; ++y) {
      for (int x = x0; x < x0 + side; ++x) {
        pixels[static_cast<std::size_t>(y * size + x)] = {clamp_byte(color.r + jitter(rng)),
                                                          clamp_byte(color.g + jitter(rng)),
                                                          clamp_byte(color.b + jitter(rng))};
      }
    }
  }
};

std::string words(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  const auto& pool = filler_words();
  std::uniform_int_distribution<std::size_t> count(lo, hi), pick(0, pool.size() - 1);
  std::string out;
  const auto n = count(rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.empty()) out += ' ';
    out += pool[pick(rng)];
  }
  return out;
}

// Inserts `word` at a random word boundary.
std::string plant(std::string text, const std::string& word, std::mt19937_64& rng) {
  std::vector<std::size_t> cuts{0};
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == ' ') cuts.push_back(i + 1);
  }
  cuts.push_back(text.size());
  std::uniform_int_distribution<std::size_t> pick(0, cuts.size() - 1);
  const auto at = cuts[pick(rng)];
  if (at == text.size()) return text.empty() ? word : text + " " + word;
  return text.substr(0, at) + word + " " + text.substr(at);
}

std::string host_for(DomainCoding coding, std::size_t i) {
  return std::string(to_string(coding)) + "-news" + std::to_string(i % 3) + ".example";
}

Article make_article(DomainCoding coding, std::size_t index, const std::string& tag) {
  Article a;
  a.url = "https://" + host_for(coding, index) + "/" + tag + "/" + std::to_string(index);
  a.article_id = article_id_for(a.url);
  a.domain_coding = coding;
  return a;
}

std::vector<TweetRecord> make_tweets(const Article& a, std::size_t count, bool engaged, const std::string& extra,
                                     std::mt19937_64& rng, bool plant_extra) {
  std::uniform_int_distribution<std::int64_t> followers(200, 5000);
  std::uniform_real_distribution<double> high(0.5, 1.0), low(0.0, 0.02);
  std::vector<TweetRecord> tweets;
  for (std::size_t t = 0; t < count; ++t) {
    TweetRecord r;
    r.tweet_id = a.article_id + "-" + std::to_string(t);
    r.author_followers = followers(rng);
    const auto engagement = static_cast<std::int64_t>(static_cast<double>(r.author_followers) * (engaged ? high(rng) : low(rng)));
    r.retweet_count = engagement / 3;
    r.like_count = engagement - r.retweet_count;
    r.text = words(rng, 6, 12);
    if (plant_extra) r.text = plant(r.text, extra, rng);
    r.linked_url = a.url;
    tweets.push_back(std::move(r));
  }
  return tweets;
}

void save_image(const fs::path& dir, Article& a, const Canvas& canvas) {
  fs::create_directories(dir / "images");
  a.image_ref = "images/" + a.article_id + ".ppm";
  write_ppm(dir / a.image_ref, canvas.size, canvas.size, canvas.pixels);
}

}  // namespace

void write_ppm(const fs::path& path, int width, int height, const std::vector<Rgb>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  for (const auto& p : pixels) {
    const char bytes[3] = {static_cast<char>(p.r), static_cast<char>(p.g), static_cast<char>(p.b)};
    out.write(bytes, 3);
  }
}

std::vector<Article> multitask_corpus(const CorpusOptions& options, const fs::path& dir) {
  if (options.image_size < 8) throw InvalidInput("synthetic images must be at least 8 pixels wide");
  if (options.min_tweets < 1 || options.max_tweets < options.min_tweets) throw InvalidInput("bad tweet count range");
  std::mt19937_64 rng(options.seed);
  std::bernoulli_distribution excluded(options.excluded_fraction), coin(0.5);
  std::uniform_int_distribution<std::size_t> tweet_count(options.min_tweets, options.max_tweets);
  std::vector<Article> out;
  for (std::size_t i = 0; i < options.articles; ++i) {
    // Alternate classes so any prefix stays balanced.
    const bool reliable = i % 2 == 0;
    const bool engaged = (i / 2) % 2 == 0;
    DomainCoding coding = reliable ? DomainCoding::green : (coin(rng) ? DomainCoding::red : DomainCoding::orange);
    if (excluded(rng)) coding = coin(rng) ? DomainCoding::yellow : DomainCoding::satire;
    Article a = make_article(coding, i, "story");
    a.title = plant(words(rng, 5, 9), reliable ? kReliableTrigger : kUnreliableTrigger, rng);
    a.tweets = make_tweets(a, tweet_count(rng), engaged, engaged ? kPopularTrigger : kUnpopularTrigger, rng, true);
    Canvas canvas(options.image_size, {128, 128, 128}, 50, rng);
    canvas.patch(reliable ? kReliableQuadrant : kUnreliableQuadrant, reliable ? kReliableColor : kUnreliableColor, rng);
    canvas.patch(engaged ? kPopularQuadrant : kUnpopularQuadrant, engaged ? kPopularColor : kUnpopularColor, rng);
    save_image(dir, a, canvas);
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Article> paired_corpus(const PairedOptions& options, const fs::path& dir) {
  if (options.image_size < 8) throw InvalidInput("synthetic images must be at least 8 pixels wide");
  std::mt19937_64 rng(options.seed);
  const auto& colors = palette();
  const auto& tint_list = tints();
  std::uniform_int_distribution<std::size_t> pick_color(0, colors.size() - 1), pick_tint(0, tint_list.size() - 1);
  std::uniform_int_distribution<std::size_t> tweet_count(2, 4);
  std::bernoulli_distribution coin_flip(0.5);
  std::vector<Article> out;
  for (std::size_t i = 0; i < options.articles; ++i) {
    std::set<std::size_t> chosen;
    while (chosen.size() < 3) chosen.insert(pick_color(rng));
    std::vector<std::size_t> order(chosen.begin(), chosen.end());
    std::shuffle(order.begin(), order.end(), rng);
    const auto tint = tint_list[pick_tint(rng)];
    const bool named_tint = options.background == PairedOptions::Background::paired_tint;

    Article a = make_article(options.coding, i, named_tint ? "biased" : "clean");
    std::string text = words(rng, 3, 6);
    for (auto c : order) text = plant(text, colors[c].name, rng);
    if (named_tint) text = plant(text, tint.name, rng);
    a.title = text;
    a.tweets = make_tweets(a, tweet_count(rng), coin_flip(rng), "", rng, false);
    for (auto& t : a.tweets) {
      for (auto c : order) t.text = plant(t.text, colors[c].name, rng);
      if (named_tint) t.text = plant(t.text, tint.name, rng);
    }

    const Rgb base = options.background == PairedOptions::Background::plain ? Rgb{128, 128, 128} : tint.rgb;
    Canvas canvas(options.image_size, base, 30, rng);
    std::array<Quadrant, 4> quads{top_left, top_right, bottom_left, bottom_right};
    std::shuffle(quads.begin(), quads.end(), rng);
    for (std::size_t k = 0; k < 3; ++k) canvas.patch(quads[k], colors[order[k]].rgb, rng);
    save_image(dir, a, canvas);
    out.push_back(std::move(a));
  }
  return out;
}

void write_raw_fixtures(const std::vector<Article>& articles, const fs::path& image_root, const fs::path& out) {
  fs::create_directories(out / "cache");
  std::ofstream tweets(out / "tweets.jsonl", std::ios::binary);
  std::set<std::pair<std::string, DomainCoding>> hosts;
  for (const auto& a : articles) {
    hosts.insert({url_host(a.url), a.domain_coding});
    for (const auto& t : a.tweets) {
      auto j = to_json(t);
      j["linked_url"] = a.url;
      tweets << j.dump() << '\n';
    }
    const std::string image_url = "https://cdn." + url_host(a.url) + "/img/" + a.article_id + ".ppm";
    std::ofstream page(out / "cache" / (CacheBlobSource::cache_key(a.url) + ".html"), std::ios::binary);
    page << "<!DOCTYPE html>\n<html><head>\n<meta charset=\"utf-8\">\n"
         << "<meta property=\"og:title\" content=\"" << a.title << "\">\n"
         << "<meta property=\"og:image\" content=\"" << image_url << "\">\n"
         << "<title>" << a.title << "</title>\n</head><body><p>" << a.title << "</p></body></html>\n";
    fs::copy_file(image_root / a.image_ref, out / "cache" / (CacheBlobSource::cache_key(image_url) + ".ppm"),
                  fs::copy_options::overwrite_existing);
  }
  std::ofstream domains(out / "domains.txt", std::ios::binary);
  for (const auto& [host, coding] : hosts) domains << host << ' ' << to_string(coding) << '\n';
}

}  // namespace mmrl::synth
