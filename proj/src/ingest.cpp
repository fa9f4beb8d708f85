#include "mmrl/ingest.hpp"

#include "mmrl/common.hpp"
#include "mmrl/hash.hpp"
#include "mmrl/records.hpp"

#include <curl/curl.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace mmrl {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

struct UrlParts {
  std::string scheme;
  std::string authority;
  std::string path;
  std::string query;
};

UrlParts split_url(std::string_view url) {
  UrlParts p;
  std::string_view rest = url;
  if (auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);
  if (auto sep = rest.find("://"); sep != std::string_view::npos) {
    p.scheme = lower(rest.substr(0, sep));
    rest.remove_prefix(sep + 3);
  }
  const auto end = rest.find_first_of("/?");
  p.authority = std::string(rest.substr(0, end));
  rest = end == std::string_view::npos ? std::string_view{} : rest.substr(end);
  if (auto q = rest.find('?'); q != std::string_view::npos) {
    p.query = std::string(rest.substr(q + 1));
    rest = rest.substr(0, q);
  }
  p.path = std::string(rest);
  return p;
}

void append_utf8(std::string& out, unsigned long cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x110000) {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out += "\xEF\xBF\xBD";
  }
}

}  // namespace

std::string canonicalize_url(std::string_view url) {
  auto p = split_url(url);
  std::string userinfo;
  std::string hostport = p.authority;
  if (auto at = hostport.rfind('@'); at != std::string::npos) {
    userinfo = hostport.substr(0, at + 1);
    hostport = hostport.substr(at + 1);
  }
  hostport = lower(hostport);
  if ((p.scheme == "http" && hostport.ends_with(":80")) || (p.scheme == "https" && hostport.ends_with(":443"))) {
    hostport.erase(hostport.rfind(':'));
  }
  std::string query;
  std::stringstream qs(p.query);
  std::string param;
  while (std::getline(qs, param, '&')) {
    if (param.empty() || lower(param).starts_with("utm_")) continue;
    query += (query.empty() ? "" : "&") + param;
  }
  std::string out;
  if (!p.scheme.empty()) out = p.scheme + "://";
  out += userinfo + hostport;
  out += p.path.empty() ? "/" : p.path;
  if (!query.empty()) out += "?" + query;
  return out;
}

std::string url_host(std::string_view url) {
  auto p = split_url(url);
  std::string host = p.authority;
  if (auto at = host.rfind('@'); at != std::string::npos) host = host.substr(at + 1);
  if (auto colon = host.rfind(':'); colon != std::string::npos && host.find(']') == std::string::npos) {
    host = host.substr(0, colon);
  }
  return lower(host);
}

std::string decode_entities(std::string_view text) {
  static const std::unordered_map<std::string_view, unsigned long> named{
      {"amp", '&'},     {"lt", '<'},      {"gt", '>'},      {"quot", '"'},   {"apos", '\''},
      {"nbsp", 0xA0},   {"ndash", 0x2013}, {"mdash", 0x2014}, {"lsquo", 0x2018}, {"rsquo", 0x2019},
      {"ldquo", 0x201C}, {"rdquo", 0x201D}, {"hellip", 0x2026}, {"copy", 0xA9}, {"reg", 0xAE},
      {"eacute", 0xE9}, {"egrave", 0xE8}, {"uuml", 0xFC},   {"ouml", 0xF6},  {"auml", 0xE4}};
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] != '&') {
      out.push_back(text[i++]);
      continue;
    }
    const auto semi = text.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) {
      out.push_back(text[i++]);
      continue;
    }
    const auto body = text.substr(i + 1, semi - i - 1);
    bool ok = false;
    if (!body.empty() && body[0] == '#') {
      const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
      const auto digits = body.substr(hex ? 2 : 1);
      if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [hex](char c) {
            return hex ? std::isxdigit(static_cast<unsigned char>(c)) : std::isdigit(static_cast<unsigned char>(c));
          })) {
        append_utf8(out, std::stoul(std::string(digits), nullptr, hex ? 16 : 10));
        ok = true;
      }
    } else if (auto it = named.find(body); it != named.end()) {
      append_utf8(out, it->second);
      ok = true;
    }
    if (ok) {
      i = semi + 1;
    } else {
      out.push_back(text[i++]);
    }
  }
  return out;
}

namespace {

// Attribute map of a start tag body (text after the tag name up to '>').
std::vector<std::pair<std::string, std::string>> parse_attributes(std::string_view body) {
  std::vector<std::pair<std::string, std::string>> attrs;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < body.size() && (std::isspace(static_cast<unsigned char>(body[i])) || body[i] == '/')) ++i;
  };
  while (true) {
    skip_ws();
    if (i >= body.size()) break;
    const auto name_start = i;
    while (i < body.size() && !std::isspace(static_cast<unsigned char>(body[i])) && body[i] != '=' &&
           body[i] != '/') {
      ++i;
    }
    std::string name = lower(body.substr(name_start, i - name_start));
    while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
    std::string value;
    if (i < body.size() && body[i] == '=') {
      ++i;
      while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
      if (i < body.size() && (body[i] == '"' || body[i] == '\'')) {
        const char q = body[i++];
        const auto close = body.find(q, i);
        const auto stop = close == std::string_view::npos ? body.size() : close;
        value = std::string(body.substr(i, stop - i));
        i = close == std::string_view::npos ? body.size() : close + 1;
      } else {
        const auto start = i;
        while (i < body.size() && !std::isspace(static_cast<unsigned char>(body[i]))) ++i;
        value = std::string(body.substr(start, i - start));
      }
    }
    if (!name.empty()) attrs.emplace_back(std::move(name), std::move(value));
  }
  return attrs;
}

}  // namespace

PreviewCard extract_preview(std::string_view html) {
  if (html.find('\0') != std::string_view::npos) throw ParseError("input contains NUL bytes; not HTML");

  std::optional<std::string> tw_title, og_title, tw_image, og_image;
  std::size_t i = 0;
  while ((i = html.find('<', i)) != std::string_view::npos) {
    if (html.substr(i, 4) == "<!--") {
      const auto end = html.find("-->", i + 4);
      if (end == std::string_view::npos) break;
      i = end + 3;
      continue;
    }
    std::size_t j = i + 1;
    while (j < html.size() && (std::isalnum(static_cast<unsigned char>(html[j])) || html[j] == '!')) ++j;
    const auto tag = lower(html.substr(i + 1, j - i - 1));
    // Attribute values may contain '>', so scan quotes to find the tag end.
    std::size_t k = j;
    char quote = 0;
    while (k < html.size()) {
      const char c = html[k];
      if (quote) {
        if (c == quote) quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '>') {
        break;
      }
      ++k;
    }
    if (k >= html.size()) break;
    if (tag == "script" || tag == "style") {
      const auto close = lower(html.substr(k)).find("</" + tag);
      i = close == std::string::npos ? html.size() : k + close;
      continue;
    }
    if (tag == "meta") {
      std::string key, content;
      bool has_content = false;
      for (auto& [name, value] : parse_attributes(html.substr(j, k - j))) {
        if ((name == "name" || name == "property") && key.empty()) key = lower(value);
        if (name == "content" && !has_content) {
          content = decode_entities(value);
          has_content = true;
        }
      }
      if (has_content) {
        auto set_first = [&](std::optional<std::string>& slot) {
          if (!slot) slot = content;
        };
        if (key == "twitter:title") set_first(tw_title);
        if (key == "og:title") set_first(og_title);
        if (key == "twitter:image" || key == "twitter:image:src") set_first(tw_image);
        if (key == "og:image") set_first(og_image);
      }
    }
    i = k + 1;
  }

  PreviewCard card;
  if (tw_title) {
    card.title = tw_title;
    card.title_source = TagSource::twitter;
  } else if (og_title) {
    card.title = og_title;
    card.title_source = TagSource::opengraph;
  }
  if (tw_image) {
    card.image_url = tw_image;
    card.image_source = TagSource::twitter;
  } else if (og_image) {
    card.image_url = og_image;
    card.image_source = TagSource::opengraph;
  }
  return card;
}

DomainTable read_domain_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open domain table " + path.string());
  DomainTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string host, coding;
    if (!(ls >> host)) continue;
    if (!(ls >> coding)) throw InvalidInput("domain table line without coding: " + line);
    table[lower(host)] = parse_domain_coding(lower(coding));
  }
  return table;
}

std::optional<DomainCoding> lookup_domain(const DomainTable& domains, std::string_view host) {
  std::string h = lower(host);
  while (true) {
    if (auto it = domains.find(h); it != domains.end()) return it->second;
    const auto dot = h.find('.');
    if (dot == std::string::npos) return std::nullopt;
    h = h.substr(dot + 1);
  }
}

std::string article_id_for(std::string_view canonical_url) {
  return sha256_hex(canonical_url).substr(0, 16);
}

std::vector<Article> group_tweets_by_article(const std::vector<TweetRecord>& tweets,
                                             const DomainTable& allowed_domains) {
  std::vector<Article> articles;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& t : tweets) {
    const auto url = canonicalize_url(t.linked_url);
    const auto coding = lookup_domain(allowed_domains, url_host(url));
    if (!coding) continue;
    auto [it, inserted] = index.try_emplace(url, articles.size());
    if (inserted) {
      Article a;
      a.article_id = article_id_for(url);
      a.url = url;
      a.domain_coding = *coding;
      articles.push_back(std::move(a));
    }
    auto& tweet = articles[it->second].tweets.emplace_back(t);
    tweet.linked_url = url;
  }
  return articles;
}

std::vector<std::string> select_top_tweets(const Article& article, std::size_t k) {
  if (article.tweets.empty()) throw InvalidInput("article '" + article.article_id + "' has no tweets");
  if (k == 0) throw InvalidInput("k must be positive");
  std::vector<const TweetRecord*> ranked;
  for (const auto& t : article.tweets) ranked.push_back(&t);
  std::sort(ranked.begin(), ranked.end(), [](const TweetRecord* a, const TweetRecord* b) {
    const auto ea = a->retweet_count + a->like_count;
    const auto eb = b->retweet_count + b->like_count;
    if (ea != eb) return ea > eb;
    return a->tweet_id < b->tweet_id;
  });
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(ranked[i % ranked.size()]->text);
  return out;
}

std::string CacheBlobSource::cache_key(std::string_view url) { return sha256_hex(url); }

std::optional<Blob> CacheBlobSource::fetch(const std::string& url) {
  auto read_file = [](const fs::path& p) -> std::optional<Blob> {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return Blob{ss.str(), ""};
  };
  if (url.starts_with("file://")) return read_file(url.substr(7));
  const auto key = cache_key(url);
  if (!fs::is_directory(dir_)) return std::nullopt;
  if (auto exact = read_file(dir_ / key)) return exact;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().stem() == key) return read_file(entry.path());
  }
  return std::nullopt;
}

namespace {

std::size_t curl_write(char* data, std::size_t size, std::size_t n, void* user) {
  static_cast<std::string*>(user)->append(data, size * n);
  return size * n;
}

}  // namespace

std::optional<Blob> CurlBlobSource::fetch(const std::string& url) {
  if (!url.starts_with("http://") && !url.starts_with("https://")) return std::nullopt;
  static const bool initialized = curl_global_init(CURL_GLOBAL_DEFAULT) == CURLE_OK;
  if (!initialized) throw std::runtime_error("curl initialization failed");
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw std::runtime_error("curl_easy_init failed");
  Blob blob;
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_TIMEOUT, timeout_);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, curl_write);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &blob.bytes);
  curl_easy_setopt(curl.get(), CURLOPT_USERAGENT, "mmrl-ingest/1.0");
  const auto rc = curl_easy_perform(curl.get());
  if (rc != CURLE_OK) throw std::runtime_error(std::string("fetch failed: ") + curl_easy_strerror(rc));
  long status = 0;
  curl_easy_getinfo(curl.get(), CURLINFO_RESPONSE_CODE, &status);
  if (status >= 500 || status == 429) throw std::runtime_error("server returned " + std::to_string(status));
  if (status >= 400) return std::nullopt;
  char* type = nullptr;
  curl_easy_getinfo(curl.get(), CURLINFO_CONTENT_TYPE, &type);
  if (type) blob.content_type = type;
  return blob;
}

std::optional<Blob> ChainBlobSource::fetch(const std::string& url) {
  for (auto& source : sources_) {
    if (auto blob = source->fetch(url)) return blob;
  }
  return std::nullopt;
}

std::optional<Blob> RetryingBlobSource::fetch(const std::string& url) {
  auto delay = base_delay_;
  for (int attempt = 1;; ++attempt) {
    try {
      return inner_->fetch(url);
    } catch (const std::exception&) {
      if (attempt >= attempts_) throw;
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

std::string image_extension(const Blob& blob) {
  const auto& b = blob.bytes;
  if (b.starts_with("\x89PNG")) return "png";
  if (b.starts_with("\xFF\xD8\xFF")) return "jpg";
  if (b.starts_with("GIF8")) return "gif";
  if (b.size() > 12 && b.starts_with("RIFF") && b.substr(8, 4) == "WEBP") return "webp";
  if (b.size() > 2 && b[0] == 'P' && (b[1] == '3' || b[1] == '6')) return "ppm";
  const auto type = lower(blob.content_type);
  if (type.starts_with("image/")) {
    auto sub = type.substr(6, type.find(';') == std::string::npos ? std::string::npos : type.find(';') - 6);
    if (sub == "jpeg") sub = "jpg";
    if (sub == "x-portable-pixmap") sub = "ppm";
    return sub;
  }
  return {};
}

std::string store_blob(const fs::path& dir, const std::string& bytes, std::string_view ext) {
  fs::create_directories(dir);
  const auto name = sha256_hex(bytes) + (ext.empty() ? "" : "." + std::string(ext));
  const auto path = dir / name;
  if (!fs::exists(path)) {
    const auto tmp = dir / (name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw InvalidInput("cannot write " + tmp.string());
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    fs::rename(tmp, path);
  }
  return name;
}

IngestReport ingest(const IngestOptions& options, BlobSource& pages, BlobSource& images) {
  IngestReport report;
  const auto tweets = read_tweets_jsonl(options.tweets);
  const auto domains = read_domain_table(options.domains);
  report.tweets_read = tweets.size();
  auto articles = group_tweets_by_article(tweets, domains);
  report.articles = articles.size();
  for (const auto& a : articles) report.tweets_kept += a.tweets.size();

  struct Outcome {
    bool html = false;
    std::optional<std::string> title;
    std::optional<Blob> image;
  };

  // Extraction is pure; fetching runs in bounded batches.
  auto work = [&](const Article& a) {
    Outcome o;
    auto page = pages.fetch(a.url);
    if (!page) return o;
    o.html = true;
    const auto card = extract_preview(page->bytes);
    o.title = card.title;
    if (card.image_url) {
      try {
        o.image = images.fetch(*card.image_url);
      } catch (const std::exception&) {
        o.image.reset();
      }
      if (o.image && image_extension(*o.image).empty()) o.image.reset();
    }
    return o;
  };

  const auto image_dir = options.out / "images";
  fs::create_directories(image_dir);
  std::vector<Article> kept;
  const std::size_t parallel = std::max<std::size_t>(1, options.max_parallel);
  for (std::size_t begin = 0; begin < articles.size(); begin += parallel) {
    const auto end = std::min(articles.size(), begin + parallel);
    std::vector<std::future<Outcome>> batch;
    for (std::size_t i = begin; i < end; ++i) {
      batch.push_back(std::async(std::launch::async, work, std::cref(articles[i])));
    }
    for (std::size_t i = begin; i < end; ++i) {
      auto o = batch[i - begin].get();
      auto& a = articles[i];
      if (!o.html) {
        ++report.missing_html;
        continue;
      }
      bool ok = true;
      if (!o.title || o.title->empty()) {
        ++report.missing_title;
        ok = false;
      }
      if (!o.image) {
        ++report.missing_image;
        ok = false;
      }
      if (!ok) continue;
      a.title = *o.title;
      a.image_ref = "images/" + store_blob(image_dir, o.image->bytes, image_extension(*o.image));
      kept.push_back(std::move(a));
    }
  }
  report.written = kept.size();
  write_articles_jsonl(options.out / "articles.jsonl", kept);

  std::ofstream rep(options.out / "ingest_report.json");
  rep << nlohmann::json{{"tweets_read", report.tweets_read},     {"tweets_kept", report.tweets_kept},
                        {"articles", report.articles},           {"missing_html", report.missing_html},
                        {"missing_title", report.missing_title}, {"missing_image", report.missing_image},
                        {"written", report.written}}
             .dump(2)
      << '\n';
  return report;
}

}  // namespace mmrl
