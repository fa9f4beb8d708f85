#pragma once

#include "mmrl/corpus.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mmrl {

/// Lowercases scheme and host, drops the fragment, default ports and utm_*
/// query parameters.
std::string canonicalize_url(std::string_view url);
std::string url_host(std::string_view url);

/// Decodes named and numeric HTML character references.
std::string decode_entities(std::string_view text);

enum class TagSource { none, twitter, opengraph };

struct PreviewCard {
  std::optional<std::string> title;
  std::optional<std::string> image_url;
  TagSource title_source = TagSource::none;
  TagSource image_source = TagSource::none;
};

/// twitter:title / twitter:image, falling back to og:title / og:image.
/// Input containing NUL bytes is treated as non-HTML and rejected.
PreviewCard extract_preview(std::string_view html);

using DomainTable = std::map<std::string, DomainCoding>;

/// Parses "host coding" lines; '#' starts a comment.
DomainTable read_domain_table(const std::filesystem::path& path);

/// Coding for a host, matching exact hosts and subdomains of listed hosts.
std::optional<DomainCoding> lookup_domain(const DomainTable& domains, std::string_view host);

std::string article_id_for(std::string_view canonical_url);

/// One article per canonical URL whose host is listed; titles and images unset.
std::vector<Article> group_tweets_by_article(const std::vector<TweetRecord>& tweets,
                                             const DomainTable& allowed_domains);

/// Texts of the k most engaged tweets, cycling the ranked list when the
/// article has fewer than k tweets.
std::vector<std::string> select_top_tweets(const Article& article, std::size_t k = 5);

struct Blob {
  std::string bytes;
  std::string content_type;
};

class BlobSource {
 public:
  virtual ~BlobSource() = default;
  /// Empty optional on a permanent miss; throws on transient failures.
  virtual std::optional<Blob> fetch(const std::string& url) = 0;
};

/// Reads `<dir>/<sha256(url)>` (any extension) or file:// URLs; never touches the network.
class CacheBlobSource : public BlobSource {
 public:
  explicit CacheBlobSource(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::optional<Blob> fetch(const std::string& url) override;
  static std::string cache_key(std::string_view url);

 private:
  std::filesystem::path dir_;
};

/// HTTP(S) fetch through libcurl.
class CurlBlobSource : public BlobSource {
 public:
  explicit CurlBlobSource(long timeout_seconds = 20) : timeout_(timeout_seconds) {}
  std::optional<Blob> fetch(const std::string& url) override;

 private:
  long timeout_;
};

/// Tries each source in order; the first hit wins.
class ChainBlobSource : public BlobSource {
 public:
  explicit ChainBlobSource(std::vector<std::shared_ptr<BlobSource>> sources) : sources_(std::move(sources)) {}
  std::optional<Blob> fetch(const std::string& url) override;

 private:
  std::vector<std::shared_ptr<BlobSource>> sources_;
};

/// Retries transient failures with exponential backoff.
class RetryingBlobSource : public BlobSource {
 public:
  RetryingBlobSource(std::shared_ptr<BlobSource> inner, int attempts = 3,
                     std::chrono::milliseconds base_delay = std::chrono::milliseconds(250))
      : inner_(std::move(inner)), attempts_(attempts), base_delay_(base_delay) {}
  std::optional<Blob> fetch(const std::string& url) override;

 private:
  std::shared_ptr<BlobSource> inner_;
  int attempts_;
  std::chrono::milliseconds base_delay_;
};

/// Sniffs an image type from magic bytes, falling back to the content type.
/// Returns an empty string for non-image payloads.
std::string image_extension(const Blob& blob);

/// Writes bytes as `<sha256>.<ext>` under dir and returns the file name.
std::string store_blob(const std::filesystem::path& dir, const std::string& bytes, std::string_view ext);

struct IngestOptions {
  std::filesystem::path tweets;
  std::filesystem::path domains;
  std::filesystem::path html_cache;
  std::filesystem::path out;
  bool offline = true;
  std::size_t max_parallel = 4;
};

struct IngestReport {
  std::size_t tweets_read = 0;
  std::size_t tweets_kept = 0;
  std::size_t articles = 0;
  std::size_t missing_html = 0;
  std::size_t missing_title = 0;
  std::size_t missing_image = 0;
  std::size_t written = 0;
};

/// Builds `<out>/articles.jsonl` and `<out>/images/`. Articles without a
/// title or a retrievable image are counted and left out.
IngestReport ingest(const IngestOptions& options, BlobSource& pages, BlobSource& images);

}  // namespace mmrl
