#include "mmrl/homogeneity.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

namespace mmrl {

std::string_view to_string(DomainTag d) { return d == DomainTag::red ? "red" : "green"; }

std::string_view to_string(InputKind k) {
  switch (k) {
    case InputKind::image: return "image";
    case InputKind::title: return "title";
    case InputKind::tweet: return "tweet";
  }
  return "image";
}

DomainTag parse_domain_tag(std::string_view s) {
  if (s == "red") return DomainTag::red;
  if (s == "green") return DomainTag::green;
  throw ConfigError("domain must be red or green, got '" + std::string(s) + "'");
}

InputKind parse_input_kind(std::string_view s) {
  if (s == "image") return InputKind::image;
  if (s == "title") return InputKind::title;
  if (s == "tweet") return InputKind::tweet;
  throw ConfigError("input kind must be image, title or tweet, got '" + std::string(s) + "'");
}

Index expected_dim(InputKind k) { return k == InputKind::image ? 2048 : 128; }

FeatureSample make_feature_sample(Mat<double> vectors, DomainTag domain, InputKind kind) {
  if (vectors.rows() < 2) throw InvalidInput("feature sample needs at least two rows");
  if (vectors.cols() != expected_dim(kind)) {
    throw InvalidInput(std::string(to_string(kind)) + " features must be " + std::to_string(expected_dim(kind)) +
                       "-D, got " + std::to_string(vectors.cols()));
  }
  return {std::move(vectors), domain, kind};
}

Mat<double> pairwise_distances(const Mat<double>& A, const Mat<double>& B) {
  const Vec<double> a2 = A.rowwise().squaredNorm();
  const Vec<double> b2 = B.rowwise().squaredNorm();
  Mat<double> d = -2.0 * A * B.transpose();
  d.colwise() += a2;
  d.rowwise() += b2.transpose();
  return d.cwiseMax(0.0).cwiseSqrt();
}

double median_heuristic_alpha(const Mat<double>& pooled, Index max_rows, std::uint64_t seed) {
  if (pooled.rows() < 2) throw InvalidInput("median heuristic needs at least two rows");
  std::vector<Index> rows(static_cast<std::size_t>(pooled.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  if (pooled.rows() > max_rows) {
    std::mt19937_64 rng(seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(max_rows));
    std::sort(rows.begin(), rows.end());
  }
  const Mat<double> sub = pooled(rows, Eigen::all);
  const Mat<double> d = pairwise_distances(sub, sub);
  std::vector<double> upper;
  for (Index i = 0; i < d.rows(); ++i) {
    for (Index j = i + 1; j < d.cols(); ++j) upper.push_back(d(i, j));
  }
  auto mid = upper.begin() + static_cast<std::ptrdiff_t>(upper.size() / 2);
  std::nth_element(upper.begin(), mid, upper.end());
  double median = *mid;
  if (upper.size() % 2 == 0) median = 0.5 * (median + *std::max_element(upper.begin(), mid));
  if (!(median > 0.0)) throw DegenerateEmbedding("all sampled feature vectors coincide");
  return 1.0 / median;
}

double MmdProtocolResult::standard_error() const {
  if (values.size() < 2) return 0.0;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const auto r = static_cast<double>(values.size());
  return std::sqrt(ss / (r - 1.0) / r);
}

nlohmann::json to_json(const MmdProtocolResult& r) {
  return {{"n", r.n}, {"alpha", r.alpha}, {"mean", r.mean}, {"stderr", r.standard_error()}, {"values", r.values}};
}

namespace {

constexpr Index kMaxCachedRows = 5000;

// Kernel values over a pooled row set, cached in full for moderate sizes.
class KernelSource {
 public:
  KernelSource(const Mat<double>& rows, double alpha) : rows_(rows), alpha_(alpha) {
    if (rows.rows() <= kMaxCachedRows) K_ = (-alpha * pairwise_distances(rows, rows).array()).exp().matrix();
  }

  // Unbiased estimate over two disjoint index sets.
  double mmd(const std::vector<Index>& x, const std::vector<Index>& y) const {
    if (K_.size()) return estimate(K_(x, x), K_(y, y), K_(x, y));
    const Mat<double> X = rows_(x, Eigen::all), Y = rows_(y, Eigen::all);
    auto kernel = [&](const Mat<double>& A, const Mat<double>& B) {
      return Mat<double>((-alpha_ * pairwise_distances(A, B).array()).exp().matrix());
    };
    return estimate(kernel(X, X), kernel(Y, Y), kernel(X, Y));
  }

 private:
  static double estimate(const Mat<double>& kxx, const Mat<double>& kyy, const Mat<double>& kxy) {
    const auto n = static_cast<double>(kxx.rows()), m = static_cast<double>(kyy.rows());
    const double xx = kxx.sum() - kxx.trace();
    const double yy = kyy.sum() - kyy.trace();
    return xx / (n * (n - 1)) + yy / (m * (m - 1)) - 2.0 * kxy.sum() / (n * m);
  }

  const Mat<double>& rows_;
  double alpha_;
  Mat<double> K_;
};

std::vector<Index> draw(std::mt19937_64& rng, Index population, Index count, Index offset = 0) {
  std::vector<Index> idx(static_cast<std::size_t>(population));
  std::iota(idx.begin(), idx.end(), 0);
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, population - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(count));
  for (auto& i : idx) i += offset;
  return idx;
}

void finish(MmdProtocolResult& r) {
  r.mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / static_cast<double>(r.values.size());
}

}  // namespace

MmdProtocolResult within_domain_protocol(const FeatureSample& sample, Index n, int repeats, std::uint64_t seed,
                                         std::optional<double> alpha) {
  if (n < 2) throw InvalidInput("N must be at least 2");
  if (repeats < 1) throw InvalidInput("need at least one repeat");
  if (sample.vectors.rows() < 2 * n) {
    throw InvalidInput("sample has " + std::to_string(sample.vectors.rows()) + " rows; need 2N = " +
                       std::to_string(2 * n));
  }
  MmdProtocolResult r;
  r.n = n;
  r.alpha = alpha ? *alpha : median_heuristic_alpha(sample.vectors, 1000, seed);
  const KernelSource kernel(sample.vectors, r.alpha);
  for (int rep = 0; rep < repeats; ++rep) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
    const auto idx = draw(rng, sample.vectors.rows(), 2 * n);
    const std::vector<Index> x(idx.begin(), idx.begin() + n), y(idx.begin() + n, idx.end());
    r.values.push_back(kernel.mmd(x, y));
  }
  finish(r);
  return r;
}

MmdProtocolResult between_domain_protocol(const FeatureSample& a, const FeatureSample& b, Index n, int repeats,
                                          std::uint64_t seed, std::optional<double> alpha) {
  if (n < 2) throw InvalidInput("N must be at least 2");
  if (repeats < 1) throw InvalidInput("need at least one repeat");
  if (a.vectors.rows() < n || b.vectors.rows() < n) throw InvalidInput("each sample needs at least N rows");
  if (a.vectors.cols() != b.vectors.cols()) throw InvalidInput("samples differ in dimension");
  Mat<double> pooled(a.vectors.rows() + b.vectors.rows(), a.vectors.cols());
  pooled << a.vectors, b.vectors;
  MmdProtocolResult r;
  r.n = n;
  r.alpha = alpha ? *alpha : median_heuristic_alpha(pooled, 1000, seed);
  const KernelSource kernel(pooled, r.alpha);
  for (int rep = 0; rep < repeats; ++rep) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
    const auto x = draw(rng, a.vectors.rows(), n);
    const auto y = draw(rng, b.vectors.rows(), n, a.vectors.rows());
    r.values.push_back(kernel.mmd(x, y));
  }
  finish(r);
  return r;
}

TTestResult pooled_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw InvalidInput("t-test needs at least two values per group");
  auto moments = [](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss};
  };
  const auto [ma, ssa] = moments(a);
  const auto [mb, ssb] = moments(b);
  const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  TTestResult r;
  r.df = na + nb - 2.0;
  const double pooled = (ssa + ssb) / r.df;
  const double se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  const double diff = ma - mb;
  if (diff == 0.0) return {0.0, 1.0, r.df};
  if (se == 0.0) return {diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity(), 0.0, r.df};
  r.t = diff / se;
  const boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

TTestResult compare_protocols(const MmdProtocolResult& a, const MmdProtocolResult& b) {
  if (a.values.size() != b.values.size()) throw InvalidInput("protocol results have different repeat counts");
  return pooled_t_test(a.values, b.values);
}

}  // namespace mmrl
