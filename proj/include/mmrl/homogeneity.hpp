#pragma once

#include "mmrl/common.hpp"

#include <json.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace mmrl {

enum class DomainTag { red, green };
enum class InputKind { image, title, tweet };

std::string_view to_string(DomainTag d);
std::string_view to_string(InputKind k);
DomainTag parse_domain_tag(std::string_view s);
InputKind parse_input_kind(std::string_view s);
Index expected_dim(InputKind k);  // 2048 for images, 128 for text

struct FeatureSample {
  Mat<double> vectors;  // N x D
  DomainTag domain = DomainTag::red;
  InputKind kind = InputKind::image;
};

/// Checks N >= 2 and the dimension expected for the input kind.
FeatureSample make_feature_sample(Mat<double> vectors, DomainTag domain, InputKind kind);

template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar laplace_kernel(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y,
                                         typename DerivedX::Scalar alpha) {
  if (x.size() != y.size()) throw InvalidInput("kernel arguments differ in dimension");
  if (!(alpha > 0)) throw InvalidInput("kernel bandwidth must be positive");
  using std::exp;
  return exp(-alpha * (x - y).norm());
}

namespace detail {

template <typename Scalar>
Scalar mmd_ordered(const Mat<Scalar>& X, const Mat<Scalar>& Y, Scalar alpha) {
  const Index N = X.rows(), M = Y.rows();
  Scalar xx(0), yy(0), xy(0);
  for (Index i = 0; i < N; ++i) {
    for (Index j = i + 1; j < N; ++j) xx += laplace_kernel(X.row(i), X.row(j), alpha);
  }
  for (Index i = 0; i < M; ++i) {
    for (Index j = i + 1; j < M; ++j) yy += laplace_kernel(Y.row(i), Y.row(j), alpha);
  }
  for (Index i = 0; i < N; ++i) {
    for (Index j = 0; j < M; ++j) xy += laplace_kernel(X.row(i), Y.row(j), alpha);
  }
  const auto n = static_cast<Scalar>(N), m = static_cast<Scalar>(M);
  const Scalar within = Scalar(2) * xx / (n * (n - 1));
  const Scalar other = Scalar(2) * yy / (m * (m - 1));
  return within + other - Scalar(2) * xy / (n * m);
}

template <typename Scalar>
bool precedes(const Mat<Scalar>& a, const Mat<Scalar>& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  for (Index i = 0; i < a.size(); ++i) {
    if (a.data()[i] != b.data()[i]) return a.data()[i] < b.data()[i];
  }
  return false;
}

}  // namespace detail

/// Unbiased squared MMD with the Laplace kernel. Arguments are evaluated in
/// a canonical order so the result is exactly symmetric.
template <typename Scalar>
Scalar mmd_squared(const Mat<Scalar>& X, const Mat<Scalar>& Y, Scalar alpha) {
  if (X.rows() < 2 || Y.rows() < 2) throw InvalidInput("MMD needs at least two rows per sample");
  if (X.cols() != Y.cols()) throw InvalidInput("MMD samples differ in dimension");
  if (!(alpha > 0)) throw InvalidInput("kernel bandwidth must be positive");
  return detail::precedes(Y, X) ? detail::mmd_ordered(Y, X, alpha) : detail::mmd_ordered(X, Y, alpha);
}

/// Pairwise Euclidean distances between the rows of A and B.
Mat<double> pairwise_distances(const Mat<double>& A, const Mat<double>& B);

/// 1 / median pairwise distance over at most `max_rows` rows.
double median_heuristic_alpha(const Mat<double>& pooled, Index max_rows = 1000, std::uint64_t seed = 1);

struct MmdProtocolResult {
  std::vector<double> values;
  double mean = 0.0;
  Index n = 0;
  double alpha = 0.0;

  double standard_error() const;
};

nlohmann::json to_json(const MmdProtocolResult& r);

/// Per repeat: 2N rows without replacement, split into two halves.
MmdProtocolResult within_domain_protocol(const FeatureSample& sample, Index n, int repeats = 250,
                                         std::uint64_t seed = 1, std::optional<double> alpha = std::nullopt);

/// Per repeat: N rows from each sample.
MmdProtocolResult between_domain_protocol(const FeatureSample& a, const FeatureSample& b, Index n, int repeats = 250,
                                          std::uint64_t seed = 1, std::optional<double> alpha = std::nullopt);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
};

/// Pooled-variance two-sample t-test on the per-repeat values.
TTestResult compare_protocols(const MmdProtocolResult& a, const MmdProtocolResult& b);
TTestResult pooled_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace mmrl
