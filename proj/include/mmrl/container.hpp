#pragma once

#include "mmrl/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mmrl {

inline constexpr std::string_view kEmbeddingMagic = "MMRL-EMB1";
inline constexpr std::string_view kFeatureMagic = "MMRL-FEA1";
inline constexpr std::string_view kCheckpointMagic = "MMRL-CKP1";

/// Row-major float32 tensor with a name.
struct NamedTensor {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::vector<float> data;

  template <typename Derived>
  static NamedTensor from(std::string name, const Eigen::MatrixBase<Derived>& m) {
    NamedTensor t{std::move(name), m.rows(), m.cols(), {}};
    t.data.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<RowMat<float>>(t.data.data(), m.rows(), m.cols()) = m.template cast<float>();
    return t;
  }

  template <typename Scalar>
  Mat<Scalar> as() const {
    return Eigen::Map<const RowMat<float>>(data.data(), rows, cols).template cast<Scalar>();
  }
};

struct TensorFile {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
  const NamedTensor& at(std::string_view name) const;
};

/// Layout: 9-byte magic, little-endian u64 header length, JSON header
/// {"meta", "tensors": [{name, rows, cols}]}, then each tensor's row-major
/// little-endian float32 payload in header order.
void write_tensor_file(const std::filesystem::path& path, std::string_view magic, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path, std::string_view magic);

}  // namespace mmrl
