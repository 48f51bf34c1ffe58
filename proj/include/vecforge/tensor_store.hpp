// Copyright 2026 The vecforge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "vecforge/matrix.hpp"

namespace vecforge {

enum class DType { kF32, kF64 };

std::string_view dtype_tag(DType dtype) noexcept;  // "F32" / "F64"
std::size_t dtype_size(DType dtype) noexcept;

// One named tensor. `bytes` is the little-endian payload exactly as stored on
// disk, so a read followed by a write reproduces the file.
struct TensorRecord {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::int64_t> shape;
  std::vector<std::byte> bytes;

  std::size_t numel() const;
  bool is_matrix() const noexcept { return shape.size() == 2; }

  std::vector<double> to_doubles() const;
  Matrix to_matrix() const;
  double scalar() const;

  static TensorRecord from_doubles(std::string name, DType dtype, std::vector<std::int64_t> shape,
                                   std::span<const double> values);
  static TensorRecord from_matrix(std::string name, DType dtype, const Matrix& m);
  static TensorRecord make_scalar(std::string name, double value);

  bool operator==(const TensorRecord&) const = default;
};

// Raw container: tensors plus the free-form string metadata block.
struct Container {
  std::map<std::string, TensorRecord> tensors;
  std::map<std::string, std::string> metadata;

  bool operator==(const Container&) const = default;
};

std::vector<std::byte> encode_container(const Container& c);
Container decode_container(std::span<const std::byte> file_bytes);

Container read_container_file(const std::filesystem::path& path);
void write_container_file(const Container& c, const std::filesystem::path& path);

// Reserved metadata keys.
inline constexpr std::string_view kKindKey = "vecforge.kind";
inline constexpr std::string_view kLinearLayersKey = "vecforge.linear_layers";
inline constexpr std::string_view kTaskIdKey = "vecforge.task_id";

struct Checkpoint {
  std::map<std::string, TensorRecord> tensors;
  std::vector<std::string> linear_layers;
  std::map<std::string, std::string> metadata;

  void validate() const;
  const TensorRecord& tensor(const std::string& name) const;
  Matrix layer_matrix(const std::string& name) const { return tensor(name).to_matrix(); }
  std::string model_id() const;

  bool operator==(const Checkpoint&) const = default;
};

struct CovarianceEntry {
  Matrix matrix;  // float64, stored after regularization
  std::uint64_t sample_count = 0;
  double diag_boost = 0.0;

  bool operator==(const CovarianceEntry&) const = default;
};

struct CovarianceSet {
  std::map<std::string, CovarianceEntry> entries;
  std::string task_id;

  void validate() const;
  const CovarianceEntry& entry(const std::string& layer) const;

  bool operator==(const CovarianceSet&) const = default;
};

// Symmetry and PSD checks shared by CovarianceSet::validate and the
// covariance module. PSD is judged on matrix - boost * I.
void validate_covariance_matrix(const std::string& layer, const Matrix& c, double boost);

Container to_container(const Checkpoint& ckpt);
Container to_container(const CovarianceSet& covs);
Checkpoint checkpoint_from_container(Container c);
CovarianceSet covariance_from_container(const Container& c);

using ContainerObject = std::variant<Checkpoint, CovarianceSet>;

ContainerObject read_container(const std::filesystem::path& path);
void write_container(const ContainerObject& object, const std::filesystem::path& path);

Checkpoint read_checkpoint(const std::filesystem::path& path);
CovarianceSet read_covariance_set(const std::filesystem::path& path);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
void write_covariance_set(const CovarianceSet& covs, const std::filesystem::path& path);

enum class CompatIssueKind { kMissingInA, kMissingInB, kShapeMismatch };

struct CompatIssue {
  std::string layer;
  CompatIssueKind kind;

  bool operator==(const CompatIssue&) const = default;
};

std::string_view compat_issue_name(CompatIssueKind kind) noexcept;

/// Every linear layer present in exactly one input or differing in shape.
/// An empty report means the checkpoints are merge-compatible.
std::vector<CompatIssue> check_compat(const Checkpoint& a, const Checkpoint& b);

void require_compatible(const Checkpoint& a, const Checkpoint& b);

}  // namespace vecforge
