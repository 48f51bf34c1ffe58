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

#include "vecforge/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "vecforge/errors.hpp"

namespace vecforge {
namespace {

using nlohmann::json;

constexpr std::string_view kMetadataEntry = "__metadata__";
constexpr std::string_view kCovSuffix = ".cov";
constexpr std::string_view kCountSuffix = ".count";
constexpr std::string_view kBoostSuffix = ".boost";

void put_u64_le(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_u64_le(std::span<const std::byte> in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

template <typename UInt>
void store_le(std::byte* dst, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    dst[i] = static_cast<std::byte>((v >> (8 * i)) & 0xFFu);
  }
}

template <typename UInt>
UInt load_le(const std::byte* src) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(src[i]) << (8 * i);
  return v;
}

std::size_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

DType parse_dtype(const std::string& tag, const std::string& name) {
  if (tag == "F32") return DType::kF32;
  if (tag == "F64") return DType::kF64;
  fail(ErrorCode::kMalformedHeader, "tensor '" + name + "' has unsupported dtype '" + tag + "'");
}

}  // namespace

std::string_view dtype_tag(DType dtype) noexcept { return dtype == DType::kF32 ? "F32" : "F64"; }

std::size_t dtype_size(DType dtype) noexcept { return dtype == DType::kF32 ? 4 : 8; }

std::size_t TensorRecord::numel() const { return shape_numel(shape); }

std::vector<double> TensorRecord::to_doubles() const {
  const std::size_t n = numel();
  if (bytes.size() != n * dtype_size(dtype)) {
    fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' payload does not match its shape");
  }
  std::vector<double> out(n);
  if (dtype == DType::kF32) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = std::bit_cast<float>(load_le<std::uint32_t>(bytes.data() + 4 * i));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = std::bit_cast<double>(load_le<std::uint64_t>(bytes.data() + 8 * i));
    }
  }
  return out;
}

Matrix TensorRecord::to_matrix() const {
  if (!is_matrix()) fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' is not 2-D");
  return Matrix(static_cast<std::size_t>(shape[0]), static_cast<std::size_t>(shape[1]),
                to_doubles());
}

double TensorRecord::scalar() const {
  if (numel() != 1) fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' is not a scalar");
  return to_doubles().front();
}

TensorRecord TensorRecord::from_doubles(std::string name, DType dtype,
                                        std::vector<std::int64_t> shape,
                                        std::span<const double> values) {
  TensorRecord t;
  t.name = std::move(name);
  t.dtype = dtype;
  t.shape = std::move(shape);
  if (std::any_of(t.shape.begin(), t.shape.end(), [](auto d) { return d < 0; })) {
    fail(ErrorCode::kShapeMismatch, "tensor '" + t.name + "' has a negative dimension");
  }
  if (shape_numel(t.shape) != values.size()) {
    fail(ErrorCode::kShapeMismatch, "tensor '" + t.name + "' value count does not match shape");
  }
  t.bytes.resize(values.size() * dtype_size(dtype));
  if (dtype == DType::kF32) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      store_le(t.bytes.data() + 4 * i, std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
    }
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      store_le(t.bytes.data() + 8 * i, std::bit_cast<std::uint64_t>(values[i]));
    }
  }
  return t;
}

TensorRecord TensorRecord::from_matrix(std::string name, DType dtype, const Matrix& m) {
  return from_doubles(std::move(name), dtype,
                      {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())},
                      m.values());
}

TensorRecord TensorRecord::make_scalar(std::string name, double value) {
  return from_doubles(std::move(name), DType::kF64, {}, std::span<const double>(&value, 1));
}

std::vector<std::byte> encode_container(const Container& c) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    if (name.empty()) fail(ErrorCode::kInvariantViolation, "empty tensor name");
    if (name != t.name) {
      fail(ErrorCode::kInvariantViolation, "tensor key '" + name + "' differs from record name");
    }
    if (name == kMetadataEntry) fail(ErrorCode::kInvariantViolation, "reserved tensor name");
    if (t.bytes.size() != t.numel() * dtype_size(t.dtype)) {
      fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' payload does not match its shape");
    }
    const std::uint64_t end = offset + t.bytes.size();
    header[name] = {{"dtype", std::string(dtype_tag(t.dtype))},
                    {"shape", t.shape},
                    {"data_offsets", {offset, end}}};
    offset = end;
  }
  if (!c.metadata.empty()) header[std::string(kMetadataEntry)] = c.metadata;

  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  std::vector<std::byte> out;
  out.reserve(8 + text.size() + offset);
  put_u64_le(out, text.size());
  for (char ch : text) out.push_back(static_cast<std::byte>(ch));
  for (const auto& [name, t] : c.tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  return out;
}

Container decode_container(std::span<const std::byte> file_bytes) {
  if (file_bytes.size() < 8) fail(ErrorCode::kMalformedHeader, "file shorter than length prefix");
  const std::uint64_t header_len = get_u64_le(file_bytes);
  if (header_len > file_bytes.size() - 8) {
    fail(ErrorCode::kMalformedHeader, "header length exceeds file size");
  }
  const auto* text_begin = reinterpret_cast<const char*>(file_bytes.data() + 8);
  const std::string_view text(text_begin, header_len);

  std::set<std::string> seen;
  std::string duplicate;
  json::parser_callback_t on_event = [&](int depth, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::key && depth == 1) {
      auto key = parsed.get<std::string>();
      if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  json header;
  try {
    header = json::parse(text.begin(), text.end(), on_event);
  } catch (const json::exception& e) {
    fail(ErrorCode::kMalformedHeader, std::string("header is not valid JSON: ") + e.what());
  }
  if (!duplicate.empty()) fail(ErrorCode::kDuplicateName, "tensor '" + duplicate + "' repeated");
  if (!header.is_object()) fail(ErrorCode::kMalformedHeader, "header is not a JSON object");

  const auto payload = file_bytes.subspan(8 + header_len);
  Container out;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& [name, entry] : header.items()) {
    if (name == kMetadataEntry) {
      if (!entry.is_object()) fail(ErrorCode::kMalformedHeader, "__metadata__ is not an object");
      for (const auto& [k, v] : entry.items()) {
        if (!v.is_string()) fail(ErrorCode::kMalformedHeader, "metadata values must be strings");
        out.metadata[k] = v.get<std::string>();
      }
      continue;
    }
    if (name.empty()) fail(ErrorCode::kMalformedHeader, "empty tensor name");
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets") || !entry["dtype"].is_string() ||
        !entry["shape"].is_array() || !entry["data_offsets"].is_array() ||
        entry["data_offsets"].size() != 2) {
      fail(ErrorCode::kMalformedHeader, "tensor '" + name + "' entry is incomplete");
    }
    TensorRecord t;
    t.name = name;
    t.dtype = parse_dtype(entry["dtype"].get<std::string>(), name);
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_unsigned()) {
        fail(ErrorCode::kMalformedHeader, "tensor '" + name + "' has a non-integer dimension");
      }
      t.shape.push_back(d.get<std::int64_t>());
    }
    const auto& offs = entry["data_offsets"];
    if (!offs[0].is_number_unsigned() || !offs[1].is_number_unsigned()) {
      fail(ErrorCode::kMalformedHeader, "tensor '" + name + "' has invalid offsets");
    }
    const auto begin = offs[0].get<std::uint64_t>();
    const auto end = offs[1].get<std::uint64_t>();
    if (begin > end || end > payload.size()) {
      fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' offsets fall outside the payload");
    }
    if (end - begin != t.numel() * dtype_size(t.dtype)) {
      fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' offsets disagree with its shape");
    }
    t.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(begin),
                   payload.begin() + static_cast<std::ptrdiff_t>(end));
    ranges.emplace_back(begin, end);
    out.tensors.emplace(name, std::move(t));
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      fail(ErrorCode::kShapeMismatch, "tensor payload ranges overlap");
    }
  }
  return out;
}

Container read_container_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::kIoFailure, "read error on '" + path.string() + "'");
  return decode_container(std::as_bytes(std::span<const char>(raw)));
}

void write_container_file(const Container& c, const std::filesystem::path& path) {
  const auto bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) fail(ErrorCode::kIoFailure, "write error on '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Checkpoint

void Checkpoint::validate() const {
  std::set<std::string> seen;
  for (const auto& name : linear_layers) {
    if (!seen.insert(name).second) {
      fail(ErrorCode::kInvariantViolation, "linear layer '" + name + "' listed twice");
    }
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      fail(ErrorCode::kInvariantViolation, "linear layer '" + name + "' has no tensor");
    }
    if (!it->second.is_matrix()) {
      fail(ErrorCode::kInvariantViolation, "linear layer '" + name + "' is not 2-D");
    }
  }
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name != t.name) {
      fail(ErrorCode::kInvariantViolation, "tensor key and record name disagree");
    }
    if (t.bytes.size() != t.numel() * dtype_size(t.dtype)) {
      fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' payload does not match its shape");
    }
  }
  for (const auto& [k, v] : metadata) {
    if (k == kKindKey || k == kLinearLayersKey) {
      fail(ErrorCode::kInvariantViolation, "metadata key '" + k + "' is reserved");
    }
  }
}

const TensorRecord& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorCode::kIncompatibleTopology, "no tensor '" + name + "'");
  return it->second;
}

std::string Checkpoint::model_id() const {
  for (const char* key : {"model_id", "task_id"}) {
    auto it = metadata.find(key);
    if (it != metadata.end()) return it->second;
  }
  return {};
}

// ---------------------------------------------------------------------------
// CovarianceSet

void validate_covariance_matrix(const std::string& layer, const Matrix& c, double boost) {
  if (c.rows() != c.cols()) {
    fail(ErrorCode::kInvariantViolation, "covariance for '" + layer + "' is not square");
  }
  if (!all_finite(c)) fail(ErrorCode::kNonFinite, "covariance for '" + layer + "' is not finite");
  if (boost < 0.0) fail(ErrorCode::kInvariantViolation, "negative diagonal boost");
  const std::size_t n = c.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = c(i, j);
      const double b = c(j, i);
      if (std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(a))) {
        fail(ErrorCode::kInvariantViolation, "covariance for '" + layer + "' is not symmetric");
      }
    }
  }
  if (n == 0) return;
  // PSD within tolerance: min eigenvalue of (C - boost I) >= -tol with
  // tol = 1e-8 trace/n, checked as a Cholesky of C - boost I + 2 tol I.
  Matrix shifted = c;
  double tr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    shifted(i, i) -= boost;
    tr += shifted(i, i);
  }
  const double tol = 1e-8 * std::abs(tr) / static_cast<double>(n);
  const double shift = 2.0 * std::max(tol, 1e-300);
  for (std::size_t i = 0; i < n; ++i) shifted(i, i) += shift;
  // The lower-triangle pivots decide; a failed pivot means an eigenvalue < -tol.
  std::size_t failing = n;
  {
    Matrix l(n, n);
    for (std::size_t j = 0; j < n && failing == n; ++j) {
      double d = shifted(j, j);
      for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
      if (!(d > 0.0)) {
        failing = j;
        break;
      }
      const double ljj = std::sqrt(d);
      l(j, j) = ljj;
      for (std::size_t i = j + 1; i < n; ++i) {
        double s = shifted(i, j);
        for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
        l(i, j) = s / ljj;
      }
    }
  }
  if (failing != n) {
    fail(ErrorCode::kInvariantViolation,
         "covariance for '" + layer + "' is not positive semi-definite");
  }
}

void CovarianceSet::validate() const {
  for (const auto& [layer, e] : entries) validate_covariance_matrix(layer, e.matrix, e.diag_boost);
}

const CovarianceEntry& CovarianceSet::entry(const std::string& layer) const {
  auto it = entries.find(layer);
  if (it == entries.end()) {
    fail(ErrorCode::kMissingCovariance, "no covariance for layer '" + layer + "'");
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Conversions

Container to_container(const Checkpoint& ckpt) {
  ckpt.validate();
  Container c;
  c.tensors = ckpt.tensors;
  c.metadata = ckpt.metadata;
  c.metadata[std::string(kKindKey)] = "checkpoint";
  c.metadata[std::string(kLinearLayersKey)] = json(ckpt.linear_layers).dump();
  return c;
}

Container to_container(const CovarianceSet& covs) {
  covs.validate();
  Container c;
  for (const auto& [layer, e] : covs.entries) {
    auto cov = TensorRecord::from_matrix(layer + std::string(kCovSuffix), DType::kF64, e.matrix);
    c.tensors.emplace(cov.name, std::move(cov));
    auto count = TensorRecord::make_scalar(layer + std::string(kCountSuffix),
                                           static_cast<double>(e.sample_count));
    c.tensors.emplace(count.name, std::move(count));
    auto boost = TensorRecord::make_scalar(layer + std::string(kBoostSuffix), e.diag_boost);
    c.tensors.emplace(boost.name, std::move(boost));
  }
  c.metadata[std::string(kKindKey)] = "covariance";
  c.metadata[std::string(kTaskIdKey)] = covs.task_id;
  return c;
}

Checkpoint checkpoint_from_container(Container c) {
  Checkpoint ckpt;
  ckpt.tensors = std::move(c.tensors);
  auto layers = c.metadata.find(std::string(kLinearLayersKey));
  if (layers != c.metadata.end()) {
    try {
      ckpt.linear_layers = json::parse(layers->second).get<std::vector<std::string>>();
    } catch (const json::exception&) {
      fail(ErrorCode::kMalformedHeader, "linear layer list is not a JSON string array");
    }
    c.metadata.erase(layers);
  }
  c.metadata.erase(std::string(kKindKey));
  ckpt.metadata = std::move(c.metadata);
  ckpt.validate();
  return ckpt;
}

CovarianceSet covariance_from_container(const Container& c) {
  CovarianceSet covs;
  auto task = c.metadata.find(std::string(kTaskIdKey));
  if (task != c.metadata.end()) covs.task_id = task->second;
  for (const auto& [name, t] : c.tensors) {
    if (!ends_with(name, kCovSuffix)) continue;
    const std::string layer = name.substr(0, name.size() - kCovSuffix.size());
    CovarianceEntry e;
    if (t.dtype != DType::kF64) {
      fail(ErrorCode::kInvariantViolation, "covariance '" + name + "' must be F64");
    }
    e.matrix = t.to_matrix();
    auto count = c.tensors.find(layer + std::string(kCountSuffix));
    auto boost = c.tensors.find(layer + std::string(kBoostSuffix));
    if (count == c.tensors.end() || boost == c.tensors.end()) {
      fail(ErrorCode::kMalformedHeader, "covariance '" + layer + "' lacks count or boost");
    }
    const double n = count->second.scalar();
    if (n < 0.0 || n != std::floor(n)) {
      fail(ErrorCode::kInvariantViolation, "sample count for '" + layer + "' is not a count");
    }
    e.sample_count = static_cast<std::uint64_t>(n);
    e.diag_boost = boost->second.scalar();
    covs.entries.emplace(layer, std::move(e));
  }
  covs.validate();
  return covs;
}

ContainerObject read_container(const std::filesystem::path& path) {
  Container c = read_container_file(path);
  auto kind = c.metadata.find(std::string(kKindKey));
  if (kind != c.metadata.end() && kind->second == "covariance") {
    return covariance_from_container(c);
  }
  return checkpoint_from_container(std::move(c));
}

void write_container(const ContainerObject& object, const std::filesystem::path& path) {
  std::visit([&](const auto& obj) { write_container_file(to_container(obj), path); }, object);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto obj = read_container(path);
  if (auto* ckpt = std::get_if<Checkpoint>(&obj)) return std::move(*ckpt);
  fail(ErrorCode::kInvalidArgument, "'" + path.string() + "' holds a covariance set");
}

CovarianceSet read_covariance_set(const std::filesystem::path& path) {
  auto obj = read_container(path);
  if (auto* covs = std::get_if<CovarianceSet>(&obj)) return std::move(*covs);
  fail(ErrorCode::kInvalidArgument, "'" + path.string() + "' is not a covariance set");
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_container_file(to_container(ckpt), path);
}

void write_covariance_set(const CovarianceSet& covs, const std::filesystem::path& path) {
  write_container_file(to_container(covs), path);
}

// ---------------------------------------------------------------------------
// Compatibility

std::string_view compat_issue_name(CompatIssueKind kind) noexcept {
  switch (kind) {
    case CompatIssueKind::kMissingInA: return "missing-in-a";
    case CompatIssueKind::kMissingInB: return "missing-in-b";
    case CompatIssueKind::kShapeMismatch: return "shape-mismatch";
  }
  return "unknown";
}

std::vector<CompatIssue> check_compat(const Checkpoint& a, const Checkpoint& b) {
  auto shape_of = [](const Checkpoint& c, const std::string& name) {
    auto it = c.tensors.find(name);
    return it == c.tensors.end() ? std::vector<std::int64_t>{} : it->second.shape;
  };
  std::set<std::string> in_a(a.linear_layers.begin(), a.linear_layers.end());
  std::set<std::string> in_b(b.linear_layers.begin(), b.linear_layers.end());
  std::set<std::string> all = in_a;
  all.insert(in_b.begin(), in_b.end());
  std::vector<CompatIssue> report;
  for (const auto& name : all) {
    if (!in_a.contains(name)) {
      report.push_back({name, CompatIssueKind::kMissingInA});
    } else if (!in_b.contains(name)) {
      report.push_back({name, CompatIssueKind::kMissingInB});
    } else if (shape_of(a, name) != shape_of(b, name)) {
      report.push_back({name, CompatIssueKind::kShapeMismatch});
    }
  }
  return report;
}

void require_compatible(const Checkpoint& a, const Checkpoint& b) {
  const auto report = check_compat(a, b);
  if (!report.empty()) {
    fail(ErrorCode::kIncompatibleTopology,
         "layer '" + report.front().layer + "': " +
             std::string(compat_issue_name(report.front().kind)));
  }
}

}  // namespace vecforge
