#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saspec/linalg.hpp"

namespace saspec {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

inline constexpr std::uint32_t kSnapshotVersion = 1;
inline constexpr std::size_t kSnapshotHeaderBytes = 20;  // magic, version, step, entry count
inline constexpr std::size_t kMaxTensorRank = 4;

/// Values are held as f64 regardless of dtype; an f32 tensor stores values
/// that are exactly representable in f32 and is narrowed on write.
struct NamedTensor {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::size_t element_count() const;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Snapshot {
  std::uint64_t step = 0;
  std::vector<NamedTensor> entries;
  std::size_t non_finite_count = 0;  // filled by lenient reads

  const NamedTensor* find(std::string_view name) const;
  void validate() const;
};

/// Encodes a snapshot to the SASN byte layout (little-endian, CRC32 trailer).
std::vector<std::uint8_t> encode_snapshot(const Snapshot& snapshot);

/// Parses SASN bytes. With strict_finite any NaN/Inf is an error; otherwise
/// they are counted in non_finite_count.
Snapshot decode_snapshot(std::span<const std::uint8_t> bytes, bool strict_finite = true);

void write_snapshot(const std::filesystem::path& path, const Snapshot& snapshot);
Snapshot read_snapshot(const std::filesystem::path& path, bool strict_finite = true);

/// 2-D tensors become a matrix as stored; 3-D (batch, seq, dim) and higher are
/// flattened to rows of the last dimension. 1-D tensors become a single row.
Matrix tensor_as_rows(const NamedTensor& t);
NamedTensor matrix_tensor(std::string name, const Matrix& m, DType dtype = DType::kF64);

}  // namespace saspec
