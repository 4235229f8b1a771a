#include "saspec/snapshot.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "saspec/error.hpp"

namespace saspec {

static_assert(std::endian::native == std::endian::little, "SASN encoding assumes a little-endian host");

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'A', 'S', 'N'};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large files.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t len = std::min(kChunk, bytes.size() - off);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(len));
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > bytes_.size() - pos_) {
      throw Error(ErrorCode::kTruncated, std::string("file ends inside ") + what + " at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t NamedTensor::element_count() const {
  std::size_t n = 1;
  for (std::uint64_t d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

const NamedTensor* Snapshot::find(std::string_view name) const {
  for (const NamedTensor& t : entries) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void Snapshot::validate() const {
  std::set<std::string_view> names;
  for (const NamedTensor& t : entries) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw Error(ErrorCode::kNameTooLong, "tensor name of " + std::to_string(t.name.size()) + " bytes");
    }
    if (!names.insert(t.name).second) throw Error(ErrorCode::kDuplicateName, "duplicate tensor '" + t.name + "'");
    if (t.dims.empty() || t.dims.size() > kMaxTensorRank) {
      throw Error(ErrorCode::kBadDims, "tensor '" + t.name + "' has rank " + std::to_string(t.dims.size()));
    }
    for (std::uint64_t d : t.dims) {
      if (d == 0) throw Error(ErrorCode::kBadDims, "tensor '" + t.name + "' has a zero dimension");
    }
    if (t.data.size() != t.element_count()) {
      throw Error(ErrorCode::kBadDims, "tensor '" + t.name + "' data length does not match its dims");
    }
    if (t.dtype != DType::kF32 && t.dtype != DType::kF64) {
      throw Error(ErrorCode::kBadDims, "tensor '" + t.name + "' has an unknown dtype");
    }
  }
}

std::vector<std::uint8_t> encode_snapshot(const Snapshot& snapshot) {
  snapshot.validate();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kSnapshotVersion);
  put<std::uint64_t>(out, snapshot.step);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(snapshot.entries.size()));
  for (const NamedTensor& t : snapshot.entries) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint64_t d : t.dims) put<std::uint64_t>(out, d);
    if (t.dtype == DType::kF64) {
      for (double x : t.data) put<double>(out, x);
    } else {
      for (double x : t.data) put<float>(out, static_cast<float>(x));
    }
  }
  put<std::uint32_t>(out, crc32_of(out));
  return out;
}

Snapshot decode_snapshot(std::span<const std::uint8_t> bytes, bool strict_finite) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a SASN file");
  }
  if (bytes.size() < kSnapshotHeaderBytes + 4) {
    throw Error(ErrorCode::kTruncated, "file shorter than header and checksum (" + std::to_string(bytes.size()) +
                                           " bytes)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);

  Reader r(body);
  r.take(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kSnapshotVersion) {
    if (crc32_of(body) != stored) throw Error(ErrorCode::kCrcMismatch, "checksum mismatch");
    throw Error(ErrorCode::kBadVersion, "unsupported format version " + std::to_string(version));
  }

  // Parse structure first so a short file reports Truncated, then verify the
  // checksum before trusting any payload.
  Snapshot snap;
  snap.step = r.get<std::uint64_t>("header");
  const auto count = r.get<std::uint32_t>("header");
  try {
    for (std::uint32_t e = 0; e < count; ++e) {
      NamedTensor t;
      const auto name_len = r.get<std::uint16_t>("entry name length");
      const auto name = r.take(name_len, "entry name");
      t.name.assign(name.begin(), name.end());
      const auto dtype = r.get<std::uint8_t>("dtype");
      if (dtype > 1) throw Error(ErrorCode::kBadDims, "unknown dtype " + std::to_string(dtype));
      t.dtype = static_cast<DType>(dtype);
      const auto ndim = r.get<std::uint8_t>("ndim");
      if (ndim == 0 || ndim > kMaxTensorRank) throw Error(ErrorCode::kBadDims, "bad rank " + std::to_string(ndim));
      std::size_t n = 1;
      for (std::uint8_t d = 0; d < ndim; ++d) {
        const auto dim = r.get<std::uint64_t>("dims");
        if (dim == 0) throw Error(ErrorCode::kBadDims, "tensor '" + t.name + "' has a zero dimension");
        if (dim > r.remaining() || n > r.remaining() / dim) {
          throw Error(ErrorCode::kTruncated, "tensor '" + t.name + "' larger than the file");
        }
        n *= static_cast<std::size_t>(dim);
        t.dims.push_back(dim);
      }
      const std::size_t width = t.dtype == DType::kF64 ? 8 : 4;
      if (n > r.remaining() / width) throw Error(ErrorCode::kTruncated, "payload of '" + t.name + "' is cut short");
      const auto payload = r.take(n * width, "payload");
      t.data.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (width == 8) {
          std::memcpy(&t.data[i], payload.data() + 8 * i, 8);
        } else {
          float f;
          std::memcpy(&f, payload.data() + 4 * i, 4);
          t.data[i] = static_cast<double>(f);
        }
      }
      snap.entries.push_back(std::move(t));
    }
  } catch (const Error& e) {
    // Structural nonsense in a file whose checksum fails is corruption.
    if (e.code() != ErrorCode::kTruncated && crc32_of(body) != stored) {
      throw Error(ErrorCode::kCrcMismatch, "checksum mismatch");
    }
    throw;
  }
  if (crc32_of(body) != stored) throw Error(ErrorCode::kCrcMismatch, "checksum mismatch");
  if (r.remaining() != 0) {
    throw Error(ErrorCode::kBadDims, std::to_string(r.remaining()) + " trailing bytes before the checksum");
  }

  std::set<std::string_view> names;
  for (const NamedTensor& t : snap.entries) {
    if (!names.insert(t.name).second) throw Error(ErrorCode::kDuplicateName, "duplicate tensor '" + t.name + "'");
    for (double x : t.data) {
      if (std::isfinite(x)) continue;
      if (strict_finite) throw Error(ErrorCode::kNonFinite, "tensor '" + t.name + "' contains NaN or Inf");
      ++snap.non_finite_count;
    }
  }
  return snap;
}

void write_snapshot(const std::filesystem::path& path, const Snapshot& snapshot) {
  const std::vector<std::uint8_t> bytes = encode_snapshot(snapshot);
  // Readers never see a partial file: write aside, then rename over.
  std::filesystem::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw Error(ErrorCode::kIoError, "write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "rename to " + path.string() + " failed: " + ec.message());
}

Snapshot read_snapshot(const std::filesystem::path& path, bool strict_finite) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIoError, "read of " + path.string() + " failed");
  return decode_snapshot(bytes, strict_finite);
}

Matrix tensor_as_rows(const NamedTensor& t) {
  if (t.dims.empty()) throw Error(ErrorCode::kBadDims, "tensor '" + t.name + "' has no dims");
  const auto cols = static_cast<std::size_t>(t.dims.back());
  const std::size_t rows = t.element_count() / cols;
  return Matrix(rows, cols, t.data);
}

NamedTensor matrix_tensor(std::string name, const Matrix& m, DType dtype) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = dtype;
  t.dims = {m.rows(), m.cols()};
  t.data.assign(m.data().begin(), m.data().end());
  if (dtype == DType::kF32) {
    for (double& x : t.data) x = static_cast<double>(static_cast<float>(x));
  }
  return t;
}

}  // namespace saspec
