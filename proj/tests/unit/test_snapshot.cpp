#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "saspec/error.hpp"
#include "saspec/snapshot.hpp"
#include "test_util.hpp"

using namespace saspec;
using testing_util::TempDir;

namespace {

const std::filesystem::path kFixtures = SASPEC_FIXTURE_DIR;

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ErrorCode decode_error(std::span<const std::uint8_t> bytes, bool strict = true) {
  try {
    decode_snapshot(bytes, strict);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorCode::kIoError;
}

Snapshot random_snapshot(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_entries(0, 4);
  std::uniform_int_distribution<int> rank(1, 4);
  std::uniform_int_distribution<std::uint64_t> dim(1, 5);
  std::normal_distribution<double> val(0.0, 10.0);
  Snapshot s;
  s.step = rng();
  const int n = n_entries(rng);
  for (int e = 0; e < n; ++e) {
    NamedTensor t;
    t.name = "layer" + std::to_string(e) + (rng() % 2 ? ".weight" : ".input");
    t.dtype = rng() % 2 ? DType::kF64 : DType::kF32;
    const int r = rank(rng);
    for (int k = 0; k < r; ++k) t.dims.push_back(dim(rng));
    t.data.resize(t.element_count());
    for (double& x : t.data) {
      x = val(rng);
      if (t.dtype == DType::kF32) x = static_cast<double>(static_cast<float>(x));
    }
    s.entries.push_back(std::move(t));
  }
  return s;
}

}  // namespace

TEST(Snapshot, GoldenFileDecodes) {
  const std::vector<std::uint8_t> bytes = slurp(kFixtures / "w_2x2_f64.sasn");
  ASSERT_EQ(bytes.size(), 20u + 3 + 1 + 1 + 16 + 32 + 4);
  const Snapshot s = decode_snapshot(bytes);
  EXPECT_EQ(s.step, 7u);
  ASSERT_EQ(s.entries.size(), 1u);
  EXPECT_EQ(s.entries[0].name, "w");
  EXPECT_EQ(s.entries[0].dtype, DType::kF64);
  EXPECT_EQ(s.entries[0].dims, (std::vector<std::uint64_t>{2, 2}));
  EXPECT_EQ(s.entries[0].data, (std::vector<double>{1.0, -2.5, 3.25, 4.0}));
}

TEST(Snapshot, EncoderReproducesGoldenBytes) {
  Snapshot s;
  s.step = 7;
  s.entries.push_back({"w", DType::kF64, {2, 2}, {1.0, -2.5, 3.25, 4.0}});
  EXPECT_EQ(encode_snapshot(s), slurp(kFixtures / "w_2x2_f64.sasn"));
}

TEST(Snapshot, ChecksumIsStandardCrc32) {
  Snapshot s;
  s.step = 99;
  s.entries.push_back({"a.b", DType::kF32, {3}, {1.0, 2.0, 0.5}});
  const std::vector<std::uint8_t> bytes = encode_snapshot(s);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  EXPECT_EQ(stored, testing_util::reference_crc32(bytes.data(), bytes.size() - 4));
}

TEST(Snapshot, EmptySnapshot) {
  const std::vector<std::uint8_t> golden = slurp(kFixtures / "empty.sasn");
  ASSERT_EQ(golden.size(), 24u);
  EXPECT_EQ(encode_snapshot(Snapshot{}), golden);
  const Snapshot s = decode_snapshot(golden);
  EXPECT_TRUE(s.entries.empty());
  EXPECT_EQ(s.step, 0u);
}

TEST(Snapshot, F32ValuesWidenExactly) {
  const Snapshot s = read_snapshot(kFixtures / "h_3_f32.sasn");
  ASSERT_EQ(s.entries.size(), 1u);
  const NamedTensor& t = s.entries[0];
  EXPECT_EQ(t.dtype, DType::kF32);
  EXPECT_EQ(t.data[0], static_cast<double>(0.1f));
  EXPECT_EQ(t.data[1], -1.5);
  EXPECT_EQ(t.data[2], static_cast<double>(1e30f));
  EXPECT_EQ(encode_snapshot(s), slurp(kFixtures / "h_3_f32.sasn"));
}

TEST(Snapshot, RandomRoundTripThroughFiles) {
  std::mt19937_64 rng(51);
  TempDir dir("snap_rt");
  for (int i = 0; i < 50; ++i) {
    const Snapshot s = random_snapshot(rng);
    const auto path = dir.path() / ("s" + std::to_string(i) + ".sasn");
    write_snapshot(path, s);
    EXPECT_FALSE(std::filesystem::exists(path.string() + ".partial"));
    const Snapshot back = read_snapshot(path);
    EXPECT_EQ(back.step, s.step);
    EXPECT_EQ(back.entries, s.entries);
  }
}

TEST(Snapshot, CorruptLastByteIsCrcMismatch) {
  std::vector<std::uint8_t> bytes = slurp(kFixtures / "w_2x2_f64.sasn");
  bytes.back() ^= 0x01;
  EXPECT_EQ(decode_error(bytes), ErrorCode::kCrcMismatch);
}

TEST(Snapshot, EverySingleByteCorruptionIsDetected) {
  const std::vector<std::uint8_t> golden = slurp(kFixtures / "w_2x2_f64.sasn");
  for (std::size_t pos = 0; pos < golden.size(); ++pos) {
    for (std::uint8_t flip : {0x01, 0x80, 0xFF}) {
      std::vector<std::uint8_t> bytes = golden;
      bytes[pos] ^= flip;
      EXPECT_THROW(decode_snapshot(bytes), Error) << "byte " << pos;
    }
  }
}

TEST(Snapshot, TruncationAnywhereIsReported) {
  const std::vector<std::uint8_t> golden = slurp(kFixtures / "w_2x2_f64.sasn");
  // Mid-payload cut.
  EXPECT_EQ(decode_error(std::span(golden).first(60)), ErrorCode::kTruncated);
  for (std::size_t n = 0; n < golden.size(); ++n) {
    EXPECT_THROW(decode_snapshot(std::span(golden).first(n)), Error) << n;
  }
}

TEST(Snapshot, HeaderErrors) {
  std::vector<std::uint8_t> bytes = slurp(kFixtures / "w_2x2_f64.sasn");
  bytes[0] = 'X';
  EXPECT_EQ(decode_error(bytes), ErrorCode::kBadMagic);

  // A version bump with a matching checksum is a genuine version mismatch.
  Snapshot s;
  s.entries.push_back({"w", DType::kF64, {1}, {1.0}});
  std::vector<std::uint8_t> v2 = encode_snapshot(s);
  v2[4] = 2;
  const std::uint32_t crc = testing_util::reference_crc32(v2.data(), v2.size() - 4);
  std::memcpy(v2.data() + v2.size() - 4, &crc, 4);
  EXPECT_EQ(decode_error(v2), ErrorCode::kBadVersion);
}

TEST(Snapshot, NonFiniteStrictAndLenient) {
  Snapshot s;
  s.entries.push_back({"x", DType::kF64, {3},
                       {1.0, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()}});
  const std::vector<std::uint8_t> bytes = encode_snapshot(s);
  EXPECT_EQ(decode_error(bytes, true), ErrorCode::kNonFinite);
  const Snapshot lenient = decode_snapshot(bytes, false);
  EXPECT_EQ(lenient.non_finite_count, 2u);
  EXPECT_THROW(tensor_as_rows(lenient.entries[0]), Error);
}

TEST(Snapshot, WriterValidation) {
  Snapshot dup;
  dup.entries.push_back({"a", DType::kF64, {1}, {1.0}});
  dup.entries.push_back({"a", DType::kF64, {1}, {2.0}});
  EXPECT_THROW(encode_snapshot(dup), Error);

  Snapshot longname;
  longname.entries.push_back({std::string(70000, 'n'), DType::kF64, {1}, {1.0}});
  try {
    encode_snapshot(longname);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNameTooLong);
  }

  Snapshot bad_len;
  bad_len.entries.push_back({"a", DType::kF64, {2, 2}, {1.0}});
  EXPECT_THROW(encode_snapshot(bad_len), Error);
  Snapshot rank5;
  rank5.entries.push_back({"a", DType::kF64, {1, 1, 1, 1, 1}, {1.0}});
  EXPECT_THROW(encode_snapshot(rank5), Error);
  EXPECT_THROW(write_snapshot("/nonexistent_dir/x.sasn", Snapshot{}), Error);
  EXPECT_THROW(read_snapshot("/nonexistent_dir/x.sasn"), Error);
}

TEST(Snapshot, TensorAsRowsFlattensLeadingDims) {
  NamedTensor t{"act", DType::kF64, {2, 3, 4}, {}};
  for (int i = 0; i < 24; ++i) t.data.push_back(i);
  const Matrix m = tensor_as_rows(t);
  EXPECT_EQ(m.rows(), 6u);
  EXPECT_EQ(m.cols(), 4u);
  EXPECT_EQ(m(5, 3), 23.0);
  const Matrix v = tensor_as_rows({"v", DType::kF64, {3}, {1, 2, 3}});
  EXPECT_EQ(v.rows(), 1u);

  const Matrix src{{0.1, 2.0}, {3.0, 4.0}};
  const NamedTensor f32 = matrix_tensor("m", src, DType::kF32);
  EXPECT_EQ(f32.data[0], static_cast<double>(0.1f));
  EXPECT_EQ(tensor_as_rows(matrix_tensor("m", src)), src);
}
