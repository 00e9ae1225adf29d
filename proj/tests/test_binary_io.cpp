#include "doctest.h"

#include <limits>

#include "dmreuse/binary_io.hpp"
#include "dmreuse/codec.hpp"
#include "test_support.hpp"

using namespace dmreuse;

TEST_CASE("byte writer and reader agree on every field type") {
  ByteWriter w;
  w.put_u8(0xAB);
  w.put_u32(0xDEADBEEF);
  w.put_u64(0x0123456789ABCDEFull);
  w.put_i32(-7);
  w.put_i64(std::numeric_limits<std::int64_t>::min());
  w.put_f32(-1.5f);
  w.put_f64(3.141592653589793);
  w.put_string("hello");
  ByteReader r(w.bytes());
  CHECK(r.get_u8() == 0xAB);
  CHECK(r.get_u32() == 0xDEADBEEF);
  CHECK(r.get_u64() == 0x0123456789ABCDEFull);
  CHECK(r.get_i32() == -7);
  CHECK(r.get_i64() == std::numeric_limits<std::int64_t>::min());
  CHECK(r.get_f32() == -1.5f);
  CHECK(r.get_f64() == 3.141592653589793);
  CHECK(r.get_string() == "hello");
  CHECK(r.done());
}

TEST_CASE("integers are little-endian on the wire") {
  ByteWriter w;
  w.put_u32(0x04030201);
  CHECK(w.bytes() == std::string("\x01\x02\x03\x04", 4));
}

TEST_CASE("short reads name the offset") {
  ByteWriter w;
  w.put_u32(1);
  ByteReader r(w.bytes());
  r.get_u8();
  try {
    r.get_u64();
    FAIL("expected FormatError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FormatError);
    CHECK(std::string(e.what()).find("byte offset 1") != std::string::npos);
  }
}

TEST_CASE("atomic file write replaces content") {
  testing::TempDir dir;
  const auto path = dir.file("blob");
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  CHECK(read_file(path) == "second");
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  CHECK_THROWS_AS(read_file(dir.file("missing")), Error);
}

TEST_CASE("hex round trip and sha256 known vector") {
  const std::string bytes("\x00\x7f\xff\x10", 4);
  CHECK(to_hex(bytes) == "007fff10");
  CHECK(from_hex("007FFF10") == bytes);
  CHECK_THROWS_AS(from_hex("abc"), Error);
  CHECK_THROWS_AS(from_hex("zz"), Error);
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
