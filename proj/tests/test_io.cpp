#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include "geosearch/io.hpp"
#include "geosearch/rng.hpp"

using namespace geosearch;

TEST_CASE("little-endian scalar round trips") {
  std::ostringstream os;
  write_u16(os, 0xBEEF);
  write_u32(os, 0xDEADBEEFu);
  write_u64(os, 0x0123456789ABCDEFull);
  write_f32(os, 1.5f);
  write_f64(os, -2.25);
  const std::string bytes = os.str();
  CHECK(bytes.size() == 2 + 4 + 8 + 4 + 8);
  // Low byte first on disk.
  CHECK(static_cast<unsigned char>(bytes[0]) == 0xEF);
  CHECK(static_cast<unsigned char>(bytes[1]) == 0xBE);

  std::istringstream is(bytes);
  CHECK(read_u16(is, "t") == 0xBEEF);
  CHECK(read_u32(is, "t") == 0xDEADBEEFu);
  CHECK(read_u64(is, "t") == 0x0123456789ABCDEFull);
  CHECK(read_f32(is, "t") == 1.5f);
  CHECK(read_f64(is, "t") == -2.25);
}

TEST_CASE("length-prefixed strings round trip") {
  std::ostringstream os;
  write_string_u16(os, "héllo");
  write_string_u32(os, std::string(70000, 'x'));
  std::istringstream is(os.str());
  CHECK(read_string_u16(is, "t") == "héllo");
  CHECK(read_string_u32(is, "t").size() == 70000);
}

TEST_CASE("short reads name their context") {
  std::istringstream is("ab");
  CHECK_THROWS_WITH_AS(read_u32(is, "db header"), doctest::Contains("db header"),
                       std::runtime_error);
}

TEST_CASE("crc32 matches the IEEE check value") {
  const char* s = "123456789";
  CHECK(crc32(s, 9) == 0xCBF43926u);
  CHECK(crc32("", 0) == 0u);
  // Incremental == one-shot.
  std::uint32_t partial = crc32(s, 4);
  CHECK(crc32(s + 4, 5, partial) == 0xCBF43926u);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
  CHECK(fnv1a64_hex("") == "cbf29ce484222325");
  CHECK(fnv1a64_hex("a").size() == 16);
}

TEST_CASE("format_double emits shortest round-trip form") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(0.0) == "0");
  DetRng rng(31);
  for (int i = 0; i < 200; ++i) {
    const double v = (rng.uniform() - 0.5) * 1e6;
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("text file round trip") {
  const auto path = (std::filesystem::temp_directory_path() / "gs_io_test.txt").string();
  write_text_file(path, "line1\nline2\n");
  CHECK(read_text_file(path) == "line1\nline2\n");
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_text_file(path), std::runtime_error);
}
