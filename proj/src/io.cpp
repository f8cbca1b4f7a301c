#include "geosearch/io.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace geosearch {

namespace {

template <typename T>
std::array<unsigned char, sizeof(T)> to_le_bytes(T v) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  U u = std::bit_cast<U>(v);
  std::array<unsigned char, sizeof(T)> out{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  }
  return out;
}

template <typename T>
T from_le_bytes(const unsigned char* b) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(b[i]) << (8 * i);
  }
  return std::bit_cast<T>(u);
}

template <typename T>
void write_le(std::ostream& os, T v) {
  auto b = to_le_bytes(v);
  os.write(reinterpret_cast<const char*>(b.data()), b.size());
}

template <typename T>
T read_le(std::istream& is, const char* context) {
  std::array<unsigned char, sizeof(T)> b{};
  is.read(reinterpret_cast<char*>(b.data()), b.size());
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw std::runtime_error(std::string("truncated read: ") + context);
  }
  return from_le_bytes<T>(b.data());
}

}  // namespace

void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void write_u16(std::ostream& os, std::uint16_t v) { write_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f32(std::ostream& os, float v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) { write_le(os, v); }

void write_string_u16(std::ostream& os, std::string_view s) {
  if (s.size() > 0xffff) {
    throw std::invalid_argument("string too long for u16 length prefix");
  }
  write_u16(os, static_cast<std::uint16_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

void write_string_u32(std::ostream& os, std::string_view s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

void read_bytes(std::istream& is, void* data, std::size_t n, const char* context) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    throw std::runtime_error(std::string("truncated read: ") + context);
  }
}

std::uint16_t read_u16(std::istream& is, const char* context) { return read_le<std::uint16_t>(is, context); }
std::uint32_t read_u32(std::istream& is, const char* context) { return read_le<std::uint32_t>(is, context); }
std::uint64_t read_u64(std::istream& is, const char* context) { return read_le<std::uint64_t>(is, context); }
float read_f32(std::istream& is, const char* context) { return read_le<float>(is, context); }
double read_f64(std::istream& is, const char* context) { return read_le<double>(is, context); }

std::string read_string_u16(std::istream& is, const char* context) {
  std::uint16_t n = read_u16(is, context);
  std::string s(n, '\0');
  if (n > 0) read_bytes(is, s.data(), n, context);
  return s;
}

std::string read_string_u32(std::istream& is, const char* context) {
  std::uint32_t n = read_u32(is, context);
  std::string s(n, '\0');
  if (n > 0) read_bytes(is, s.data(), n, context);
  return s;
}

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
      }
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a64_hex(std::string_view s) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(s);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open file for writing: " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf.data(), ptr);
}

}  // namespace geosearch
