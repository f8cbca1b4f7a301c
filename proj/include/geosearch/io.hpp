#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace geosearch {

// Little-endian binary readers/writers used by the GSWT / GSDB file formats.
// All multi-byte fields on disk are little endian regardless of host order.

void write_bytes(std::ostream& os, const void* data, std::size_t n);
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_string_u16(std::ostream& os, std::string_view s);
void write_string_u32(std::ostream& os, std::string_view s);

// Readers throw std::runtime_error with `context` in the message on short reads.
void read_bytes(std::istream& is, void* data, std::size_t n, const char* context);
std::uint16_t read_u16(std::istream& is, const char* context);
std::uint32_t read_u32(std::istream& is, const char* context);
std::uint64_t read_u64(std::istream& is, const char* context);
float read_f32(std::istream& is, const char* context);
double read_f64(std::istream& is, const char* context);
std::string read_string_u16(std::istream& is, const char* context);
std::string read_string_u32(std::istream& is, const char* context);

/// CRC-32 (IEEE, reflected polynomial 0xEDB88320).
std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0);

/// FNV-1a 64-bit hash, hex-encoded to 16 chars. Used as a fixture digest key.
std::uint64_t fnv1a64(std::string_view s);
std::string fnv1a64_hex(std::string_view s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

/// Shortest round-trip decimal form of a double (std::to_chars), for
/// deterministic CSV emission.
std::string format_double(double v);

}  // namespace geosearch
