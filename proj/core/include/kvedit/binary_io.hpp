#pragma once

// Versioned little-endian framing shared by database and model files.
//
//   offset  size  field
//   0       8     magic
//   8       4     format version (u32)
//   12      4     flags (u32)
//   16      8     payload length in bytes (u64)
//   24      8     FNV-1a 64 checksum of the payload (u64)
//   32      ...   payload
//
// Loading checks, in order: magic and version, declared length, checksum.
// Each failure has its own exception type.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kvedit {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

using Magic = std::array<char, 8>;

inline constexpr std::size_t kFrameHeaderBytes = 32;

std::uint64_t fnv1a64(std::span<const char> bytes);

class ByteWriter {
 public:
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_i64(std::int64_t v) { put_u64(static_cast<std::uint64_t>(v)); }
  void put_f64(double v);
  void put_f64s(std::span<const double> v);
  void put_string(std::string_view s);

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

  std::uint32_t get_u32();
  std::uint64_t get_u64();
  std::int64_t get_i64() { return static_cast<std::int64_t>(get_u64()); }
  double get_f64();
  void get_f64s(std::span<double> out);
  std::string get_string();

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const char> take(std::size_t n);

  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

struct Frame {
  std::uint32_t version = 0;
  std::uint32_t flags = 0;
  std::string payload;
};

/// Writes header + payload to a sibling temp file, then renames it over path.
void write_frame(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
                 std::uint32_t flags, const std::string& payload);

/// Reads and validates a frame; throws the FormatError subclasses above.
Frame read_frame(const std::filesystem::path& path, const Magic& magic,
                 std::uint32_t expected_version);

}  // namespace kvedit
