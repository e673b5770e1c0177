#include "kvedit/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <system_error>

namespace kvedit {

namespace {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto raw = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
  } else {
    return v;
  }
}

template <class T>
void append_raw(std::string& buf, T v) {
  const auto raw = std::bit_cast<std::array<char, sizeof(T)>>(to_little(v));
  buf.append(raw.data(), raw.size());
}

template <class T>
T read_raw(std::span<const char> bytes) {
  std::array<char, sizeof(T)> raw{};
  std::memcpy(raw.data(), bytes.data(), sizeof(T));
  return to_little(std::bit_cast<T>(raw));
}

}  // namespace

std::uint64_t fnv1a64(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ByteWriter::put_u32(std::uint32_t v) { append_raw(buf_, v); }
void ByteWriter::put_u64(std::uint64_t v) { append_raw(buf_, v); }
void ByteWriter::put_f64(double v) { append_raw(buf_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::put_f64s(std::span<const double> v) {
  if constexpr (std::endian::native == std::endian::little) {
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
  } else {
    for (double d : v) put_f64(d);
  }
}

void ByteWriter::put_string(std::string_view s) {
  put_u64(s.size());
  buf_.append(s.data(), s.size());
}

std::span<const char> ByteReader::take(std::size_t n) {
  if (n > remaining()) {
    throw FormatError("payload ends before the declared contents");
  }
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint32_t ByteReader::get_u32() { return read_raw<std::uint32_t>(take(4)); }
std::uint64_t ByteReader::get_u64() { return read_raw<std::uint64_t>(take(8)); }
double ByteReader::get_f64() { return std::bit_cast<double>(get_u64()); }

void ByteReader::get_f64s(std::span<double> out) {
  const auto raw = take(out.size_bytes());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), raw.data(), raw.size());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::bit_cast<double>(read_raw<std::uint64_t>(raw.subspan(i * 8, 8)));
    }
  }
}

std::string ByteReader::get_string() {
  const std::uint64_t n = get_u64();
  if (n > remaining()) {
    throw FormatError("string length exceeds payload");
  }
  const auto raw = take(n);
  return std::string(raw.data(), raw.size());
}

void write_frame(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
                 std::uint32_t flags, const std::string& payload) {
  std::string header;
  header.append(magic.data(), magic.size());
  append_raw(header, version);
  append_raw(header, flags);
  append_raw(header, static_cast<std::uint64_t>(payload.size()));
  append_raw(header, fnv1a64(payload));

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::system_error(errno, std::generic_category(), "cannot open " + tmp.string());
    }
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) {
      throw std::system_error(errno, std::generic_category(), "write failed: " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Frame read_frame(const std::filesystem::path& path, const Magic& magic,
                 std::uint32_t expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::system_error(errno, std::generic_category(), "cannot open " + path.string());
  }
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::span<const char> bytes(data);

  if (bytes.size() < magic.size() + 4) {
    throw TruncatedFileError(path.string() + ": shorter than the frame header");
  }
  if (!std::equal(magic.begin(), magic.end(), bytes.begin())) {
    throw VersionMismatchError(path.string() + ": unrecognized magic");
  }
  Frame frame;
  frame.version = read_raw<std::uint32_t>(bytes.subspan(8, 4));
  if (frame.version != expected_version) {
    std::ostringstream os;
    os << path.string() << ": format version " << frame.version << ", expected "
       << expected_version;
    throw VersionMismatchError(os.str());
  }
  if (bytes.size() < kFrameHeaderBytes) {
    throw TruncatedFileError(path.string() + ": shorter than the frame header");
  }
  frame.flags = read_raw<std::uint32_t>(bytes.subspan(12, 4));
  const auto length = read_raw<std::uint64_t>(bytes.subspan(16, 8));
  const auto checksum = read_raw<std::uint64_t>(bytes.subspan(24, 8));

  const std::size_t available = bytes.size() - kFrameHeaderBytes;
  if (length > available) {
    std::ostringstream os;
    os << path.string() << ": payload declares " << length << " bytes, file holds "
       << available;
    throw TruncatedFileError(os.str());
  }
  if (length < available) {
    throw FormatError(path.string() + ": trailing bytes after payload");
  }
  const auto payload = bytes.subspan(kFrameHeaderBytes, length);
  if (fnv1a64(payload) != checksum) {
    throw ChecksumError(path.string() + ": payload checksum mismatch");
  }
  frame.payload.assign(payload.data(), payload.size());
  return frame;
}

}  // namespace kvedit
