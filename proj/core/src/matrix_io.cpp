#include "kvedit/matrix_io.hpp"

#include "kvedit/binary_io.hpp"

namespace kvedit {

namespace {
constexpr Magic kMatrixMagic{'K', 'V', 'E', 'D', 'I', 'T', 'M', 'X'};
constexpr std::uint32_t kMatrixVersion = 1;
}  // namespace

void save_matrix(const std::filesystem::path& path, const DenseMatrix& m) {
  ByteWriter w;
  w.put_u64(static_cast<std::uint64_t>(m.rows()));
  w.put_u64(static_cast<std::uint64_t>(m.cols()));
  w.put_f64s(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
  write_frame(path, kMatrixMagic, kMatrixVersion, 0, w.bytes());
}

DenseMatrix load_matrix(const std::filesystem::path& path) {
  const Frame frame = read_frame(path, kMatrixMagic, kMatrixVersion);
  ByteReader r(frame.payload);
  const auto rows = r.get_u64();
  const auto cols = r.get_u64();
  if (rows > (1u << 30) || cols > (1u << 30) || rows * cols * sizeof(double) != r.remaining()) {
    throw FormatError("matrix file " + path.string() + ": inconsistent shape");
  }
  DenseMatrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  r.get_f64s(std::span<double>(m.data(), static_cast<std::size_t>(m.size())));
  require_finite(m, "matrix file");
  return m;
}

}  // namespace kvedit
