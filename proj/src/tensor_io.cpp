#include "swlora/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace swlora {

namespace {

static_assert(std::numeric_limits<double>::is_iec559 && std::numeric_limits<float>::is_iec559);

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!is) throw TensorFormatError("tensor: truncated header");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
  return value;
}

template <typename T>
void write_impl(std::ostream& os, const BasicMatrix<T>& m) {
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  os.write("SWLT", 4);
  put_le<std::uint32_t>(os, kTensorVersion);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  put_le<std::uint64_t>(os, m.rows());
  put_le<std::uint64_t>(os, m.cols());
  for (T v : m.data()) put_le<Bits>(os, std::bit_cast<Bits>(v));
  if (!os) throw TensorFormatError("tensor: write failed");
}

template <typename T>
BasicMatrix<T> read_payload(std::istream& is, std::uint64_t rows, std::uint64_t cols) {
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::vector<T> data(rows * cols);
  std::vector<unsigned char> raw(data.size() * sizeof(T));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw TensorFormatError("tensor: truncated payload");
  for (std::size_t k = 0; k < data.size(); ++k) {
    Bits b = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) b |= static_cast<Bits>(raw[k * sizeof(T) + i]) << (8 * i);
    data[k] = std::bit_cast<T>(b);
  }
  BasicMatrix<T> m(rows, cols, std::move(data));
  require_finite(m, "tensor payload");
  return m;
}

}  // namespace

void write_tensor(std::ostream& os, const Matrix& m) { write_impl(os, m); }
void write_tensor(std::ostream& os, const MatrixF& m) { write_impl(os, m); }

AnyMatrix read_any_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SWLT", 4) != 0) throw TensorFormatError("tensor: bad magic");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kTensorVersion) throw TensorFormatError("tensor: unsupported version " + std::to_string(version));
  const auto dtype = get_le<std::uint8_t>(is);
  const auto rows = get_le<std::uint64_t>(is);
  const auto cols = get_le<std::uint64_t>(is);
  if (rows == 0 || cols == 0 || rows > (std::uint64_t{1} << 32) || cols > (std::uint64_t{1} << 32)) {
    throw TensorFormatError("tensor: implausible shape");
  }
  switch (static_cast<Dtype>(dtype)) {
    case Dtype::f32: return read_payload<float>(is, rows, cols);
    case Dtype::f64: return read_payload<double>(is, rows, cols);
  }
  throw TensorFormatError("tensor: unknown dtype " + std::to_string(dtype));
}

Matrix read_tensor(std::istream& is) {
  auto any = read_any_tensor(is);
  if (auto* f = std::get_if<MatrixF>(&any)) return cast<double>(*f);
  return std::get<Matrix>(std::move(any));
}

namespace {
template <typename T>
void save_impl(const std::filesystem::path& path, const BasicMatrix<T>& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw TensorFormatError("tensor: cannot open " + path.string() + " for writing");
  write_tensor(os, m);
}
}  // namespace

void save_tensor(const std::filesystem::path& path, const Matrix& m) { save_impl(path, m); }
void save_tensor(const std::filesystem::path& path, const MatrixF& m) { save_impl(path, m); }

AnyMatrix load_any_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorFormatError("tensor: cannot open " + path.string());
  return read_any_tensor(is);
}

Matrix load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorFormatError("tensor: cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace swlora
